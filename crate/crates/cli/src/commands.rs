use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use commlab::analysis::{anova, group_tasks, pca, Grouping};
use commlab::artifacts::{
    read_json, read_messages, read_q, read_solve_report, read_survival, read_tasks, write_anova, write_json,
    write_loss_curve, write_messages, write_pca, write_q, write_solve_report, write_survival, write_tasks, AnovaRow,
};
use commlab::diffnet::Activation;
use commlab::gridworld::{enumerate_test_tasks, enumerate_training_tasks, INTERIOR};
use commlab::language::{self, encode_all, LanguageConfig, MessageArchive, Sae};
use commlab::loopback::{run_loopback, student_q_matrices};
use commlab::student::{
    default_pattern, first_action, solve_report, train_student_frozen, Agent, EvalSpec, GoalPattern, GoalSet, Student,
};
use commlab::teacher::{train_teacher_unchecked, QMatrix, TrainedTeacher};
use commlab::{Action, Cell, ParamStore, Task, TaskFamily};
use rayon::prelude::*;

use crate::run::{Manifest, RunDir};
use crate::{svg, LanguageArgs, Target};

fn tasks_rel(family: TaskFamily) -> String {
    format!("tasks/{}.json", family.as_str())
}

fn teachers_rel(family: TaskFamily) -> String {
    format!("teachers/{}", family.as_str())
}

fn load_tasks(run: &RunDir, m: &mut Manifest, family: TaskFamily) -> Result<Vec<Task>> {
    let path = run.require(&tasks_rel(family), "enumerate")?;
    m.input(run, &path)?;
    let (found, tasks) = read_tasks(&path)?;
    if found != family {
        bail!(commlab::Error::Contract(format!("{} holds the {} family", path.display(), found.as_str())));
    }
    Ok(tasks)
}

fn load_teachers(run: &RunDir, m: &mut Manifest, family: TaskFamily) -> Result<(Vec<Task>, Vec<QMatrix<f64>>)> {
    let tasks = load_tasks(run, m, family)?;
    let producer = format!("train-teachers --family {}", family.as_str());
    let dir = run.require(&teachers_rel(family), &producer)?;
    let qs = tasks
        .iter()
        .map(|t| {
            let path = commlab::artifacts::q_path(&dir, t.task_id);
            if !path.exists() {
                run.require(&format!("{}/q_{:04}.json", teachers_rel(family), t.task_id), &producer)?;
            }
            m.input(run, &path)?;
            Ok(read_q(&dir, t.task_id)?)
        })
        .collect::<Result<_>>()?;
    Ok((tasks, qs))
}

pub fn enumerate(run: &RunDir, argv: Vec<String>) -> Result<Manifest> {
    let mut m = Manifest::new("enumerate", argv, &run.config);
    for (family, tasks) in [(TaskFamily::Train, enumerate_training_tasks()), (TaskFamily::Test, enumerate_test_tasks())]
    {
        let path = run.path(&tasks_rel(family));
        write_tasks(&path, family, &tasks)?;
        m.output(run, &path)?;
        println!("{}: {} tasks", family.as_str(), tasks.len());
    }
    Ok(m)
}

pub fn train_teachers(run: &RunDir, argv: Vec<String>, family: TaskFamily) -> Result<Manifest> {
    let mut m = Manifest::new(&format!("train-teachers-{}", family.as_str()), argv, &run.config);
    let tasks = load_tasks(run, &mut m, family)?;
    let config = run.config.teacher();
    m.seeds.push(config.seed);
    let trained: Vec<TrainedTeacher<f64>> =
        tasks.par_iter().map(|t| train_teacher_unchecked(t, &config)).collect::<commlab::Result<_>>()?;

    let dir = run.path(&teachers_rel(family));
    let mut summary = String::from("task_id,episodes,env_steps,optimal\n");
    for t in &trained {
        write_q(&dir, t.task_id, &t.q)?;
        writeln!(summary, "{},{},{},{}", t.task_id, t.episodes, t.env_steps, t.optimal)?;
    }
    let summary_path = run.path(&format!("teachers/{}.csv", family.as_str()));
    fs::write(&summary_path, summary)?;
    m.output(run, &dir)?;
    m.output(run, &summary_path)?;

    let optimal = trained.iter().filter(|t| t.optimal).count();
    println!("{optimal}/{} teachers optimal", trained.len());
    if optimal < trained.len() {
        eprintln!("warning: {} teachers never passed the optimality check", trained.len() - optimal);
    }
    Ok(m)
}

/// One language, identified by how it was trained.
#[derive(Debug, Clone)]
struct LanguageSpec {
    feedback: bool,
    zeta: f64,
    activation: Activation,
    pattern: String,
    seed: u64,
}

impl LanguageSpec {
    fn group(&self) -> String {
        let mode = if self.feedback { format!("feedback-z{}", self.zeta) } else { "plain".into() };
        let act = match self.activation {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        };
        // A plain language never trains its student, so the pattern only
        // matters downstream.
        if self.feedback {
            format!("{mode}-{act}-p{}", self.pattern)
        } else {
            format!("{mode}-{act}")
        }
    }

    fn name(&self) -> String {
        format!("{}-s{}", self.group(), self.seed)
    }

    fn rel(&self, file: &str) -> String {
        format!("languages/{}/{file}", self.name())
    }

    fn train_command(&self) -> String {
        let mut cmd = format!("train-language --seed {}", self.seed);
        if self.feedback {
            write!(cmd, " --pattern {} --feedback --zeta {}", self.pattern, self.zeta).unwrap();
        }
        if self.activation == Activation::Linear {
            cmd.push_str(" --activation linear");
        }
        cmd
    }
}

fn specs(run: &RunDir, args: &LanguageArgs, default_seeds: usize) -> Result<Vec<LanguageSpec>> {
    default_pattern(&args.pattern)?;
    let feedback = args.feedback || !args.zeta.is_empty();
    let zetas = match (feedback, args.zeta.is_empty()) {
        (false, _) => vec![0.0],
        (true, true) => vec![run.config.zeta],
        (true, false) => args.zeta.clone(),
    };
    if zetas.iter().any(|z| !z.is_finite() || *z < 0.0) {
        bail!(commlab::Error::Contract("zeta must be finite and non-negative".into()));
    }
    let seeds = if args.seed.is_empty() { (0..default_seeds as u64).collect() } else { args.seed.clone() };
    let activation = args.activation.unwrap_or(run.config.activation);
    Ok(zetas
        .iter()
        .flat_map(|&zeta| {
            seeds.iter().map(move |&seed| LanguageSpec {
                feedback,
                zeta,
                activation,
                pattern: args.pattern.clone(),
                seed,
            })
        })
        .collect())
}

fn language_config(run: &RunDir, spec: &LanguageSpec, pattern: &GoalPattern) -> LanguageConfig {
    let mut c = run.config.language(spec.feedback, spec.seed);
    c.zeta = if spec.feedback { spec.zeta } else { run.config.zeta };
    c.sae_activation = spec.activation;
    if spec.feedback && pattern.pattern_id != "all" {
        c.student_goals = Some(pattern.trained_goals.clone());
    }
    c
}

pub fn train_language(run: &RunDir, argv: Vec<String>, args: &LanguageArgs) -> Result<Manifest> {
    let mut m = Manifest::new("train-language", argv, &run.config);
    let pattern = default_pattern(&args.pattern)?;
    let (tasks, qs) = load_teachers(run, &mut m, TaskFamily::Train)?;
    for spec in specs(run, args, run.config.language_seeds)? {
        let config = language_config(run, &spec, &pattern);
        m.seeds.push(spec.seed);
        let trained = language::train_language(&tasks, &qs, &config)?;
        let messages = encode_all(&trained.sae, &tasks, &qs)?;

        let write = |file: &str| run.path(&spec.rel(file));
        trained.sae.encoder.save(&write("encoder.json"))?;
        trained.sae.decoder.save(&write("decoder.json"))?;
        trained.student.store.save(&write("student.json"))?;
        write_json(
            &write("language.json"),
            &LanguageFile { version: commlab::artifacts::FORMAT_VERSION, config: config.clone() },
        )?;
        write_loss_curve(&write("loss.csv"), &trained.curve)?;
        write_messages(&write("messages.csv"), &tasks, &messages)?;
        m.output(run, &run.path(&format!("languages/{}", spec.name())))?;

        let f = &trained.final_losses;
        println!(
            "{}: reconstruction {:.4} sparsity {:.4} goal finding {:.4}",
            spec.name(),
            f.reconstruction,
            f.sparsity,
            f.goal_finding
        );
    }
    Ok(m)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct LanguageFile {
    version: u32,
    config: LanguageConfig,
}

struct Language {
    sae: Sae<f64>,
    student: Student<f64>,
    messages: MessageArchive<f64>,
}

fn load_store(run: &RunDir, m: &mut Manifest, rel: &str, producer: &str) -> Result<ParamStore> {
    let path = run.require(rel, producer)?;
    m.input(run, &path)?;
    ParamStore::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn load_language(run: &RunDir, m: &mut Manifest, spec: &LanguageSpec) -> Result<Language> {
    let producer = spec.train_command();
    let path = run.require(&spec.rel("language.json"), &producer)?;
    m.input(run, &path)?;
    let file: LanguageFile = read_json(&path)?;
    if file.version != commlab::artifacts::FORMAT_VERSION {
        bail!(commlab::Error::Version { expected: commlab::artifacts::FORMAT_VERSION, found: file.version });
    }
    let k = file.config.message_len;
    let sae = Sae {
        encoder: load_store(run, m, &spec.rel("encoder.json"), &producer)?,
        decoder: load_store(run, m, &spec.rel("decoder.json"), &producer)?,
        size: INTERIOR,
        message_len: k,
    };
    let student =
        Student { store: load_store(run, m, &spec.rel("student.json"), &producer)?, size: INTERIOR, message_len: k };
    let messages_path = run.require(&spec.rel("messages.csv"), &producer)?;
    m.input(run, &messages_path)?;
    Ok(Language { sae, student, messages: read_messages(&messages_path)? })
}

pub fn eval_student(
    run: &RunDir,
    argv: Vec<String>,
    args: &LanguageArgs,
    family: TaskFamily,
    goals: GoalSet,
    frozen: bool,
) -> Result<Manifest> {
    let mut m = Manifest::new(&format!("eval-student-{}-{}", family.as_str(), goals.as_str()), argv, &run.config);
    let pattern = default_pattern(&args.pattern)?;
    let test = match family {
        TaskFamily::Train => None,
        TaskFamily::Test => Some(load_teachers(run, &mut m, TaskFamily::Test)?),
    };
    let train_tasks = if test.is_none() { load_tasks(run, &mut m, TaskFamily::Train)? } else { Vec::new() };
    for spec in specs(run, args, run.config.language_seeds)? {
        m.seeds.push(spec.seed);
        let lang = load_language(run, &mut m, &spec)?;
        let student = if frozen {
            let producer = format!("frozen-student --seed {} --pattern {}", spec.seed, spec.pattern);
            Student {
                store: load_store(run, &mut m, &spec.rel("frozen_student.json"), &producer)?,
                ..lang.student.clone()
            }
        } else {
            lang.student.clone()
        };
        let (tasks, archive) = match &test {
            Some((tasks, qs)) => (tasks.as_slice(), encode_all(&lang.sae, tasks, qs)?),
            None => (train_tasks.as_slice(), lang.messages),
        };
        let selected = pattern.select(tasks, goals);
        if selected.is_empty() {
            bail!(commlab::Error::Contract(format!(
                "pattern {} leaves no {} goals",
                pattern.pattern_id,
                goals.as_str()
            )));
        }
        let eval = EvalSpec {
            tasks: &selected,
            family,
            goal_set: goals,
            pattern_id: &pattern.pattern_id,
            budget_factor: run.config.k_budget_factor,
            misinform_seed: spec.seed,
        };
        let report = solve_report(&student, &archive, &eval)?;
        let suffix = if frozen { "-frozen" } else { "" };
        let path = run.path(&spec.rel(&format!("solve-{}-{}{suffix}.csv", family.as_str(), goals.as_str())));
        write_solve_report(&path, &report)?;
        m.output(run, &path)?;
        let means: Vec<String> =
            Agent::ALL.iter().filter_map(|&a| report.mean(a).map(|v| format!("{} {v:.3}", a.as_str()))).collect();
        println!("{}: {}", spec.name(), means.join(", "));
    }
    Ok(m)
}

pub fn frozen_student(run: &RunDir, argv: Vec<String>, args: &LanguageArgs) -> Result<Manifest> {
    let mut m = Manifest::new("frozen-student", argv, &run.config);
    let pattern = default_pattern(&args.pattern)?;
    let tasks = load_tasks(run, &mut m, TaskFamily::Train)?;
    for spec in specs(run, args, run.config.language_seeds)? {
        m.seeds.push(spec.seed);
        let lang = load_language(run, &mut m, &spec)?;
        let config = run.config.frozen_student(spec.seed);
        let trained = train_student_frozen(&lang.messages, &tasks, &pattern, &config)?;
        let store_path = run.path(&spec.rel("frozen_student.json"));
        trained.student.store.save(&store_path)?;
        let mut curve = String::from("epoch,goal_finding\n");
        for (e, v) in trained.curve.iter().enumerate() {
            writeln!(curve, "{e},{v}")?;
        }
        let curve_path = run.path(&spec.rel("frozen_loss.csv"));
        fs::write(&curve_path, curve)?;
        m.output(run, &store_path)?;
        m.output(run, &curve_path)?;
        println!("{}: goal finding {:.4} -> {:.4}", spec.name(), trained.curve[0], trained.curve.last().unwrap());
    }
    Ok(m)
}

pub fn loopback(run: &RunDir, argv: Vec<String>, args: &LanguageArgs) -> Result<Manifest> {
    let mut m = Manifest::new("loopback", argv, &run.config);
    let pattern = default_pattern(&args.pattern)?;
    let tasks = load_tasks(run, &mut m, TaskFamily::Train)?;
    let trained = pattern.select(&tasks, GoalSet::Trained);
    let specs = specs(run, args, run.config.loopback_seeds)?;
    let mut groups: Vec<(String, Vec<commlab::loopback::SurvivalRow>)> = Vec::new();
    for spec in &specs {
        m.seeds.push(spec.seed);
        let lang = load_language(run, &mut m, spec)?;
        let out = run_loopback(
            &lang.sae,
            &lang.student,
            &lang.messages,
            &tasks,
            &trained,
            &pattern.pattern_id,
            spec.seed,
            run.config.k_budget_factor,
            run.config.loopback_output,
        )?;
        let degraded = run.path(&spec.rel("degraded_messages.csv"));
        write_messages(&degraded, &tasks, &out.degraded)?;
        let report = run.path(&spec.rel("solve-loopback.csv"));
        write_solve_report(&report, &out.report)?;
        m.output(run, &degraded)?;
        m.output(run, &report)?;
        let s = &out.survival;
        println!(
            "{}: informed {:.3} misinformed {:.3} random {:.3} -> {}",
            spec.name(),
            s.informed,
            s.misinformed,
            s.random,
            if s.survived { "survives" } else { "dropped" }
        );
        match groups.iter_mut().find(|(g, _)| *g == spec.group()) {
            Some((_, rows)) => rows.push(out.survival),
            None => groups.push((spec.group(), vec![out.survival])),
        }
    }
    for (group, rows) in &groups {
        let path = run.path(&format!("loopback/{group}.csv"));
        write_survival(&path, rows)?;
        m.output(run, &path)?;
        println!("{group}: {}/{} languages survive", rows.iter().filter(|r| r.survived).count(), rows.len());
    }
    Ok(m)
}

fn write_tables(
    run: &RunDir,
    m: &mut Manifest,
    prefix: &str,
    tasks: &[Task],
    vectors: &[Vec<f64>],
    first: &[Action],
) -> Result<()> {
    let p = pca(vectors)?;
    let pca_path = run.path(&format!("{prefix}-pca.csv"));
    write_pca(&pca_path, tasks, &p, first)?;
    let mut rows = Vec::new();
    for grouping in [Grouping::Wall, Grouping::Goal] {
        let r = anova(&group_tasks(tasks, vectors, grouping)?)?;
        rows.push(AnovaRow::new(grouping.as_str(), &r));
    }
    let anova_path = run.path(&format!("{prefix}-anova.csv"));
    write_anova(&anova_path, &rows)?;
    m.output(run, &pca_path)?;
    m.output(run, &anova_path)?;
    let betas: Vec<String> = rows.iter().map(|r| format!("beta {} {:.3}", r.grouping, r.beta)).collect();
    println!("{prefix}: explained variance pc1 {:.3}, {}", p.explained_variance_ratio[0], betas.join(", "));
    Ok(())
}

pub fn analyze(run: &RunDir, argv: Vec<String>, args: &LanguageArgs, target: Target) -> Result<Manifest> {
    let name = match target {
        Target::Messages => "messages",
        Target::TeacherQ => "teacher-q",
        Target::StudentQ => "student-q",
    };
    let mut m = Manifest::new(&format!("analyze-{name}"), argv, &run.config);
    if target == Target::TeacherQ {
        let (tasks, qs) = load_teachers(run, &mut m, TaskFamily::Train)?;
        let vectors: Vec<Vec<f64>> = qs.iter().map(|q| q.values.clone()).collect();
        let first: Vec<Action> = qs.iter().map(|q| q.greedy(Cell::START)).collect();
        write_tables(run, &mut m, "analysis/teacher-q", &tasks, &vectors, &first)?;
        return Ok(m);
    }
    let tasks = load_tasks(run, &mut m, TaskFamily::Train)?;
    for spec in specs(run, args, run.config.language_seeds)? {
        m.seeds.push(spec.seed);
        let lang = load_language(run, &mut m, &spec)?;
        let (vectors, first): (Vec<Vec<f64>>, Vec<Action>) = match target {
            Target::Messages => tasks
                .iter()
                .map(|t| {
                    let msg = lang.messages.get(t.task_id)?;
                    Ok((msg.to_vec(), first_action(&lang.student, t, msg)?))
                })
                .collect::<commlab::Result<Vec<_>>>()?
                .into_iter()
                .unzip(),
            _ => student_q_matrices(&lang.student, &lang.messages, &tasks, run.config.loopback_output)?
                .into_iter()
                .map(|q| {
                    let a = q.greedy(Cell::START);
                    (q.values, a)
                })
                .unzip(),
        };
        write_tables(run, &mut m, &format!("languages/{}/{name}", spec.name()), &tasks, &vectors, &first)?;
    }
    Ok(m)
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut v: Vec<_> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn report(run: &RunDir, argv: Vec<String>, with_svg: bool) -> Result<Manifest> {
    let mut m = Manifest::new("report", argv, &run.config);
    let mut summary = String::from("language,evaluation,agent,tasks,mean_solve\n");
    let mut bars: Vec<svg::BarGroup> = Vec::new();
    let mut scatters = Vec::new();
    for lang_dir in sorted_entries(&run.path("languages"))? {
        let language = lang_dir.file_name().unwrap().to_string_lossy().into_owned();
        for file in sorted_entries(&lang_dir)? {
            let stem = file_stem(&file);
            if let Some(evaluation) = stem.strip_prefix("solve-") {
                m.input(run, &file)?;
                let r = read_solve_report(&file)?;
                let mut values = Vec::new();
                for agent in Agent::ALL {
                    let n = r.rows.iter().filter(|row| row.agent == agent).count();
                    if let Some(v) = r.mean(agent) {
                        writeln!(summary, "{language},{evaluation},{},{n},{v}", agent.as_str())?;
                        values.push((agent.as_str().to_string(), v));
                    }
                }
                bars.push(svg::BarGroup { label: format!("{language} {evaluation}"), values });
            } else if stem == "messages-pca" {
                m.input(run, &file)?;
                scatters.push((language.clone(), svg::read_pca_points(&file)?));
            }
        }
    }
    let mut survival = String::from("group,languages,survived,mean_informed,mean_misinformed\n");
    for file in sorted_entries(&run.path("loopback"))? {
        m.input(run, &file)?;
        let rows = read_survival(&file)?;
        let n = rows.len().max(1) as f64;
        writeln!(
            survival,
            "{},{},{},{},{}",
            file_stem(&file),
            rows.len(),
            rows.iter().filter(|r| r.survived).count(),
            rows.iter().map(|r| r.informed).sum::<f64>() / n,
            rows.iter().map(|r| r.misinformed).sum::<f64>() / n
        )?;
    }
    if bars.is_empty() {
        bail!(commlab::Error::MissingArtifact(
            "no solve reports under languages/ (run `commlab eval-student` first)".into()
        ));
    }
    let outputs = [("report/summary.csv", summary), ("report/loopback.csv", survival)];
    for (rel, body) in outputs {
        let path = run.path(rel);
        fs::create_dir_all(path.parent().unwrap())?;
        fs::write(&path, body)?;
        m.output(run, &path)?;
    }
    if with_svg {
        let path = run.path("report/solve.svg");
        fs::write(&path, svg::bar_chart("Mean solve rate", &bars))?;
        m.output(run, &path)?;
        for (language, points) in &scatters {
            let path = run.path(&format!("report/pca-{language}.svg"));
            fs::write(&path, svg::scatter(&format!("{language}: messages, PC1 vs PC2"), points))?;
            m.output(run, &path)?;
        }
    }
    println!("{} solve reports, {} PCA tables", bars.len(), scatters.len());
    Ok(m)
}
