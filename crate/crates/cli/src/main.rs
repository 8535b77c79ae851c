//! `commlab`: runs the teacher / language / student pipeline into a run
//! directory, one subcommand per stage.

mod commands;
mod run;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use commlab::diffnet::Activation;
use commlab::student::GoalSet;
use commlab::TaskFamily;

#[derive(Parser, Debug)]
#[command(name = "commlab", version, about = "Teacher-student communication experiments in grid-world mazes")]
struct Cli {
    /// Directory holding every artifact of one experiment.
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,
    /// Flat JSON config; defaults to the run's snapshot, then built-in values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training and test task families.
    Enumerate,
    /// Train one deep-Q teacher per task and archive its Q-matrix.
    TrainTeachers {
        #[arg(long, default_value = "train")]
        family: FamilyArg,
    },
    /// Train sparse-autoencoder languages (and students, with feedback).
    TrainLanguage(LanguageArgs),
    /// Solve rates of the informed, misinformed and random agents.
    EvalStudent {
        #[command(flatten)]
        language: LanguageArgs,
        #[arg(long, default_value = "train")]
        family: FamilyArg,
        #[arg(long, default_value = "trained")]
        goals: GoalsArg,
        /// Use the student from `frozen-student` instead of the co-trained one.
        #[arg(long)]
        frozen: bool,
    },
    /// Train a fresh student on fixed messages.
    FrozenStudent(LanguageArgs),
    /// Re-encode the student's outputs and evaluate the degraded messages.
    Loopback(LanguageArgs),
    /// PCA and grouped-variance tables.
    Analyze {
        #[command(flatten)]
        language: LanguageArgs,
        #[arg(long, default_value = "messages")]
        target: Target,
    },
    /// Aggregate solve reports and loopback tables, optionally as SVG.
    Report {
        #[arg(long)]
        svg: bool,
    },
}

/// Selects languages by training settings. Seeds and zetas take comma lists.
#[derive(Args, Debug, Clone)]
pub struct LanguageArgs {
    #[arg(long)]
    pub feedback: bool,
    /// Defaults to 0..language_seeds (0..loopback_seeds for `loopback`).
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    /// Feedback weight; giving it implies --feedback.
    #[arg(long, value_delimiter = ',')]
    pub zeta: Vec<f64>,
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Goal pattern the student trains on: i..vii or all.
    #[arg(long, default_value = "all")]
    pub pattern: String,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FamilyArg {
    Train,
    Test,
}

impl From<FamilyArg> for TaskFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Train => TaskFamily::Train,
            FamilyArg::Test => TaskFamily::Test,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum GoalsArg {
    Trained,
    Unknown,
}

impl From<GoalsArg> for GoalSet {
    fn from(g: GoalsArg) -> Self {
        match g {
            GoalsArg::Trained => GoalSet::Trained,
            GoalsArg::Unknown => GoalSet::Unknown,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Messages,
    TeacherQ,
    StudentQ,
}

const EXIT_CONTRACT: u8 = 1;
const EXIT_MISSING: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONTRACT) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<commlab::Error>() {
                Some(commlab::Error::MissingArtifact(_)) => ExitCode::from(EXIT_MISSING),
                _ => ExitCode::from(EXIT_CONTRACT),
            }
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let run = run::RunDir::open(&cli.run_dir, cli.config.as_deref())?;
    let argv = arguments_without_run_dir(std::env::args().skip(1));
    let manifest = match cli.command {
        Command::Enumerate => commands::enumerate(&run, argv)?,
        Command::TrainTeachers { family } => commands::train_teachers(&run, argv, family.into())?,
        Command::TrainLanguage(l) => commands::train_language(&run, argv, &l)?,
        Command::EvalStudent { language, family, goals, frozen } => {
            commands::eval_student(&run, argv, &language, family.into(), goals.into(), frozen)?
        }
        Command::FrozenStudent(l) => commands::frozen_student(&run, argv, &l)?,
        Command::Loopback(l) => commands::loopback(&run, argv, &l)?,
        Command::Analyze { language, target } => commands::analyze(&run, argv, &language, target)?,
        Command::Report { svg } => commands::report(&run, argv, svg)?,
    };
    let path = manifest.finish(&run)?;
    println!("manifest: {}", path.display());
    Ok(())
}

/// The manifest records arguments, not where the run directory happens to live.
fn arguments_without_run_dir(args: impl Iterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in args {
        if std::mem::take(&mut skip) || a.starts_with("--run-dir=") {
            continue;
        }
        if a == "--run-dir" {
            skip = true;
            continue;
        }
        out.push(a);
    }
    out
}
