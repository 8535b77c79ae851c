//! The message-conditioned student, exact solve-rate evaluation, the
//! baseline walkers, misinformation, and training on frozen messages.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Activation, ParamStore, Trace};
use crate::error::{contract, Error, Result};
use crate::gridworld::{Action, Cell, Maze, Task, TaskFamily};
use crate::language::{
    goal_finding_loss, goal_finding_with_grad, occupancy_after_k, policy_from_outputs, MessageArchive,
};
use crate::scalar::Scalar;
use crate::teacher::{mlp_layers, QMatrix};

/// Forward traces of the open cells, in evaluation order.
pub type CellTraces<T> = Vec<(Cell, Trace<T>)>;

/// MLP mapping `(x, y, message)` to four action preferences.
#[derive(Debug, Clone, PartialEq)]
pub struct Student<T> {
    pub store: ParamStore<T>,
    pub size: usize,
    pub message_len: usize,
}

impl<T: Scalar> Student<T> {
    pub fn new(size: usize, message_len: usize, activation: Activation, seed: u64) -> Result<Self> {
        Ok(Student { store: ParamStore::new(mlp_layers(message_len, activation), seed)?, size, message_len })
    }

    pub fn zeros(size: usize, message_len: usize) -> Result<Self> {
        let net = crate::diffnet::Network::zeros(mlp_layers(message_len, Activation::Relu))?;
        Ok(Student { store: ParamStore::from_network(net, 0), size, message_len })
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    fn input(&self, cell: Cell, message: &[T]) -> Vec<T> {
        let mut v = Vec::with_capacity(2 + message.len());
        v.push(T::from_usize_lossy(cell.x));
        v.push(T::from_usize_lossy(cell.y));
        v.extend_from_slice(message);
        v
    }

    fn check_message(&self, message: &[T]) -> Result<()> {
        if message.len() != self.message_len {
            return Err(Error::Shape { expected: self.message_len, actual: message.len() });
        }
        Ok(())
    }

    /// Raw outputs at every open cell (wall rows zero) with their traces.
    pub fn forward_all(&self, task: &Task, message: &[T]) -> Result<(CellTraces<T>, QMatrix<T>)> {
        self.check_message(message)?;
        let mut q = QMatrix::zeros(task.size());
        let mut traces = Vec::with_capacity(task.size() * task.size());
        for cell in task.maze.open_cells() {
            let trace = self.store.net.forward(&self.input(cell, message))?;
            q.row_mut(cell).copy_from_slice(trace.output());
            traces.push((cell, trace));
        }
        Ok((traces, q))
    }

    /// Raw outputs only.
    pub fn outputs(&self, task: &Task, message: &[T]) -> Result<QMatrix<T>> {
        Ok(self.forward_all(task, message)?.1)
    }
}

/// Softmax action probabilities at every open cell; wall rows are zero.
pub fn student_policy<T: Scalar>(student: &Student<T>, task: &Task, message: &[T]) -> Result<Vec<T>> {
    let q = student.outputs(task, message)?;
    let mut policy = policy_from_outputs(&q.values);
    for w in &task.maze.walls {
        let i = w.index(task.size()) * 4;
        policy[i..i + 4].fill(T::zero());
    }
    Ok(policy)
}

/// Action the student prefers at the start cell.
pub fn first_action<T: Scalar>(student: &Student<T>, task: &Task, message: &[T]) -> Result<Action> {
    let q = student.outputs(task, message)?;
    Ok(q.greedy(Cell::START))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Informed,
    Misinformed,
    Random,
    SmartRandom,
}

impl Agent {
    pub const ALL: [Agent; 4] = [Agent::Informed, Agent::Misinformed, Agent::Random, Agent::SmartRandom];

    pub fn as_str(self) -> &'static str {
        match self {
            Agent::Informed => "informed",
            Agent::Misinformed => "misinformed",
            Agent::Random => "random",
            Agent::SmartRandom => "smart_random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    SmartRandom,
}

/// Uniform walker, or uniform over the moves that do not hit a wall.
pub fn baseline_policy<T: Scalar>(kind: BaselineKind, maze: &Maze) -> Vec<T> {
    let n = maze.size;
    let mut policy = vec![T::zero(); n * n * 4];
    for cell in maze.open_cells() {
        let i = cell.index(n) * 4;
        match kind {
            BaselineKind::Random => policy[i..i + 4].fill(T::c(0.25)),
            BaselineKind::SmartRandom => {
                let legal: Vec<Action> = Action::ALL.into_iter().filter(|&a| maze.target(cell, a).is_some()).collect();
                let p = T::one() / T::from_usize_lossy(legal.len());
                for a in legal {
                    policy[i + a.index()] = p;
                }
            }
        }
    }
    policy
}

/// Goal mass after `budget_factor * k_opt` steps.
pub fn solve_probability<T: Scalar>(policy: &[T], task: &Task, budget_factor: usize) -> Result<T> {
    let k = budget_factor * task.shortest_path_length()?;
    Ok(occupancy_after_k(policy, task, k)?[task.goal.index(task.size())])
}

/// Message of a uniformly drawn other task. The draw depends only on
/// `seed` and the task id.
pub fn misinform<T: Scalar>(archive: &MessageArchive<T>, task: &Task, seed: u64) -> Result<Vec<T>> {
    let pool: Vec<usize> = archive.task_ids().collect();
    misinform_within(archive, &pool, task, seed)
}

/// [`misinform`] restricted to the task ids in `pool`.
pub fn misinform_within<T: Scalar>(
    archive: &MessageArchive<T>,
    pool: &[usize],
    task: &Task,
    seed: u64,
) -> Result<Vec<T>> {
    let others: Vec<usize> = pool.iter().copied().filter(|&id| id != task.task_id).collect();
    if others.is_empty() {
        return Err(contract("misinformation needs an archive of at least two messages"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ task.task_id as u64);
    let pick = others[rng.gen_range(0..others.len())];
    Ok(archive.get(pick)?.to_vec())
}

/// Where an agent's message comes from.
pub enum MessageSource<'a, T> {
    Correct(&'a MessageArchive<T>),
    /// Another task's message, drawn from `pool` (every archived task when `None`).
    Misinformed {
        archive: &'a MessageArchive<T>,
        pool: Option<&'a [usize]>,
        seed: u64,
    },
}

impl<T: Scalar> MessageSource<'_, T> {
    pub fn message(&self, task: &Task) -> Result<Vec<T>> {
        match self {
            MessageSource::Correct(a) => Ok(a.get(task.task_id)?.to_vec()),
            MessageSource::Misinformed { archive, pool: None, seed } => misinform(archive, task, *seed),
            MessageSource::Misinformed { archive, pool: Some(pool), seed } => {
                misinform_within(archive, pool, task, *seed)
            }
        }
    }
}

/// Per-task solve probabilities of a student under a message source.
pub fn evaluate<T: Scalar>(
    student: &Student<T>,
    tasks: &[Task],
    source: &MessageSource<'_, T>,
    budget_factor: usize,
) -> Result<Vec<T>> {
    tasks
        .iter()
        .map(|task| {
            let m = source.message(task)?;
            let policy = student_policy(student, task, &m)?;
            solve_probability(&policy, task, budget_factor)
        })
        .collect()
}

pub fn evaluate_baseline<T: Scalar>(kind: BaselineKind, tasks: &[Task], budget_factor: usize) -> Result<Vec<T>> {
    tasks.iter().map(|t| solve_probability(&baseline_policy::<T>(kind, &t.maze), t, budget_factor)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalSet {
    Trained,
    Unknown,
}

impl GoalSet {
    pub fn as_str(self) -> &'static str {
        match self {
            GoalSet::Trained => "trained",
            GoalSet::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for GoalSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trained" => Ok(GoalSet::Trained),
            "unknown" => Ok(GoalSet::Unknown),
            other => Err(contract(format!("unknown goal set {other:?}"))),
        }
    }
}

/// Set of goal cells a student is trained on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalPattern {
    pub pattern_id: String,
    pub trained_goals: Vec<Cell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternFile {
    pub pattern_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub trained_goals: Vec<[usize; 2]>,
}

impl GoalPattern {
    pub fn from_file(file: PatternFile) -> Result<Self> {
        if file.trained_goals.is_empty() {
            return Err(contract(format!("pattern {} has no goals", file.pattern_id)));
        }
        Ok(GoalPattern {
            pattern_id: file.pattern_id,
            trained_goals: file.trained_goals.into_iter().map(|[x, y]| Cell::new(x, y)).collect(),
        })
    }

    pub fn to_file(&self) -> PatternFile {
        PatternFile {
            pattern_id: self.pattern_id.clone(),
            description: None,
            trained_goals: self.trained_goals.iter().map(|c| [c.x, c.y]).collect(),
        }
    }

    pub fn parse(json: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(json)?)
    }

    pub fn contains(&self, goal: Cell) -> bool {
        self.trained_goals.contains(&goal)
    }

    /// Tasks whose goal falls in (trained) or outside (unknown) the pattern.
    pub fn select(&self, tasks: &[Task], set: GoalSet) -> Vec<Task> {
        tasks.iter().filter(|t| self.contains(t.goal) == (set == GoalSet::Trained)).cloned().collect()
    }

    /// The pattern covering every goal cell.
    pub fn all(size: usize) -> Self {
        let goals = (0..size * size).map(|i| Cell::new(i % size, i / size)).filter(|c| *c != Cell::START).collect();
        GoalPattern { pattern_id: "all".into(), trained_goals: goals }
    }
}

const DEFAULT_PATTERNS: [&str; 7] = [
    include_str!("../patterns/i.json"),
    include_str!("../patterns/ii.json"),
    include_str!("../patterns/iii.json"),
    include_str!("../patterns/iv.json"),
    include_str!("../patterns/v.json"),
    include_str!("../patterns/vi.json"),
    include_str!("../patterns/vii.json"),
];

/// The seven shipped goal patterns, `i` (checkerboard) through `vii`.
pub fn default_patterns() -> Vec<GoalPattern> {
    DEFAULT_PATTERNS.iter().map(|s| GoalPattern::parse(s).expect("bundled pattern parses")).collect()
}

pub fn default_pattern(id: &str) -> Result<GoalPattern> {
    if id == "all" {
        return Ok(GoalPattern::all(crate::gridworld::INTERIOR));
    }
    default_patterns()
        .into_iter()
        .find(|p| p.pattern_id == id)
        .ok_or_else(|| contract(format!("unknown pattern {id:?}")))
}

/// One CSV row of a solve report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRow {
    pub agent: Agent,
    pub family: TaskFamily,
    pub goal_set: GoalSet,
    pub pattern_id: String,
    pub task_id: usize,
    pub solve_prob: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub rows: Vec<SolveRow>,
}

impl SolveReport {
    pub fn mean(&self, agent: Agent) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.agent == agent).map(|r| r.solve_prob).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Evaluation of one student on a task list
#[derive(Debug, Clone)]
pub struct EvalSpec<'a> {
    pub tasks: &'a [Task],
    pub family: TaskFamily,
    pub goal_set: GoalSet,
    pub pattern_id: &'a str,
    pub budget_factor: usize,
    pub misinform_seed: u64,
}

/// Informed, misinformed and both walkers on the same tasks and budgets.
pub fn solve_report<T: Scalar>(
    student: &Student<T>,
    archive: &MessageArchive<T>,
    spec: &EvalSpec<'_>,
) -> Result<SolveReport> {
    let informed = evaluate(student, spec.tasks, &MessageSource::Correct(archive), spec.budget_factor)?;
    let pool: Vec<usize> = spec.tasks.iter().map(|t| t.task_id).collect();
    let misinformed = evaluate(
        student,
        spec.tasks,
        &MessageSource::Misinformed { archive, pool: Some(&pool), seed: spec.misinform_seed },
        spec.budget_factor,
    )?;
    let random = evaluate_baseline::<T>(BaselineKind::Random, spec.tasks, spec.budget_factor)?;
    let smart = evaluate_baseline::<T>(BaselineKind::SmartRandom, spec.tasks, spec.budget_factor)?;
    let mut rows = Vec::with_capacity(spec.tasks.len() * 4);
    for (agent, probs) in [
        (Agent::Informed, informed),
        (Agent::Misinformed, misinformed),
        (Agent::Random, random),
        (Agent::SmartRandom, smart),
    ] {
        for (task, p) in spec.tasks.iter().zip(probs) {
            rows.push(SolveRow {
                agent,
                family: spec.family,
                goal_set: spec.goal_set,
                pattern_id: spec.pattern_id.to_string(),
                task_id: task.task_id,
                solve_prob: p.as_f64(),
            });
        }
    }
    Ok(SolveReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenStudentConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub gamma: Option<f64>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for FrozenStudentConfig {
    fn default() -> Self {
        FrozenStudentConfig {
            epochs: crate::language::EPOCHS,
            learning_rate: crate::language::LEARNING_RATE,
            gamma: None,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrozenStudentRun<T> {
    pub student: Student<T>,
    /// Mean goal-finding loss: entry 0 before training, entry `e` during epoch `e`.
    pub curve: Vec<T>,
}

/// Trains a fresh student with the goal-finding loss alone on the tasks of
/// `tasks` whose goal lies in `pattern`. Messages are read, never changed.
pub fn train_student_frozen<T: Scalar>(
    messages: &MessageArchive<T>,
    tasks: &[Task],
    pattern: &GoalPattern,
    config: &FrozenStudentConfig,
) -> Result<FrozenStudentRun<T>> {
    let selected = pattern.select(tasks, GoalSet::Trained);
    if pattern.trained_goals.is_empty() || selected.is_empty() {
        return Err(contract(format!("pattern {} selects no tasks", pattern.pattern_id)));
    }
    let size = selected[0].size();
    let message_len = messages.get(selected[0].task_id)?.len();
    let mut student = Student::<T>::new(size, message_len, config.activation, config.seed)?;
    let gamma = T::c(config.gamma.unwrap_or_else(|| crate::language::default_gamma(size, message_len)));
    let lr = T::c(config.learning_rate);
    let count = T::from_usize_lossy(selected.len());

    let mut initial = T::zero();
    for task in &selected {
        let q = student.outputs(task, messages.get(task.task_id)?)?;
        initial = initial + goal_finding_loss(&q, task, gamma, task.shortest_path_length()?)?;
    }
    let mut curve = vec![initial / count];
    for _ in 0..config.epochs {
        let mut total = T::zero();
        for task in &selected {
            let m = messages.get(task.task_id)?;
            let (traces, q) = student.forward_all(task, m)?;
            let gf = goal_finding_with_grad(&q, task, gamma, task.shortest_path_length()?)?;
            total = total + gf.loss;
            let mut grad = vec![T::zero(); student.param_count()];
            for (cell, trace) in traces {
                let i = cell.index(size) * 4;
                student.store.net.backward_into(&trace, &gf.grad[i..i + 4], &mut grad)?;
            }
            student.store.adam_step(&grad, lr)?;
        }
        curve.push(total / count);
    }
    Ok(FrozenStudentRun { student, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::enumerate_training_tasks;

    fn empty_task(goal: (usize, usize), id: usize) -> Task {
        Task::new(Maze::empty(4), goal.into(), id).unwrap()
    }

    #[test]
    fn parameter_count() {
        assert_eq!(Student::<f64>::new(4, 5, Activation::Relu, 0).unwrap().param_count(), 804);
    }

    #[test]
    fn zero_student_is_uniform() {
        let s = Student::<f64>::zeros(4, 5).unwrap();
        let task = empty_task((2, 2), 0);
        let p = student_policy(&s, &task, &[0.3; 5]).unwrap();
        assert!(p.iter().all(|&v| v == 0.25));
        assert!(student_policy(&s, &task, &[0.3; 4]).is_err());
    }

    #[test]
    fn baselines() {
        let maze = Maze::empty(4);
        let smart = baseline_policy::<f64>(BaselineKind::SmartRandom, &maze);
        assert_eq!(&smart[0..4], &[0.5, 0.5, 0.0, 0.0]);
        let i = Cell::new(1, 0).index(4) * 4;
        for a in [Action::Right, Action::Up, Action::Left] {
            assert!((smart[i + a.index()] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(baseline_policy::<f64>(BaselineKind::Random, &maze).iter().all(|&p| p == 0.25));
    }

    #[test]
    fn random_walker_two_steps() {
        // Start (0,0), goal (0,1): reach in step 1 w.p. 1/4; otherwise at (0,0)
        // w.p. 1/2 or (1,0) w.p. 1/4. From (0,0) another 1/4, from (1,0) none.
        let task = empty_task((0, 1), 0);
        let p = solve_probability(&baseline_policy::<f64>(BaselineKind::Random, &task.maze), &task, 2).unwrap();
        assert!((p - (0.25 + 0.5 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn smart_walker_dominates_random_walker() {
        let tasks = enumerate_training_tasks();
        let r = evaluate_baseline::<f64>(BaselineKind::Random, &tasks, 2).unwrap();
        let s = evaluate_baseline::<f64>(BaselineKind::SmartRandom, &tasks, 2).unwrap();
        assert!(r.iter().zip(&s).all(|(r, s)| s >= r));
    }

    #[test]
    fn misinform_contract() {
        let mut archive = MessageArchive::default();
        archive.insert(0, vec![0.0; 5]);
        let t0 = empty_task((1, 0), 0);
        assert!(misinform(&archive, &t0, 1).is_err());
        archive.insert(1, vec![1.0; 5]);
        for seed in 0..20 {
            assert_eq!(misinform(&archive, &t0, seed).unwrap(), vec![1.0; 5]);
        }
        for id in 2..30 {
            archive.insert(id, vec![id as f64; 5]);
        }
        for seed in 0..50 {
            let m = misinform(&archive, &t0, seed).unwrap();
            assert_ne!(m, vec![0.0; 5]);
            assert_eq!(m, misinform(&archive, &t0, seed).unwrap());
        }
    }

    #[test]
    fn patterns_load() {
        let p = default_patterns();
        assert_eq!(p.len(), 7);
        assert_eq!(p[0].pattern_id, "i");
        assert!(p[0].trained_goals.iter().all(|c| (c.x + c.y) % 2 == 0 && *c != Cell::START));
        assert!(GoalPattern::parse(r#"{"pattern_id":"x","trained_goals":[]}"#).is_err());
        let tasks = enumerate_training_tasks();
        let trained = p[0].select(&tasks, GoalSet::Trained).len();
        let unknown = p[0].select(&tasks, GoalSet::Unknown).len();
        assert_eq!(trained + unknown, 225);
    }

    #[test]
    fn frozen_training_reduces_loss() {
        let tasks: Vec<Task> = (0..4).map(|i| empty_task([(1, 0), (0, 1), (1, 1), (2, 0)][i], i)).collect();
        let archive = MessageArchive::from_messages(
            (0..4).map(|i| crate::language::Message { task_id: i, values: vec![i as f64 * 0.5 - 1.0; 5] }),
        );
        let pattern = GoalPattern::all(4);
        let config = FrozenStudentConfig { epochs: 60, learning_rate: 5e-3, ..Default::default() };
        let run = train_student_frozen(&archive, &tasks, &pattern, &config).unwrap();
        assert!(run.curve.last().unwrap() < &run.curve[0]);
        let empty = GoalPattern { pattern_id: "none".into(), trained_goals: vec![] };
        assert!(train_student_frozen(&archive, &tasks, &empty, &config).is_err());
    }
}
