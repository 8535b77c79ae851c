//! Closing the loop: the student's own task outputs are re-encoded through
//! the frozen language and fed back to it.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gridworld::{Task, TaskFamily};
use crate::language::{policy_from_outputs, MessageArchive, Sae};
use crate::scalar::Scalar;
use crate::student::{solve_report, Agent, EvalSpec, GoalSet, SolveReport, Student};
use crate::teacher::QMatrix;

/// What of the student's output is handed to the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudentOutputMode {
    /// Raw pre-softmax outputs.
    #[default]
    Raw,
    /// Per-cell softmax probabilities.
    Softmax,
}

impl std::str::FromStr for StudentOutputMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(StudentOutputMode::Raw),
            "softmax" => Ok(StudentOutputMode::Softmax),
            other => Err(crate::error::contract(format!("unknown student output mode {other:?}"))),
        }
    }
}

/// The student's `[x][y][action]` outputs per task, wall rows zeroed.
pub fn student_q_matrices<T: Scalar>(
    student: &Student<T>,
    messages: &MessageArchive<T>,
    tasks: &[Task],
    mode: StudentOutputMode,
) -> Result<Vec<QMatrix<T>>> {
    tasks
        .iter()
        .map(|task| {
            let mut q = student.outputs(task, messages.get(task.task_id)?)?;
            if mode == StudentOutputMode::Softmax {
                q.values = policy_from_outputs(&q.values);
            }
            q.zero_walls(&task.maze);
            Ok(q)
        })
        .collect()
}

/// Encodes the student matrices with the frozen encoder.
pub fn degrade<T: Scalar>(sae: &Sae<T>, tasks: &[Task], student_qs: &[QMatrix<T>]) -> Result<MessageArchive<T>> {
    crate::language::encode_all(sae, tasks, student_qs)
}

/// A language survives when the informed student strictly beats both the
/// misinformed student and the plain random walker.
pub fn survives(informed: f64, misinformed: f64, random: f64) -> bool {
    informed > misinformed && informed > random
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRow {
    pub language_seed: u64,
    pub informed: f64,
    pub misinformed: f64,
    pub random: f64,
    pub smart_random: f64,
    pub survived: bool,
}

impl SurvivalRow {
    pub fn from_report(language_seed: u64, report: &SolveReport) -> Self {
        let mean = |a| report.mean(a).unwrap_or(0.0);
        let (informed, misinformed, random, smart_random) =
            (mean(Agent::Informed), mean(Agent::Misinformed), mean(Agent::Random), mean(Agent::SmartRandom));
        SurvivalRow {
            language_seed,
            informed,
            misinformed,
            random,
            smart_random,
            survived: survives(informed, misinformed, random),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopbackOutcome<T> {
    pub student_qs: Vec<QMatrix<T>>,
    pub degraded: MessageArchive<T>,
    /// Evaluation with degraded messages on the trained goal set.
    pub report: SolveReport,
    pub survival: SurvivalRow,
}

/// One closing-the-loop generation for a trained language and student.
/// `first_generation` holds the messages the student was trained with;
/// `tasks` are all tasks to re-encode, `trained` the evaluation tasks.
#[allow(clippy::too_many_arguments)]
pub fn run_loopback<T: Scalar>(
    sae: &Sae<T>,
    student: &Student<T>,
    first_generation: &MessageArchive<T>,
    tasks: &[Task],
    trained: &[Task],
    pattern_id: &str,
    language_seed: u64,
    budget_factor: usize,
    mode: StudentOutputMode,
) -> Result<LoopbackOutcome<T>> {
    let student_qs = student_q_matrices(student, first_generation, tasks, mode)?;
    let degraded = degrade(sae, tasks, &student_qs)?;
    let spec = EvalSpec {
        tasks: trained,
        family: TaskFamily::Train,
        goal_set: GoalSet::Trained,
        pattern_id,
        budget_factor,
        misinform_seed: language_seed,
    };
    let report = solve_report(student, &degraded, &spec)?;
    let survival = SurvivalRow::from_report(language_seed, &report);
    Ok(LoopbackOutcome { student_qs, degraded, report, survival })
}
