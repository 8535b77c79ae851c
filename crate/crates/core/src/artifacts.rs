//! On-disk formats: versioned JSON documents and flat CSV tables.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{AnovaResult, Pca};
use crate::error::{contract, Error, Result};
use crate::gridworld::{Action, Cell, Maze, Task, TaskFamily};
use crate::language::{LossBreakdown, MessageArchive};
use crate::loopback::SurvivalRow;
use crate::scalar::Scalar;
use crate::student::{Agent, GoalSet, SolveReport, SolveRow};
use crate::teacher::QMatrix;

pub const FORMAT_VERSION: u32 = 1;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn missing(path: &Path) -> Error {
    Error::MissingArtifact(path.display().to_string())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|_| missing(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Version { expected: FORMAT_VERSION, found });
    }
    Ok(())
}

// Task families

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: usize,
    pub maze_id: usize,
    pub walls: Vec<[usize; 2]>,
    pub goal: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFamilyFile {
    pub version: u32,
    pub family: TaskFamily,
    pub size: usize,
    pub tasks: Vec<TaskRecord>,
}

impl TaskFamilyFile {
    pub fn new(family: TaskFamily, tasks: &[Task]) -> Self {
        let size = tasks.first().map_or(crate::gridworld::INTERIOR, |t| t.maze.size);
        let tasks = tasks
            .iter()
            .map(|t| TaskRecord {
                task_id: t.task_id,
                maze_id: t.maze.id,
                walls: t.maze.walls.iter().map(|c| [c.x, c.y]).collect(),
                goal: [t.goal.x, t.goal.y],
            })
            .collect();
        TaskFamilyFile { version: FORMAT_VERSION, family, size, tasks }
    }

    pub fn tasks(&self) -> Result<Vec<Task>> {
        check_version(self.version)?;
        self.tasks
            .iter()
            .map(|r| {
                let walls = r.walls.iter().map(|&[x, y]| Cell::new(x, y)).collect();
                let maze = Maze::new(self.size, walls, r.maze_id)?;
                Task::new(maze, Cell::new(r.goal[0], r.goal[1]), r.task_id)
            })
            .collect()
    }
}

pub fn write_tasks(path: &Path, family: TaskFamily, tasks: &[Task]) -> Result<()> {
    write_json(path, &TaskFamilyFile::new(family, tasks))
}

pub fn read_tasks(path: &Path) -> Result<(TaskFamily, Vec<Task>)> {
    let file: TaskFamilyFile = read_json(path)?;
    let tasks = file.tasks()?;
    Ok((file.family, tasks))
}

// Q matrices

/// `q[x][y][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFile {
    pub version: u32,
    pub task_id: usize,
    pub q: Vec<Vec<[f64; 4]>>,
}

impl QFile {
    pub fn new<T: Scalar>(task_id: usize, q: &QMatrix<T>) -> Self {
        let n = q.size;
        let q = (0..n)
            .map(|x| {
                (0..n)
                    .map(|y| {
                        let r = q.row(Cell::new(x, y));
                        [r[0].as_f64(), r[1].as_f64(), r[2].as_f64(), r[3].as_f64()]
                    })
                    .collect()
            })
            .collect();
        QFile { version: FORMAT_VERSION, task_id, q }
    }

    pub fn q_matrix<T: Scalar>(&self) -> Result<QMatrix<T>> {
        check_version(self.version)?;
        let n = self.q.len();
        if self.q.iter().any(|col| col.len() != n) {
            return Err(contract(format!("Q archive for task {} is not square", self.task_id)));
        }
        let values = self.q.iter().flatten().flat_map(|r| r.iter().map(|&v| T::c(v))).collect();
        QMatrix::from_values(n, values)
    }
}

pub fn q_path(dir: &Path, task_id: usize) -> std::path::PathBuf {
    dir.join(format!("q_{task_id:04}.json"))
}

pub fn write_q<T: Scalar>(dir: &Path, task_id: usize, q: &QMatrix<T>) -> Result<()> {
    write_json(&q_path(dir, task_id), &QFile::new(task_id, q))
}

pub fn read_q<T: Scalar>(dir: &Path, task_id: usize) -> Result<QMatrix<T>> {
    let file: QFile = read_json(&q_path(dir, task_id))?;
    if file.task_id != task_id {
        return Err(contract(format!("Q archive holds task {} not {task_id}", file.task_id)));
    }
    file.q_matrix()
}

// CSV tables

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    Ok(csv::Writer::from_path(path)?)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(|_| missing(path))
}

fn wall_field(walls: &[Cell], i: usize, x: bool) -> String {
    walls.get(i).map_or(String::new(), |c| if x { c.x } else { c.y }.to_string())
}

/// One row per task: id, up to two walls, goal, then the message.
pub fn write_messages<T: Scalar>(path: &Path, tasks: &[Task], archive: &MessageArchive<T>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let k = archive.iter().next().map_or(0, |(_, m)| m.len());
    let mut header: Vec<String> =
        ["task_id", "wall1_x", "wall1_y", "wall2_x", "wall2_y", "goal_x", "goal_y"].map(String::from).to_vec();
    header.extend((1..=k).map(|i| format!("m{i}")));
    w.write_record(&header)?;
    for t in tasks {
        let m = archive.get(t.task_id)?;
        let walls = &t.maze.walls;
        let mut row = vec![
            t.task_id.to_string(),
            wall_field(walls, 0, true),
            wall_field(walls, 0, false),
            wall_field(walls, 1, true),
            wall_field(walls, 1, false),
            t.goal.x.to_string(),
            t.goal.y.to_string(),
        ];
        row.extend(m.iter().map(|v| v.as_f64().to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_messages<T: Scalar>(path: &Path) -> Result<MessageArchive<T>> {
    let mut r = csv_reader(path)?;
    let mut archive = MessageArchive::from_messages(Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| contract(format!("bad number {s:?}: {e}")));
        let task_id: usize = rec.get(0).unwrap_or("").parse().map_err(|_| contract("bad task_id"))?;
        let values = rec.iter().skip(7).map(|s| parse(s).map(T::c)).collect::<Result<Vec<_>>>()?;
        archive.insert(task_id, values);
    }
    Ok(archive)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub reconstruction: f64,
    pub sparsity: f64,
    pub goal_finding: f64,
    pub compound: f64,
}

pub fn write_loss_curve<T: Scalar>(path: &Path, curve: &[LossBreakdown<T>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (epoch, l) in curve.iter().enumerate() {
        w.serialize(LossRow {
            epoch,
            reconstruction: l.reconstruction.as_f64(),
            sparsity: l.sparsity.as_f64(),
            goal_finding: l.goal_finding.as_f64(),
            compound: l.compound.as_f64(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<LossRow>> {
    Ok(csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_solve_report(path: &Path, report: &SolveReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_solve_report(path: &Path) -> Result<SolveReport> {
    let rows: Vec<SolveRow> = csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok(SolveReport { rows })
}

pub fn write_survival(path: &Path, rows: &[SurvivalRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_survival(path: &Path) -> Result<Vec<SurvivalRow>> {
    Ok(csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// PCA projections with the labels used to colour them.
pub fn write_pca<T: Scalar>(path: &Path, tasks: &[Task], pca: &Pca<T>, first_actions: &[Action]) -> Result<()> {
    if tasks.len() != pca.projections.len() || tasks.len() != first_actions.len() {
        return Err(contract("PCA table inputs differ in length"));
    }
    let mut w = csv_writer(path)?;
    let k = pca.projections.first().map_or(0, Vec::len);
    let mut header = vec!["task_id".to_string()];
    header.extend((1..=k).map(|i| format!("pc{i}")));
    header.extend(["wall_id", "goal_x", "goal_y", "first_action"].map(String::from));
    w.write_record(&header)?;
    for ((t, p), a) in tasks.iter().zip(&pca.projections).zip(first_actions) {
        let mut row = vec![t.task_id.to_string()];
        row.extend(p.iter().map(|v| v.as_f64().to_string()));
        row.extend([t.maze.id.to_string(), t.goal.x.to_string(), t.goal.y.to_string(), a.name().to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub grouping: String,
    pub var_within: f64,
    pub var_between: f64,
    pub beta: f64,
    pub f_value: Option<f64>,
    pub significant_05: Option<bool>,
}

impl AnovaRow {
    pub fn new<T: Scalar>(grouping: &str, r: &AnovaResult<T>) -> Self {
        AnovaRow {
            grouping: grouping.to_string(),
            var_within: r.var_within.as_f64(),
            var_between: r.var_between.as_f64(),
            beta: r.beta.as_f64(),
            f_value: r.f_value.map(|f| f.as_f64()),
            significant_05: r.significant_05,
        }
    }
}

pub fn write_anova(path: &Path, rows: &[AnovaRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_anova(path: &Path) -> Result<Vec<AnovaRow>> {
    Ok(csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Mean solve rate per agent, as written in report summaries.
pub fn agent_means(report: &SolveReport, goal_set: GoalSet) -> Vec<(Agent, f64)> {
    Agent::ALL
        .iter()
        .filter_map(|&a| {
            let v: Vec<f64> =
                report.rows.iter().filter(|r| r.agent == a && r.goal_set == goal_set).map(|r| r.solve_prob).collect();
            (!v.is_empty()).then(|| (a, v.iter().sum::<f64>() / v.len() as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::enumerate_training_tasks;

    #[test]
    fn tasks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.json");
        let tasks = enumerate_training_tasks();
        write_tasks(&path, TaskFamily::Train, &tasks).unwrap();
        let (family, back) = read_tasks(&path).unwrap();
        assert_eq!(family, TaskFamily::Train);
        assert_eq!(back, tasks);
    }

    #[test]
    fn q_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let n = 4;
        let values: Vec<f64> = (0..n * n * 4).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let q = QMatrix::from_values(n, values).unwrap();
        write_q(dir.path(), 7, &q).unwrap();
        let back: QMatrix<f64> = read_q(dir.path(), 7).unwrap();
        assert_eq!(back, q);
        assert!(matches!(read_q::<f64>(dir.path(), 8), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let f = QFile { version: 99, task_id: 0, q: vec![] };
        assert!(matches!(f.q_matrix::<f64>(), Err(Error::Version { expected: 1, found: 99 })));
    }

    #[test]
    fn messages_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let tasks = enumerate_training_tasks();
        let archive = MessageArchive::from_messages(
            tasks
                .iter()
                .map(|t| crate::language::Message { task_id: t.task_id, values: vec![t.task_id as f64 * 0.1; 5] }),
        );
        write_messages(&path, &tasks, &archive).unwrap();
        let back: MessageArchive<f64> = read_messages(&path).unwrap();
        assert_eq!(back, archive);
    }
}
