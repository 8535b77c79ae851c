//! Mazes, tasks, transition dynamics and the fixed task families.
//!
//! Coordinates: `(0, 0)` is the bottom-left interior cell, `x` grows to the
//! right and `y` upward. The agent always starts at `(0, 0)`. The outer
//! boundary is an implicit wall ring around the `size x size` interior.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Interior side length used throughout.
pub const INTERIOR: usize = 4;

pub const R_STEP: f64 = -0.1;
pub const R_WALL: f64 = -0.5;
pub const R_GOAL: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const START: Cell = Cell { x: 0, y: 0 };

    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    /// Index into `[x][y]`-major state tensors.
    pub fn index(self, size: usize) -> usize {
        self.x * size + self.y
    }

    pub fn from_index(index: usize, size: usize) -> Self {
        Cell::new(index / size, index % size)
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl From<(usize, usize)> for Cell {
    fn from((x, y): (usize, usize)) -> Self {
        Cell::new(x, y)
    }
}

/// The four moves, in Q-matrix channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Right,
    Up,
    Left,
    Down,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Right, Action::Up, Action::Left, Action::Down];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Right => (1, 0),
            Action::Up => (0, 1),
            Action::Left => (-1, 0),
            Action::Down => (0, -1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Right => "right",
            Action::Up => "up",
            Action::Left => "left",
            Action::Down => "down",
        }
    }
}

/// Reward constants for the three transition outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub step: f64,
    pub wall: f64,
    pub goal: f64,
}

impl Default for Rewards {
    fn default() -> Self {
        Rewards { step: R_STEP, wall: R_WALL, goal: R_GOAL }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Maze {
    pub size: usize,
    /// Interior wall cells, sorted by row-major position.
    pub walls: Vec<Cell>,
    /// Index within its enumeration family.
    pub id: usize,
}

impl Maze {
    pub fn new(size: usize, mut walls: Vec<Cell>, id: usize) -> Result<Self> {
        if walls.len() > 2 {
            return Err(contract(format!("maze {id} has {} walls, at most 2 allowed", walls.len())));
        }
        walls.sort_by_key(|c| row_major(*c, size));
        walls.dedup();
        for w in &walls {
            if w.x >= size || w.y >= size {
                return Err(contract(format!("wall {w:?} outside {size}x{size} interior")));
            }
            if *w == Cell::START {
                return Err(contract("start cell (0,0) cannot be a wall"));
            }
        }
        Ok(Maze { size, walls, id })
    }

    pub fn empty(size: usize) -> Self {
        Maze { size, walls: Vec::new(), id: 0 }
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls.contains(&cell)
    }

    pub fn in_bounds(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.size && (y as usize) < self.size
    }

    /// Cell reached by `action`, or `None` when the move hits the boundary or
    /// an interior wall.
    pub fn target(&self, cell: Cell, action: Action) -> Option<Cell> {
        let (dx, dy) = action.delta();
        let (nx, ny) = (cell.x as isize + dx, cell.y as isize + dy);
        if !self.in_bounds(nx, ny) {
            return None;
        }
        let next = Cell::new(nx as usize, ny as usize);
        (!self.is_wall(next)).then_some(next)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let n = self.size;
        (0..n * n).map(move |i| Cell::from_index(i, n))
    }

    pub fn open_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|c| !self.is_wall(*c))
    }

    /// BFS step distances from `from` to every cell; `None` for walls and
    /// unreachable cells.
    pub fn distances_from(&self, from: Cell) -> Vec<Option<usize>> {
        let n = self.size;
        let mut dist = vec![None; n * n];
        if self.is_wall(from) {
            return dist;
        }
        dist[from.index(n)] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[c.index(n)].unwrap();
            for a in Action::ALL {
                if let Some(next) = self.target(c, a) {
                    if dist[next.index(n)].is_none() {
                        dist[next.index(n)] = Some(d + 1);
                        queue.push_back(next);
                    }
                }
            }
        }
        dist
    }

    /// True when every open cell is reachable from the start.
    pub fn is_connected(&self) -> bool {
        let dist = self.distances_from(Cell::START);
        self.open_cells().all(|c| dist[c.index(self.size)].is_some())
    }
}

fn row_major(cell: Cell, size: usize) -> usize {
    cell.y * size + cell.x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub maze: Maze,
    pub goal: Cell,
    pub task_id: usize,
}

impl Task {
    pub fn new(maze: Maze, goal: Cell, task_id: usize) -> Result<Self> {
        if goal == Cell::START || maze.is_wall(goal) || goal.x >= maze.size || goal.y >= maze.size {
            return Err(contract(format!("invalid goal {goal:?} for maze {}", maze.id)));
        }
        let task = Task { maze, goal, task_id };
        task.shortest_path_length()?;
        Ok(task)
    }

    pub fn size(&self) -> usize {
        self.maze.size
    }

    pub fn step(&self, state: Cell, action: Action) -> Result<Transition> {
        step(self, state, action)
    }

    pub fn shortest_path_length(&self) -> Result<usize> {
        shortest_path_length(self)
    }

    /// Non-wall cells the agent can act from, i.e. everything but the goal.
    pub fn decision_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.maze.open_cells().filter(move |c| *c != self.goal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Cell,
    pub action: Action,
    pub reward: f64,
    pub next_state: Cell,
    pub terminal: bool,
}

pub fn step(task: &Task, state: Cell, action: Action) -> Result<Transition> {
    step_with_rewards(task, state, action, &Rewards::default())
}

pub fn step_with_rewards(task: &Task, state: Cell, action: Action, rewards: &Rewards) -> Result<Transition> {
    let maze = &task.maze;
    if state.x >= maze.size || state.y >= maze.size || maze.is_wall(state) {
        return Err(contract(format!("step from wall or out-of-grid cell {state:?}")));
    }
    if state == task.goal {
        return Err(contract(format!("step from goal cell {state:?}")));
    }
    let t = match maze.target(state, action) {
        None => Transition { state, action, reward: rewards.wall, next_state: state, terminal: false },
        Some(next) if next == task.goal => {
            Transition { state, action, reward: rewards.goal, next_state: next, terminal: true }
        }
        Some(next) => Transition { state, action, reward: rewards.step, next_state: next, terminal: false },
    };
    Ok(t)
}

pub fn shortest_path_length(task: &Task) -> Result<usize> {
    let dist = task.maze.distances_from(Cell::START);
    dist[task.goal.index(task.size())]
        .ok_or(Error::Unreachable { maze_id: task.maze.id, goal: (task.goal.x, task.goal.y) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFamily {
    Train,
    Test,
}

impl TaskFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::Train => "train",
            TaskFamily::Test => "test",
        }
    }
}

impl std::str::FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(TaskFamily::Train),
            "test" => Ok(TaskFamily::Test),
            other => Err(contract(format!("unknown task family {other:?}"))),
        }
    }
}

fn non_start_cells(size: usize) -> Vec<Cell> {
    (0..size * size).map(|i| Cell::new(i % size, i / size)).filter(|c| *c != Cell::START).collect()
}

fn tasks_for_mazes(mazes: Vec<Maze>) -> Vec<Task> {
    let mut tasks = Vec::new();
    for maze in mazes {
        let n = maze.size;
        for goal in non_start_cells(n) {
            if maze.is_wall(goal) {
                continue;
            }
            let task_id = tasks.len();
            tasks.push(Task { maze: maze.clone(), goal, task_id });
        }
    }
    tasks
}

/// Zero-wall maze followed by every single-wall maze, in row-major wall order.
pub fn training_mazes() -> Vec<Maze> {
    let n = INTERIOR;
    let mut mazes = vec![Maze::empty(n)];
    for w in non_start_cells(n) {
        let id = mazes.len();
        mazes.push(Maze { size: n, walls: vec![w], id });
    }
    mazes
}

/// Every connected two-wall maze, walls on non-start cells.
pub fn test_mazes() -> Vec<Maze> {
    let n = INTERIOR;
    let cells = non_start_cells(n);
    let mut mazes = Vec::new();
    for (i, &a) in cells.iter().enumerate() {
        for &b in &cells[i + 1..] {
            let maze = Maze { size: n, walls: vec![a, b], id: mazes.len() };
            if maze.is_connected() {
                mazes.push(maze);
            }
        }
    }
    mazes
}

/// The 225 training tasks (mazes with zero or one interior wall).
pub fn enumerate_training_tasks() -> Vec<Task> {
    tasks_for_mazes(training_mazes())
}

/// The 1313 test tasks (connected mazes with two interior walls).
pub fn enumerate_test_tasks() -> Vec<Task> {
    tasks_for_mazes(test_mazes())
}

pub fn enumerate(family: TaskFamily) -> Vec<Task> {
    match family {
        TaskFamily::Train => enumerate_training_tasks(),
        TaskFamily::Test => enumerate_test_tasks(),
    }
}
