//! Deep-Q teachers: one small MLP per task, trained until its greedy policy
//! is optimal, then read out as a Q-matrix.

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Activation, LayerSpec, Network, ParamStore};
use crate::error::{contract, Error, Result};
use crate::gridworld::{step_with_rewards, Action, Cell, Maze, Rewards, Task, Transition};
use crate::scalar::Scalar;

/// `size x size x 4` state-action tensor, laid out `[x][y][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix<T> {
    pub size: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> QMatrix<T> {
    pub fn zeros(size: usize) -> Self {
        QMatrix { size, values: vec![T::zero(); size * size * 4] }
    }

    pub fn from_values(size: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != size * size * 4 {
            return Err(Error::Shape { expected: size * size * 4, actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q-matrix"));
        }
        Ok(QMatrix { size, values })
    }

    pub fn row(&self, cell: Cell) -> &[T] {
        let i = cell.index(self.size) * 4;
        &self.values[i..i + 4]
    }

    pub fn row_mut(&mut self, cell: Cell) -> &mut [T] {
        let i = cell.index(self.size) * 4;
        &mut self.values[i..i + 4]
    }

    pub fn get(&self, cell: Cell, action: Action) -> T {
        self.row(cell)[action.index()]
    }

    pub fn greedy(&self, cell: Cell) -> Action {
        Action::from_index(argmax(self.row(cell)))
    }

    pub fn zero_walls(&mut self, maze: &Maze) {
        for w in &maze.walls {
            self.row_mut(*w).fill(T::zero());
        }
    }
}

pub(crate) fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Teacher/student MLP: `2 + extra_inputs -> 10 -> 20 -> 20 -> 4`, hidden
/// layers use `activation`, the output layer is linear.
pub fn mlp_layers(extra_inputs: usize, activation: Activation) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense { inputs: 2 + extra_inputs, outputs: 10, activation },
        LayerSpec::Dense { inputs: 10, outputs: 20, activation },
        LayerSpec::Dense { inputs: 20, outputs: 20, activation },
        LayerSpec::Dense { inputs: 20, outputs: 4, activation: Activation::Linear },
    ]
}

pub fn teacher_layers() -> Vec<LayerSpec> {
    mlp_layers(0, Activation::Relu)
}

fn coords<T: Scalar>(cell: Cell) -> [T; 2] {
    [T::from_usize_lossy(cell.x), T::from_usize_lossy(cell.y)]
}

/// Unique long-term transitions plus a ring of the most recent ones.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    long_term: Vec<Transition>,
    seen: HashSet<(Cell, Action, u64, Cell, bool)>,
    short_term: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(short_term_capacity: usize) -> Self {
        ReplayMemory {
            long_term: Vec::new(),
            seen: HashSet::new(),
            short_term: VecDeque::with_capacity(short_term_capacity),
            capacity: short_term_capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.seen.insert((t.state, t.action, t.reward.to_bits(), t.next_state, t.terminal)) {
            self.long_term.push(t);
        }
        if self.capacity > 0 {
            if self.short_term.len() == self.capacity {
                self.short_term.pop_front();
            }
            self.short_term.push_back(t);
        }
    }

    pub fn long_term(&self) -> &[Transition] {
        &self.long_term
    }

    pub fn short_term(&self) -> impl Iterator<Item = &Transition> {
        self.short_term.iter()
    }

    /// The optimization set: every long-term transition followed by the
    /// short-term ones, which therefore count twice when recent.
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.long_term.iter().chain(self.short_term.iter())
    }

    pub fn len(&self) -> usize {
        self.long_term.len() + self.short_term.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How the bootstrapped target enters the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DqnGradient {
    /// Target treated as a constant (standard DQN update).
    #[default]
    SemiGradient,
    /// Exact derivative of the squared Bellman residual, target included.
    Full,
}

fn all_state_outputs<T: Scalar>(net: &Network<T>, size: usize) -> Result<Vec<crate::diffnet::Trace<T>>> {
    (0..size * size).map(|i| net.forward(&coords::<T>(Cell::from_index(i, size)))).collect()
}

fn bellman_target<T: Scalar>(t: &Transition, q_next: &[T], gamma: T) -> (T, usize) {
    let a_star = argmax(q_next);
    if t.terminal {
        (T::c(t.reward), a_star)
    } else {
        (T::c(t.reward) + gamma * q_next[a_star], a_star)
    }
}

/// Mean squared Bellman residual over the memory's optimization set.
pub fn dqn_loss<T: Scalar>(net: &Network<T>, memory: &ReplayMemory, gamma: T, size: usize) -> Result<T> {
    Ok(dqn_loss_and_gradient(net, memory, gamma, size, DqnGradient::SemiGradient)?.0)
}

/// Same as [`dqn_loss`] plus the parameter gradient.
pub fn dqn_loss_and_gradient<T: Scalar>(
    net: &Network<T>,
    memory: &ReplayMemory,
    gamma: T,
    size: usize,
    mode: DqnGradient,
) -> Result<(T, Vec<T>)> {
    if memory.is_empty() {
        return Err(contract("empty replay memory"));
    }
    let traces = all_state_outputs(net, size)?;
    let mut out_grads = vec![[T::zero(); 4]; size * size];
    let count = T::from_usize_lossy(memory.len());
    let mut loss = T::zero();
    for t in memory.transitions() {
        let s = t.state.index(size);
        let q_next = traces[t.next_state.index(size)].output();
        let (target, a_star) = bellman_target(t, q_next, gamma);
        let residual = traces[s].output()[t.action.index()] - target;
        loss = loss + residual * residual;
        let g = (residual + residual) / count;
        out_grads[s][t.action.index()] = out_grads[s][t.action.index()] + g;
        if mode == DqnGradient::Full && !t.terminal {
            let n = t.next_state.index(size);
            out_grads[n][a_star] = out_grads[n][a_star] - gamma * g;
        }
    }
    let mut grad = vec![T::zero(); net.param_count()];
    for (trace, og) in traces.iter().zip(&out_grads) {
        if og.iter().any(|g| *g != T::zero()) {
            net.backward_into(trace, og, &mut grad)?;
        }
    }
    Ok((loss / count, grad))
}

/// Teacher training schedule. Only `gamma_bellman`, the rewards and the
/// short-term memory size come from the reference setup; the rest bound the
/// run time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub gamma_bellman: f64,
    pub rewards: Rewards,
    pub short_term_memory: usize,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
    pub max_steps_per_episode: usize,
    pub max_episodes: usize,
    /// No optimality check before this many episodes.
    pub min_episodes: usize,
    pub check_every: usize,
    pub gradient: DqnGradient,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            gamma_bellman: 0.99,
            rewards: Rewards::default(),
            short_term_memory: 50,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 200,
            max_steps_per_episode: 50,
            max_episodes: 1000,
            min_episodes: 200,
            check_every: 10,
            gradient: DqnGradient::Full,
            seed: 0,
        }
    }
}

impl TeacherConfig {
    fn epsilon(&self, episode: usize) -> f64 {
        if episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let frac = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone)]
pub struct TrainedTeacher<T> {
    pub task_id: usize,
    pub store: ParamStore<T>,
    pub q: QMatrix<T>,
    pub episodes: usize,
    pub env_steps: usize,
    pub optimizer_steps: usize,
    pub optimal: bool,
}

/// Reads the network out at every cell; wall rows are zeroed.
pub fn extract_q_matrix<T: Scalar>(net: &Network<T>, maze: &Maze) -> Result<QMatrix<T>> {
    let n = maze.size;
    let mut q = QMatrix::zeros(n);
    for cell in maze.cells() {
        let out = net.predict(&coords::<T>(cell))?;
        q.row_mut(cell).copy_from_slice(&out);
    }
    q.zero_walls(maze);
    Ok(q)
}

/// Number of greedy steps from the start to the goal, or `None` if the goal
/// is not reached within `limit` steps.
pub fn greedy_rollout_length<T: Scalar>(q: &QMatrix<T>, task: &Task, limit: usize) -> Option<usize> {
    let mut state = Cell::START;
    for k in 1..=limit {
        let t = task.step(state, q.greedy(state)).ok()?;
        if t.terminal {
            return Some(k);
        }
        state = t.next_state;
    }
    None
}

/// True when the greedy rollout from the start reaches the goal along a
/// shortest path.
pub fn is_optimal<T: Scalar>(q: &QMatrix<T>, task: &Task) -> bool {
    match task.shortest_path_length() {
        Ok(k) => greedy_rollout_length(q, task, k) == Some(k),
        Err(_) => false,
    }
}

/// True when the greedy action moves one step closer to the goal from every
/// decision cell. Stronger than [`is_optimal`].
pub fn is_optimal_everywhere<T: Scalar>(q: &QMatrix<T>, task: &Task) -> bool {
    let n = task.size();
    let dist = task.maze.distances_from(task.goal);
    task.decision_cells().all(|c| match (task.maze.target(c, q.greedy(c)), dist[c.index(n)]) {
        (Some(next), Some(d)) => dist[next.index(n)] == Some(d - 1),
        _ => false,
    })
}

/// Per-task seed stream so teachers are independent of training order.
pub fn teacher_seed(base: u64, task_id: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(task_id as u64 + 1)
}

/// Trains until the greedy policy is optimal; errors if the episode budget runs out.
pub fn train_teacher<T: Scalar>(task: &Task, config: &TeacherConfig) -> Result<TrainedTeacher<T>> {
    let out = train_teacher_unchecked(task, config)?;
    if !out.optimal {
        return Err(Error::TeacherNotOptimal { task_id: task.task_id, episodes: out.episodes });
    }
    Ok(out)
}

/// Like [`train_teacher`], but returns the last network even when it never
/// became optimal.
pub fn train_teacher_unchecked<T: Scalar>(task: &Task, config: &TeacherConfig) -> Result<TrainedTeacher<T>> {
    let n = task.size();
    let seed = teacher_seed(config.seed, task.task_id);
    let mut store = ParamStore::<T>::new(teacher_layers(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_7EAC_4E75);
    let mut memory = ReplayMemory::new(config.short_term_memory);
    let gamma = T::c(config.gamma_bellman);
    let lr = T::c(config.learning_rate);
    let (mut env_steps, mut optimizer_steps) = (0, 0);

    for episode in 0..config.max_episodes {
        let eps = config.epsilon(episode);
        let mut state = Cell::START;
        for _ in 0..config.max_steps_per_episode {
            let action = if rng.gen::<f64>() < eps {
                Action::from_index(rng.gen_range(0..4))
            } else {
                Action::from_index(argmax(&store.net.predict(&coords::<T>(state))?))
            };
            let t = step_with_rewards(task, state, action, &config.rewards)?;
            memory.push(t);
            env_steps += 1;
            let (_, grad) = dqn_loss_and_gradient(&store.net, &memory, gamma, n, config.gradient)?;
            store.adam_step(&grad, lr)?;
            optimizer_steps += 1;
            if t.terminal {
                break;
            }
            state = t.next_state;
        }
        if episode + 1 >= config.min_episodes && (episode + 1) % config.check_every == 0 {
            let q = extract_q_matrix(&store.net, &task.maze)?;
            if is_optimal(&q, task) {
                let episodes = episode + 1;
                return Ok(TrainedTeacher {
                    task_id: task.task_id,
                    store,
                    q,
                    episodes,
                    env_steps,
                    optimizer_steps,
                    optimal: true,
                });
            }
        }
    }
    let q = extract_q_matrix(&store.net, &task.maze)?;
    let optimal = is_optimal(&q, task);
    let episodes = config.max_episodes;
    Ok(TrainedTeacher { task_id: task.task_id, store, q, episodes, env_steps, optimizer_steps, optimal })
}

/// Trains one teacher per task in parallel; output order follows `tasks`.
pub fn train_teachers<T: Scalar>(tasks: &[Task], config: &TeacherConfig) -> Result<Vec<TrainedTeacher<T>>> {
    tasks.par_iter().map(|task| train_teacher(task, config)).collect()
}
