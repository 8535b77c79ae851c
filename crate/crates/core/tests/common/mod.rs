//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use commlab::diffnet::Activation;
use commlab::gridworld::{enumerate_training_tasks, step, Action, Cell, Task};
use commlab::language::{task_compound_gradient, task_compound_loss, LanguageConfig, Sae};
use commlab::student::Student;
use commlab::teacher::{dqn_loss_and_gradient, teacher_layers, DqnGradient, QMatrix, ReplayMemory};
use commlab::Network;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Denominator floor so that two tiny gradients are compared absolutely.
pub const FLOOR: f64 = 1e-6;
pub const SAMPLES: usize = 150;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub worst: f64,
    /// `(index, analytic, numeric)` of the worst parameter.
    pub worst_at: (usize, f64, f64),
}

impl GradCheck {
    pub fn ok(&self) -> bool {
        self.checked >= 100 && self.worst < MAX_REL_ERR
    }
}

pub fn sample_indices(len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..count.min(len)).map(|_| rng.gen_range(0..len)).collect()
}

/// Compares `grad` with central differences of `loss(params)` at `indices`.
pub fn check(
    name: &str,
    params: &[f64],
    grad: &[f64],
    indices: &[usize],
    mut loss: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    let mut out = GradCheck { name: name.to_string(), checked: 0, worst: 0.0, worst_at: (0, 0.0, 0.0) };
    let mut p = params.to_vec();
    for &i in indices {
        p[i] = params[i] + H;
        let plus = loss(&p);
        p[i] = params[i] - H;
        let minus = loss(&p);
        p[i] = params[i];
        let fd = (plus - minus) / (2.0 * H);
        let e = rel_err(grad[i], fd);
        if e >= out.worst {
            out.worst = e;
            out.worst_at = (i, grad[i], fd);
        }
        out.checked += 1;
    }
    out
}

pub fn random_walk_memory(task: &Task, steps: usize, rng: &mut ChaCha8Rng) -> ReplayMemory {
    let mut mem = ReplayMemory::new(50);
    let mut s = Cell::START;
    for _ in 0..steps {
        let t = step(task, s, Action::from_index(rng.gen_range(0..4))).unwrap();
        mem.push(t);
        s = if t.terminal { Cell::START } else { t.next_state };
    }
    mem
}

pub fn random_q(rng: &mut ChaCha8Rng, task: &Task) -> QMatrix<f64> {
    let mut q = QMatrix::from_values(4, (0..64).map(|_| rng.gen_range(-0.5..2.0)).collect()).unwrap();
    q.zero_walls(&task.maze);
    q
}

pub fn dqn_checks(task_ids: &[usize], seed: u64) -> Vec<GradCheck> {
    let tasks = enumerate_training_tasks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    task_ids
        .iter()
        .map(|&ti| {
            let task = &tasks[ti];
            let mem = random_walk_memory(task, 300, &mut rng);
            let mut net = Network::init(teacher_layers(), 100 + ti as u64).unwrap();
            // Zero biases put the start cell (0, 0) exactly on every ReLU kink.
            for p in net.params_mut() {
                *p += rng.gen_range(-0.05..0.05);
            }
            let (_, grad) = dqn_loss_and_gradient(&net, &mem, 0.99, 4, DqnGradient::Full).unwrap();
            let idx = sample_indices(net.param_count(), SAMPLES, &mut rng);
            let mut probe = net.clone();
            check(&format!("dqn task {ti}"), net.params(), &grad, &idx, |p| {
                probe.params_mut().copy_from_slice(p);
                dqn_loss_and_gradient(&probe, &mem, 0.99, 4, DqnGradient::Full).unwrap().0
            })
        })
        .collect()
}

/// Encoder, decoder and (with feedback) student checks of the compound loss.
pub fn language_checks(feedback: bool, activation: Activation, seed: u64) -> Vec<GradCheck> {
    let tasks = enumerate_training_tasks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = &tasks[rng.gen_range(0..tasks.len())];
    let q = random_q(&mut rng, task);
    let config = LanguageConfig { feedback, sae_activation: activation, ..Default::default() };
    let sae = Sae::<f64>::new(4, 5, activation, seed).unwrap();
    let student = Student::<f64>::new(4, 5, Activation::Relu, seed + 7).unwrap();
    let (ge, gd, gs) = task_compound_gradient(&sae, &student, task, &q, &config).unwrap();
    let loss = |sae: &Sae<f64>, st: &Student<f64>| task_compound_loss(sae, st, task, &q, &config).unwrap().compound;

    let tag = if feedback { "feedback" } else { "sae" };
    let mut out = Vec::new();
    let idx = sample_indices(ge.len(), SAMPLES, &mut rng);
    let mut s = sae.clone();
    out.push(check(&format!("{tag} encoder"), sae.encoder.net.params(), &ge, &idx, |p| {
        s.encoder.net.params_mut().copy_from_slice(p);
        loss(&s, &student)
    }));
    let idx = sample_indices(gd.len(), SAMPLES, &mut rng);
    let mut s = sae.clone();
    out.push(check(&format!("{tag} decoder"), sae.decoder.net.params(), &gd, &idx, |p| {
        s.decoder.net.params_mut().copy_from_slice(p);
        loss(&s, &student)
    }));
    if feedback {
        let idx = sample_indices(gs.len(), SAMPLES, &mut rng);
        let mut st = student.clone();
        out.push(check(&format!("{tag} student"), student.store.net.params(), &gs, &idx, |p| {
            st.store.net.params_mut().copy_from_slice(p);
            loss(&sae, &st)
        }));
    }
    out
}
