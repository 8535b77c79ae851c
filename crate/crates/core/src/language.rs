//! The sparse autoencoder "language", exact state-occupancy propagation, the
//! student goal-finding loss, and the joint training loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffnet::{softmax, softmax_backward, Activation, LayerSpec, ParamStore, Trace};
use crate::error::{contract, Error, Result};
use crate::gridworld::{Action, Cell, Task};
use crate::scalar::{l2_norm, l2_norm_grad, Scalar};
use crate::student::Student;
use crate::teacher::QMatrix;

/// Message length.
pub const MESSAGE_LEN: usize = 5;
/// Sparsity weight.
pub const KAPPA: f64 = 1.0 / 500.0;
/// Student-feedback weight.
pub const ZETA: f64 = 5.0;
pub const LEARNING_RATE: f64 = 5e-4;
pub const EPOCHS: usize = 1000;

/// Weight of the student-output regularizer in the goal-finding loss:
/// `(1/20) * sqrt(4 n^2 / K)`.
pub fn default_gamma(size: usize, message_len: usize) -> f64 {
    (4.0 * (size * size) as f64 / message_len as f64).sqrt() / 20.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message<T> {
    pub task_id: usize,
    pub values: Vec<T>,
}

/// Messages keyed by task id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MessageArchive<T> {
    map: BTreeMap<usize, Vec<T>>,
}

impl<T: Scalar> MessageArchive<T> {
    pub fn from_messages(messages: impl IntoIterator<Item = Message<T>>) -> Self {
        MessageArchive { map: messages.into_iter().map(|m| (m.task_id, m.values)).collect() }
    }

    pub fn get(&self, task_id: usize) -> Result<&[T]> {
        self.map
            .get(&task_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingArtifact(format!("message for task {task_id}")))
    }

    pub fn insert(&mut self, task_id: usize, values: Vec<T>) {
        self.map.insert(task_id, values);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.map.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[T])> + '_ {
        self.map.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    /// Rows in task-id order.
    pub fn vectors(&self) -> Vec<Vec<T>> {
        self.map.values().cloned().collect()
    }
}

/// Loss terms for one task or averaged over an epoch. `reconstruction` and
/// `sparsity` already carry their `(1 - kappa)` / `kappa` weights;
/// `goal_finding` is unweighted and enters `compound` times zeta.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub reconstruction: T,
    pub sparsity: T,
    pub goal_finding: T,
    pub compound: T,
}

fn conv_layers(size: usize, message_len: usize, act: Activation) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    let n = size;
    let hidden = 10 * (n + 2) * (n + 2);
    let encoder = vec![
        LayerSpec::Bias { len: 4 * n * n },
        LayerSpec::Conv2x2 { in_channels: 4, out_channels: 10, height: n, width: n, activation: act },
        LayerSpec::Conv2x2 { in_channels: 10, out_channels: 10, height: n + 1, width: n + 1, activation: act },
        LayerSpec::Dense { inputs: hidden, outputs: message_len, activation: Activation::Linear },
    ];
    let decoder = vec![
        LayerSpec::Dense { inputs: message_len, outputs: hidden, activation: act },
        LayerSpec::Deconv2x2 { in_channels: 10, out_channels: 10, height: n + 2, width: n + 2, activation: act },
        LayerSpec::Deconv2x2 {
            in_channels: 10,
            out_channels: 4,
            height: n + 1,
            width: n + 1,
            activation: Activation::Linear,
        },
        LayerSpec::Bias { len: 4 * n * n },
    ];
    (encoder, decoder)
}

pub fn encoder_layers(size: usize, message_len: usize, act: Activation) -> Vec<LayerSpec> {
    conv_layers(size, message_len, act).0
}

pub fn decoder_layers(size: usize, message_len: usize, act: Activation) -> Vec<LayerSpec> {
    conv_layers(size, message_len, act).1
}

/// Convolutional encoder / decoder pair. The message layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Sae<T> {
    pub encoder: ParamStore<T>,
    pub decoder: ParamStore<T>,
    pub size: usize,
    pub message_len: usize,
}

impl<T: Scalar> Sae<T> {
    pub fn new(size: usize, message_len: usize, activation: Activation, seed: u64) -> Result<Self> {
        let (enc, dec) = conv_layers(size, message_len, activation);
        Ok(Sae {
            encoder: ParamStore::new(enc, seed)?,
            decoder: ParamStore::new(dec, seed.wrapping_add(1))?,
            size,
            message_len,
        })
    }

    pub fn zeros(size: usize, message_len: usize, activation: Activation) -> Result<Self> {
        let (enc, dec) = conv_layers(size, message_len, activation);
        Ok(Sae {
            encoder: ParamStore::from_network(crate::diffnet::Network::zeros(enc)?, 0),
            decoder: ParamStore::from_network(crate::diffnet::Network::zeros(dec)?, 0),
            size,
            message_len,
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Q-matrix `[x][y][a]` to channel-major `[a][x][y]`.
    pub fn to_channels(&self, q: &QMatrix<T>) -> Result<Vec<T>> {
        let n = self.size;
        if q.size != n {
            return Err(Error::Shape { expected: n, actual: q.size });
        }
        let mut out = vec![T::zero(); 4 * n * n];
        for x in 0..n {
            for y in 0..n {
                for a in 0..4 {
                    out[(a * n + x) * n + y] = q.values[(x * n + y) * 4 + a];
                }
            }
        }
        Ok(out)
    }

    pub fn from_channels(&self, t: &[T]) -> QMatrix<T> {
        let n = self.size;
        let mut q = QMatrix::zeros(n);
        for x in 0..n {
            for y in 0..n {
                for a in 0..4 {
                    q.values[(x * n + y) * 4 + a] = t[(a * n + x) * n + y];
                }
            }
        }
        q
    }

    pub fn encode_trace(&self, q: &QMatrix<T>) -> Result<Trace<T>> {
        self.encoder.net.forward(&self.to_channels(q)?)
    }

    pub fn encode(&self, q: &QMatrix<T>, task_id: usize) -> Result<Message<T>> {
        Ok(Message { task_id, values: self.encode_trace(q)?.output().to_vec() })
    }

    pub fn decode(&self, m: &Message<T>) -> Result<QMatrix<T>> {
        if m.values.len() != self.message_len {
            return Err(Error::Shape { expected: self.message_len, actual: m.values.len() });
        }
        Ok(self.from_channels(&self.decoder.net.predict(&m.values)?))
    }
}

/// `(1 - kappa) * ||q' - q|| + kappa * ||m||`.
pub fn sae_loss<T: Scalar>(q: &QMatrix<T>, reconstruction: &QMatrix<T>, m: &[T], kappa: T) -> Result<LossBreakdown<T>> {
    if !(T::zero()..=T::one()).contains(&kappa) {
        return Err(contract(format!("kappa {kappa} outside [0, 1]")));
    }
    if q.values.len() != reconstruction.values.len() {
        return Err(Error::Shape { expected: q.values.len(), actual: reconstruction.values.len() });
    }
    let diff: Vec<T> = reconstruction.values.iter().zip(&q.values).map(|(&a, &b)| a - b).collect();
    let rec = (T::one() - kappa) * l2_norm(&diff);
    let sp = kappa * l2_norm(m);
    Ok(LossBreakdown { reconstruction: rec, sparsity: sp, goal_finding: T::zero(), compound: rec + sp })
}

/// Successor of each `(cell, action)`; bumping into a wall keeps the cell.
fn successors(task: &Task) -> Vec<[usize; 4]> {
    let n = task.size();
    (0..n * n)
        .map(|i| {
            let c = Cell::from_index(i, n);
            Action::ALL.map(|a| task.maze.target(c, a).unwrap_or(c).index(n))
        })
        .collect()
}

fn check_policy<T: Scalar>(policy: &[T], task: &Task) -> Result<()> {
    let n = task.size();
    if policy.len() != n * n * 4 {
        return Err(Error::Shape { expected: n * n * 4, actual: policy.len() });
    }
    let tol = T::c(1e-9);
    for c in task.decision_cells() {
        let row = &policy[c.index(n) * 4..c.index(n) * 4 + 4];
        let total: T = row.iter().copied().sum();
        if row.iter().any(|p| p.is_nan() || *p < T::zero()) || (total - T::one()).abs() > tol {
            return Err(contract(format!("policy row at {c:?} is not a distribution")));
        }
    }
    Ok(())
}

/// Occupancy after each of `0..=k` steps from a point mass at the start.
fn propagate<T: Scalar>(policy: &[T], task: &Task, succ: &[[usize; 4]], k: usize) -> Vec<Vec<T>> {
    let n = task.size();
    let goal = task.goal.index(n);
    let decision: Vec<usize> = task.decision_cells().map(|c| c.index(n)).collect();
    let mut p = vec![T::zero(); n * n];
    p[Cell::START.index(n)] = T::one();
    let mut history = Vec::with_capacity(k + 1);
    history.push(p.clone());
    for _ in 0..k {
        let mut next = vec![T::zero(); n * n];
        next[goal] = p[goal];
        for &s in &decision {
            let mass = p[s];
            if mass == T::zero() {
                continue;
            }
            for a in 0..4 {
                let t = succ[s][a];
                next[t] = next[t] + mass * policy[s * 4 + a];
            }
        }
        p = next;
        history.push(p.clone());
    }
    history
}

/// State distribution after `k` steps under `policy` (`[x][y][action]`
/// probabilities). The goal is absorbing; wall cells carry no mass.
pub fn occupancy_after_k<T: Scalar>(policy: &[T], task: &Task, k: usize) -> Result<Vec<T>> {
    check_policy(policy, task)?;
    let succ = successors(task);
    Ok(propagate(policy, task, &succ, k).pop().unwrap())
}

/// Goal probability after `k` steps and its gradient with respect to every
/// policy entry.
pub fn goal_probability_with_grad<T: Scalar>(policy: &[T], task: &Task, k: usize) -> Result<(T, Vec<T>)> {
    check_policy(policy, task)?;
    let n = task.size();
    let goal = task.goal.index(n);
    let succ = successors(task);
    let history = propagate(policy, task, &succ, k);
    let decision: Vec<usize> = task.decision_cells().map(|c| c.index(n)).collect();

    let mut grad = vec![T::zero(); policy.len()];
    let mut adj = vec![T::zero(); n * n];
    adj[goal] = T::one();
    for t in (0..k).rev() {
        let p = &history[t];
        let mut prev = vec![T::zero(); n * n];
        prev[goal] = adj[goal];
        for &s in &decision {
            let mut acc = T::zero();
            for a in 0..4 {
                let downstream = adj[succ[s][a]];
                grad[s * 4 + a] = grad[s * 4 + a] + p[s] * downstream;
                acc = acc + policy[s * 4 + a] * downstream;
            }
            prev[s] = acc;
        }
        adj = prev;
    }
    Ok((history[k][goal], grad))
}

/// Softmax over each cell's four raw outputs.
pub fn policy_from_outputs<T: Scalar>(outputs: &[T]) -> Vec<T> {
    outputs.chunks(4).flat_map(softmax).collect()
}

/// Value and gradient of the goal-finding loss.
#[derive(Debug, Clone)]
pub struct GoalFinding<T> {
    pub loss: T,
    pub goal_probability: T,
    /// Gradient with respect to the raw student outputs.
    pub grad: Vec<T>,
}

/// `(1 - gamma) (1 - P[s_k = goal])^4 + gamma ||outputs|| / sqrt(4 n^2)`,
/// with the policy given by a per-cell softmax of `outputs`.
pub fn goal_finding_loss<T: Scalar>(outputs: &QMatrix<T>, task: &Task, gamma: T, k: usize) -> Result<T> {
    Ok(goal_finding_with_grad(outputs, task, gamma, k)?.loss)
}

pub fn goal_finding_with_grad<T: Scalar>(
    outputs: &QMatrix<T>,
    task: &Task,
    gamma: T,
    k: usize,
) -> Result<GoalFinding<T>> {
    let n = task.size();
    if outputs.size != n {
        return Err(Error::Shape { expected: n, actual: outputs.size });
    }
    let policy = policy_from_outputs(&outputs.values);
    let (p_goal, dp) = goal_probability_with_grad(&policy, task, k)?;
    let one = T::one();
    let miss = one - p_goal;
    let scale = T::c(((4 * n * n) as f64).sqrt());
    let norm = l2_norm(&outputs.values);
    let loss = (one - gamma) * miss.powi(4) + gamma * norm / scale;

    let d_p = -T::c(4.0) * (one - gamma) * miss.powi(3);
    let mut grad: Vec<T> = l2_norm_grad(&outputs.values, norm).into_iter().map(|g| g * gamma / scale).collect();
    for c in task.decision_cells() {
        let i = c.index(n) * 4;
        let dpi: Vec<T> = dp[i..i + 4].iter().map(|&g| g * d_p).collect();
        let dl = softmax_backward(&policy[i..i + 4], &dpi);
        for a in 0..4 {
            grad[i + a] = grad[i + a] + dl[a];
        }
    }
    Ok(GoalFinding { loss, goal_probability: p_goal, grad })
}

/// Language training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub kappa: f64,
    pub zeta: f64,
    /// Student-output regularizer weight; `None` uses [`default_gamma`].
    pub gamma: Option<f64>,
    pub message_len: usize,
    pub feedback: bool,
    pub sae_activation: Activation,
    pub student_activation: Activation,
    /// Goals the student trains on; `None` means every task.
    pub student_goals: Option<Vec<Cell>>,
    pub seed: u64,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        LanguageConfig {
            epochs: EPOCHS,
            learning_rate: LEARNING_RATE,
            kappa: KAPPA,
            zeta: ZETA,
            gamma: None,
            message_len: MESSAGE_LEN,
            feedback: false,
            sae_activation: Activation::Relu,
            student_activation: Activation::Relu,
            student_goals: None,
            seed: 0,
        }
    }
}

impl LanguageConfig {
    pub fn gamma_for(&self, size: usize) -> f64 {
        self.gamma.unwrap_or_else(|| default_gamma(size, self.message_len))
    }

    pub fn trains_student_on(&self, task: &Task) -> bool {
        self.student_goals.as_ref().is_none_or(|goals| goals.contains(&task.goal))
    }

    pub fn sae_seed(&self) -> u64 {
        self.seed.wrapping_mul(2).wrapping_add(0x5AE)
    }

    pub fn student_seed(&self) -> u64 {
        self.seed.wrapping_mul(2).wrapping_add(0x57D)
    }
}

/// Output of [`train_language`].
#[derive(Debug, Clone)]
pub struct LanguageRun<T> {
    pub sae: Sae<T>,
    pub student: Student<T>,
    /// Entry 0 evaluates the untrained networks; entry `e` averages the
    /// per-task losses seen during epoch `e`.
    pub curve: Vec<LossBreakdown<T>>,
    /// Losses of the final networks, evaluated after the last update.
    pub final_losses: LossBreakdown<T>,
}

/// Gradients produced by one task step.
struct StepGrads<T> {
    encoder: Vec<T>,
    decoder: Vec<T>,
    student: Option<Vec<T>>,
    losses: LossBreakdown<T>,
    used_student: bool,
}

fn task_step<T: Scalar>(
    sae: &Sae<T>,
    student: &Student<T>,
    task: &Task,
    q: &QMatrix<T>,
    config: &LanguageConfig,
    with_student: bool,
) -> Result<StepGrads<T>> {
    let kappa = T::c(config.kappa);
    let zeta = T::c(config.zeta);
    let one = T::one();
    let target = sae.to_channels(q)?;
    let enc = sae.encoder.net.forward(&target)?;
    let m = enc.output().to_vec();
    let dec = sae.decoder.net.forward(&m)?;
    let diff: Vec<T> = dec.output().iter().zip(&target).map(|(&a, &b)| a - b).collect();
    let diff_norm = l2_norm(&diff);
    let m_norm = l2_norm(&m);
    let mut losses = LossBreakdown {
        reconstruction: (one - kappa) * diff_norm,
        sparsity: kappa * m_norm,
        goal_finding: T::zero(),
        compound: T::zero(),
    };

    let out_grad: Vec<T> = l2_norm_grad(&diff, diff_norm).into_iter().map(|g| g * (one - kappa)).collect();
    let mut decoder = vec![T::zero(); sae.decoder.param_count()];
    let mut grad_m = sae.decoder.net.backward_into(&dec, &out_grad, &mut decoder)?;
    for (g, s) in grad_m.iter_mut().zip(l2_norm_grad(&m, m_norm)) {
        *g = *g + kappa * s;
    }

    let mut student_grad = None;
    if with_student {
        let (traces, outputs) = student.forward_all(task, &m)?;
        let k = task.shortest_path_length()?;
        let gf = goal_finding_with_grad(&outputs, task, T::c(config.gamma_for(task.size())), k)?;
        losses.goal_finding = gf.loss;
        let mut sg = vec![T::zero(); student.store.param_count()];
        for (cell, trace) in traces {
            let i = cell.index(task.size()) * 4;
            let og: Vec<T> = gf.grad[i..i + 4].iter().map(|&g| g * zeta).collect();
            let gin = student.store.net.backward_into(&trace, &og, &mut sg)?;
            for (gm, gi) in grad_m.iter_mut().zip(&gin[2..]) {
                *gm = *gm + *gi;
            }
        }
        student_grad = Some(sg);
    }
    losses.compound = losses.reconstruction + losses.sparsity + zeta * losses.goal_finding;

    let mut encoder = vec![T::zero(); sae.encoder.param_count()];
    sae.encoder.net.backward_into(&enc, &grad_m, &mut encoder)?;
    Ok(StepGrads { encoder, decoder, student: student_grad, losses, used_student: with_student })
}

/// Losses of the current networks over `tasks`, without updating anything.
pub fn evaluate_losses<T: Scalar>(
    sae: &Sae<T>,
    student: &Student<T>,
    tasks: &[Task],
    qs: &[QMatrix<T>],
    config: &LanguageConfig,
) -> Result<LossBreakdown<T>> {
    let mut acc = Accumulator::default();
    for (task, q) in tasks.iter().zip(qs) {
        let with_student = config.feedback && config.trains_student_on(task);
        let target = sae.to_channels(q)?;
        let m = sae.encoder.net.predict(&target)?;
        let rec = sae.from_channels(&sae.decoder.net.predict(&m)?);
        let mut l = sae_loss(q, &rec, &m, T::c(config.kappa))?;
        if with_student {
            let (_, outputs) = student.forward_all(task, &m)?;
            let k = task.shortest_path_length()?;
            l.goal_finding = goal_finding_loss(&outputs, task, T::c(config.gamma_for(task.size())), k)?;
        }
        acc.add(&l, with_student);
    }
    Ok(acc.finish(T::c(config.zeta)))
}

#[derive(Default)]
struct Accumulator<T> {
    rec: Vec<T>,
    sp: Vec<T>,
    gf: Vec<T>,
}

impl<T: Scalar> Accumulator<T> {
    fn add(&mut self, l: &LossBreakdown<T>, with_student: bool) {
        self.rec.push(l.reconstruction);
        self.sp.push(l.sparsity);
        if with_student {
            self.gf.push(l.goal_finding);
        }
    }

    fn finish(self, zeta: T) -> LossBreakdown<T> {
        let mean = |v: &[T]| {
            if v.is_empty() {
                T::zero()
            } else {
                v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
            }
        };
        let (r, s, g) = (mean(&self.rec), mean(&self.sp), mean(&self.gf));
        LossBreakdown { reconstruction: r, sparsity: s, goal_finding: g, compound: r + s + zeta * g }
    }
}

/// Trains a language over `tasks` (one Q-matrix per task, same order).
///
/// Every epoch visits the tasks in order and takes one Adam step per task.
/// Without feedback only the autoencoder learns from the reconstruction and
/// sparsity terms. With feedback the student acts on the freshly encoded
/// message, and the goal-finding term (times zeta) is back-propagated
/// through the student, the message and the encoder; the student is updated
/// in the same step.
pub fn train_language<T: Scalar>(tasks: &[Task], qs: &[QMatrix<T>], config: &LanguageConfig) -> Result<LanguageRun<T>> {
    train_language_with(tasks, qs, config, |_, _| {})
}

/// [`train_language`] with a per-epoch callback `(epoch, losses)`.
pub fn train_language_with<T: Scalar, F>(
    tasks: &[Task],
    qs: &[QMatrix<T>],
    config: &LanguageConfig,
    mut on_epoch: F,
) -> Result<LanguageRun<T>>
where
    F: FnMut(usize, &LossBreakdown<T>),
{
    if tasks.len() != qs.len() {
        return Err(Error::MissingArtifact(format!("{} Q-matrices for {} tasks", qs.len(), tasks.len())));
    }
    if tasks.is_empty() {
        return Err(contract("no tasks to train a language on"));
    }
    let size = tasks[0].size();
    let mut sae = Sae::<T>::new(size, config.message_len, config.sae_activation, config.sae_seed())?;
    let mut student = Student::<T>::new(size, config.message_len, config.student_activation, config.student_seed())?;
    let lr = T::c(config.learning_rate);
    let zeta = T::c(config.zeta);

    let mut curve = vec![evaluate_losses(&sae, &student, tasks, qs, config)?];
    on_epoch(0, &curve[0]);
    for epoch in 1..=config.epochs {
        let mut acc = Accumulator::default();
        for (task, q) in tasks.iter().zip(qs) {
            let with_student = config.feedback && config.trains_student_on(task);
            let g = task_step(&sae, &student, task, q, config, with_student)?;
            sae.encoder.adam_step(&g.encoder, lr)?;
            sae.decoder.adam_step(&g.decoder, lr)?;
            if let Some(sg) = &g.student {
                student.store.adam_step(sg, lr)?;
            }
            acc.add(&g.losses, g.used_student);
        }
        let l = acc.finish(zeta);
        on_epoch(epoch, &l);
        curve.push(l);
    }
    let final_losses = evaluate_losses(&sae, &student, tasks, qs, config)?;
    Ok(LanguageRun { sae, student, curve, final_losses })
}

/// Full compound loss of a single task as a function of both networks; used
/// by gradient checks.
pub fn task_compound_loss<T: Scalar>(
    sae: &Sae<T>,
    student: &Student<T>,
    task: &Task,
    q: &QMatrix<T>,
    config: &LanguageConfig,
) -> Result<LossBreakdown<T>> {
    let with_student = config.feedback && config.trains_student_on(task);
    Ok(task_step(sae, student, task, q, config, with_student)?.losses)
}

/// Analytic gradients `(encoder, decoder, student)` of [`task_compound_loss`].
pub fn task_compound_gradient<T: Scalar>(
    sae: &Sae<T>,
    student: &Student<T>,
    task: &Task,
    q: &QMatrix<T>,
    config: &LanguageConfig,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let with_student = config.feedback && config.trains_student_on(task);
    let g = task_step(sae, student, task, q, config, with_student)?;
    let sg = g.student.unwrap_or_else(|| vec![T::zero(); student.store.param_count()]);
    Ok((g.encoder, g.decoder, sg))
}

/// Encodes every Q-matrix.
pub fn encode_all<T: Scalar>(sae: &Sae<T>, tasks: &[Task], qs: &[QMatrix<T>]) -> Result<MessageArchive<T>> {
    let messages = tasks.iter().zip(qs).map(|(t, q)| sae.encode(q, t.task_id)).collect::<Result<Vec<_>>>()?;
    Ok(MessageArchive::from_messages(messages))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::Maze;

    fn empty_task(goal: (usize, usize)) -> Task {
        Task::new(Maze::empty(4), goal.into(), 0).unwrap()
    }

    #[test]
    fn parameter_count() {
        let sae = Sae::<f64>::new(4, 5, Activation::Relu, 0).unwrap();
        assert_eq!(sae.param_count(), 5247);
        let weights: usize =
            sae.encoder.net.layers().iter().chain(sae.decoder.net.layers()).map(|l| l.weight_count()).sum();
        assert_eq!(weights, 4720);
    }

    #[test]
    fn zero_sae_gives_zero_message_and_reconstruction() {
        let sae = Sae::<f64>::zeros(4, 5, Activation::Relu).unwrap();
        let mut q = QMatrix::zeros(4);
        q.values.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.01);
        let m = sae.encode(&q, 3).unwrap();
        assert_eq!(m.values, vec![0.0; 5]);
        let rec = sae.decode(&m).unwrap();
        assert_eq!(rec.size, 4);
        assert!(rec.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_layout_round_trip() {
        let sae = Sae::<f64>::zeros(4, 5, Activation::Relu).unwrap();
        let q = QMatrix::from_values(4, (0..64).map(|i| i as f64).collect()).unwrap();
        assert_eq!(sae.from_channels(&sae.to_channels(&q).unwrap()), q);
    }

    #[test]
    fn sae_loss_examples() {
        let q = QMatrix::from_values(4, vec![0.3; 64]).unwrap();
        let l = sae_loss(&q, &q, &[0.0; 5], KAPPA).unwrap();
        assert_eq!(l.compound, 0.0);

        let l = sae_loss(&q, &QMatrix::zeros(4), &[3.0, 4.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(l.compound, 5.0);

        // Unit difference in all 64 entries: ||.|| = 8.
        let shifted = QMatrix::from_values(4, vec![1.3; 64]).unwrap();
        let l = sae_loss(&q, &shifted, &[1.0, 1.0, 1.0, 1.0, 0.0], 0.002).unwrap();
        assert!((l.reconstruction - 0.998 * 8.0).abs() < 1e-12);
        assert!((l.sparsity - 0.002 * 2.0).abs() < 1e-15);

        assert!(sae_loss(&q, &q, &[0.0; 5], 1.5).is_err());
    }

    fn uniform() -> Vec<f64> {
        vec![0.25; 64]
    }

    #[test]
    fn uniform_one_step_goal_probability() {
        let p = occupancy_after_k(&uniform(), &empty_task((0, 1)), 1).unwrap();
        assert!((p[Cell::new(0, 1).index(4)] - 0.25).abs() < 1e-15);
        // Two bumps keep half the mass at the start.
        assert!((p[Cell::START.index(4)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn deterministic_optimal_policy_reaches_goal() {
        let task = empty_task((3, 3));
        let mut policy = vec![0.0; 64];
        for c in task.maze.cells() {
            let a = if c.x < 3 { Action::Right } else { Action::Up };
            policy[c.index(4) * 4 + a.index()] = 1.0;
        }
        let p = occupancy_after_k(&policy, &task, 6).unwrap();
        assert_eq!(p[task.goal.index(4)], 1.0);
    }

    #[test]
    fn non_normalized_policy_is_rejected() {
        let mut policy = uniform();
        policy[0] = 0.5;
        assert!(occupancy_after_k(&policy, &empty_task((3, 3)), 2).is_err());
    }

    #[test]
    fn goal_finding_examples() {
        let task = empty_task((0, 1));
        let gamma = default_gamma(4, 5);
        assert!((gamma - (64.0f64 / 5.0).sqrt() / 20.0).abs() < 1e-15);

        // P = 0 with zero outputs: k = 0 steps never reaches the goal.
        let zero = QMatrix::zeros(4);
        let l = goal_finding_loss(&zero, &task, gamma, 0).unwrap();
        assert!((l - (1.0 - gamma)).abs() < 1e-15);

        // P -> 1: huge logit toward the goal, zero regularizer weight.
        let mut q = QMatrix::<f64>::zeros(4);
        q.row_mut(Cell::START)[Action::Up.index()] = 800.0;
        let l = goal_finding_loss(&q, &task, 0.0, 1).unwrap();
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn goal_finding_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let maze = Maze::new(4, vec![Cell::new(1, 1)], 1).unwrap();
        let task = Task::new(maze, Cell::new(2, 2), 0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut q = QMatrix::<f64>::from_values(4, (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        q.zero_walls(&task.maze);
        let gf = goal_finding_with_grad(&q, &task, 0.1, 5).unwrap();
        for i in 0..64 {
            if task.maze.is_wall(Cell::from_index(i / 4, 4)) {
                continue;
            }
            let h = 1e-6;
            let mut plus = q.clone();
            plus.values[i] += h;
            let mut minus = q.clone();
            minus.values[i] -= h;
            let fd = (goal_finding_loss(&plus, &task, 0.1, 5).unwrap()
                - goal_finding_loss(&minus, &task, 0.1, 5).unwrap())
                / (2.0 * h);
            assert!((fd - gf.grad[i]).abs() < 1e-8, "entry {i}: {fd} vs {}", gf.grad[i]);
        }
    }
}
