use commlab::gridworld::{enumerate_training_tasks, Cell, Task};
use commlab::language::{goal_probability_with_grad, occupancy_after_k};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DELTAS: [(isize, isize); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

fn random_policy(task: &Task, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = task.maze.size;
    let mut p = vec![0.0; n * n * 4];
    for x in 0..n {
        for y in 0..n {
            let c = Cell::new(x, y);
            if task.maze.walls.contains(&c) {
                continue;
            }
            let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for a in 0..4 {
                p[(x * n + y) * 4 + a] = raw[a] / s;
            }
        }
    }
    p
}

/// Row-stochastic transition matrix built straight from coordinates.
fn transition_matrix(policy: &[f64], task: &Task) -> DMatrix<f64> {
    let n = task.maze.size;
    let idx = |x: usize, y: usize| x * n + y;
    let mut m = DMatrix::<f64>::zeros(n * n, n * n);
    for x in 0..n {
        for y in 0..n {
            let c = Cell::new(x, y);
            if task.maze.walls.contains(&c) {
                continue;
            }
            if c == task.goal {
                m[(idx(x, y), idx(x, y))] = 1.0;
                continue;
            }
            for (a, (dx, dy)) in DELTAS.iter().enumerate() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                let blocked = nx < 0
                    || ny < 0
                    || nx >= n as isize
                    || ny >= n as isize
                    || task.maze.walls.contains(&Cell::new(nx as usize, ny as usize));
                let to = if blocked { idx(x, y) } else { idx(nx as usize, ny as usize) };
                m[(idx(x, y), to)] += policy[idx(x, y) * 4 + a];
            }
        }
    }
    m
}

fn oracle(policy: &[f64], task: &Task, k: usize) -> Vec<f64> {
    let n = task.maze.size;
    let mut row = DMatrix::<f64>::zeros(1, n * n);
    row[(0, 0)] = 1.0;
    let p = transition_matrix(policy, task).pow(k as u32);
    (row * p).iter().copied().collect()
}

#[test]
fn occupancy_matches_matrix_power() {
    let tasks = enumerate_training_tasks();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let picks = [0usize, 37, 101, 150, 224];
    for &ti in &picks {
        let task = &tasks[ti];
        for _ in 0..20 {
            let policy = random_policy(task, &mut rng);
            let mut prev_goal = 0.0;
            for k in 0..=8 {
                let ours = occupancy_after_k(&policy, task, k).unwrap();
                let want = oracle(&policy, task, k);
                for (a, b) in ours.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "task {ti} k {k}: {a} vs {b}");
                }
                assert!((ours.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let g = ours[task.goal.index(task.maze.size)];
                assert!(g >= prev_goal - 1e-15);
                prev_goal = g;
            }
        }
    }
}

#[test]
fn goal_probability_gradient_matches_finite_differences() {
    let tasks = enumerate_training_tasks();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let task = &tasks[120];
    let k = task.shortest_path_length().unwrap() + 2;
    let policy = random_policy(task, &mut rng);
    let (p, grad) = goal_probability_with_grad(&policy, task, k).unwrap();
    assert!((p - oracle(&policy, task, k)[task.goal.index(4)]).abs() < 1e-12);
    // Goal mass is a polynomial in the raw policy entries, so rows need not
    // stay normalized under the perturbation.
    let h = 1e-5;
    let goal_mass = |pol: &[f64]| oracle(pol, task, k)[task.goal.index(4)];
    for c in task.decision_cells() {
        for a in 0..4 {
            let i = c.index(4) * 4 + a;
            let (mut plus, mut minus) = (policy.clone(), policy.clone());
            plus[i] += h;
            minus[i] -= h;
            let fd = (goal_mass(&plus) - goal_mass(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8, "{c:?} {a}: {fd} vs {}", grad[i]);
        }
    }
}
