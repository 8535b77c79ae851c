use std::collections::VecDeque;

use commlab::gridworld::{
    enumerate_test_tasks, enumerate_training_tasks, Action, Cell, Maze, Task, R_GOAL, R_STEP, R_WALL,
};
use commlab::language::{occupancy_after_k, policy_from_outputs, sae_loss};
use commlab::student::{baseline_policy, solve_probability, BaselineKind};
use commlab::teacher::QMatrix;
use proptest::prelude::*;

/// Plain BFS over coordinates, independent of `Maze::distances_from`.
fn bfs(walls: &[(usize, usize)], goal: (usize, usize)) -> Option<usize> {
    let n = 4usize;
    let mut dist = [[usize::MAX; 4]; 4];
    dist[0][0] = 0;
    let mut queue = VecDeque::from([(0usize, 0usize)]);
    while let Some((x, y)) = queue.pop_front() {
        if (x, y) == goal {
            return Some(dist[x][y]);
        }
        for (dx, dy) in [(1i32, 0i32), (0, 1), (-1, 0), (0, -1)] {
            let (nx, ny) = (x as i32 + dx, y as i32 + dy);
            if nx < 0 || ny < 0 || nx >= n as i32 || ny >= n as i32 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if walls.contains(&(nx, ny)) || dist[nx][ny] != usize::MAX {
                continue;
            }
            dist[nx][ny] = dist[x][y] + 1;
            queue.push_back((nx, ny));
        }
    }
    None
}

#[test]
fn shortest_path_with_two_walls_matches_bfs() {
    let maze = Maze::new(4, vec![Cell::new(0, 1), Cell::new(1, 1)], 0).unwrap();
    let task = Task::new(maze, Cell::new(0, 2), 0).unwrap();
    let want = bfs(&[(0, 1), (1, 1)], (0, 2)).unwrap();
    assert_eq!(want, 6);
    assert_eq!(task.shortest_path_length().unwrap(), want);
}

#[test]
fn every_enumerated_task_matches_bfs() {
    for task in enumerate_training_tasks().iter().chain(&enumerate_test_tasks()) {
        let walls: Vec<(usize, usize)> = task.maze.walls.iter().map(|c| (c.x, c.y)).collect();
        assert_eq!(task.shortest_path_length().ok(), bfs(&walls, (task.goal.x, task.goal.y)), "task {}", task.task_id);
    }
}

#[test]
fn task_ids_are_unique_and_dense() {
    for tasks in [enumerate_training_tasks(), enumerate_test_tasks()] {
        for (i, t) in tasks.iter().enumerate() {
            assert_eq!(t.task_id, i);
        }
    }
}

fn task_strategy() -> impl Strategy<Value = Task> {
    let tasks = enumerate_test_tasks();
    (0..tasks.len()).prop_map(move |i| tasks[i].clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn step_rewards_and_termination(task in task_strategy(), cell in 0usize..16, a in 0usize..4) {
        let state = Cell::from_index(cell, 4);
        prop_assume!(!task.maze.is_wall(state) && state != task.goal);
        let t = task.step(state, Action::from_index(a)).unwrap();
        prop_assert!([R_STEP, R_WALL, R_GOAL].contains(&t.reward));
        prop_assert_eq!(t.terminal, t.next_state == task.goal);
        prop_assert_eq!(t.reward == R_WALL, t.next_state == state);
        prop_assert!(!task.maze.is_wall(t.next_state));
        prop_assert!(state.manhattan(t.next_state) <= 1);
    }

    #[test]
    fn occupancy_is_a_distribution(task in task_strategy(), raw in prop::collection::vec(-3.0f64..3.0, 64), k in 0usize..12) {
        let mut policy = policy_from_outputs(&raw);
        for w in &task.maze.walls {
            let i = w.index(4) * 4;
            policy[i..i + 4].fill(0.0);
        }
        let occ = occupancy_after_k(&policy, &task, k).unwrap();
        prop_assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(occ.iter().all(|&p| p >= 0.0));
        for w in &task.maze.walls {
            prop_assert_eq!(occ[w.index(4)], 0.0);
        }
    }

    #[test]
    fn smart_random_never_loses_to_random(task in task_strategy()) {
        let r = solve_probability(&baseline_policy::<f64>(BaselineKind::Random, &task.maze), &task, 2).unwrap();
        let s = solve_probability(&baseline_policy::<f64>(BaselineKind::SmartRandom, &task.maze), &task, 2).unwrap();
        prop_assert!((0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&s));
        prop_assert!(s >= r - 1e-12);
    }

    #[test]
    fn sae_loss_terms_are_nonnegative(q in prop::collection::vec(-2.0f64..2.0, 64), r in prop::collection::vec(-2.0f64..2.0, 64), m in prop::collection::vec(-1.0f64..1.0, 5), kappa in 0.0f64..=1.0) {
        let q = QMatrix::from_values(4, q).unwrap();
        let r = QMatrix::from_values(4, r).unwrap();
        let l = sae_loss(&q, &r, &m, kappa).unwrap();
        prop_assert!(l.reconstruction >= 0.0 && l.sparsity >= 0.0);
        prop_assert!((l.compound - l.reconstruction - l.sparsity).abs() < 1e-12);
    }
}
