//! Flat run configuration, keyed by hyperparameter name.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffnet::{Activation, AdamConfig};
use crate::error::{contract, Result};
use crate::gridworld::Rewards;
use crate::language::{self, LanguageConfig};
use crate::loopback::StudentOutputMode;
use crate::student::FrozenStudentConfig;
use crate::teacher::{DqnGradient, TeacherConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    /// Grid side including the outer wall ring.
    pub n: usize,
    pub n_tilde: usize,
    pub gamma_bellman: f64,
    #[serde(rename = "R_goal")]
    pub r_goal: f64,
    #[serde(rename = "R_wall")]
    pub r_wall: f64,
    #[serde(rename = "R_step")]
    pub r_step: f64,
    #[serde(rename = "L")]
    pub short_term_memory: usize,
    #[serde(rename = "K")]
    pub message_len: usize,
    #[serde(rename = "alpha")]
    pub learning_rate: f64,
    #[serde(rename = "N_epochs")]
    pub epochs: usize,
    /// `None` means `(1/20) sqrt(4 n_tilde^2 / K)`.
    pub gamma: Option<f64>,
    pub zeta: f64,
    pub kappa: f64,
    pub k_budget_factor: usize,

    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,

    pub teacher_learning_rate: f64,
    pub teacher_epsilon_start: f64,
    pub teacher_epsilon_end: f64,
    pub teacher_epsilon_decay_episodes: usize,
    pub teacher_max_steps: usize,
    pub teacher_max_episodes: usize,
    pub teacher_min_episodes: usize,
    pub teacher_check_every: usize,
    pub teacher_gradient: DqnGradient,
    pub teacher_seed: u64,

    pub activation: Activation,
    pub student_activation: Activation,
    pub language_seeds: usize,
    pub loopback_seeds: usize,
    pub loopback_output: StudentOutputMode,
}

impl Default for Config {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let t = TeacherConfig::default();
        Config {
            version: crate::artifacts::FORMAT_VERSION,
            n: 6,
            n_tilde: 4,
            gamma_bellman: t.gamma_bellman,
            r_goal: t.rewards.goal,
            r_wall: t.rewards.wall,
            r_step: t.rewards.step,
            short_term_memory: t.short_term_memory,
            message_len: language::MESSAGE_LEN,
            learning_rate: language::LEARNING_RATE,
            epochs: language::EPOCHS,
            gamma: None,
            zeta: language::ZETA,
            kappa: language::KAPPA,
            k_budget_factor: 2,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            teacher_learning_rate: t.learning_rate,
            teacher_epsilon_start: t.epsilon_start,
            teacher_epsilon_end: t.epsilon_end,
            teacher_epsilon_decay_episodes: t.epsilon_decay_episodes,
            teacher_max_steps: t.max_steps_per_episode,
            teacher_max_episodes: t.max_episodes,
            teacher_min_episodes: t.min_episodes,
            teacher_check_every: t.check_every,
            teacher_gradient: t.gradient,
            teacher_seed: t.seed,
            activation: Activation::Relu,
            student_activation: Activation::Relu,
            language_seeds: 5,
            loopback_seeds: 25,
            loopback_output: StudentOutputMode::Raw,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let c: Config = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != crate::artifacts::FORMAT_VERSION {
            return Err(crate::Error::Version { expected: crate::artifacts::FORMAT_VERSION, found: self.version });
        }
        if self.n != self.n_tilde + 2 {
            return Err(contract(format!("n = {} must equal n_tilde + 2 = {}", self.n, self.n_tilde + 2)));
        }
        if self.n_tilde != crate::gridworld::INTERIOR {
            return Err(contract("only 4x4 interiors are supported"));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(contract("kappa must lie in [0, 1]"));
        }
        if self.message_len == 0 || self.k_budget_factor == 0 {
            return Err(contract("K and k_budget_factor must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, epsilon: self.adam_epsilon }
    }

    pub fn teacher(&self) -> TeacherConfig {
        TeacherConfig {
            gamma_bellman: self.gamma_bellman,
            rewards: Rewards { step: self.r_step, wall: self.r_wall, goal: self.r_goal },
            short_term_memory: self.short_term_memory,
            learning_rate: self.teacher_learning_rate,
            epsilon_start: self.teacher_epsilon_start,
            epsilon_end: self.teacher_epsilon_end,
            epsilon_decay_episodes: self.teacher_epsilon_decay_episodes,
            max_steps_per_episode: self.teacher_max_steps,
            max_episodes: self.teacher_max_episodes,
            min_episodes: self.teacher_min_episodes,
            check_every: self.teacher_check_every,
            gradient: self.teacher_gradient,
            seed: self.teacher_seed,
        }
    }

    pub fn language(&self, feedback: bool, seed: u64) -> LanguageConfig {
        LanguageConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            kappa: self.kappa,
            zeta: self.zeta,
            gamma: self.gamma,
            message_len: self.message_len,
            feedback,
            sae_activation: self.activation,
            student_activation: self.student_activation,
            student_goals: None,
            seed,
        }
    }

    pub fn frozen_student(&self, seed: u64) -> FrozenStudentConfig {
        FrozenStudentConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            gamma: self.gamma,
            activation: self.student_activation,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_use_table_names() {
        let c = Config::default();
        let json = serde_json::to_string(&c).unwrap();
        for key in ["\"R_goal\"", "\"L\"", "\"K\"", "\"alpha\"", "\"N_epochs\"", "\"zeta\"", "\"kappa\""] {
            assert!(json.contains(key), "{key}");
        }
        let back: Config = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: Config = serde_json::from_str(r#"{"version": 1, "zeta": 2.0}"#).unwrap();
        assert_eq!(c.zeta, 2.0);
        assert_eq!(c.epochs, 1000);
        assert!(serde_json::from_str::<Config>(r#"{"bogus": 1}"#).is_err());
        let bad: Config = serde_json::from_str(r#"{"version": 9}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
