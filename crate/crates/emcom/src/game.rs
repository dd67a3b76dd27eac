//! The Lewis-game environment family: channel noise, reward, noise
//! scheduling, external input noise and deterministic token masking.
//!
//! Tokens are integers in 0..vocab; the distinguished `unk` symbol is the id
//! `vocab` (the last embedding row). The Speaker never emits `unk`; only the
//! channel and the masking analysis introduce it.

use serde::{Deserialize, Serialize};

use crate::rng::Stream;
use crate::{Error, Result};

pub type Token = u16;

/// Token id used for `unk` given a vocabulary size.
pub fn unk_token(vocab: usize) -> Token {
    vocab as Token
}

/// Fixed-length sequence of discrete tokens; the channel payload.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Message {
    tokens: Vec<Token>,
}

impl Message {
    pub fn new(tokens: Vec<Token>) -> Self {
        assert!(!tokens.is_empty(), "messages must have at least one token");
        Message { tokens }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains_unk(&self, vocab: usize) -> bool {
        let unk = unk_token(vocab);
        self.tokens.contains(&unk)
    }
}

/// How the channel noise level evolves over training steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    Linear,
}

/// Channel noise configuration. `lambda_final` is the target noise level;
/// the linear schedule ramps from `lambda_init` over `ramp_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub lambda_final: f64,
    pub lambda_init: f64,
    pub schedule: Schedule,
    pub ramp_steps: u64,
}

impl ChannelConfig {
    /// Noiseless channel (the plain Lewis game).
    pub fn noiseless() -> Self {
        ChannelConfig {
            lambda_final: 0.0,
            lambda_init: 0.0,
            schedule: Schedule::Constant,
            ramp_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda_final) {
            return Err(Error::Config(format!(
                "lambda must be in [0, 1), got {}",
                self.lambda_final
            )));
        }
        if !(0.0..1.0).contains(&self.lambda_init) {
            return Err(Error::Config(format!(
                "lambda_init must be in [0, 1), got {}",
                self.lambda_init
            )));
        }
        if self.schedule == Schedule::Linear && self.ramp_steps == 0 {
            return Err(Error::Config(
                "linear noise schedule requires ramp_steps > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Noise level at a training step.
pub fn noise_at_step(cfg: &ChannelConfig, step: u64) -> f64 {
    match cfg.schedule {
        Schedule::Constant => cfg.lambda_final,
        Schedule::Linear => {
            assert!(
                cfg.ramp_steps > 0,
                "linear schedule requires ramp_steps > 0"
            );
            let frac = (step as f64 / cfg.ramp_steps as f64).min(1.0);
            cfg.lambda_init + (cfg.lambda_final - cfg.lambda_init) * frac
        }
    }
}

/// Independently per position, keep the token when u > lambda, otherwise
/// replace it with `unk`. Length and kept tokens are untouched; the Speaker
/// never observes the result.
pub fn apply_channel_noise(
    m: &Message,
    lambda: f64,
    vocab: usize,
    rng: &mut Stream,
) -> Result<Message> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "lambda must be in [0, 1), got {lambda}"
        )));
    }
    let unk = unk_token(vocab);
    let tokens = m
        .tokens
        .iter()
        .map(|&t| if rng.next_f64() > lambda { t } else { unk })
        .collect();
    Ok(Message::new(tokens))
}

/// Shared game reward: +1 when the Listener picked the target, -1 otherwise.
pub fn reward(target_index: usize, choice_index: usize, c_size: usize) -> Result<i32> {
    if target_index >= c_size || choice_index >= c_size {
        return Err(Error::Config(format!(
            "indices ({target_index}, {choice_index}) out of range for {c_size} candidates"
        )));
    }
    Ok(if target_index == choice_index { 1 } else { -1 })
}

/// Gaussian perturbation applied to feature vectors at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputNoiseConfig {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for InputNoiseConfig {
    fn default() -> Self {
        InputNoiseConfig {
            mu: 0.0,
            sigma: 1.0,
        }
    }
}

/// x + eps with eps ~ N(mu, sigma^2 I); a fresh draw per coordinate and per
/// call, so the target and every candidate are perturbed independently.
pub fn apply_input_noise(x: &[f32], cfg: &InputNoiseConfig, rng: &mut Stream) -> Vec<f32> {
    assert!(cfg.sigma >= 0.0, "sigma must be nonnegative");
    if cfg.sigma == 0.0 && cfg.mu == 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|v| v + (cfg.mu + cfg.sigma * rng.next_normal()) as f32)
        .collect()
}

/// Deterministically replace the listed positions with `unk`.
pub fn mask_tokens(m: &Message, positions: &[usize], vocab: usize) -> Result<Message> {
    let unk = unk_token(vocab);
    let mut tokens = m.tokens.clone();
    for &p in positions {
        if p >= tokens.len() {
            return Err(Error::Config(format!(
                "mask position {p} out of range for message length {}",
                tokens.len()
            )));
        }
        tokens[p] = unk;
    }
    Ok(Message::new(tokens))
}

/// Optional JSON-lines episode log record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeLogRecord {
    pub step: u64,
    pub target_idx: usize,
    pub tokens: Vec<Token>,
    pub noisy_tokens: Vec<Token>,
    pub choice: usize,
    pub reward: i32,
}
