//! Loss composition for both agents and the end-to-end decentralized
//! training loop.
//!
//! Each agent optimizes only its own parameters from the shared game reward;
//! no gradient crosses the channel. The Speaker and Listener therefore build
//! their losses on two separate tapes, which makes the isolation structural
//! rather than a convention.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agents::{
    self, bind_listener, bind_speaker, features_tensor, AgentConfig, DecodeMode, ListenerDecision,
    ListenerForward, SpeakerForward, SpeakerRollout,
};
use crate::autodiff::{Scalar, Tape, Tensor, ValueId};
use crate::dataset::{sample_episode, Dataset};
use crate::game::{apply_channel_noise, noise_at_step, reward, ChannelConfig, Message};
use crate::nn::{adam_step, ema_update, AdamConfig, AdamState, EmaState, ParamStore, TapeBinding};
use crate::rng::Stream;
use crate::{Error, Result};

/// Loss-term weights for both agents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub speaker_actor: f64,
    pub speaker_critic: f64,
    pub speaker_entropy: f64,
    pub speaker_kl: f64,
    pub listener_actor: f64,
    pub listener_critic: f64,
    pub listener_entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            speaker_actor: 1.0,
            speaker_critic: 1.0,
            speaker_entropy: 1e-4,
            speaker_kl: 0.5,
            listener_actor: 1.0,
            listener_critic: 1e-3,
            listener_entropy: 1e-4,
        }
    }
}

/// Which game the pair is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameVariant {
    /// Supervised Listener (InfoNCE), RL Speaker, noiseless channel.
    LgS,
    /// Both agents RL, noiseless channel.
    LgRl,
    /// Both agents RL, noisy channel.
    Nlg,
}

impl GameVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            GameVariant::LgS => "LG_S",
            GameVariant::LgRl => "LG_RL",
            GameVariant::Nlg => "NLG",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "LG_S" => Ok(GameVariant::LgS),
            "LG_RL" => Ok(GameVariant::LgRl),
            "NLG" => Ok(GameVariant::Nlg),
            other => Err(Error::Config(format!(
                "unknown game variant {other:?} (expected LG_S, LG_RL or NLG)"
            ))),
        }
    }
}

/// Full training configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: GameVariant,
    pub agents: AgentConfig,
    pub total_steps: u64,
    pub batch_size: usize,
    pub c_size: usize,
    pub channel: ChannelConfig,
    pub speaker_lr: f64,
    pub listener_lr: f64,
    pub ema_eta: f64,
    /// Recorded for completeness; the single-shot episode returns are
    /// undiscounted, so no written loss consumes it.
    pub gamma: f64,
    pub weights: LossWeights,
    pub with_replacement: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.batch_size == 0 || self.c_size < 2 {
            return Err(Error::Config(
                "steps, batch size and candidate count must be positive (c >= 2)".into(),
            ));
        }
        if self.c_size != self.agents.critic_c_size {
            return Err(Error::Config(format!(
                "listener critic width {} does not match training candidate count {}",
                self.agents.critic_c_size, self.c_size
            )));
        }
        self.channel.validate()?;
        if self.variant != GameVariant::Nlg && self.channel.lambda_final != 0.0 {
            return Err(Error::Config(format!(
                "{} uses a deterministic channel; lambda must be 0",
                self.variant.as_str()
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_eta) {
            return Err(Error::Config("EMA weight must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Channel noise level in effect at a step (zero for LG variants).
    pub fn lambda_at(&self, step: u64) -> f64 {
        match self.variant {
            GameVariant::Nlg => noise_at_step(&self.channel, step),
            _ => 0.0,
        }
    }
}

/// Named random streams owned by a training run.
#[derive(Clone, Debug)]
pub struct StreamSet {
    pub episode: Stream,
    pub speaker: Stream,
    pub listener: Stream,
    pub channel: Stream,
}

impl StreamSet {
    pub fn from_seed(seed: u64) -> Self {
        StreamSet {
            episode: Stream::derive(seed, "episode"),
            speaker: Stream::derive(seed, "speaker"),
            listener: Stream::derive(seed, "listener"),
            channel: Stream::derive(seed, "channel"),
        }
    }
}

/// Everything a training run mutates.
#[derive(Clone, Debug)]
pub struct TrainState<S: Scalar> {
    pub step: u64,
    pub speaker: ParamStore<S>,
    pub listener: ParamStore<S>,
    pub ema: EmaState<S>,
    pub adam_speaker: AdamState<S>,
    pub adam_listener: AdamState<S>,
    pub streams: StreamSet,
}

impl<S: Scalar> TrainState<S> {
    /// Fresh state: seeded parameter init, EMA target equal to the online
    /// Speaker, Adam at step zero.
    pub fn init(cfg: &TrainConfig) -> Self {
        let mut s_rng = Stream::derive(cfg.seed, "speaker_init");
        let mut l_rng = Stream::derive(cfg.seed, "listener_init");
        let speaker = agents::init_speaker(&cfg.agents, &mut s_rng);
        let listener = agents::init_listener(&cfg.agents, &mut l_rng);
        let ema = EmaState::from_online(&speaker, cfg.ema_eta);
        TrainState {
            step: 0,
            speaker,
            listener,
            ema,
            adam_speaker: AdamState::new(AdamConfig::with_lr(cfg.speaker_lr)),
            adam_listener: AdamState::new(AdamConfig::with_lr(cfg.listener_lr)),
            streams: StreamSet::from_seed(cfg.seed),
        }
    }
}

/// One metrics record, emitted per logging interval as a JSON line.
/// The supervised-Listener variant reports `infonce` instead of the actor
/// and critic terms.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub acc: f64,
    pub reward_mean: f64,
    pub l_sa: f64,
    pub l_sc: f64,
    pub l_sh: f64,
    pub l_skl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_la: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_lc: Option<f64>,
    pub l_lh: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infonce: Option<f64>,
    pub lambda: f64,
    pub speaker_entropy: f64,
}

// ---- loss builders (tape) ------------------------------------------------------

/// Tape handles for the Speaker loss terms; `total` is the weighted sum,
/// batch-averaged.
pub struct SpeakerLossIds {
    pub total: ValueId,
    pub l_sa: ValueId,
    pub l_sc: ValueId,
    pub l_sh: ValueId,
    pub l_skl: ValueId,
}

/// Build the four Speaker loss terms over a sampled batch rollout.
///
/// The advantage `R - v_t` enters the actor term through a stop-gradient:
/// it is read out of the tape as plain numbers and re-enters as a constant,
/// so the actor term trains the policy only while the critic term trains the
/// value head.
pub fn build_speaker_losses<S: Scalar>(
    tape: &mut Tape<S>,
    fwd: &SpeakerForward,
    ema_logprobs: &[ValueId],
    rewards: &[f64],
    w: &LossWeights,
) -> SpeakerLossIds {
    let batch = fwd.batch;
    assert_eq!(rewards.len(), batch);
    assert_eq!(ema_logprobs.len(), fwd.step_probs.len());
    let r_const = tape.constant(Tensor::new(
        vec![batch],
        rewards.iter().map(|r| S::from_f64(*r)).collect(),
    ));

    let mut sa_sum: Option<ValueId> = None;
    let mut sc_sum: Option<ValueId> = None;
    let mut sh_sum: Option<ValueId> = None;
    let mut skl_sum: Option<ValueId> = None;
    let acc = |slot: &mut Option<ValueId>, tape: &mut Tape<S>, term: ValueId| {
        *slot = Some(match slot.take() {
            Some(prev) => tape.add(prev, term),
            None => term,
        });
    };

    for (t, (&v, &logp)) in fwd
        .step_values
        .iter()
        .zip(&fwd.step_chosen_logp)
        .enumerate()
    {
        // stop-gradient advantage
        let v_vals = tape.value(v).to_f64_vec();
        let adv = tape.constant(Tensor::new(
            vec![batch],
            rewards
                .iter()
                .zip(&v_vals)
                .map(|(r, vv)| S::from_f64(r - vv))
                .collect(),
        ));
        let sa_t = tape.dot(adv, logp);
        acc(&mut sa_sum, tape, sa_t);

        let diff = tape.sub(r_const, v);
        let sq = tape.square(diff);
        let sc_t = tape.sum(sq);
        acc(&mut sc_sum, tape, sc_t);

        let plogp = tape.mul_elem(fwd.step_probs[t], fwd.step_logprobs[t]);
        let sh_t = tape.sum(plogp);
        acc(&mut sh_sum, tape, sh_t);

        let logdiff = tape.sub(fwd.step_logprobs[t], ema_logprobs[t]);
        let pkl = tape.mul_elem(fwd.step_probs[t], logdiff);
        let skl_t = tape.sum(pkl);
        acc(&mut skl_sum, tape, skl_t);
    }

    let inv_b = 1.0 / batch as f64;
    let l_sa = tape.scale(sa_sum.unwrap(), S::from_f64(-inv_b));
    let l_sc = tape.scale(sc_sum.unwrap(), S::from_f64(inv_b));
    let l_sh = tape.scale(sh_sum.unwrap(), S::from_f64(inv_b));
    let l_skl = tape.scale(skl_sum.unwrap(), S::from_f64(inv_b));

    let wa = tape.scale(l_sa, S::from_f64(w.speaker_actor));
    let wc = tape.scale(l_sc, S::from_f64(w.speaker_critic));
    let wh = tape.scale(l_sh, S::from_f64(w.speaker_entropy));
    let wk = tape.scale(l_skl, S::from_f64(w.speaker_kl));
    let s1 = tape.add(wa, wc);
    let s2 = tape.add(s1, wh);
    let total = tape.add(s2, wk);
    SpeakerLossIds {
        total,
        l_sa,
        l_sc,
        l_sh,
        l_skl,
    }
}

/// Tape handles for the Listener loss terms.
pub struct ListenerLossIds {
    pub total: ValueId,
    pub l_la: ValueId,
    pub l_lc: ValueId,
    pub l_lh: ValueId,
}

/// Build the Listener's actor, critic and entropy terms (single-step
/// episodes: the return is the game reward).
pub fn build_listener_losses<S: Scalar>(
    tape: &mut Tape<S>,
    fwd: &ListenerForward,
    rewards: &[f64],
    w: &LossWeights,
) -> ListenerLossIds {
    let batch = rewards.len();
    let v = fwd.value.expect("listener losses require the critic value");
    let r_const = tape.constant(Tensor::new(
        vec![batch],
        rewards.iter().map(|r| S::from_f64(*r)).collect(),
    ));
    let v_vals = tape.value(v).to_f64_vec();
    let adv = tape.constant(Tensor::new(
        vec![batch],
        rewards
            .iter()
            .zip(&v_vals)
            .map(|(r, vv)| S::from_f64(r - vv))
            .collect(),
    ));
    let la_dot = tape.dot(adv, fwd.chosen_logp);

    let diff = tape.sub(r_const, v);
    let sq = tape.square(diff);
    let lc_sum = tape.sum(sq);

    let plogp = tape.mul_elem(fwd.probs, fwd.logprobs);
    let lh_sum = tape.sum(plogp);

    let inv_b = 1.0 / batch as f64;
    let l_la = tape.scale(la_dot, S::from_f64(-inv_b));
    let l_lc = tape.scale(lc_sum, S::from_f64(inv_b));
    let l_lh = tape.scale(lh_sum, S::from_f64(inv_b));
    let wa = tape.scale(l_la, S::from_f64(w.listener_actor));
    let wc = tape.scale(l_lc, S::from_f64(w.listener_critic));
    let wh = tape.scale(l_lh, S::from_f64(w.listener_entropy));
    let s1 = tape.add(wa, wc);
    let total = tape.add(s1, wh);
    ListenerLossIds {
        total,
        l_la,
        l_lc,
        l_lh,
    }
}

/// Batch-averaged InfoNCE over score rows: -log softmax(scores)[target].
pub fn build_infonce<S: Scalar>(tape: &mut Tape<S>, scores: ValueId, targets: &[usize]) -> ValueId {
    let logprobs = tape.log_softmax(scores);
    let picked = tape.take_per_row(logprobs, targets);
    let s = tape.sum(picked);
    tape.scale(s, S::from_f64(-1.0 / targets.len() as f64))
}

// ---- loss values (records) -------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeakerLossValues {
    pub total: f64,
    pub l_sa: f64,
    pub l_sc: f64,
    pub l_sh: f64,
    pub l_skl: f64,
}

/// Evaluate the Speaker loss terms for one episode record. `ema_dists` holds
/// the target policy's per-step distributions on the same prefixes.
#[allow(clippy::needless_range_loop)]
pub fn speaker_losses(
    rollout: &SpeakerRollout,
    game_reward: f64,
    ema_dists: &[Vec<f64>],
    w: &LossWeights,
) -> Result<SpeakerLossValues> {
    let n = rollout.message.len();
    assert_eq!(ema_dists.len(), n, "EMA pass must cover every step");
    let mut out = SpeakerLossValues {
        total: 0.0,
        l_sa: 0.0,
        l_sc: 0.0,
        l_sh: 0.0,
        l_skl: 0.0,
    };
    for t in 0..n {
        let adv = game_reward - rollout.values[t];
        out.l_sa -= adv * rollout.logp[t];
        out.l_sc += adv * adv;
        for (m, p) in rollout.dists[t].iter().enumerate() {
            if *p > 0.0 {
                out.l_sh += p * p.ln();
                out.l_skl += p * (p.ln() - ema_dists[t][m].max(1e-300).ln());
            }
        }
    }
    out.total = w.speaker_actor * out.l_sa
        + w.speaker_critic * out.l_sc
        + w.speaker_entropy * out.l_sh
        + w.speaker_kl * out.l_skl;
    for (name, value) in [
        ("l_sa", out.l_sa),
        ("l_sc", out.l_sc),
        ("l_sh", out.l_sh),
        ("l_skl", out.l_skl),
    ] {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "speaker loss component {name} is non-finite"
            )));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ListenerLossValues {
    pub total: f64,
    pub l_la: f64,
    pub l_lc: f64,
    pub l_lh: f64,
}

/// Evaluate the Listener loss terms for one decision record.
pub fn listener_losses(
    decision: &ListenerDecision,
    game_reward: f64,
    w: &LossWeights,
) -> Result<ListenerLossValues> {
    let v = decision
        .value
        .ok_or_else(|| Error::Config("listener decision carries no critic value".into()))?;
    let adv = game_reward - v;
    let l_la = -adv * decision.logp;
    let l_lc = adv * adv;
    let l_lh: f64 = decision
        .dist
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum();
    let total = w.listener_actor * l_la + w.listener_critic * l_lc + w.listener_entropy * l_lh;
    for (name, value) in [("l_la", l_la), ("l_lc", l_lc), ("l_lh", l_lh)] {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "listener loss component {name} is non-finite"
            )));
        }
    }
    Ok(ListenerLossValues {
        total,
        l_la,
        l_lc,
        l_lh,
    })
}

/// -log probs[target], clamped at a 1e-12 probability floor. The flag
/// reports whether clamping fired.
pub fn infonce_loss(probs: &[f64], target_index: usize) -> (f64, bool) {
    let p = probs[target_index];
    if p < 1e-12 {
        ((1e-12f64).ln().abs(), true)
    } else {
        (-p.ln(), false)
    }
}

// ---- the training step -------------------------------------------------------------

/// One decentralized training step over a sampled batch.
pub fn train_step<S: Scalar>(
    state: &mut TrainState<S>,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<MetricsRecord> {
    let acfg = &cfg.agents;
    let batch = cfg.batch_size;
    let lambda = cfg.lambda_at(state.step);

    // Episodes for this batch.
    let mut episodes = Vec::with_capacity(batch);
    for _ in 0..batch {
        episodes.push(sample_episode(
            ds,
            cfg.c_size,
            &mut state.streams.episode,
            cfg.with_replacement,
        )?);
    }
    let targets: Vec<Vec<f32>> = episodes
        .iter()
        .map(|e| ds.feature(e.target_index()).to_vec())
        .collect();

    // Speaker tape: sampled rollout plus the frozen EMA pass on the same
    // prefixes.
    let mut speaker_tape: Tape<S> = Tape::new();
    let mut speaker_binding = TapeBinding::new();
    let speaker_ids = bind_speaker(
        &mut speaker_tape,
        &state.speaker,
        acfg,
        Some(&mut speaker_binding),
    );
    let x = speaker_tape.constant(features_tensor(&targets, acfg.feature_dim));
    let fwd = agents::speaker_forward(
        &mut speaker_tape,
        &speaker_ids,
        acfg,
        x,
        Some(&mut state.streams.speaker),
        DecodeMode::Sample,
    );
    let ema_ids = bind_speaker(&mut speaker_tape, &state.ema.params, acfg, None);
    let ema_logprobs =
        agents::speaker_forward_teacher(&mut speaker_tape, &ema_ids, acfg, x, &fwd.tokens);

    // Channel.
    let clean: Vec<Message> = (0..batch)
        .map(|b| Message::new(fwd.tokens.iter().map(|col| col[b]).collect()))
        .collect();
    let mut noisy = Vec::with_capacity(batch);
    for m in &clean {
        noisy.push(apply_channel_noise(
            m,
            lambda,
            acfg.vocab,
            &mut state.streams.channel,
        )?);
    }

    // Listener tape.
    let cand_features: Vec<Vec<f32>> = episodes
        .iter()
        .flat_map(|e| e.candidates.iter().map(|&i| ds.feature(i).to_vec()))
        .collect();
    let mut listener_tape: Tape<S> = Tape::new();
    let mut listener_binding = TapeBinding::new();
    let rl_listener = cfg.variant != GameVariant::LgS;
    let listener_ids = bind_listener(
        &mut listener_tape,
        &state.listener,
        acfg,
        Some(&mut listener_binding),
        rl_listener,
    );
    let cand_flat = listener_tape.constant(features_tensor(&cand_features, acfg.feature_dim));

    let (choices, rewards, listener_metrics, listener_total): (
        Vec<usize>,
        Vec<f64>,
        ListenerMetrics,
        ValueId,
    ) = if rl_listener {
        let lfwd = agents::listener_forward(
            &mut listener_tape,
            &listener_ids,
            acfg,
            &noisy,
            cand_flat,
            cfg.c_size,
            Some(&mut state.streams.listener),
            DecodeMode::Sample,
            true,
        );
        let choices = lfwd.choices.clone();
        let rewards: Vec<f64> = episodes
            .iter()
            .zip(&choices)
            .map(|(e, &c)| reward(e.target_pos, c, cfg.c_size).map(f64::from))
            .collect::<Result<_>>()?;
        let ids = build_listener_losses(&mut listener_tape, &lfwd, &rewards, &cfg.weights);
        let metrics = ListenerMetrics {
            l_la: Some(listener_tape.value(ids.l_la).item().to_f64()),
            l_lc: Some(listener_tape.value(ids.l_lc).item().to_f64()),
            l_lh: listener_tape.value(ids.l_lh).item().to_f64(),
            infonce: None,
        };
        (choices, rewards, metrics, ids.total)
    } else {
        // Supervised listener: cosine scores, InfoNCE on the target index,
        // choices sampled from the same distribution.
        let l_j = agents::listener_embed_candidates(&mut listener_tape, &listener_ids, cand_flat);
        let l_m = agents::listener_embed_message(&mut listener_tape, &listener_ids, acfg, &noisy);
        let scores = agents::cosine_scores(&mut listener_tape, l_m, l_j, cfg.c_size);
        let probs = listener_tape.softmax(scores);
        let logprobs = listener_tape.log_softmax(scores);
        let choices: Vec<usize> = {
            let p = listener_tape.value(probs);
            (0..batch)
                .map(|b| {
                    let weights: Vec<f64> = p.row(b).iter().map(|v| v.to_f64()).collect();
                    state.streams.listener.sample_categorical(&weights)
                })
                .collect()
        };
        let rewards: Vec<f64> = episodes
            .iter()
            .zip(&choices)
            .map(|(e, &c)| reward(e.target_pos, c, cfg.c_size).map(f64::from))
            .collect::<Result<_>>()?;
        let target_positions: Vec<usize> = episodes.iter().map(|e| e.target_pos).collect();
        let nce = build_infonce(&mut listener_tape, scores, &target_positions);
        let plogp = listener_tape.mul_elem(probs, logprobs);
        let ent_sum = listener_tape.sum(plogp);
        let l_lh = listener_tape.scale(ent_sum, S::from_f64(1.0 / batch as f64));
        let metrics = ListenerMetrics {
            l_la: None,
            l_lc: None,
            l_lh: listener_tape.value(l_lh).item().to_f64(),
            infonce: Some(listener_tape.value(nce).item().to_f64()),
        };
        (choices, rewards, metrics, nce)
    };

    // Speaker losses on the speaker tape.
    let s_ids = build_speaker_losses(
        &mut speaker_tape,
        &fwd,
        &ema_logprobs,
        &rewards,
        &cfg.weights,
    );
    let l_sa = speaker_tape.value(s_ids.l_sa).item().to_f64();
    let l_sc = speaker_tape.value(s_ids.l_sc).item().to_f64();
    let l_sh = speaker_tape.value(s_ids.l_sh).item().to_f64();
    let l_skl = speaker_tape.value(s_ids.l_skl).item().to_f64();
    let speaker_total = speaker_tape.value(s_ids.total).item().to_f64();
    let listener_total_value = listener_tape.value(listener_total).item().to_f64();
    for (name, value) in [
        ("speaker total", speaker_total),
        ("l_sa", l_sa),
        ("l_sc", l_sc),
        ("l_sh", l_sh),
        ("l_skl", l_skl),
        ("listener total", listener_total_value),
    ] {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss component {name} is non-finite at step {} (lambda {lambda}): \
                 l_sa={l_sa} l_sc={l_sc} l_sh={l_sh} l_skl={l_skl} listener={listener_total_value}",
                state.step
            )));
        }
    }

    // Independent updates: the gradient maps never share parameter names.
    let mut s_grads_raw = speaker_tape.backward(s_ids.total);
    let speaker_grads = speaker_binding.collect(&mut s_grads_raw);
    let mut l_grads_raw = listener_tape.backward(listener_total);
    let listener_grads = listener_binding.collect(&mut l_grads_raw);
    debug_assert!(speaker_grads.names().all(|n| n.starts_with("speaker.")));
    debug_assert!(listener_grads.names().all(|n| n.starts_with("listener.")));

    adam_step(&mut state.adam_speaker, &mut state.speaker, &speaker_grads)?;
    ema_update(&mut state.ema, &state.speaker);
    adam_step(
        &mut state.adam_listener,
        &mut state.listener,
        &listener_grads,
    )?;

    // Metrics for this batch.
    let hits = episodes
        .iter()
        .zip(&choices)
        .filter(|(e, &c)| e.target_pos == c)
        .count();
    let record = MetricsRecord {
        step: state.step,
        acc: hits as f64 / batch as f64,
        reward_mean: rewards.iter().sum::<f64>() / batch as f64,
        l_sa,
        l_sc,
        l_sh,
        l_skl,
        l_la: listener_metrics.l_la,
        l_lc: listener_metrics.l_lc,
        l_lh: listener_metrics.l_lh,
        infonce: listener_metrics.infonce,
        lambda,
        speaker_entropy: -l_sh / acfg.msg_len as f64,
    };
    state.step += 1;
    Ok(record)
}

struct ListenerMetrics {
    l_la: Option<f64>,
    l_lc: Option<f64>,
    l_lh: f64,
    infonce: Option<f64>,
}

// ---- the training loop -------------------------------------------------------------

/// Side channels for a training run.
#[derive(Default)]
pub struct RunHooks<'a, S: Scalar> {
    /// Emit a metrics record every this many steps (default 50); the final
    /// step is always logged.
    pub log_interval: u64,
    /// JSON-lines metrics sink.
    pub metrics_out: Option<&'a mut dyn Write>,
    /// Save a checkpoint every this many steps (0 = only at the end when a
    /// callback is present).
    pub checkpoint_interval: u64,
    /// Called to persist state at checkpoint boundaries and at the end.
    #[allow(clippy::type_complexity)]
    pub on_checkpoint: Option<&'a mut dyn FnMut(&TrainState<S>) -> Result<()>>,
    /// Early-out predicate evaluated on every logged record.
    #[allow(clippy::type_complexity)]
    pub stop_early: Option<&'a mut dyn FnMut(&MetricsRecord) -> bool>,
}

impl<'a, S: Scalar> RunHooks<'a, S> {
    pub fn silent() -> Self {
        RunHooks {
            log_interval: 50,
            metrics_out: None,
            checkpoint_interval: 0,
            on_checkpoint: None,
            stop_early: None,
        }
    }
}

/// Run (or resume) training until `total_steps`, returning the logged
/// records. Resuming from a saved state continues the exact uninterrupted
/// trajectory: all randomness lives in the state's streams.
pub fn run_training<S: Scalar>(
    state: &mut TrainState<S>,
    ds: &Dataset,
    cfg: &TrainConfig,
    hooks: &mut RunHooks<'_, S>,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let log_every = hooks.log_interval.max(1);
    let mut records = Vec::new();
    while state.step < cfg.total_steps {
        let record = train_step(state, ds, cfg)?;
        let done = state.step >= cfg.total_steps;
        let log_due = record.step % log_every == 0 || done;
        if log_due {
            if let Some(out) = hooks.metrics_out.as_deref_mut() {
                let line = serde_json::to_string(&record)
                    .map_err(|e| Error::Numeric(format!("metrics serialization failed: {e}")))?;
                writeln!(out, "{line}").map_err(|e| Error::Io {
                    path: "<metrics sink>".into(),
                    source: e,
                })?;
            }
            records.push(record.clone());
        }
        if hooks.checkpoint_interval > 0
            && state.step.is_multiple_of(hooks.checkpoint_interval)
            && !done
        {
            if let Some(cb) = hooks.on_checkpoint.as_deref_mut() {
                cb(state)?;
            }
        }
        if log_due {
            if let Some(stop) = hooks.stop_early.as_deref_mut() {
                if stop(&record) {
                    break;
                }
            }
        }
    }
    if let Some(cb) = hooks.on_checkpoint.as_deref_mut() {
        cb(state)?;
    }
    Ok(records)
}
