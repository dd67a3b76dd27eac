//! Speaker and Listener forward models.
//!
//! The Speaker maps a feature vector to an initial LSTM state, then emits one
//! token per step from an actor head while a critic head tracks the expected
//! reward. The Listener embeds candidates with a tanh-bounded linear map,
//! runs the (possibly noisy) message through its own LSTM, scores candidates
//! by dot product and acts through softmax; its critic is an MLP over the
//! score vector. A cosine-similarity scoring path serves the supervised
//! Listener variant.
//!
//! Forward passes are written batched: feature inputs arrive as [B, d]
//! tensors and messages as per-step token columns. Single-episode wrappers
//! produce the record types used by analyses and tests.

use crate::autodiff::{Scalar, Tape, Tensor, ValueId};
use crate::game::{Message, Token};
use crate::nn::{
    self, bind_frozen, linear_forward, lstm_step, LinearIds, LstmIds, ParamStore, TapeBinding,
};
use crate::rng::Stream;
use crate::{Error, Result};

/// Start-of-string token fed to the Speaker before the first real token. It
/// shares the extra embedding row with the Listener's `unk`: the Speaker
/// never consumes `unk` and the Listener never consumes start-of-string, so
/// the row id can be reused on both sides.
pub fn sos_token(vocab: usize) -> Token {
    vocab as Token
}

/// Architecture dimensions shared by both agents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentConfig {
    pub feature_dim: usize,
    pub vocab: usize,
    pub msg_len: usize,
    pub embed_dim: usize,
    pub speaker_hidden: usize,
    pub listener_hidden: usize,
    pub listener_embed: usize,
    /// Candidate-set width the Listener critic is built for.
    pub critic_c_size: usize,
}

impl AgentConfig {
    /// Full-size profile: 2048-d features, Speaker LSTM 256, Listener LSTM
    /// 512, 256-d candidate/message embeddings.
    pub fn paper(c_size: usize) -> Self {
        AgentConfig {
            feature_dim: 2048,
            vocab: 20,
            msg_len: 10,
            embed_dim: 10,
            speaker_hidden: 256,
            listener_hidden: 512,
            listener_embed: 256,
            critic_c_size: c_size,
        }
    }

    /// Desk-scale profile: 64-d features with shrunk hidden sizes; vocabulary
    /// and message length stay at 20 and 10.
    pub fn desk(c_size: usize) -> Self {
        AgentConfig {
            feature_dim: 64,
            vocab: 20,
            msg_len: 10,
            embed_dim: 10,
            speaker_hidden: 64,
            listener_hidden: 128,
            listener_embed: 128,
            critic_c_size: c_size,
        }
    }

    /// Listener critic MLP hidden widths for a candidate-set size.
    pub fn critic_hidden(c_size: usize) -> (usize, usize) {
        ((c_size / 4).max(4), (c_size / 16).max(2))
    }
}

/// How tokens (Speaker) or candidates (Listener) are decoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Sample from the policy (training).
    Sample,
    /// Argmax with lowest-index tie-break (evaluation).
    Greedy,
}

// ---- parameter construction --------------------------------------------------

/// Fresh Speaker parameters under `speaker.*` names.
pub fn init_speaker<S: Scalar>(cfg: &AgentConfig, rng: &mut Stream) -> ParamStore<S> {
    let mut store = ParamStore::new();
    nn::init_linear(
        &mut store,
        rng,
        "speaker.encoder",
        2 * cfg.speaker_hidden,
        cfg.feature_dim,
    );
    nn::init_embedding(
        &mut store,
        rng,
        "speaker.embed",
        cfg.vocab + 1,
        cfg.embed_dim,
    );
    nn::init_lstm(
        &mut store,
        rng,
        "speaker.lstm",
        cfg.speaker_hidden,
        cfg.embed_dim,
    );
    nn::init_linear(
        &mut store,
        rng,
        "speaker.actor",
        cfg.vocab,
        cfg.speaker_hidden,
    );
    nn::init_linear(&mut store, rng, "speaker.critic", 1, cfg.speaker_hidden);
    store
}

/// Fresh Listener parameters under `listener.*` names. The embedding table
/// has vocab + 1 rows so `unk` owns a learned row.
pub fn init_listener<S: Scalar>(cfg: &AgentConfig, rng: &mut Stream) -> ParamStore<S> {
    let mut store = ParamStore::new();
    nn::init_linear(
        &mut store,
        rng,
        "listener.cand",
        cfg.listener_embed,
        cfg.feature_dim,
    );
    nn::init_embedding(
        &mut store,
        rng,
        "listener.embed",
        cfg.vocab + 1,
        cfg.embed_dim,
    );
    nn::init_lstm(
        &mut store,
        rng,
        "listener.lstm",
        cfg.listener_hidden,
        cfg.embed_dim,
    );
    nn::init_linear(
        &mut store,
        rng,
        "listener.msg",
        cfg.listener_embed,
        cfg.listener_hidden,
    );
    let (h1, h2) = AgentConfig::critic_hidden(cfg.critic_c_size);
    nn::init_linear(&mut store, rng, "listener.critic.l0", h1, cfg.critic_c_size);
    nn::init_linear(&mut store, rng, "listener.critic.l1", h2, h1);
    nn::init_linear(&mut store, rng, "listener.critic.l2", 1, h2);
    store
}

/// Message-side Listener parameters only (embedding, LSTM, output map) —
/// the fresh "message module" trained by transfer heads.
pub fn init_listener_message_module<S: Scalar>(
    cfg: &AgentConfig,
    rng: &mut Stream,
) -> ParamStore<S> {
    let mut store = ParamStore::new();
    nn::init_embedding(
        &mut store,
        rng,
        "listener.embed",
        cfg.vocab + 1,
        cfg.embed_dim,
    );
    nn::init_lstm(
        &mut store,
        rng,
        "listener.lstm",
        cfg.listener_hidden,
        cfg.embed_dim,
    );
    nn::init_linear(
        &mut store,
        rng,
        "listener.msg",
        cfg.listener_embed,
        cfg.listener_hidden,
    );
    store
}

// ---- tape bindings -------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct SpeakerIds {
    pub encoder: LinearIds,
    pub embed: ValueId,
    pub lstm: LstmIds,
    pub actor: LinearIds,
    pub critic: LinearIds,
}

#[derive(Clone, Debug)]
pub struct ListenerIds {
    pub cand: LinearIds,
    pub embed: ValueId,
    pub lstm: LstmIds,
    pub msg: LinearIds,
    pub critic: Vec<LinearIds>,
}

fn bind_linear<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    binding: Option<&mut TapeBinding>,
    prefix: &str,
) -> LinearIds {
    let (w, b) = match binding {
        Some(b_) => (
            b_.bind(tape, store, &format!("{prefix}.weight")),
            b_.bind(tape, store, &format!("{prefix}.bias")),
        ),
        None => (
            bind_frozen(tape, store, &format!("{prefix}.weight")),
            bind_frozen(tape, store, &format!("{prefix}.bias")),
        ),
    };
    LinearIds { w, b: Some(b) }
}

fn bind_lstm<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    mut binding: Option<&mut TapeBinding>,
    prefix: &str,
    hidden: usize,
) -> LstmIds {
    let mut one = |name: String| match binding.as_deref_mut() {
        Some(b) => b.bind(tape, store, &name),
        None => bind_frozen(tape, store, &name),
    };
    LstmIds {
        w_input: one(format!("{prefix}.w_input")),
        w_hidden: one(format!("{prefix}.w_hidden")),
        bias: one(format!("{prefix}.bias")),
        hidden,
    }
}

/// Lease Speaker parameters onto a tape. With a binding the leaves are
/// differentiable; without one they are frozen constants (EMA target, frozen
/// encoder).
pub fn bind_speaker<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    cfg: &AgentConfig,
    mut binding: Option<&mut TapeBinding>,
) -> SpeakerIds {
    let encoder = bind_linear(tape, store, binding.as_deref_mut(), "speaker.encoder");
    let embed = match binding.as_deref_mut() {
        Some(b) => b.bind(tape, store, "speaker.embed.table"),
        None => bind_frozen(tape, store, "speaker.embed.table"),
    };
    let lstm = bind_lstm(
        tape,
        store,
        binding.as_deref_mut(),
        "speaker.lstm",
        cfg.speaker_hidden,
    );
    let actor = bind_linear(tape, store, binding.as_deref_mut(), "speaker.actor");
    let critic = bind_linear(tape, store, binding, "speaker.critic");
    SpeakerIds {
        encoder,
        embed,
        lstm,
        actor,
        critic,
    }
}

/// Lease Listener parameters onto a tape; `with_critic` controls whether the
/// critic MLP is bound at all (supervised and transfer Listeners have none).
pub fn bind_listener<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    cfg: &AgentConfig,
    mut binding: Option<&mut TapeBinding>,
    with_critic: bool,
) -> ListenerIds {
    let cand = bind_linear(tape, store, binding.as_deref_mut(), "listener.cand");
    let embed = match binding.as_deref_mut() {
        Some(b) => b.bind(tape, store, "listener.embed.table"),
        None => bind_frozen(tape, store, "listener.embed.table"),
    };
    let lstm = bind_lstm(
        tape,
        store,
        binding.as_deref_mut(),
        "listener.lstm",
        cfg.listener_hidden,
    );
    let msg = bind_linear(tape, store, binding.as_deref_mut(), "listener.msg");
    let mut critic = Vec::new();
    if with_critic {
        for layer in [
            "listener.critic.l0",
            "listener.critic.l1",
            "listener.critic.l2",
        ] {
            critic.push(bind_linear(tape, store, binding.as_deref_mut(), layer));
        }
    }
    ListenerIds {
        cand,
        embed,
        lstm,
        msg,
        critic,
    }
}

// ---- Speaker forward -------------------------------------------------------------

/// Batched Speaker rollout: per-step tape handles plus the sampled tokens.
pub struct SpeakerForward {
    /// tokens[t][b]: token emitted at step t for batch row b.
    pub tokens: Vec<Vec<Token>>,
    /// Per-step softmax over the vocabulary, [B, W].
    pub step_probs: Vec<ValueId>,
    /// Per-step log-softmax, [B, W].
    pub step_logprobs: Vec<ValueId>,
    /// Per-step log-probability of the emitted token, [B].
    pub step_chosen_logp: Vec<ValueId>,
    /// Per-step critic value, [B].
    pub step_values: Vec<ValueId>,
    pub batch: usize,
}

/// Run the Speaker over a [B, d] batch of targets. Sampling draws one rng
/// value per row per step; greedy decoding takes the lowest-index argmax.
pub fn speaker_forward<S: Scalar>(
    tape: &mut Tape<S>,
    ids: &SpeakerIds,
    cfg: &AgentConfig,
    x: ValueId,
    mut rng: Option<&mut Stream>,
    mode: DecodeMode,
) -> SpeakerForward {
    let batch = tape.value(x).rows();
    let hsz = cfg.speaker_hidden;
    let enc = linear_forward(tape, &ids.encoder, x);
    let mut z = tape.slice_cols(enc, 0, hsz);
    let mut c = tape.slice_cols(enc, hsz, 2 * hsz);

    let mut prev: Vec<usize> = vec![sos_token(cfg.vocab) as usize; batch];
    let mut out = SpeakerForward {
        tokens: Vec::with_capacity(cfg.msg_len),
        step_probs: Vec::with_capacity(cfg.msg_len),
        step_logprobs: Vec::with_capacity(cfg.msg_len),
        step_chosen_logp: Vec::with_capacity(cfg.msg_len),
        step_values: Vec::with_capacity(cfg.msg_len),
        batch,
    };

    for _ in 0..cfg.msg_len {
        let d = tape.gather_rows(ids.embed, &prev);
        let (z2, c2) = lstm_step(tape, &ids.lstm, d, z, c);
        z = z2;
        c = c2;
        let logits = linear_forward(tape, &ids.actor, z);
        let logprobs = tape.log_softmax(logits);
        let probs = tape.softmax(logits);

        let tokens: Vec<Token> = {
            let p = tape.value(probs);
            (0..batch)
                .map(|b| {
                    let row = p.row(b);
                    match mode {
                        DecodeMode::Greedy => argmax(row) as Token,
                        DecodeMode::Sample => {
                            let weights: Vec<f64> = row.iter().map(|v| v.to_f64()).collect();
                            let r = rng
                                .as_deref_mut()
                                .expect("sampling decode requires an rng stream");
                            r.sample_categorical(&weights) as Token
                        }
                    }
                })
                .collect()
        };
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let chosen = tape.take_per_row(logprobs, &idx);
        let v_col = linear_forward(tape, &ids.critic, z);
        let v = tape.reshape(v_col, vec![batch]);

        out.step_probs.push(probs);
        out.step_logprobs.push(logprobs);
        out.step_chosen_logp.push(chosen);
        out.step_values.push(v);
        out.tokens.push(tokens);
        prev = idx;
    }
    out
}

/// Teacher-forced Speaker pass over a fixed token grid; returns the per-step
/// log-softmax handles. Used for the EMA target policy, conditioned on the
/// exact prefixes the online Speaker sampled.
pub fn speaker_forward_teacher<S: Scalar>(
    tape: &mut Tape<S>,
    ids: &SpeakerIds,
    cfg: &AgentConfig,
    x: ValueId,
    tokens: &[Vec<Token>],
) -> Vec<ValueId> {
    let batch = tape.value(x).rows();
    let hsz = cfg.speaker_hidden;
    let enc = linear_forward(tape, &ids.encoder, x);
    let mut z = tape.slice_cols(enc, 0, hsz);
    let mut c = tape.slice_cols(enc, hsz, 2 * hsz);
    let mut prev: Vec<usize> = vec![sos_token(cfg.vocab) as usize; batch];
    let mut logprobs_per_step = Vec::with_capacity(tokens.len());
    for step_tokens in tokens {
        let d = tape.gather_rows(ids.embed, &prev);
        let (z2, c2) = lstm_step(tape, &ids.lstm, d, z, c);
        z = z2;
        c = c2;
        let logits = linear_forward(tape, &ids.actor, z);
        logprobs_per_step.push(tape.log_softmax(logits));
        prev = step_tokens.iter().map(|&t| t as usize).collect();
    }
    logprobs_per_step
}

/// Per-episode Speaker record: the message plus everything the losses
/// consume, extracted as plain numbers.
#[derive(Clone, Debug)]
pub struct SpeakerRollout {
    pub message: Message,
    /// Per-step policy distribution over the vocabulary.
    pub dists: Vec<Vec<f64>>,
    /// Per-step log pi(token | state).
    pub logp: Vec<f64>,
    /// Per-step policy entropy (nats).
    pub entropy: Vec<f64>,
    /// Per-step critic value.
    pub values: Vec<f64>,
}

/// Generate a message for a single feature vector.
pub fn speaker_generate<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &AgentConfig,
    x: &[f32],
    rng: Option<&mut Stream>,
    mode: DecodeMode,
) -> SpeakerRollout {
    assert_eq!(x.len(), cfg.feature_dim, "feature dim mismatch");
    let mut tape: Tape<S> = Tape::new();
    let ids = bind_speaker(&mut tape, store, cfg, None);
    let xt = tape.constant(Tensor::new(
        vec![1, cfg.feature_dim],
        x.iter().map(|v| S::from_f64(*v as f64)).collect(),
    ));
    let fwd = speaker_forward(&mut tape, &ids, cfg, xt, rng, mode);
    let mut rollout = SpeakerRollout {
        message: Message::new(fwd.tokens.iter().map(|col| col[0]).collect()),
        dists: Vec::with_capacity(cfg.msg_len),
        logp: Vec::with_capacity(cfg.msg_len),
        entropy: Vec::with_capacity(cfg.msg_len),
        values: Vec::with_capacity(cfg.msg_len),
    };
    for t in 0..cfg.msg_len {
        let dist = tape.value(fwd.step_probs[t]).to_f64_vec();
        let entropy = -dist
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>();
        rollout.dists.push(dist);
        rollout
            .logp
            .push(tape.value(fwd.step_chosen_logp[t]).item().to_f64());
        rollout.entropy.push(entropy);
        rollout
            .values
            .push(tape.value(fwd.step_values[t]).item().to_f64());
    }
    rollout
}

// ---- Listener forward ---------------------------------------------------------------

/// l_j = tanh(linear(x_j)) for a flat [R, d] candidate block.
pub fn listener_embed_candidates<S: Scalar>(
    tape: &mut Tape<S>,
    ids: &ListenerIds,
    cand_flat: ValueId,
) -> ValueId {
    let lin = linear_forward(tape, &ids.cand, cand_flat);
    tape.tanh(lin)
}

/// l_m = tanh(linear(z_N)) after running the message tokens through the
/// Listener LSTM from a zero state. `messages` is one message per batch row.
pub fn listener_embed_message<S: Scalar>(
    tape: &mut Tape<S>,
    ids: &ListenerIds,
    cfg: &AgentConfig,
    messages: &[Message],
) -> ValueId {
    let batch = messages.len();
    assert!(batch > 0, "empty message batch");
    for m in messages {
        assert_eq!(m.len(), cfg.msg_len, "message length mismatch");
        for &t in m.tokens() {
            assert!(
                (t as usize) <= cfg.vocab,
                "token id {t} outside extended vocabulary"
            );
        }
    }
    let mut z = tape.constant(Tensor::zeros(vec![batch, cfg.listener_hidden]));
    let mut c = tape.constant(Tensor::zeros(vec![batch, cfg.listener_hidden]));
    for t in 0..cfg.msg_len {
        let idx: Vec<usize> = messages.iter().map(|m| m.tokens()[t] as usize).collect();
        let d = tape.gather_rows(ids.embed, &idx);
        let (z2, c2) = lstm_step(tape, &ids.lstm, d, z, c);
        z = z2;
        c = c2;
    }
    let lin = linear_forward(tape, &ids.msg, z);
    tape.tanh(lin)
}

/// Critic MLP over the score vector: ReLU between layers, linear output.
pub fn listener_critic<S: Scalar>(
    tape: &mut Tape<S>,
    ids: &ListenerIds,
    scores: ValueId,
) -> ValueId {
    assert!(!ids.critic.is_empty(), "listener bound without a critic");
    let batch = tape.value(scores).rows();
    let mut h = scores;
    for (i, layer) in ids.critic.iter().enumerate() {
        h = linear_forward(tape, layer, h);
        if i + 1 < ids.critic.len() {
            h = tape.relu(h);
        }
    }
    tape.reshape(h, vec![batch])
}

/// Batched Listener decision over per-row candidate sets.
pub struct ListenerForward {
    /// Dot-product scores, [B, C].
    pub scores: ValueId,
    pub probs: ValueId,
    pub logprobs: ValueId,
    pub choices: Vec<usize>,
    /// log pi(choice | scores), [B].
    pub chosen_logp: ValueId,
    /// Critic value, [B]; absent when evaluated without a critic.
    pub value: Option<ValueId>,
}

/// Score candidates against the message embedding and act. `cand_flat` holds
/// B*C rows grouped per batch row.
#[allow(clippy::too_many_arguments)]
pub fn listener_forward<S: Scalar>(
    tape: &mut Tape<S>,
    ids: &ListenerIds,
    cfg: &AgentConfig,
    messages: &[Message],
    cand_flat: ValueId,
    c_size: usize,
    mut rng: Option<&mut Stream>,
    mode: DecodeMode,
    with_critic: bool,
) -> ListenerForward {
    let batch = messages.len();
    assert_eq!(
        tape.value(cand_flat).rows(),
        batch * c_size,
        "candidate block does not match batch x c_size"
    );
    let l_j = listener_embed_candidates(tape, ids, cand_flat);
    let l_m = listener_embed_message(tape, ids, cfg, messages);
    let scores = tape.batched_dot(l_m, l_j, c_size);
    let probs = tape.softmax(scores);
    let logprobs = tape.log_softmax(scores);

    let choices: Vec<usize> = {
        let p = tape.value(probs);
        (0..batch)
            .map(|b| match mode {
                DecodeMode::Greedy => argmax(p.row(b)),
                DecodeMode::Sample => {
                    let weights: Vec<f64> = p.row(b).iter().map(|v| v.to_f64()).collect();
                    let r = rng
                        .as_deref_mut()
                        .expect("sampling decode requires an rng stream");
                    r.sample_categorical(&weights)
                }
            })
            .collect()
    };
    let chosen_logp = tape.take_per_row(logprobs, &choices);
    let value = if with_critic {
        assert_eq!(
            c_size, cfg.critic_c_size,
            "listener critic was built for {} candidates, got {c_size}",
            cfg.critic_c_size
        );
        Some(listener_critic(tape, ids, scores))
    } else {
        None
    };
    ListenerForward {
        scores,
        probs,
        logprobs,
        choices,
        chosen_logp,
        value,
    }
}

/// Cosine-similarity scores for per-row candidate groups (supervised path).
pub fn cosine_scores<S: Scalar>(
    tape: &mut Tape<S>,
    l_m: ValueId,
    l_j_flat: ValueId,
    c_size: usize,
) -> ValueId {
    let eps = S::from_f64(1e-12);
    let nm = tape.l2_normalize_rows(l_m, eps);
    let nj = tape.l2_normalize_rows(l_j_flat, eps);
    tape.batched_dot(nm, nj, c_size)
}

/// One Listener decision extracted as plain numbers.
#[derive(Clone, Debug)]
pub struct ListenerDecision {
    pub scores: Vec<f64>,
    pub choice: usize,
    pub logp: f64,
    pub value: Option<f64>,
    pub dist: Vec<f64>,
}

/// Act on a single message and candidate set.
pub fn listener_act<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &AgentConfig,
    m: &Message,
    candidates: &[Vec<f32>],
    rng: Option<&mut Stream>,
    mode: DecodeMode,
    with_critic: bool,
) -> ListenerDecision {
    let c_size = candidates.len();
    let mut tape: Tape<S> = Tape::new();
    let ids = bind_listener(&mut tape, store, cfg, None, with_critic);
    let flat = tape.constant(features_tensor(candidates, cfg.feature_dim));
    let fwd = listener_forward(
        &mut tape,
        &ids,
        cfg,
        std::slice::from_ref(m),
        flat,
        c_size,
        rng,
        mode,
        with_critic,
    );
    ListenerDecision {
        scores: tape.value(fwd.scores).to_f64_vec(),
        choice: fwd.choices[0],
        logp: tape.value(fwd.chosen_logp).item().to_f64(),
        value: fwd.value.map(|v| tape.value(v).item().to_f64()),
        dist: tape.value(fwd.probs).to_f64_vec(),
    }
}

/// Supervised Listener distribution: softmax over cosine similarities
/// between the message embedding and each candidate embedding.
pub fn supervised_listener_probs<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &AgentConfig,
    m: &Message,
    candidates: &[Vec<f32>],
) -> Result<Vec<f64>> {
    let c_size = candidates.len();
    let mut tape: Tape<S> = Tape::new();
    let ids = bind_listener(&mut tape, store, cfg, None, false);
    let flat = tape.constant(features_tensor(candidates, cfg.feature_dim));
    let l_j = listener_embed_candidates(&mut tape, &ids, flat);
    let l_m = listener_embed_message(&mut tape, &ids, cfg, std::slice::from_ref(m));
    check_nonzero_rows(tape.value(l_m), "message embedding")?;
    check_nonzero_rows(tape.value(l_j), "candidate embedding")?;
    let scores = cosine_scores(&mut tape, l_m, l_j, c_size);
    let probs = tape.softmax(scores);
    Ok(tape.value(probs).to_f64_vec())
}

fn check_nonzero_rows<S: Scalar>(t: &Tensor<S>, side: &str) -> Result<()> {
    for r in 0..t.rows() {
        let norm: f64 = t.row(r).iter().map(|v| v.to_f64() * v.to_f64()).sum();
        if norm == 0.0 {
            return Err(Error::Numeric(format!(
                "zero-norm {side} (row {r}); cosine similarity undefined"
            )));
        }
    }
    Ok(())
}

/// Pack feature slices into a [rows, dim] tensor.
pub fn features_tensor<S: Scalar>(rows: &[Vec<f32>], dim: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for row in rows {
        assert_eq!(row.len(), dim, "feature dim mismatch");
        data.extend(row.iter().map(|v| S::from_f64(*v as f64)));
    }
    Tensor::new(vec![rows.len(), dim], data)
}

fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
