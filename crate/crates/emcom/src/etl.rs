//! Transfer tasks on top of a frozen Speaker: discrimination, classification,
//! attribute prediction and feature reconstruction.
//!
//! The Speaker is frozen, so the communication protocol is fixed; each task
//! trains a fresh message module (embedding, LSTM, output map) plus a task
//! head. Tasks that read clean features precompute the whole message table
//! once; discrimination re-encodes every step because its inputs are
//! perturbed with Gaussian noise.

use serde::{Deserialize, Serialize};

use crate::agents::{self, bind_listener, features_tensor, AgentConfig, DecodeMode, ListenerIds};
use crate::autodiff::{Scalar, Tape, Tensor, ValueId};
use crate::dataset::Dataset;
use crate::game::{apply_channel_noise, apply_input_noise, InputNoiseConfig, Message};
use crate::nn::{
    adam_step, clip_global_norm, AdamConfig, AdamState, LinearIds, ParamStore, TapeBinding,
};
use crate::rng::Stream;
use crate::training::build_infonce;
use crate::{Error, Result};

/// Greedy Speaker closure over frozen parameters: a deterministic encoder
/// from feature vectors to messages.
pub struct FrozenSpeaker<'a, S: Scalar> {
    store: &'a ParamStore<S>,
    acfg: AgentConfig,
}

impl<'a, S: Scalar> FrozenSpeaker<'a, S> {
    pub fn new(store: &'a ParamStore<S>, acfg: AgentConfig) -> Self {
        FrozenSpeaker { store, acfg }
    }

    pub fn agent_config(&self) -> &AgentConfig {
        &self.acfg
    }

    pub fn encode(&self, x: &[f32]) -> Message {
        self.encode_batch(std::slice::from_ref(&x.to_vec()))
            .pop()
            .unwrap()
    }

    /// Greedy messages for a batch of feature vectors.
    pub fn encode_batch(&self, features: &[Vec<f32>]) -> Vec<Message> {
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(256) {
            let mut tape: Tape<S> = Tape::new();
            let ids = agents::bind_speaker(&mut tape, self.store, &self.acfg, None);
            let x = tape.constant(features_tensor(chunk, self.acfg.feature_dim));
            let fwd =
                agents::speaker_forward(&mut tape, &ids, &self.acfg, x, None, DecodeMode::Greedy);
            for b in 0..chunk.len() {
                out.push(Message::new(fwd.tokens.iter().map(|col| col[b]).collect()));
            }
        }
        out
    }

    /// Messages for every item of a dataset.
    pub fn encode_dataset(&self, ds: &Dataset) -> Vec<Message> {
        let features: Vec<Vec<f32>> = (0..ds.len()).map(|i| ds.feature(i).to_vec()).collect();
        self.encode_batch(&features)
    }
}

/// Hyperparameters shared by the transfer tasks, with per-task overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct EtlConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub regime_lambda: f64,
    pub seed: u64,
    pub disc_sigma: f64,
    pub disc_mu: f64,
    pub disc_c_size: usize,
    /// Classification step override (0 = `steps`).
    pub classification_steps: u64,
    /// Per-attribute step override (0 = `steps`).
    pub attribute_steps: u64,
    pub recon_lr: f64,
    pub recon_b1: f64,
    pub recon_b2: f64,
    pub recon_wd: f64,
    pub recon_gmax: f64,
}

impl EtlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("etl steps and batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.regime_lambda) {
            return Err(Error::Config("regime lambda must be in [0, 1)".into()));
        }
        if self.disc_c_size < 2 {
            return Err(Error::Config(
                "discrimination candidate count must be >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// One task outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EtlOutcome {
    pub task: String,
    pub regime_lambda: f64,
    /// "accuracy" or "mse".
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_attribute: Option<Vec<f64>>,
    pub steps: u64,
    pub seed: u64,
}

pub const ETL_CSV_HEADER: &str = "task,regime_lambda,metric,value,steps,seed";

impl EtlOutcome {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.task, self.regime_lambda, self.metric, self.value, self.steps, self.seed
        )
    }
}

// ---- discrimination ---------------------------------------------------------------

/// In-batch discrimination: each step draws `disc_c_size` distinct objects,
/// perturbs Speaker inputs and Listener candidates independently with
/// N(mu, sigma^2 I), encodes messages through the frozen Speaker and the
/// noisy channel, and trains a cosine-similarity InfoNCE head where the
/// batch doubles as the candidate set.
pub fn etl_discrimination<S: Scalar>(
    frozen: &FrozenSpeaker<'_, S>,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &EtlConfig,
) -> Result<EtlOutcome> {
    cfg.validate()?;
    let acfg = *frozen.agent_config();
    let c = cfg.disc_c_size;
    if train_ds.len() < c || test_ds.len() < c {
        return Err(Error::Data(format!(
            "discrimination needs at least {c} items per split (have {} train / {} test)",
            train_ds.len(),
            test_ds.len()
        )));
    }
    let mut params: ParamStore<S> = ParamStore::new();
    let mut init_rng = Stream::derive(cfg.seed, "etl_disc_init");
    crate::nn::init_linear(
        &mut params,
        &mut init_rng,
        "listener.cand",
        acfg.listener_embed,
        acfg.feature_dim,
    );
    crate::nn::init_embedding(
        &mut params,
        &mut init_rng,
        "listener.embed",
        acfg.vocab + 1,
        acfg.embed_dim,
    );
    crate::nn::init_lstm(
        &mut params,
        &mut init_rng,
        "listener.lstm",
        acfg.listener_hidden,
        acfg.embed_dim,
    );
    crate::nn::init_linear(
        &mut params,
        &mut init_rng,
        "listener.msg",
        acfg.listener_embed,
        acfg.listener_hidden,
    );
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));

    let mut episode_rng = Stream::derive(cfg.seed, "etl_disc_episode");
    let mut input_rng = Stream::derive(cfg.seed, "etl_disc_input");
    let mut channel_rng = Stream::derive(cfg.seed, "etl_disc_channel");
    let noise = InputNoiseConfig {
        mu: cfg.disc_mu,
        sigma: cfg.disc_sigma,
    };

    for _ in 0..cfg.steps {
        let batch = discrimination_batch(
            frozen,
            train_ds,
            c,
            &noise,
            cfg.regime_lambda,
            &mut episode_rng,
            &mut input_rng,
            &mut channel_rng,
        )?;
        let mut tape: Tape<S> = Tape::new();
        let mut binding = TapeBinding::new();
        let ids = bind_listener(&mut tape, &params, &acfg, Some(&mut binding), false);
        let scores = discrimination_scores(&mut tape, &ids, &acfg, &batch)?;
        let targets: Vec<usize> = (0..c).collect();
        let loss = build_infonce(&mut tape, scores, &targets);
        let loss_value = tape.value(loss).item().to_f64();
        if !loss_value.is_finite() {
            return Err(Error::Numeric("discrimination loss is non-finite".into()));
        }
        let mut raw = tape.backward(loss);
        let grads = binding.collect(&mut raw);
        debug_assert!(grads.names().all(|n| n.starts_with("listener.")));
        adam_step(&mut adam, &mut params, &grads)?;
    }

    // Held-out accuracy under the same regime.
    let mut eval_episode = Stream::derive(cfg.seed, "etl_disc_eval_episode");
    let mut eval_input = Stream::derive(cfg.seed, "etl_disc_eval_input");
    let mut eval_channel = Stream::derive(cfg.seed, "etl_disc_eval_channel");
    let eval_batches = (2048 / c).clamp(1, 16);
    let mut hits = 0usize;
    let mut total = 0usize;
    for _ in 0..eval_batches {
        let batch = discrimination_batch(
            frozen,
            test_ds,
            c,
            &noise,
            cfg.regime_lambda,
            &mut eval_episode,
            &mut eval_input,
            &mut eval_channel,
        )?;
        let mut tape: Tape<S> = Tape::new();
        let ids = bind_listener(&mut tape, &params, &acfg, None, false);
        let scores = discrimination_scores(&mut tape, &ids, &acfg, &batch)?;
        let sv = tape.value(scores);
        for row in 0..c {
            let r = sv.row(row);
            let mut best = 0;
            for (j, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = j;
                }
            }
            hits += usize::from(best == row);
            total += 1;
        }
    }
    Ok(EtlOutcome {
        task: "discrimination".into(),
        regime_lambda: cfg.regime_lambda,
        metric: "accuracy".into(),
        value: hits as f64 / total as f64,
        per_attribute: None,
        steps: cfg.steps,
        seed: cfg.seed,
    })
}

struct DiscriminationBatch {
    messages: Vec<Message>,
    candidates: Vec<Vec<f32>>,
}

#[allow(clippy::too_many_arguments)]
fn discrimination_batch<S: Scalar>(
    frozen: &FrozenSpeaker<'_, S>,
    ds: &Dataset,
    c: usize,
    noise: &InputNoiseConfig,
    lambda: f64,
    episode_rng: &mut Stream,
    input_rng: &mut Stream,
    channel_rng: &mut Stream,
) -> Result<DiscriminationBatch> {
    // c distinct objects; the batch is the candidate set.
    let mut picks: Vec<usize> = Vec::with_capacity(c);
    if c * 2 >= ds.len() {
        let mut pool: Vec<usize> = (0..ds.len()).collect();
        for i in 0..c {
            let j = i + episode_rng.next_below(pool.len() - i);
            pool.swap(i, j);
        }
        picks.extend_from_slice(&pool[..c]);
    } else {
        while picks.len() < c {
            let p = episode_rng.next_below(ds.len());
            if !picks.contains(&p) {
                picks.push(p);
            }
        }
    }
    let speaker_inputs: Vec<Vec<f32>> = picks
        .iter()
        .map(|&i| apply_input_noise(ds.feature(i), noise, input_rng))
        .collect();
    let candidates: Vec<Vec<f32>> = picks
        .iter()
        .map(|&i| apply_input_noise(ds.feature(i), noise, input_rng))
        .collect();
    let clean = frozen.encode_batch(&speaker_inputs);
    let mut messages = Vec::with_capacity(c);
    for m in &clean {
        messages.push(apply_channel_noise(
            m,
            lambda,
            frozen.agent_config().vocab,
            channel_rng,
        )?);
    }
    Ok(DiscriminationBatch {
        messages,
        candidates,
    })
}

/// Cosine scores of every message row against every candidate row (the
/// in-batch candidate matrix is shared by all rows).
fn discrimination_scores<S: Scalar>(
    tape: &mut Tape<S>,
    ids: &ListenerIds,
    acfg: &AgentConfig,
    batch: &DiscriminationBatch,
) -> Result<ValueId> {
    let flat = tape.constant(features_tensor(&batch.candidates, acfg.feature_dim));
    let l_j = agents::listener_embed_candidates(tape, ids, flat);
    let l_m = agents::listener_embed_message(tape, ids, acfg, &batch.messages);
    let eps = S::from_f64(1e-12);
    let nm = tape.l2_normalize_rows(l_m, eps);
    let nj = tape.l2_normalize_rows(l_j, eps);
    Ok(tape.matmul_tb(nm, nj))
}

// ---- shared head machinery -----------------------------------------------------------

/// Fresh message module plus an MLP head of the given widths; the final
/// layer starts at zero so untrained heads predict exactly zero.
fn init_head_params<S: Scalar>(
    acfg: &AgentConfig,
    head_dims: &[usize],
    out_dim: usize,
    rng: &mut Stream,
    zero_final: bool,
) -> ParamStore<S> {
    let mut params = agents::init_listener_message_module(acfg, rng);
    let mut in_dim = acfg.listener_embed;
    for (i, &h) in head_dims.iter().enumerate() {
        crate::nn::init_linear(&mut params, rng, &format!("head.l{i}"), h, in_dim);
        in_dim = h;
    }
    let last = format!("head.l{}", head_dims.len());
    if zero_final {
        params.insert(
            format!("{last}.weight"),
            Tensor::zeros(vec![out_dim, in_dim]),
        );
        params.insert(format!("{last}.bias"), Tensor::zeros(vec![out_dim]));
    } else {
        crate::nn::init_linear(&mut params, rng, &last, out_dim, in_dim);
    }
    params
}

struct HeadIds {
    listener: ListenerIds,
    layers: Vec<LinearIds>,
}

fn bind_head<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    acfg: &AgentConfig,
    n_layers: usize,
    mut binding: Option<&mut TapeBinding>,
) -> HeadIds {
    // The message module reuses the listener binder; the candidate path is
    // absent, so bind a placeholder-free subset by hand.
    let mut one = |tape: &mut Tape<S>, name: String| match binding.as_deref_mut() {
        Some(b) => b.bind(tape, params, &name),
        None => crate::nn::bind_frozen(tape, params, &name),
    };
    let embed = one(tape, "listener.embed.table".into());
    let lstm = crate::nn::LstmIds {
        w_input: one(tape, "listener.lstm.w_input".into()),
        w_hidden: one(tape, "listener.lstm.w_hidden".into()),
        bias: one(tape, "listener.lstm.bias".into()),
        hidden: acfg.listener_hidden,
    };
    let msg = LinearIds {
        w: one(tape, "listener.msg.weight".into()),
        b: Some(one(tape, "listener.msg.bias".into())),
    };
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        layers.push(LinearIds {
            w: one(tape, format!("head.l{i}.weight")),
            b: Some(one(tape, format!("head.l{i}.bias"))),
        });
    }
    HeadIds {
        listener: ListenerIds {
            cand: LinearIds { w: embed, b: None }, // unused by the message path
            embed,
            lstm,
            msg,
            critic: Vec::new(),
        },
        layers,
    }
}

/// l_m -> MLP with ReLU between layers, linear output.
fn head_forward<S: Scalar>(tape: &mut Tape<S>, ids: &HeadIds, l_m: ValueId) -> ValueId {
    let mut h = l_m;
    for (i, layer) in ids.layers.iter().enumerate() {
        h = crate::nn::linear_forward(tape, layer, h);
        if i + 1 < ids.layers.len() {
            h = tape.relu(h);
        }
    }
    h
}

fn noisy_messages(
    clean: &[Message],
    idxs: &[usize],
    lambda: f64,
    vocab: usize,
    rng: &mut Stream,
) -> Result<Vec<Message>> {
    idxs.iter()
        .map(|&i| apply_channel_noise(&clean[i], lambda, vocab, rng))
        .collect()
}

// ---- classification ---------------------------------------------------------------------

/// Class prediction from the message alone: message module -> 256-wide ReLU
/// MLP -> softmax over classes, trained with cross-entropy.
pub fn etl_classification<S: Scalar>(
    frozen: &FrozenSpeaker<'_, S>,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &EtlConfig,
) -> Result<EtlOutcome> {
    cfg.validate()?;
    let acfg = *frozen.agent_config();
    let train_labels = train_ds
        .labels()
        .ok_or_else(|| Error::Data("classification requires labels".into()))?;
    let test_labels = test_ds
        .labels()
        .ok_or_else(|| Error::Data("classification requires labels".into()))?;
    let n_classes = train_labels
        .iter()
        .chain(test_labels)
        .map(|&l| l as usize + 1)
        .max()
        .unwrap();
    let steps = if cfg.classification_steps > 0 {
        cfg.classification_steps
    } else {
        cfg.steps
    };

    let clean_train = frozen.encode_dataset(train_ds);
    let clean_test = frozen.encode_dataset(test_ds);

    let mut rng = Stream::derive(cfg.seed, "etl_class_init");
    let mut params: ParamStore<S> = init_head_params(&acfg, &[256], n_classes, &mut rng, false);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut batch_rng = Stream::derive(cfg.seed, "etl_class_batch");
    let mut channel_rng = Stream::derive(cfg.seed, "etl_class_channel");

    for _ in 0..steps {
        let idxs: Vec<usize> = (0..cfg.batch)
            .map(|_| batch_rng.next_below(train_ds.len()))
            .collect();
        let msgs = noisy_messages(
            &clean_train,
            &idxs,
            cfg.regime_lambda,
            acfg.vocab,
            &mut channel_rng,
        )?;
        let targets: Vec<usize> = idxs.iter().map(|&i| train_labels[i] as usize).collect();
        let mut tape: Tape<S> = Tape::new();
        let mut binding = TapeBinding::new();
        let ids = bind_head(&mut tape, &params, &acfg, 2, Some(&mut binding));
        let l_m = agents::listener_embed_message(&mut tape, &ids.listener, &acfg, &msgs);
        let logits = head_forward(&mut tape, &ids, l_m);
        let loss = build_infonce(&mut tape, logits, &targets);
        if !tape.value(loss).item().to_f64().is_finite() {
            return Err(Error::Numeric("classification loss is non-finite".into()));
        }
        let mut raw = tape.backward(loss);
        let grads = binding.collect(&mut raw);
        adam_step(&mut adam, &mut params, &grads)?;
    }

    // Test accuracy under the same regime.
    let mut eval_channel = Stream::derive(cfg.seed, "etl_class_eval_channel");
    let mut hits = 0usize;
    for (start, chunk) in clean_test.chunks(256).enumerate() {
        let idxs: Vec<usize> = (0..chunk.len()).collect();
        let msgs = noisy_messages(
            chunk,
            &idxs,
            cfg.regime_lambda,
            acfg.vocab,
            &mut eval_channel,
        )?;
        let mut tape: Tape<S> = Tape::new();
        let ids = bind_head(&mut tape, &params, &acfg, 2, None);
        let l_m = agents::listener_embed_message(&mut tape, &ids.listener, &acfg, &msgs);
        let logits = head_forward(&mut tape, &ids, l_m);
        let lv = tape.value(logits);
        for row in 0..chunk.len() {
            let r = lv.row(row);
            let mut best = 0;
            for (j, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = j;
                }
            }
            let item = start * 256 + row;
            hits += usize::from(best == test_labels[item] as usize);
        }
    }
    Ok(EtlOutcome {
        task: "classification".into(),
        regime_lambda: cfg.regime_lambda,
        metric: "accuracy".into(),
        value: hits as f64 / test_ds.len() as f64,
        per_attribute: None,
        steps,
        seed: cfg.seed,
    })
}

// ---- attribute ---------------------------------------------------------------------------

/// One independent binary model per attribute bit (message module + MLP with
/// a single sigmoid output), trained with binary cross-entropy. Returns the
/// mean test accuracy and the per-attribute breakdown.
pub fn etl_attribute<S: Scalar>(
    frozen: &FrozenSpeaker<'_, S>,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &EtlConfig,
) -> Result<EtlOutcome> {
    cfg.validate()?;
    let acfg = *frozen.agent_config();
    let train_bits = train_ds
        .attr_bits()
        .ok_or_else(|| Error::Data("attribute task requires attribute bitmaps".into()))?;
    let test_bits = test_ds
        .attr_bits()
        .ok_or_else(|| Error::Data("attribute task requires attribute bitmaps".into()))?;
    let n_bits = train_bits.n_bits;
    let steps = if cfg.attribute_steps > 0 {
        cfg.attribute_steps
    } else {
        cfg.steps
    };

    let clean_train = frozen.encode_dataset(train_ds);
    let clean_test = frozen.encode_dataset(test_ds);

    let mut per_attribute = Vec::with_capacity(n_bits);
    for bit in 0..n_bits {
        let mut rng = Stream::derive(cfg.seed, &format!("etl_attr_init_{bit}"));
        let mut params: ParamStore<S> = init_head_params(&acfg, &[256], 1, &mut rng, false);
        let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
        let mut batch_rng = Stream::derive(cfg.seed, &format!("etl_attr_batch_{bit}"));
        let mut channel_rng = Stream::derive(cfg.seed, &format!("etl_attr_channel_{bit}"));

        for _ in 0..steps {
            let idxs: Vec<usize> = (0..cfg.batch)
                .map(|_| batch_rng.next_below(train_ds.len()))
                .collect();
            let msgs = noisy_messages(
                &clean_train,
                &idxs,
                cfg.regime_lambda,
                acfg.vocab,
                &mut channel_rng,
            )?;
            // Bit set = class 0: softmax([z, 0])[0] = sigmoid(z), so binary
            // cross-entropy rides on the two-class log-softmax.
            let targets: Vec<usize> = idxs
                .iter()
                .map(|&i| usize::from(!train_bits.get(i, bit)))
                .collect();
            let mut tape: Tape<S> = Tape::new();
            let mut binding = TapeBinding::new();
            let ids = bind_head(&mut tape, &params, &acfg, 2, Some(&mut binding));
            let l_m = agents::listener_embed_message(&mut tape, &ids.listener, &acfg, &msgs);
            let z = head_forward(&mut tape, &ids, l_m);
            let zeros = tape.constant(Tensor::zeros(vec![cfg.batch, 1]));
            let logits2 = tape.concat_cols(z, zeros);
            let loss = build_infonce(&mut tape, logits2, &targets);
            if !tape.value(loss).item().to_f64().is_finite() {
                return Err(Error::Numeric(format!(
                    "attribute-{bit} loss is non-finite"
                )));
            }
            let mut raw = tape.backward(loss);
            let grads = binding.collect(&mut raw);
            adam_step(&mut adam, &mut params, &grads)?;
        }

        let mut eval_channel = Stream::derive(cfg.seed, &format!("etl_attr_eval_{bit}"));
        let mut hits = 0usize;
        for (chunk_idx, chunk) in clean_test.chunks(256).enumerate() {
            let idxs: Vec<usize> = (0..chunk.len()).collect();
            let msgs = noisy_messages(
                chunk,
                &idxs,
                cfg.regime_lambda,
                acfg.vocab,
                &mut eval_channel,
            )?;
            let mut tape: Tape<S> = Tape::new();
            let ids = bind_head(&mut tape, &params, &acfg, 2, None);
            let l_m = agents::listener_embed_message(&mut tape, &ids.listener, &acfg, &msgs);
            let z = head_forward(&mut tape, &ids, l_m);
            let zv = tape.value(z);
            for row in 0..chunk.len() {
                let predicted = zv.row(row)[0].to_f64() > 0.0;
                let item = chunk_idx * 256 + row;
                hits += usize::from(predicted == test_bits.get(item, bit));
            }
        }
        per_attribute.push(hits as f64 / test_ds.len() as f64);
    }
    let mean = per_attribute.iter().sum::<f64>() / per_attribute.len() as f64;
    Ok(EtlOutcome {
        task: "attribute".into(),
        regime_lambda: cfg.regime_lambda,
        metric: "accuracy".into(),
        value: mean,
        per_attribute: Some(per_attribute),
        steps,
        seed: cfg.seed,
    })
}

// ---- reconstruction ---------------------------------------------------------------------

/// Feature reconstruction from the message alone: message module -> MLP
/// (512, 1024, ReLU between) -> linear output of the feature dimension,
/// trained with MSE under global-norm clipping and decoupled weight decay.
/// The final layer starts at zero, so the untrained head predicts zero.
pub fn etl_reconstruction<S: Scalar>(
    frozen: &FrozenSpeaker<'_, S>,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &EtlConfig,
) -> Result<EtlOutcome> {
    cfg.validate()?;
    let acfg = *frozen.agent_config();
    let d = train_ds.dim();
    let clean_train = frozen.encode_dataset(train_ds);
    let clean_test = frozen.encode_dataset(test_ds);

    let mut rng = Stream::derive(cfg.seed, "etl_recon_init");
    let mut params: ParamStore<S> = init_head_params(&acfg, &[512, 1024], d, &mut rng, true);
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.recon_lr,
        beta1: cfg.recon_b1,
        beta2: cfg.recon_b2,
        eps: 1e-8,
        weight_decay: cfg.recon_wd,
    });
    let mut batch_rng = Stream::derive(cfg.seed, "etl_recon_batch");
    let mut channel_rng = Stream::derive(cfg.seed, "etl_recon_channel");

    for _ in 0..cfg.steps {
        let idxs: Vec<usize> = (0..cfg.batch)
            .map(|_| batch_rng.next_below(train_ds.len()))
            .collect();
        let msgs = noisy_messages(
            &clean_train,
            &idxs,
            cfg.regime_lambda,
            acfg.vocab,
            &mut channel_rng,
        )?;
        let targets: Vec<Vec<f32>> = idxs.iter().map(|&i| train_ds.feature(i).to_vec()).collect();
        let mut tape: Tape<S> = Tape::new();
        let mut binding = TapeBinding::new();
        let ids = bind_head(&mut tape, &params, &acfg, 3, Some(&mut binding));
        let l_m = agents::listener_embed_message(&mut tape, &ids.listener, &acfg, &msgs);
        let preds = head_forward(&mut tape, &ids, l_m);
        let tgt = tape.constant(features_tensor(&targets, d));
        let diff = tape.sub(preds, tgt);
        let sq = tape.square(diff);
        let loss = tape.mean(sq);
        if !tape.value(loss).item().to_f64().is_finite() {
            return Err(Error::Numeric("reconstruction loss is non-finite".into()));
        }
        let mut raw = tape.backward(loss);
        let mut grads = binding.collect(&mut raw);
        clip_global_norm(&mut grads, cfg.recon_gmax);
        adam_step(&mut adam, &mut params, &grads)?;
    }

    let mse = reconstruction_mse(&params, frozen, test_ds, &clean_test, cfg)?;
    Ok(EtlOutcome {
        task: "reconstruction".into(),
        regime_lambda: cfg.regime_lambda,
        metric: "mse".into(),
        value: mse,
        per_attribute: None,
        steps: cfg.steps,
        seed: cfg.seed,
    })
}

/// Held-out per-coordinate MSE of a reconstruction head.
pub fn reconstruction_mse<S: Scalar>(
    params: &ParamStore<S>,
    frozen: &FrozenSpeaker<'_, S>,
    test_ds: &Dataset,
    clean_test: &[Message],
    cfg: &EtlConfig,
) -> Result<f64> {
    let acfg = *frozen.agent_config();
    let mut eval_channel = Stream::derive(cfg.seed, "etl_recon_eval_channel");
    let mut total_sq = 0.0f64;
    let mut count = 0usize;
    for (chunk_idx, chunk) in clean_test.chunks(256).enumerate() {
        let idxs: Vec<usize> = (0..chunk.len()).collect();
        let msgs = noisy_messages(
            chunk,
            &idxs,
            cfg.regime_lambda,
            acfg.vocab,
            &mut eval_channel,
        )?;
        let mut tape: Tape<S> = Tape::new();
        let ids = bind_head(&mut tape, params, &acfg, 3, None);
        let l_m = agents::listener_embed_message(&mut tape, &ids.listener, &acfg, &msgs);
        let preds = head_forward(&mut tape, &ids, l_m);
        let pv = tape.value(preds);
        for row in 0..chunk.len() {
            let item = chunk_idx * 256 + row;
            let truth = test_ds.feature(item);
            for (p, x) in pv.row(row).iter().zip(truth) {
                let d = p.to_f64() - *x as f64;
                total_sq += d * d;
                count += 1;
            }
        }
    }
    Ok(total_sq / count as f64)
}

/// A Speaker stand-in that ignores its input and emits a random fixed
/// message per dataset item; the control condition for reconstruction.
pub fn random_message_table(ds: &Dataset, vocab: usize, msg_len: usize, seed: u64) -> Vec<Message> {
    let mut rng = Stream::derive(seed, "random_messages");
    (0..ds.len())
        .map(|_| Message::new((0..msg_len).map(|_| rng.next_below(vocab) as u16).collect()))
        .collect()
}
