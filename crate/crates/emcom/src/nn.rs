//! Parameterized layers, the Adam optimizer, EMA target maintenance and
//! global-norm gradient clipping.
//!
//! Parameters live in a [`ParamStore`] (ordered name -> tensor); each
//! training step leases them onto a fresh tape through a [`TapeBinding`],
//! which later routes tape gradients back into a name-keyed [`GradientMap`].

use std::collections::{BTreeMap, HashMap};

use crate::autodiff::{Scalar, Tape, Tensor, ValueId};
use crate::rng::Stream;
use crate::{Error, Result};

/// Ordered map from parameter name to tensor. Iteration order is insertion
/// order and is the canonical order for serialization and optimizer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S: Scalar> {
    entries: Vec<(String, Tensor<S>)>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        let i = self.index[name];
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<S> {
        let i = self.index[name];
        &mut self.entries[i].1
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    fn entries_mut(&mut self) -> &mut Vec<(String, Tensor<S>)> {
        &mut self.entries
    }
}

/// Gradient per parameter name. Absent entries mean zero gradient.
#[derive(Clone, Debug, Default)]
pub struct GradientMap<S: Scalar> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> GradientMap<S> {
    pub fn new() -> Self {
        GradientMap {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<S>) {
        self.map.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// L2 norm over all entries jointly.
    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| {
                let x = v.to_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// First non-finite entry, as (name, coordinate), if any.
    pub fn first_non_finite(&self) -> Option<(&str, usize)> {
        for (name, t) in &self.map {
            if let Some(pos) = t.data().iter().position(|v| !v.is_finite()) {
                return Some((name.as_str(), pos));
            }
        }
        None
    }
}

/// Association between store parameters and their leased tape leaves for one
/// forward/backward pass.
#[derive(Default)]
pub struct TapeBinding {
    pairs: Vec<(String, ValueId)>,
}

impl TapeBinding {
    pub fn new() -> Self {
        TapeBinding { pairs: Vec::new() }
    }

    /// Lease one parameter onto the tape as a differentiable leaf.
    pub fn bind<S: Scalar>(
        &mut self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        name: &str,
    ) -> ValueId {
        let id = tape.leaf(store.get(name).clone().with_grad());
        self.pairs.push((name.to_string(), id));
        id
    }

    /// Collect tape gradients for every bound parameter.
    pub fn collect<S: Scalar>(&self, grads: &mut crate::autodiff::Gradients<S>) -> GradientMap<S> {
        let mut map = GradientMap::new();
        for (name, id) in &self.pairs {
            if let Some(g) = grads.take(*id) {
                map.insert(name.clone(), g);
            }
        }
        map
    }
}

/// Insert a parameter as a frozen constant (no gradient), e.g. the EMA target
/// or a frozen Speaker.
pub fn bind_frozen<S: Scalar>(tape: &mut Tape<S>, store: &ParamStore<S>, name: &str) -> ValueId {
    tape.constant(store.get(name).clone())
}

// ---- layers ----------------------------------------------------------------

/// Tape handles for a linear layer with weight [out, in] and optional bias.
#[derive(Clone, Copy, Debug)]
pub struct LinearIds {
    pub w: ValueId,
    pub b: Option<ValueId>,
}

/// y = x W^T + b for x of shape [batch, in].
pub fn linear_forward<S: Scalar>(tape: &mut Tape<S>, p: &LinearIds, x: ValueId) -> ValueId {
    let y = tape.matmul_tb(x, p.w);
    match p.b {
        Some(b) => tape.add(y, b),
        None => y,
    }
}

/// Tape handles for an LSTM cell. Weights are gate-stacked with the fixed
/// gate order (i, f, g, o): input-to-gates [4H, in], hidden-to-gates [4H, H],
/// bias [4H].
#[derive(Clone, Copy, Debug)]
pub struct LstmIds {
    pub w_input: ValueId,
    pub w_hidden: ValueId,
    pub bias: ValueId,
    pub hidden: usize,
}

/// One LSTM step. i,f,o pass through sigmoid, the candidate through tanh;
/// c' = f*c + i*g, h' = o*tanh(c').
pub fn lstm_step<S: Scalar>(
    tape: &mut Tape<S>,
    p: &LstmIds,
    x: ValueId,
    h: ValueId,
    c: ValueId,
) -> (ValueId, ValueId) {
    let hsz = p.hidden;
    let gx = tape.matmul_tb(x, p.w_input);
    let gh = tape.matmul_tb(h, p.w_hidden);
    let lin = tape.add(gx, gh);
    let gates = tape.add(lin, p.bias);

    let i_raw = tape.slice_cols(gates, 0, hsz);
    let f_raw = tape.slice_cols(gates, hsz, 2 * hsz);
    let g_raw = tape.slice_cols(gates, 2 * hsz, 3 * hsz);
    let o_raw = tape.slice_cols(gates, 3 * hsz, 4 * hsz);

    let i = tape.sigmoid(i_raw);
    let f = tape.sigmoid(f_raw);
    let g = tape.tanh(g_raw);
    let o = tape.sigmoid(o_raw);

    let fc = tape.mul_elem(f, c);
    let ig = tape.mul_elem(i, g);
    let c_next = tape.add(fc, ig);
    let ct = tape.tanh(c_next);
    let h_next = tape.mul_elem(o, ct);
    (h_next, c_next)
}

// ---- initialization ----------------------------------------------------------

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) tensor.
pub fn init_uniform_fan_in<S: Scalar>(
    rng: &mut Stream,
    shape: Vec<usize>,
    fan_in: usize,
) -> Tensor<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64(rng.next_range_f64(-bound, bound)))
        .collect();
    Tensor::new(shape, data)
}

/// Linear layer init: weight U(+-1/sqrt(in)), bias zeros.
pub fn init_linear<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut Stream,
    prefix: &str,
    out_dim: usize,
    in_dim: usize,
) {
    store.insert(
        format!("{prefix}.weight"),
        init_uniform_fan_in(rng, vec![out_dim, in_dim], in_dim),
    );
    store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![out_dim]));
}

/// Embedding table init: N(0, 1).
pub fn init_embedding<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut Stream,
    prefix: &str,
    rows: usize,
    dim: usize,
) {
    let data = (0..rows * dim)
        .map(|_| S::from_f64(rng.next_normal()))
        .collect();
    store.insert(
        format!("{prefix}.table"),
        Tensor::new(vec![rows, dim], data),
    );
}

/// LSTM init: both weight blocks U(+-1/sqrt(fan_in)) with their own fan-in,
/// biases zero.
pub fn init_lstm<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut Stream,
    prefix: &str,
    hidden: usize,
    input: usize,
) {
    store.insert(
        format!("{prefix}.w_input"),
        init_uniform_fan_in(rng, vec![4 * hidden, input], input),
    );
    store.insert(
        format!("{prefix}.w_hidden"),
        init_uniform_fan_in(rng, vec![4 * hidden, hidden], hidden),
    );
    store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![4 * hidden]));
}

// ---- Adam ----------------------------------------------------------------------

/// Adam hyperparameters. Weight decay is decoupled and only applied when the
/// coefficient is positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: per-parameter first/second moments plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState<S: Scalar> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: HashMap<String, Tensor<S>>,
    v: HashMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor<S>, &Tensor<S>)> {
        match (self.m.get(name), self.v.get(name)) {
            (Some(m), Some(v)) => Some((m, v)),
            _ => None,
        }
    }

    pub fn set_moments(&mut self, name: &str, m: Tensor<S>, v: Tensor<S>) {
        self.m.insert(name.to_string(), m);
        self.v.insert(name.to_string(), v);
    }
}

/// One bias-corrected Adam step over every parameter in store order. Missing
/// gradient entries are treated as zero. Rejects non-finite gradients before
/// touching any parameter.
pub fn adam_step<S: Scalar>(
    state: &mut AdamState<S>,
    store: &mut ParamStore<S>,
    grads: &GradientMap<S>,
) -> Result<()> {
    if let Some((name, coord)) = grads.first_non_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient for parameter {name} at coordinate {coord}; step aborted"
        )));
    }
    state.step += 1;
    let t = state.step;
    let cfg = state.cfg;
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let one = S::ONE;
    let lr = S::from_f64(cfg.lr);
    let eps = S::from_f64(cfg.eps);
    let corr1 = S::from_f64(1.0 - cfg.beta1.powi(t as i32));
    let corr2 = S::from_f64(1.0 - cfg.beta2.powi(t as i32));
    let decay = S::from_f64(1.0 - cfg.lr * cfg.weight_decay);

    for (name, param) in store.entries_mut() {
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
        let grad = grads.get(name);
        for idx in 0..param.numel() {
            let g = grad.map_or(S::ZERO, |t| t.data()[idx]);
            let mi = b1 * m.data()[idx] + (one - b1) * g;
            let vi = b2 * v.data()[idx] + (one - b2) * g * g;
            m.data_mut()[idx] = mi;
            v.data_mut()[idx] = vi;
            let m_hat = mi / corr1;
            let v_hat = vi / corr2;
            let mut p = param.data()[idx];
            p -= lr * m_hat / (v_hat + eps).sqrt();
            if cfg.weight_decay > 0.0 {
                p = p * decay;
            }
            param.data_mut()[idx] = p;
        }
    }
    Ok(())
}

// ---- EMA -------------------------------------------------------------------------

/// Slow-moving target copy of a parameter store.
#[derive(Clone, Debug)]
pub struct EmaState<S: Scalar> {
    pub eta: f64,
    pub params: ParamStore<S>,
}

impl<S: Scalar> EmaState<S> {
    /// Target initialized as a copy of the online parameters.
    pub fn from_online(online: &ParamStore<S>, eta: f64) -> Self {
        assert!((0.0..=1.0).contains(&eta), "EMA weight must be in [0,1]");
        EmaState {
            eta,
            params: online.clone(),
        }
    }
}

/// target = (1 - eta) * online + eta * target, elementwise.
pub fn ema_update<S: Scalar>(ema: &mut EmaState<S>, online: &ParamStore<S>) {
    assert_eq!(
        ema.params.len(),
        online.len(),
        "EMA and online stores have different parameter sets"
    );
    let eta = S::from_f64(ema.eta);
    let one = S::ONE;
    for (name, target) in ema.params.entries_mut() {
        let src = online.get(name);
        for (t, o) in target.data_mut().iter_mut().zip(src.data()) {
            *t = (one - eta) * *o + eta * *t;
        }
    }
}

// ---- clipping ----------------------------------------------------------------------

/// Scale all gradients jointly so the global L2 norm does not exceed `g_max`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<S: Scalar>(grads: &mut GradientMap<S>, g_max: f64) -> f64 {
    assert!(g_max > 0.0, "g_max must be positive");
    let norm = grads.global_norm();
    if norm > g_max {
        let scale = S::from_f64(g_max / norm);
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    #[test]
    fn linear_identity_passes_input_through() {
        let mut tape: Tape<f64> = Tape::new();
        let w = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let b = tape.constant(Tensor::new(vec![2], vec![0.0, 0.0]));
        let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]));
        let y = linear_forward(&mut tape, &LinearIds { w, b: Some(b) }, x);
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_zero_weight_returns_bias() {
        let mut tape: Tape<f64> = Tape::new();
        let w = tape.constant(Tensor::zeros(vec![1, 3]));
        let b = tape.constant(Tensor::new(vec![1], vec![5.0]));
        let x = tape.constant(Tensor::new(vec![1, 3], vec![9.0, -2.0, 0.4]));
        let y = linear_forward(&mut tape, &LinearIds { w, b: Some(b) }, x);
        assert_eq!(tape.value(y).data(), &[5.0]);
    }

    #[test]
    fn linear_mse_head_gradients_match_finite_differences() {
        let mut rng = Stream::seed_from(5);
        let w = init_uniform_fan_in::<f64>(&mut rng, vec![3, 4], 4);
        let b = Tensor::new(
            vec![3],
            (0..3).map(|_| rng.next_range_f64(-0.5, 0.5)).collect(),
        );
        let x = Tensor::new(
            vec![2, 4],
            (0..8).map(|_| rng.next_range_f64(-1.0, 1.0)).collect(),
        );
        let target = Tensor::new(
            vec![2, 3],
            (0..6).map(|_| rng.next_range_f64(-1.0, 1.0)).collect(),
        );
        let report = grad_check(
            |t, ids| {
                let xin = t.constant(x.clone());
                let tgt = t.constant(target.clone());
                let y = linear_forward(
                    t,
                    &LinearIds {
                        w: ids[0],
                        b: Some(ids[1]),
                    },
                    xin,
                );
                let err = t.sub(y, tgt);
                let sq = t.square(err);
                t.mean(sq)
            },
            &[w, b],
            1e-5,
        );
        assert!(report.ok(1e-6), "rel err {}", report.max_relative_error);
    }

    #[test]
    fn lstm_all_zero_params_and_state_stay_zero() {
        let mut tape: Tape<f64> = Tape::new();
        let p = LstmIds {
            w_input: tape.constant(Tensor::zeros(vec![12, 2])),
            w_hidden: tape.constant(Tensor::zeros(vec![12, 3])),
            bias: tape.constant(Tensor::zeros(vec![12])),
            hidden: 3,
        };
        let x = tape.constant(Tensor::zeros(vec![1, 2]));
        let h = tape.constant(Tensor::zeros(vec![1, 3]));
        let c = tape.constant(Tensor::zeros(vec![1, 3]));
        let (h2, c2) = lstm_step(&mut tape, &p, x, h, c);
        assert!(tape.value(h2).data().iter().all(|v| *v == 0.0));
        assert!(tape.value(c2).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_saturated_forget_gate_preserves_memory() {
        // Forget bias +20 saturates its sigmoid to ~1; input bias -20 pushes
        // the input gate to ~0, so c' tracks c.
        let hidden = 2;
        let mut tape: Tape<f64> = Tape::new();
        let mut bias = vec![0.0; 4 * hidden];
        for j in 0..hidden {
            bias[j] = -20.0;
            bias[hidden + j] = 20.0;
        }
        let p = LstmIds {
            w_input: tape.constant(Tensor::zeros(vec![4 * hidden, 2])),
            w_hidden: tape.constant(Tensor::zeros(vec![4 * hidden, hidden])),
            bias: tape.constant(Tensor::new(vec![4 * hidden], bias)),
            hidden,
        };
        let x = tape.constant(Tensor::new(vec![1, 2], vec![0.3, -0.8]));
        let h = tape.constant(Tensor::zeros(vec![1, hidden]));
        let c = tape.constant(Tensor::new(vec![1, hidden], vec![0.7, -0.4]));
        let (_h2, c2) = lstm_step(&mut tape, &p, x, h, c);
        for (next, prev) in tape.value(c2).data().iter().zip([0.7, -0.4]) {
            assert!((next - prev).abs() < 1e-6, "memory drift: {next} vs {prev}");
        }
    }

    #[test]
    fn lstm_three_step_unroll_matches_finite_differences() {
        let mut rng = Stream::seed_from(21);
        let hidden = 3;
        let input = 2;
        let w_in = init_uniform_fan_in::<f64>(&mut rng, vec![4 * hidden, input], input);
        let w_hid = init_uniform_fan_in::<f64>(&mut rng, vec![4 * hidden, hidden], hidden);
        let bias = Tensor::new(
            vec![4 * hidden],
            (0..4 * hidden)
                .map(|_| rng.next_range_f64(-0.2, 0.2))
                .collect(),
        );
        let xs: Vec<Tensor<f64>> = (0..3)
            .map(|_| {
                Tensor::new(
                    vec![2, input],
                    (0..2 * input)
                        .map(|_| rng.next_range_f64(-1.0, 1.0))
                        .collect(),
                )
            })
            .collect();
        let report = grad_check(
            |t, ids| {
                let p = LstmIds {
                    w_input: ids[0],
                    w_hidden: ids[1],
                    bias: ids[2],
                    hidden,
                };
                let mut h = t.constant(Tensor::zeros(vec![2, hidden]));
                let mut c = t.constant(Tensor::zeros(vec![2, hidden]));
                for x in &xs {
                    let xid = t.constant(x.clone());
                    let (h2, c2) = lstm_step(t, &p, xid, h, c);
                    h = h2;
                    c = c2;
                }
                let sq = t.square(h);
                t.sum(sq)
            },
            &[w_in, w_hid, bias],
            1e-5,
        );
        assert!(report.ok(1e-5), "rel err {}", report.max_relative_error);
    }

    #[test]
    fn adam_first_step_matches_hand_evaluated_value() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("p", Tensor::scalar(0.0));
        let mut grads = GradientMap::new();
        grads.insert("p", Tensor::scalar(1.0));
        let mut state = AdamState::new(AdamConfig::with_lr(1e-3));
        adam_step(&mut state, &mut store, &grads).unwrap();
        let got = store.get("p").item();
        assert!(
            (got - (-9.99999995e-4)).abs() < 1e-12,
            "first Adam step gave {got}"
        );
    }

    #[test]
    fn adam_zero_gradient_without_decay_leaves_params_unchanged() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]));
        let before = store.get("w").clone();
        let mut state = AdamState::new(AdamConfig::with_lr(1e-3));
        adam_step(&mut state, &mut store, &GradientMap::new()).unwrap();
        assert_eq!(store.get("w"), &before);
    }

    #[test]
    fn adam_decoupled_decay_scales_params() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::new(vec![2], vec![4.0, -2.0]));
        let mut cfg = AdamConfig::with_lr(1e-3);
        cfg.weight_decay = 0.01;
        let mut state = AdamState::new(cfg);
        adam_step(&mut state, &mut store, &GradientMap::new()).unwrap();
        let w = store.get("w");
        assert!((w.data()[0] - 4.0 * (1.0 - 1e-5)).abs() < 1e-15);
        assert!((w.data()[1] - (-2.0) * (1.0 - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_nan_gradient_naming_parameter() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let before = store.get("w").clone();
        let mut grads = GradientMap::new();
        grads.insert("w", Tensor::scalar(f64::NAN));
        let mut state = AdamState::new(AdamConfig::with_lr(1e-3));
        let err = adam_step(&mut state, &mut store, &grads).unwrap_err();
        assert!(
            err.to_string().contains('w'),
            "error should name the parameter: {err}"
        );
        assert_eq!(
            store.get("w"),
            &before,
            "aborted step must not mutate params"
        );
        assert_eq!(state.step, 0);
    }

    #[test]
    fn adam_is_bit_reproducible() {
        let run = || {
            let mut store: ParamStore<f32> = ParamStore::new();
            let mut rng = Stream::seed_from(8);
            store.insert("w", init_uniform_fan_in(&mut rng, vec![4, 4], 4));
            let mut state = AdamState::new(AdamConfig::with_lr(3e-4));
            for k in 0..50 {
                let mut g = GradientMap::new();
                let data: Vec<f32> = (0..16)
                    .map(|i| ((i + k) as f32 * 0.37).sin() * 0.1)
                    .collect();
                g.insert("w", Tensor::new(vec![4, 4], data));
                adam_step(&mut state, &mut store, &g).unwrap();
            }
            store.get("w").data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn ema_eta_one_is_fixed_point_and_eta_zero_copies() {
        let mut online: ParamStore<f64> = ParamStore::new();
        online.insert("w", Tensor::scalar(1.0));
        let mut frozen = EmaState::from_online(&online, 1.0);
        frozen.params.get_mut("w").data_mut()[0] = 0.0;
        ema_update(&mut frozen, &online);
        assert_eq!(frozen.params.get("w").item(), 0.0);

        let mut copier = EmaState::from_online(&online, 0.0);
        copier.params.get_mut("w").data_mut()[0] = 0.0;
        ema_update(&mut copier, &online);
        assert_eq!(copier.params.get("w").item(), 1.0);
    }

    #[test]
    fn ema_update_applies_formula() {
        let mut online: ParamStore<f64> = ParamStore::new();
        online.insert("w", Tensor::scalar(1.0));
        let mut ema = EmaState::from_online(&online, 0.99);
        ema.params.get_mut("w").data_mut()[0] = 0.0;
        ema_update(&mut ema, &online);
        assert!((ema.params.get("w").item() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn ema_stays_within_hull_of_past_online_values() {
        let mut rng = Stream::seed_from(77);
        let mut online: ParamStore<f64> = ParamStore::new();
        online.insert("w", Tensor::scalar(0.0));
        let mut ema = EmaState::from_online(&online, 0.9);
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for _ in 0..200 {
            let next = rng.next_range_f64(-3.0, 3.0);
            online.get_mut("w").data_mut()[0] = next;
            lo = lo.min(next);
            hi = hi.max(next);
            ema_update(&mut ema, &online);
            let t = ema.params.get("w").item();
            assert!(
                t >= lo - 1e-12 && t <= hi + 1e-12,
                "{t} outside [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn clip_below_threshold_is_identity() {
        let mut grads: GradientMap<f64> = GradientMap::new();
        grads.insert("a", Tensor::new(vec![2], vec![1.8, 2.4]));
        let before: Vec<f64> = grads.get("a").unwrap().data().to_vec();
        let norm = clip_global_norm(&mut grads, 500.0);
        assert!((norm - 3.0).abs() < 1e-12);
        assert_eq!(grads.get("a").unwrap().data(), &before[..]);
    }

    #[test]
    fn clip_three_four_five_scaling() {
        let mut grads: GradientMap<f64> = GradientMap::new();
        grads.insert("a", Tensor::new(vec![2], vec![300.0, 400.0]));
        clip_global_norm(&mut grads, 5.0);
        let g = grads.get("a").unwrap();
        assert!((g.data()[0] - 3.0).abs() < 1e-12);
        assert!((g.data()[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn clip_post_norm_is_min_of_norm_and_gmax() {
        let mut rng = Stream::seed_from(13);
        for _ in 0..20 {
            let mut grads: GradientMap<f64> = GradientMap::new();
            for name in ["a", "b", "c"] {
                let n = 1 + rng.next_below(6);
                let data = (0..n).map(|_| rng.next_range_f64(-4.0, 4.0)).collect();
                grads.insert(name, Tensor::new(vec![n], data));
            }
            let before: Vec<f64> = grads
                .iter()
                .flat_map(|(_, t)| t.data().iter().map(|v| v.abs()))
                .collect();
            let g_max = rng.next_range_f64(0.5, 8.0);
            let pre = clip_global_norm(&mut grads, g_max);
            let post = grads.global_norm();
            assert!(
                (post - pre.min(g_max)).abs() < 1e-9,
                "post {post}, pre {pre}"
            );
            let after: Vec<f64> = grads
                .iter()
                .flat_map(|(_, t)| t.data().iter().map(|v| v.abs()))
                .collect();
            for (a, b) in after.iter().zip(&before) {
                assert!(a <= &(b + 1e-12), "clip increased a coordinate: {a} > {b}");
            }
        }
    }
}
