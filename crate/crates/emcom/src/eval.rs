//! Post-training analyses: accuracy over (noise, candidate-count) grids,
//! token-masking redundancy curves, first-token sensitivity and report
//! emission.
//!
//! Evaluation is forward-only and batched. With no input noise the candidate
//! embeddings of the whole test split are computed once and messages are
//! cached per target, so full grids run in seconds.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{bind_listener, bind_speaker, features_tensor, AgentConfig, DecodeMode};
use crate::autodiff::{Scalar, Tape};
use crate::dataset::{sample_episode, Dataset, EpisodeInputs};
use crate::game::{apply_channel_noise, apply_input_noise, mask_tokens, InputNoiseConfig, Message};
use crate::nn::ParamStore;
use crate::rng::Stream;
use crate::{Error, Result};

/// One evaluation cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub lambda_test: f64,
    pub c_size_test: usize,
    pub n_games: usize,
    /// Gaussian input noise; 0 disables it.
    pub input_sigma: f64,
    pub greedy: bool,
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(lambda_test: f64, c_size_test: usize, n_games: usize, seed: u64) -> Self {
        EvalConfig {
            lambda_test,
            c_size_test,
            n_games,
            input_sigma: 0.0,
            greedy: true,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda_test) {
            return Err(Error::Config(format!(
                "lambda_test must be in [0, 1), got {}",
                self.lambda_test
            )));
        }
        if self.n_games == 0 {
            return Err(Error::Config("n_games must be positive".into()));
        }
        if self.input_sigma < 0.0 {
            return Err(Error::Config("input_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

const CHUNK: usize = 128;

/// Fraction of games where the Listener picked the target, under the cell's
/// channel noise, optional input noise and decoding mode.
pub fn eval_accuracy<S: Scalar>(
    speaker: &ParamStore<S>,
    listener: &ParamStore<S>,
    acfg: &AgentConfig,
    test_ds: &Dataset,
    cfg: &EvalConfig,
) -> Result<f64> {
    cfg.validate()?;
    let episodes = sample_eval_episodes(test_ds, cfg)?;
    let messages = speaker_messages(speaker, acfg, test_ds, &episodes, cfg)?;
    let mut channel_rng = Stream::derive(cfg.seed, "eval_channel");
    let mut noisy = Vec::with_capacity(messages.len());
    for m in &messages {
        noisy.push(apply_channel_noise(
            m,
            cfg.lambda_test,
            acfg.vocab,
            &mut channel_rng,
        )?);
    }
    let choices = listener_choices(listener, acfg, test_ds, &episodes, &noisy, cfg)?;
    Ok(accuracy_from_choices(&episodes, &choices))
}

/// Count of episodes whose choice hit the target, as a fraction.
pub fn accuracy_from_choices(episodes: &[EpisodeInputs], choices: &[usize]) -> f64 {
    assert_eq!(episodes.len(), choices.len());
    let hits = episodes
        .iter()
        .zip(choices)
        .filter(|(e, &c)| e.target_pos == c)
        .count();
    hits as f64 / episodes.len() as f64
}

fn sample_eval_episodes(ds: &Dataset, cfg: &EvalConfig) -> Result<Vec<EpisodeInputs>> {
    let mut rng = Stream::derive(cfg.seed, "eval_episode");
    let mut out = Vec::with_capacity(cfg.n_games);
    for _ in 0..cfg.n_games {
        out.push(sample_episode(ds, cfg.c_size_test, &mut rng, false)?);
    }
    Ok(out)
}

/// Encode one message per episode. With greedy decoding and no input noise,
/// messages are cached per unique target.
fn speaker_messages<S: Scalar>(
    speaker: &ParamStore<S>,
    acfg: &AgentConfig,
    ds: &Dataset,
    episodes: &[EpisodeInputs],
    cfg: &EvalConfig,
) -> Result<Vec<Message>> {
    let mut target_rng = Stream::derive(cfg.seed, "eval_input_target");
    let mut speaker_rng = Stream::derive(cfg.seed, "eval_speaker");
    let cacheable = cfg.greedy && cfg.input_sigma == 0.0;

    if cacheable {
        let mut order: Vec<usize> = Vec::new();
        let mut seen = HashMap::new();
        for e in episodes {
            let t = e.target_index();
            if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(t) {
                e.insert(order.len());
                order.push(t);
            }
        }
        let features: Vec<Vec<f32>> = order.iter().map(|&i| ds.feature(i).to_vec()).collect();
        let encoded = encode_batch(speaker, acfg, &features, None, DecodeMode::Greedy)?;
        Ok(episodes
            .iter()
            .map(|e| encoded[seen[&e.target_index()]].clone())
            .collect())
    } else {
        let noise = InputNoiseConfig {
            mu: 0.0,
            sigma: cfg.input_sigma,
        };
        let features: Vec<Vec<f32>> = episodes
            .iter()
            .map(|e| {
                let x = ds.feature(e.target_index());
                if cfg.input_sigma > 0.0 {
                    apply_input_noise(x, &noise, &mut target_rng)
                } else {
                    x.to_vec()
                }
            })
            .collect();
        let mode = if cfg.greedy {
            DecodeMode::Greedy
        } else {
            DecodeMode::Sample
        };
        let rng = if cfg.greedy {
            None
        } else {
            Some(&mut speaker_rng)
        };
        encode_batch(speaker, acfg, &features, rng, mode)
    }
}

fn encode_batch<S: Scalar>(
    speaker: &ParamStore<S>,
    acfg: &AgentConfig,
    features: &[Vec<f32>],
    mut rng: Option<&mut Stream>,
    mode: DecodeMode,
) -> Result<Vec<Message>> {
    let mut out = Vec::with_capacity(features.len());
    for chunk in features.chunks(CHUNK) {
        let mut tape: Tape<S> = Tape::new();
        let ids = bind_speaker(&mut tape, speaker, acfg, None);
        let x = tape.constant(features_tensor(chunk, acfg.feature_dim));
        let fwd =
            crate::agents::speaker_forward(&mut tape, &ids, acfg, x, rng.as_deref_mut(), mode);
        for b in 0..chunk.len() {
            out.push(Message::new(fwd.tokens.iter().map(|col| col[b]).collect()));
        }
    }
    Ok(out)
}

fn listener_choices<S: Scalar>(
    listener: &ParamStore<S>,
    acfg: &AgentConfig,
    ds: &Dataset,
    episodes: &[EpisodeInputs],
    messages: &[Message],
    cfg: &EvalConfig,
) -> Result<Vec<usize>> {
    let mut cand_rng = Stream::derive(cfg.seed, "eval_input_cand");
    let mut listener_rng = Stream::derive(cfg.seed, "eval_listener");
    let e_dim = acfg.listener_embed;
    let clean_lj = if cfg.input_sigma == 0.0 {
        Some(embed_all_candidates(listener, acfg, ds)?)
    } else {
        None
    };
    let noise = InputNoiseConfig {
        mu: 0.0,
        sigma: cfg.input_sigma,
    };

    let mut choices = Vec::with_capacity(episodes.len());
    let mut start = 0;
    while start < episodes.len() {
        let end = (start + CHUNK).min(episodes.len());
        let chunk = &episodes[start..end];
        let msgs = &messages[start..end];

        // Message embeddings for the chunk.
        let mut tape: Tape<S> = Tape::new();
        let ids = bind_listener(&mut tape, listener, acfg, None, false);
        let l_m_id = crate::agents::listener_embed_message(&mut tape, &ids, acfg, msgs);
        let l_m = tape.value(l_m_id).to_f64_vec();

        // Candidate embeddings: cached rows, or freshly perturbed ones.
        let fresh_lj: Option<Vec<f64>> = match &clean_lj {
            Some(_) => None,
            None => {
                let feats: Vec<Vec<f32>> = chunk
                    .iter()
                    .flat_map(|e| {
                        e.candidates
                            .iter()
                            .map(|&i| apply_input_noise(ds.feature(i), &noise, &mut cand_rng))
                            .collect::<Vec<_>>()
                    })
                    .collect();
                let mut t2: Tape<S> = Tape::new();
                let ids2 = bind_listener(&mut t2, listener, acfg, None, false);
                let flat = t2.constant(features_tensor(&feats, acfg.feature_dim));
                let lj = crate::agents::listener_embed_candidates(&mut t2, &ids2, flat);
                Some(t2.value(lj).to_f64_vec())
            }
        };

        for (row, e) in chunk.iter().enumerate() {
            let m_vec = &l_m[row * e_dim..(row + 1) * e_dim];
            let c_size = e.candidates.len();
            let mut scores = Vec::with_capacity(c_size);
            for (pos, &cand) in e.candidates.iter().enumerate() {
                let j_vec: &[f64] = match (&clean_lj, &fresh_lj) {
                    (Some(table), _) => &table[cand * e_dim..(cand + 1) * e_dim],
                    (None, Some(fresh)) => {
                        let r = row * c_size + pos;
                        &fresh[r * e_dim..(r + 1) * e_dim]
                    }
                    _ => unreachable!(),
                };
                scores.push(m_vec.iter().zip(j_vec).map(|(a, b)| a * b).sum::<f64>());
            }
            let choice = if cfg.greedy {
                argmax_f64(&scores)
            } else {
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                listener_rng.sample_categorical(&weights)
            };
            choices.push(choice);
        }
        start = end;
    }
    Ok(choices)
}

fn embed_all_candidates<S: Scalar>(
    listener: &ParamStore<S>,
    acfg: &AgentConfig,
    ds: &Dataset,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ds.len() * acfg.listener_embed);
    let mut idx = 0;
    while idx < ds.len() {
        let end = (idx + 512).min(ds.len());
        let feats: Vec<Vec<f32>> = (idx..end).map(|i| ds.feature(i).to_vec()).collect();
        let mut tape: Tape<S> = Tape::new();
        let ids = bind_listener(&mut tape, listener, acfg, None, false);
        let flat = tape.constant(features_tensor(&feats, acfg.feature_dim));
        let lj = crate::agents::listener_embed_candidates(&mut tape, &ids, flat);
        out.extend(tape.value(lj).to_f64_vec());
        idx = end;
    }
    Ok(out)
}

fn argmax_f64(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

// ---- masking analysis ------------------------------------------------------------

/// Masking analysis shape: masked-token counts 0..=k_max, `combos` position
/// sets per count.
#[derive(Clone, Copy, Debug)]
pub struct MaskSpec {
    pub k_max: usize,
    pub combos: usize,
    pub combo_seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            k_max: 5,
            combos: 10,
            combo_seed: 17,
        }
    }
}

/// Accuracy per masked-token count and position combination.
#[derive(Clone, Debug, Serialize)]
pub struct MaskingPoint {
    pub k: usize,
    /// (masked positions, accuracy) per sampled combination.
    pub combos: Vec<(Vec<usize>, f64)>,
    pub mean: f64,
    pub sd: f64,
}

/// Distinct position sets of size k out of n: exhaustive when few enough,
/// otherwise sampled without replacement.
pub fn position_combos(n: usize, k: usize, want: usize, seed: u64) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let total = binomial(n, k);
    if total <= want {
        let mut all = Vec::with_capacity(total);
        let mut current = Vec::with_capacity(k);
        enumerate_combos(n, k, 0, &mut current, &mut all);
        return all;
    }
    let mut rng = Stream::derive(seed, "mask_combos");
    let mut seen: Vec<Vec<usize>> = Vec::with_capacity(want);
    while seen.len() < want {
        let mut picks: Vec<usize> = Vec::with_capacity(k);
        while picks.len() < k {
            let p = rng.next_below(n);
            if !picks.contains(&p) {
                picks.push(p);
            }
        }
        picks.sort_unstable();
        if !seen.contains(&picks) {
            seen.push(picks);
        }
    }
    seen
}

fn enumerate_combos(
    n: usize,
    k: usize,
    start: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for p in start..n {
        current.push(p);
        enumerate_combos(n, k, p + 1, current, out);
        current.pop();
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Accuracy while deterministically masking k tokens, for k = 0..=k_max and
/// up to `combos` distinct position sets per k. The channel is disabled;
/// masking replaces it. All cells share the episode stream, so the k = 0
/// point equals `eval_accuracy` at lambda 0 with the same seed.
pub fn masking_curve<S: Scalar>(
    speaker: &ParamStore<S>,
    listener: &ParamStore<S>,
    acfg: &AgentConfig,
    test_ds: &Dataset,
    spec: &MaskSpec,
    cfg: &EvalConfig,
) -> Result<Vec<MaskingPoint>> {
    if cfg.lambda_test != 0.0 {
        return Err(Error::Config(
            "masking analysis runs with the channel disabled (lambda_test = 0)".into(),
        ));
    }
    if spec.k_max > acfg.msg_len / 2 {
        return Err(Error::Config(format!(
            "masked-token count {} exceeds half the message length",
            spec.k_max
        )));
    }
    cfg.validate()?;
    let episodes = sample_eval_episodes(test_ds, cfg)?;
    let messages = speaker_messages(speaker, acfg, test_ds, &episodes, cfg)?;

    let mut points = Vec::with_capacity(spec.k_max + 1);
    for k in 0..=spec.k_max {
        let combos = position_combos(acfg.msg_len, k, spec.combos, spec.combo_seed);
        let mut accs = Vec::with_capacity(combos.len());
        for positions in &combos {
            let masked: Result<Vec<Message>> = messages
                .iter()
                .map(|m| mask_tokens(m, positions, acfg.vocab))
                .collect();
            let choices = listener_choices(listener, acfg, test_ds, &episodes, &masked?, cfg)?;
            accs.push((
                positions.clone(),
                accuracy_from_choices(&episodes, &choices),
            ));
        }
        let values: Vec<f64> = accs.iter().map(|(_, a)| *a).collect();
        let (mean, sd) = mean_sd(&values);
        points.push(MaskingPoint {
            k,
            combos: accs,
            mean,
            sd,
        });
    }
    Ok(points)
}

/// Accuracy with one fixed position set masked on every message, under the
/// shared episode stream (comparable across masks and with `masking_curve`).
pub fn masked_cell_accuracy<S: Scalar>(
    speaker: &ParamStore<S>,
    listener: &ParamStore<S>,
    acfg: &AgentConfig,
    test_ds: &Dataset,
    positions: &[usize],
    cfg: &EvalConfig,
) -> Result<f64> {
    if cfg.lambda_test != 0.0 {
        return Err(Error::Config(
            "masking analysis runs with the channel disabled (lambda_test = 0)".into(),
        ));
    }
    cfg.validate()?;
    let episodes = sample_eval_episodes(test_ds, cfg)?;
    let messages = speaker_messages(speaker, acfg, test_ds, &episodes, cfg)?;
    let masked: Result<Vec<Message>> = messages
        .iter()
        .map(|m| mask_tokens(m, positions, acfg.vocab))
        .collect();
    let choices = listener_choices(listener, acfg, test_ds, &episodes, &masked?, cfg)?;
    Ok(accuracy_from_choices(&episodes, &choices))
}

/// Accuracy with the first token masked vs. the mean over masking each other
/// single position.
pub fn first_token_analysis<S: Scalar>(
    speaker: &ParamStore<S>,
    listener: &ParamStore<S>,
    acfg: &AgentConfig,
    test_ds: &Dataset,
    cfg: &EvalConfig,
) -> Result<(f64, f64)> {
    let spec = MaskSpec {
        k_max: 1,
        combos: acfg.msg_len,
        combo_seed: 0,
    };
    let points = masking_curve(speaker, listener, acfg, test_ds, &spec, cfg)?;
    let singles = &points[1];
    let first = singles
        .combos
        .iter()
        .find(|(p, _)| p == &vec![0])
        .map(|(_, a)| *a)
        .ok_or_else(|| Error::Config("first-position combo missing".into()))?;
    let others: Vec<f64> = singles
        .combos
        .iter()
        .filter(|(p, _)| p != &vec![0])
        .map(|(_, a)| *a)
        .collect();
    let (mean, _) = mean_sd(&others);
    Ok((first, mean))
}

/// Sample mean and (n-1) standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

// ---- reports ------------------------------------------------------------------------

/// One grid cell aggregated across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub lambda_train: f64,
    pub c_train: usize,
    pub lambda_test: f64,
    pub c_test: usize,
    pub acc_mean: f64,
    pub acc_sd: f64,
    pub n_seeds: usize,
}

/// Accuracy grid plus provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub checkpoint_digest: String,
    pub config_digest: String,
    pub n_games: usize,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: &str =
    "variant,lambda_train,c_train,lambda_test,c_test,acc_mean,acc_sd,n_seeds";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> ReportFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

/// Render a report with stable field ordering.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serialization");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "{CSV_HEADER}");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.variant,
                    r.lambda_train,
                    r.c_train,
                    r.lambda_test,
                    r.c_test,
                    r.acc_mean,
                    r.acc_sd,
                    r.n_seeds
                );
            }
            out
        }
    }
}

pub fn export_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    std::fs::write(path, render_report(report, format)).map_err(|e| Error::io(path, e))
}

/// Parse a report back; CSV carries no provenance, so those fields reset.
pub fn read_report(path: &Path, format: ReportFormat) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ReportFormat::Json => serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: bad report json: {e}", path.display()))),
        ReportFormat::Csv => {
            let mut lines = text.lines();
            match lines.next() {
                Some(h) if h == CSV_HEADER => {}
                other => {
                    return Err(Error::Data(format!(
                        "{}: bad csv header {other:?}",
                        path.display()
                    )))
                }
            }
            let mut rows = Vec::new();
            for (i, line) in lines.enumerate() {
                let parts: Vec<&str> = line.split(',').collect();
                if parts.len() != 8 {
                    return Err(Error::Data(format!(
                        "{}: row {} has {} fields, expected 8",
                        path.display(),
                        i + 2,
                        parts.len()
                    )));
                }
                let field = |j: usize| -> &str { parts[j] };
                rows.push(ReportRow {
                    variant: field(0).to_string(),
                    lambda_train: parse_field(path, field(1))?,
                    c_train: parse_field(path, field(2))?,
                    lambda_test: parse_field(path, field(3))?,
                    c_test: parse_field(path, field(4))?,
                    acc_mean: parse_field(path, field(5))?,
                    acc_sd: parse_field(path, field(6))?,
                    n_seeds: parse_field(path, field(7))?,
                });
            }
            Ok(EvalReport {
                rows,
                ..Default::default()
            })
        }
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Data(format!("{}: bad csv field {s:?}", path.display())))
}

/// Masking-curve CSV: one row per (k, combo).
pub fn render_masking_csv(points: &[MaskingPoint]) -> String {
    let mut out = String::from("k,combo_index,positions,acc,mean_k,sd_k\n");
    for p in points {
        for (i, (positions, acc)) in p.combos.iter().enumerate() {
            let pos: Vec<String> = positions.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                p.k,
                i,
                pos.join("+"),
                acc,
                p.mean,
                p.sd
            );
        }
    }
    out
}

/// Minimal SVG polyline plot for (x, accuracy) series.
pub fn render_line_plot_svg(
    title: &str,
    x_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 60.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 50.0;
    let palette = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
    ];
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in series {
        for (x, _) in pts {
            xmin = xmin.min(*x);
            xmax = xmax.max(*x);
        }
    }
    if !xmin.is_finite() || xmax <= xmin {
        xmin = 0.0;
        xmax = 1.0;
    }
    let sx = |x: f64| ML + (x - xmin) / (xmax - xmin) * (W - ML - MR);
    let sy = |y: f64| MT + (1.0 - y.clamp(0.0, 1.0)) * (H - MT - MB);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        W / 2.0
    );
    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB
    );
    for tick in 0..=4 {
        let y = tick as f64 / 4.0;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{y:.2}</text>",
            ML - 6.0,
            sy(y) + 4.0
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>",
            sy(y),
            W - MR,
            sy(y)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>",
        (ML + W - MR) / 2.0,
        H - 14.0
    );
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = palette[si % palette.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            coords.join(" ")
        );
        for (x, y) in pts {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                sx(*x),
                sy(*y)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{name}</text>",
            W - MR - 150.0,
            MT + 16.0 * (si as f64 + 1.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
