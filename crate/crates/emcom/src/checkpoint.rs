//! Binary checkpoints: full training state, serialized bit-exactly.
//!
//! Layout (little-endian): magic `EMCK`, u32 version = 1, u64 config digest,
//! u32 config text length + bytes, u64 step, then named tensor sections for
//! the online parameters (Speaker then Listener, in store order), the EMA
//! target (f64 weight followed by sections), both Adam states (step, five
//! f64 hyperparameters, then per-parameter first/second moment pairs) and
//! finally the named RNG stream states (4 x u64 each).
//!
//! A tensor section is: u32 name length, name bytes, u32 rank, rank x u32
//! extents, then numel x f32 payload.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::nn::{AdamConfig, AdamState, EmaState, ParamStore};
use crate::rng::Stream;
use crate::training::{StreamSet, TrainState};
use crate::{fnv1a64, Error, Result};

const MAGIC: &[u8; 4] = b"EMCK";
const VERSION: u32 = 1;

/// Serialize a training state plus the canonical config text that produced
/// it. `load(save(s))` reproduces the state bit-exactly.
pub fn save_train_state(path: &Path, state: &TrainState<f32>, config_text: &str) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u64(&mut buf, fnv1a64(config_text.as_bytes()));
    push_u32(&mut buf, config_text.len() as u32);
    buf.extend_from_slice(config_text.as_bytes());
    push_u64(&mut buf, state.step);

    // Online parameters: speaker then listener, in store order.
    push_u32(
        &mut buf,
        (state.speaker.len() + state.listener.len()) as u32,
    );
    for (name, tensor) in state.speaker.iter().chain(state.listener.iter()) {
        push_section(&mut buf, name, tensor);
    }

    // EMA target.
    push_f64(&mut buf, state.ema.eta);
    push_u32(&mut buf, state.ema.params.len() as u32);
    for (name, tensor) in state.ema.params.iter() {
        push_section(&mut buf, name, tensor);
    }

    push_adam(&mut buf, &state.adam_speaker, &state.speaker);
    push_adam(&mut buf, &state.adam_listener, &state.listener);

    let streams: [(&str, &Stream); 4] = [
        ("episode", &state.streams.episode),
        ("speaker", &state.streams.speaker),
        ("listener", &state.streams.listener),
        ("channel", &state.streams.channel),
    ];
    push_u32(&mut buf, streams.len() as u32);
    for (name, stream) in streams {
        push_str(&mut buf, name);
        for word in stream.state() {
            push_u64(&mut buf, word);
        }
    }

    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

/// A loaded checkpoint: the training state, the embedded config text, its
/// digest and the digest of the checkpoint file itself.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub state: TrainState<f32>,
    pub config_text: String,
    pub config_digest: u64,
    pub file_digest: u64,
}

pub fn load_train_state(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file_digest = fnv1a64(&bytes);
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };

    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic, expected \"EMCK\"",
            path.display()
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let config_digest = r.u64("config digest")?;
    let cfg_len = r.u32("config length")? as usize;
    let config_text = String::from_utf8(r.take(cfg_len, "config text")?.to_vec())
        .map_err(|_| Error::Data(format!("{}: config text is not utf-8", path.display())))?;
    if fnv1a64(config_text.as_bytes()) != config_digest {
        return Err(Error::Data(format!(
            "{}: config digest does not match embedded config",
            path.display()
        )));
    }
    let step = r.u64("step")?;

    let n_params = r.u32("parameter count")? as usize;
    let mut speaker = ParamStore::new();
    let mut listener = ParamStore::new();
    for _ in 0..n_params {
        let (name, tensor) = r.section()?;
        if name.starts_with("speaker.") {
            speaker.insert(name, tensor);
        } else if name.starts_with("listener.") {
            listener.insert(name, tensor);
        } else {
            return Err(Error::Data(format!(
                "{}: parameter {name} belongs to neither agent",
                path.display()
            )));
        }
    }

    let eta = r.f64("ema weight")?;
    let n_ema = r.u32("ema count")? as usize;
    let mut ema_params = ParamStore::new();
    for _ in 0..n_ema {
        let (name, tensor) = r.section()?;
        ema_params.insert(name, tensor);
    }

    let adam_speaker = r.adam()?;
    let adam_listener = r.adam()?;

    let n_streams = r.u32("stream count")? as usize;
    let mut streams = std::collections::HashMap::new();
    for _ in 0..n_streams {
        let name = r.string("stream name")?;
        let mut words = [0u64; 4];
        for w in &mut words {
            *w = r.u64("stream state")?;
        }
        streams.insert(name, Stream::from_state(words));
    }
    if r.pos != bytes.len() {
        return Err(Error::Data(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    let mut stream_of = |name: &str| -> Result<Stream> {
        streams
            .remove(name)
            .ok_or_else(|| Error::Data(format!("{}: missing rng stream {name}", path.display())))
    };
    let state = TrainState {
        step,
        speaker,
        listener,
        ema: EmaState {
            eta,
            params: ema_params,
        },
        adam_speaker,
        adam_listener,
        streams: StreamSet {
            episode: stream_of("episode")?,
            speaker: stream_of("speaker")?,
            listener: stream_of("listener")?,
            channel: stream_of("channel")?,
        },
    };
    Ok(LoadedCheckpoint {
        state,
        config_text,
        config_digest,
        file_digest,
    })
}

// ---- writers ------------------------------------------------------------------

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    push_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn push_section(buf: &mut Vec<u8>, name: &str, tensor: &Tensor<f32>) {
    push_str(buf, name);
    push_u32(buf, tensor.shape().len() as u32);
    for &e in tensor.shape() {
        push_u32(buf, e as u32);
    }
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_adam(buf: &mut Vec<u8>, adam: &AdamState<f32>, store: &ParamStore<f32>) {
    push_u64(buf, adam.step);
    push_f64(buf, adam.cfg.lr);
    push_f64(buf, adam.cfg.beta1);
    push_f64(buf, adam.cfg.beta2);
    push_f64(buf, adam.cfg.eps);
    push_f64(buf, adam.cfg.weight_decay);
    let with_moments: Vec<&str> = store
        .names()
        .filter(|n| adam.moments(n).is_some())
        .collect();
    push_u32(buf, with_moments.len() as u32);
    for name in with_moments {
        let (m, v) = adam.moments(name).unwrap();
        push_str(buf, name);
        push_u32(buf, m.shape().len() as u32);
        for &e in m.shape() {
            push_u32(buf, e as u32);
        }
        for x in m.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for x in v.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

// ---- reader --------------------------------------------------------------------

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
    path: &'b Path,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!(
                "{}: truncated checkpoint while reading {what}",
                self.path.display()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Data(format!("{}: non-utf8 {what}", self.path.display())))
    }

    fn shape(&mut self) -> Result<(Vec<usize>, usize)> {
        let rank = self.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("tensor extent")? as usize);
        }
        let numel = shape.iter().product();
        Ok((shape, numel))
    }

    fn payload(&mut self, numel: usize) -> Result<Vec<f32>> {
        let raw = self.take(numel * 4, "tensor payload")?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn section(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.string("section name")?;
        let (shape, numel) = self.shape()?;
        let data = self.payload(numel)?;
        Ok((name, Tensor::new(shape, data)))
    }

    fn adam(&mut self) -> Result<AdamState<f32>> {
        let step = self.u64("adam step")?;
        let cfg = AdamConfig {
            lr: self.f64("adam lr")?,
            beta1: self.f64("adam beta1")?,
            beta2: self.f64("adam beta2")?,
            eps: self.f64("adam eps")?,
            weight_decay: self.f64("adam weight decay")?,
        };
        let mut adam = AdamState::new(cfg);
        adam.step = step;
        let n = self.u32("adam moment count")? as usize;
        for _ in 0..n {
            let name = self.string("adam moment name")?;
            let (shape, numel) = self.shape()?;
            let m = self.payload(numel)?;
            let v = self.payload(numel)?;
            adam.set_moments(&name, Tensor::new(shape.clone(), m), Tensor::new(shape, v));
        }
        Ok(adam)
    }
}
