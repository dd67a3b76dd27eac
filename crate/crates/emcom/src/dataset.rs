//! The object space: synthetic attribute-structured feature vectors,
//! ingestion of precomputed features, splits and episode sampling.
//!
//! Feature files use the EMCF layout (little-endian): magic `EMCF`,
//! u32 version = 1, u32 count, u32 dim, u8 flags (bit0 labels, bit1
//! attributes), `count * dim` f32 features, then `count` u32 labels when
//! flagged, then u32 `n_attrs` followed by `count * ceil(n_attrs / 8)`
//! attribute bitmap bytes when flagged. Bitmap bit `j` of an item lives at
//! byte `j / 8`, bit `j % 8` (LSB first).

use std::fs;
use std::path::Path;

use crate::rng::Stream;
use crate::{fnv1a64, Error, Result};

/// One object: a feature vector plus optional supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub class_label: Option<u32>,
    pub attributes: Option<Vec<bool>>,
}

/// Synthetic generator shape: `n_attrs` attributes with `values_per_attr`
/// values each, one-hot encoded with additive Gaussian jitter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttributeSpec {
    pub n_attrs: usize,
    pub values_per_attr: usize,
    pub jitter_sigma: f64,
}

impl AttributeSpec {
    /// Number of distinct attribute tuples.
    pub fn tuple_space(&self) -> usize {
        self.values_per_attr.pow(self.n_attrs as u32)
    }

    /// Width of the structured (one-hot) prefix.
    pub fn onehot_width(&self) -> usize {
        self.n_attrs * self.values_per_attr
    }
}

/// Indexed collection of feature vectors with equal dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f32>,
    labels: Option<Vec<u32>>,
    attr_bits: Option<AttrBits>,
    /// Generator description or source-file digest.
    pub meta: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttrBits {
    pub n_bits: usize,
    /// count * ceil(n_bits / 8) bytes, LSB-first within each byte.
    pub packed: Vec<u8>,
}

impl AttrBits {
    pub fn bytes_per_item(&self) -> usize {
        self.n_bits.div_ceil(8)
    }

    pub fn get(&self, item: usize, bit: usize) -> bool {
        let byte = self.packed[item * self.bytes_per_item() + bit / 8];
        byte >> (bit % 8) & 1 == 1
    }
}

impl Dataset {
    pub fn from_parts(
        dim: usize,
        features: Vec<f32>,
        labels: Option<Vec<u32>>,
        attr_bits: Option<AttrBits>,
        meta: String,
    ) -> Result<Dataset> {
        if dim == 0 || features.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::Data(format!(
                "feature payload of {} values is not a multiple of dim {dim}",
                features.len()
            )));
        }
        let count = features.len() / dim;
        if let Some(l) = &labels {
            if l.len() != count {
                return Err(Error::Data(format!(
                    "label count {} does not match item count {count}",
                    l.len()
                )));
            }
        }
        if let Some(a) = &attr_bits {
            if a.packed.len() != count * a.bytes_per_item() {
                return Err(Error::Data(format!(
                    "attribute bitmap of {} bytes does not match {count} items x {} bytes",
                    a.packed.len(),
                    a.bytes_per_item()
                )));
            }
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(Dataset {
            dim,
            features,
            labels,
            attr_bits,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn attr_bits(&self) -> Option<&AttrBits> {
        self.attr_bits.as_ref()
    }

    pub fn n_attr_bits(&self) -> usize {
        self.attr_bits.as_ref().map_or(0, |a| a.n_bits)
    }

    pub fn item(&self, i: usize) -> FeatureVector {
        FeatureVector {
            values: self.feature(i).to_vec(),
            class_label: self.label(i),
            attributes: self
                .attr_bits
                .as_ref()
                .map(|a| (0..a.n_bits).map(|j| a.get(i, j)).collect()),
        }
    }

    /// Number of distinct class labels, when labels are present.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| {
            let mut seen: Vec<u32> = l.clone();
            seen.sort_unstable();
            seen.dedup();
            seen.len()
        })
    }
}

/// Deterministic synthetic dataset: unique attribute tuples, one-hot blocks
/// with additive jitter on the structured prefix, zero padding up to `dim`.
/// The class label is the tuple's mixed-radix index; the attribute bitmap is
/// the exact one-hot pattern.
pub fn gen_synthetic(
    spec: AttributeSpec,
    dim: usize,
    n_objects: usize,
    seed: u64,
) -> Result<Dataset> {
    if spec.n_attrs == 0 || spec.values_per_attr == 0 {
        return Err(Error::Config(
            "attribute spec must have positive counts".into(),
        ));
    }
    if spec.jitter_sigma < 0.0 {
        return Err(Error::Config("jitter sigma must be nonnegative".into()));
    }
    if spec.onehot_width() > dim {
        return Err(Error::Config(format!(
            "one-hot width {} exceeds feature dim {dim}",
            spec.onehot_width()
        )));
    }
    let space = spec.tuple_space();
    if n_objects == 0 {
        return Err(Error::Data("empty dataset".into()));
    }
    if n_objects > space {
        return Err(Error::Data(format!(
            "requested {n_objects} objects but only {space} distinct attribute tuples exist"
        )));
    }

    let mut rng = Stream::derive(seed, "gen_synthetic");
    let tuples = sample_unique_tuples(&spec, n_objects, &mut rng);

    let width = spec.onehot_width();
    let mut features = Vec::with_capacity(n_objects * dim);
    let mut labels = Vec::with_capacity(n_objects);
    let bytes_per_item = width.div_ceil(8);
    let mut packed = vec![0u8; n_objects * bytes_per_item];
    for (obj, tuple) in tuples.iter().enumerate() {
        let mut row = vec![0.0f32; dim];
        let mut label: u64 = 0;
        for (a, &v) in tuple.iter().enumerate() {
            let bit = a * spec.values_per_attr + v;
            row[bit] = 1.0;
            packed[obj * bytes_per_item + bit / 8] |= 1 << (bit % 8);
            label = label * spec.values_per_attr as u64 + v as u64;
        }
        if spec.jitter_sigma > 0.0 {
            for coord in row.iter_mut().take(width) {
                *coord += (rng.next_normal() * spec.jitter_sigma) as f32;
            }
        }
        features.extend_from_slice(&row);
        labels.push(label as u32);
    }

    Dataset::from_parts(
        dim,
        features,
        Some(labels),
        Some(AttrBits {
            n_bits: width,
            packed,
        }),
        format!(
            "synthetic(attrs={}, values={}, jitter={}, objects={n_objects}, seed={seed})",
            spec.n_attrs, spec.values_per_attr, spec.jitter_sigma
        ),
    )
}

fn sample_unique_tuples(
    spec: &AttributeSpec,
    n_objects: usize,
    rng: &mut Stream,
) -> Vec<Vec<usize>> {
    let space = spec.tuple_space();
    let decode = |mut rank: usize| -> Vec<usize> {
        let mut tuple = vec![0usize; spec.n_attrs];
        for slot in tuple.iter_mut().rev() {
            *slot = rank % spec.values_per_attr;
            rank /= spec.values_per_attr;
        }
        tuple
    };
    if n_objects * 2 >= space {
        // Dense request: enumerate and shuffle.
        let mut ranks: Vec<usize> = (0..space).collect();
        for i in (1..ranks.len()).rev() {
            let j = rng.next_below(i + 1);
            ranks.swap(i, j);
        }
        ranks.truncate(n_objects);
        ranks.into_iter().map(decode).collect()
    } else {
        // Sparse request: rejection-sample distinct ranks.
        let mut seen = std::collections::HashSet::with_capacity(n_objects * 2);
        let mut out = Vec::with_capacity(n_objects);
        while out.len() < n_objects {
            let rank = rng.next_below(space);
            if seen.insert(rank) {
                out.push(decode(rank));
            }
        }
        out
    }
}

// ---- EMCF files -------------------------------------------------------------

const EMCF_MAGIC: &[u8; 4] = b"EMCF";
const EMCF_VERSION: u32 = 1;

/// Serialize a dataset in the EMCF layout.
pub fn save_features(ds: &Dataset, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(16 + ds.features.len() * 4);
    buf.extend_from_slice(EMCF_MAGIC);
    buf.extend_from_slice(&EMCF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.dim as u32).to_le_bytes());
    let mut flags = 0u8;
    if ds.labels.is_some() {
        flags |= 1;
    }
    if ds.attr_bits.is_some() {
        flags |= 2;
    }
    buf.push(flags);
    for v in &ds.features {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &ds.labels {
        for l in labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
    }
    if let Some(attrs) = &ds.attr_bits {
        buf.extend_from_slice(&(attrs.n_bits as u32).to_le_bytes());
        buf.extend_from_slice(&attrs.packed);
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

/// Load an EMCF feature file; the dataset's `meta` records the file digest.
pub fn load_features(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = fnv1a64(&bytes);
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cur.take(4, "magic")?;
    if magic != EMCF_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {:02x?}, expected \"EMCF\"",
            path.display(),
            magic
        )));
    }
    let version = cur.u32("version")?;
    if version != EMCF_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let count = cur.u32("count")? as usize;
    let dim = cur.u32("dim")? as usize;
    let flags = cur.u8("flags")?;
    if count == 0 || dim == 0 {
        return Err(Error::Data(format!("{}: empty dataset", path.display())));
    }
    let mut features = Vec::with_capacity(count * dim);
    for _ in 0..count * dim {
        features.push(f32::from_le_bytes(
            cur.take(4, "feature payload")?.try_into().unwrap(),
        ));
    }
    let labels = if flags & 1 != 0 {
        let mut l = Vec::with_capacity(count);
        for _ in 0..count {
            l.push(cur.u32("label payload")?);
        }
        Some(l)
    } else {
        None
    };
    let attr_bits = if flags & 2 != 0 {
        let n_bits = cur.u32("attribute count")? as usize;
        if n_bits == 0 {
            return Err(Error::Data(format!(
                "{}: attribute flag set but n_attrs is zero",
                path.display()
            )));
        }
        let packed = cur
            .take(count * n_bits.div_ceil(8), "attribute bitmaps")?
            .to_vec();
        Some(AttrBits { n_bits, packed })
    } else {
        None
    };
    if cur.pos != bytes.len() {
        return Err(Error::Data(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() - cur.pos
        )));
    }
    Dataset::from_parts(
        dim,
        features,
        labels,
        attr_bits,
        format!("emcf:{digest:016x}"),
    )
    .map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!(
                "truncated payload while reading {what} ({} bytes left, {n} needed)",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

// ---- splits -------------------------------------------------------------------

/// Disjoint, exhaustive, seed-deterministic permutation split.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Data(format!(
            "fraction {train_fraction} leaves an empty side for {n} items"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = Stream::derive(seed, "split");
    for i in (1..n).rev() {
        let j = rng.next_below(i + 1);
        perm.swap(i, j);
    }
    let take = |idxs: &[usize], side: &str| -> Dataset {
        let mut features = Vec::with_capacity(idxs.len() * ds.dim);
        let mut labels = ds.labels.as_ref().map(|_| Vec::with_capacity(idxs.len()));
        let mut packed = ds
            .attr_bits
            .as_ref()
            .map(|a| Vec::with_capacity(idxs.len() * a.bytes_per_item()));
        for &i in idxs {
            features.extend_from_slice(ds.feature(i));
            if let (Some(out), Some(src)) = (&mut labels, &ds.labels) {
                out.push(src[i]);
            }
            if let (Some(out), Some(src)) = (&mut packed, &ds.attr_bits) {
                let b = src.bytes_per_item();
                out.extend_from_slice(&src.packed[i * b..(i + 1) * b]);
            }
        }
        Dataset {
            dim: ds.dim,
            features,
            labels,
            attr_bits: ds.attr_bits.as_ref().map(|a| AttrBits {
                n_bits: a.n_bits,
                packed: packed.unwrap(),
            }),
            meta: format!(
                "{} [{side} split, fraction {train_fraction}, seed {seed}]",
                ds.meta
            ),
        }
    };
    Ok((
        take(&perm[..n_train], "train"),
        take(&perm[n_train..], "test"),
    ))
}

// ---- episodes -------------------------------------------------------------------

/// One game: candidate indices into a dataset, with the target at
/// `target_pos`. Distractors are distinct from the target (and from each
/// other unless replacement sampling is enabled).
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeInputs {
    pub candidates: Vec<usize>,
    pub target_pos: usize,
}

impl EpisodeInputs {
    pub fn target_index(&self) -> usize {
        self.candidates[self.target_pos]
    }
}

/// Sample one episode: uniform target, distractors uniform over the dataset,
/// target placed at a uniform-random position.
pub fn sample_episode(
    ds: &Dataset,
    c_size: usize,
    rng: &mut Stream,
    with_replacement: bool,
) -> Result<EpisodeInputs> {
    if c_size < 2 {
        return Err(Error::Config(format!(
            "candidate set size must be >= 2, got {c_size}"
        )));
    }
    let n = ds.len();
    if !with_replacement && c_size > n {
        return Err(Error::Data(format!(
            "candidate set size {c_size} exceeds dataset size {n} without replacement"
        )));
    }
    let target = rng.next_below(n);
    let target_pos = rng.next_below(c_size);
    let mut candidates = Vec::with_capacity(c_size);
    if with_replacement {
        for pos in 0..c_size {
            if pos == target_pos {
                candidates.push(target);
            } else {
                candidates.push(rng.next_below(n));
            }
        }
    } else if c_size * 2 >= n {
        // Dense draw: partial Fisher-Yates over all non-target indices.
        let mut pool: Vec<usize> = (0..n).filter(|&i| i != target).collect();
        for i in 0..(c_size - 1) {
            let j = i + rng.next_below(pool.len() - i);
            pool.swap(i, j);
        }
        let mut distractors = pool[..c_size - 1].iter().copied();
        for pos in 0..c_size {
            if pos == target_pos {
                candidates.push(target);
            } else {
                candidates.push(distractors.next().unwrap());
            }
        }
    } else {
        // Sparse draw: rejection sampling with a linear duplicate check
        // (candidate sets are small).
        for pos in 0..c_size {
            if pos == target_pos {
                candidates.push(target);
                continue;
            }
            loop {
                let pick = rng.next_below(n);
                if pick != target && !candidates.contains(&pick) {
                    candidates.push(pick);
                    break;
                }
            }
        }
    }
    Ok(EpisodeInputs {
        candidates,
        target_pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_spec() -> AttributeSpec {
        AttributeSpec {
            n_attrs: 4,
            values_per_attr: 8,
            jitter_sigma: 0.05,
        }
    }

    #[test]
    fn four_objects_have_one_hot_geometry() {
        let spec = AttributeSpec {
            n_attrs: 2,
            values_per_attr: 2,
            jitter_sigma: 0.0,
        };
        let ds = gen_synthetic(spec, 8, 4, 1).unwrap();
        assert_eq!(ds.len(), 4);
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let d2: f32 = ds
                    .feature(i)
                    .iter()
                    .zip(ds.feature(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let d = d2.sqrt();
                let near_sqrt2 = (d - 2.0f32.sqrt()).abs() < 1e-6;
                let near_two = (d - 2.0).abs() < 1e-6;
                assert!(near_sqrt2 || near_two, "unexpected pairwise distance {d}");
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = gen_synthetic(desk_spec(), 64, 512, 9).unwrap();
        let b = gen_synthetic(desk_spec(), 64, 512, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(desk_spec(), 64, 512, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tuples_are_unique_and_labels_match() {
        let ds = gen_synthetic(desk_spec(), 64, 4096, 3).unwrap();
        let mut labels: Vec<u32> = (0..ds.len()).map(|i| ds.label(i).unwrap()).collect();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 4096, "attribute tuples must be unique");
    }

    #[test]
    fn nearest_neighbor_recovers_attribute_tuple() {
        let spec = AttributeSpec {
            n_attrs: 4,
            values_per_attr: 8,
            jitter_sigma: 0.1,
        };
        let ds = gen_synthetic(spec, 64, 1000, 5).unwrap();
        // Brute-force nearest neighbor against the clean one-hot prototypes.
        let width = spec.onehot_width();
        let mut correct = 0;
        for i in 0..ds.len() {
            let x = ds.feature(i);
            let mut best = (f32::INFINITY, 0u32);
            for j in 0..ds.len() {
                let mut proto = vec![0.0f32; width];
                let label = ds.label(j).unwrap();
                let mut rank = label as usize;
                for a in (0..spec.n_attrs).rev() {
                    let v = rank % spec.values_per_attr;
                    rank /= spec.values_per_attr;
                    proto[a * spec.values_per_attr + v] = 1.0;
                }
                let d2: f32 = x[..width]
                    .iter()
                    .zip(&proto)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2 < best.0 {
                    best = (d2, label);
                }
            }
            if best.1 == ds.label(i).unwrap() {
                correct += 1;
            }
        }
        assert_eq!(
            correct,
            ds.len(),
            "noise margin must not flip nearest neighbors"
        );
    }

    #[test]
    fn too_many_objects_is_rejected() {
        let spec = AttributeSpec {
            n_attrs: 2,
            values_per_attr: 3,
            jitter_sigma: 0.0,
        };
        let err = gen_synthetic(spec, 16, 10, 1).unwrap_err();
        assert!(err.to_string().contains("distinct attribute tuples"));
    }

    #[test]
    fn emcf_round_trip_is_bit_exact() {
        let ds = gen_synthetic(desk_spec(), 64, 128, 2).unwrap();
        let dir = std::env::temp_dir().join("emcom_test_emcf");
        fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.emcf");
        let p2 = dir.join("b.emcf");
        save_features(&ds, &p1).unwrap();
        let loaded = load_features(&p1).unwrap();
        save_features(&loaded, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(loaded.feature(5), ds.feature(5));
        assert_eq!(loaded.label(7), ds.label(7));
        assert!(loaded.meta.starts_with("emcf:"));
    }

    #[test]
    fn truncated_file_reports_truncation() {
        let ds = gen_synthetic(desk_spec(), 64, 16, 2).unwrap();
        let dir = std::env::temp_dir().join("emcom_test_emcf");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("trunc.emcf");
        save_features(&ds, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_features(&p).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }

    #[test]
    fn bad_magic_and_zero_count_are_distinct_errors() {
        let dir = std::env::temp_dir().join("emcom_test_emcf");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("bad.emcf");
        fs::write(&p, b"NOPE").unwrap();
        let err = load_features(&p).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");

        let mut buf = Vec::new();
        buf.extend_from_slice(b"EMCF");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes()); // count = 0
        buf.extend_from_slice(&4u32.to_le_bytes());
        buf.push(0);
        fs::write(&p, &buf).unwrap();
        let err = load_features(&p).unwrap_err();
        assert!(err.to_string().contains("empty dataset"), "{err}");
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = gen_synthetic(desk_spec(), 64, 4, 1).unwrap();
        let (train, test) = split(&ds, 0.75, 1).unwrap();
        assert_eq!((train.len(), test.len()), (3, 1));

        let ds = gen_synthetic(desk_spec(), 64, 200, 1).unwrap();
        let (train, test) = split(&ds, 0.8, 7).unwrap();
        let mut all: Vec<Vec<u8>> = (0..ds.len())
            .map(|i| ds.feature(i).iter().flat_map(|v| v.to_le_bytes()).collect())
            .collect();
        let mut joined: Vec<Vec<u8>> = (0..train.len())
            .map(|i| {
                train
                    .feature(i)
                    .iter()
                    .flat_map(|v| v.to_le_bytes())
                    .collect()
            })
            .chain((0..test.len()).map(|i| {
                test.feature(i)
                    .iter()
                    .flat_map(|v| v.to_le_bytes())
                    .collect()
            }))
            .collect();
        all.sort();
        joined.sort();
        assert_eq!(all, joined, "splits must partition the dataset");
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let ds = gen_synthetic(desk_spec(), 64, 10, 1).unwrap();
        assert!(split(&ds, 0.01, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn different_seeds_permute_differently() {
        let ds = gen_synthetic(desk_spec(), 64, 1000, 1).unwrap();
        let (a, _) = split(&ds, 0.5, 1).unwrap();
        let (b, _) = split(&ds, 0.5, 2).unwrap();
        assert_ne!(a.features, b.features);
    }

    #[test]
    fn episode_invariants_hold() {
        let ds = gen_synthetic(desk_spec(), 64, 256, 4).unwrap();
        let mut rng = Stream::seed_from(10);
        for _ in 0..200 {
            let ep = sample_episode(&ds, 16, &mut rng, false).unwrap();
            assert_eq!(ep.candidates.len(), 16);
            let target = ep.target_index();
            assert_eq!(
                ep.candidates.iter().filter(|&&c| c == target).count(),
                1,
                "target must appear exactly once"
            );
            let mut sorted = ep.candidates.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(
                sorted.len(),
                16,
                "no duplicate candidates without replacement"
            );
        }
    }

    #[test]
    fn exhaustive_candidates_are_a_permutation() {
        let ds = gen_synthetic(desk_spec(), 64, 16, 4).unwrap();
        let mut rng = Stream::seed_from(11);
        let ep = sample_episode(&ds, 16, &mut rng, false).unwrap();
        let mut got = ep.candidates.clone();
        got.sort_unstable();
        assert_eq!(got, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn pair_episode_has_one_distinct_distractor() {
        let ds = gen_synthetic(desk_spec(), 64, 64, 4).unwrap();
        let mut rng = Stream::seed_from(12);
        for _ in 0..100 {
            let ep = sample_episode(&ds, 2, &mut rng, false).unwrap();
            assert_eq!(ep.candidates.len(), 2);
            assert_ne!(ep.candidates[0], ep.candidates[1]);
        }
    }

    #[test]
    fn oversized_candidate_set_is_rejected() {
        let ds = gen_synthetic(desk_spec(), 64, 8, 4).unwrap();
        let mut rng = Stream::seed_from(13);
        assert!(sample_episode(&ds, 9, &mut rng, false).is_err());
        assert!(sample_episode(&ds, 9, &mut rng, true).is_ok());
    }

    #[test]
    fn target_position_is_uniform() {
        // Chi-square against uniform positions: 8 slots, dof = 7, critical
        // value 18.475 at p = 0.01.
        let ds = gen_synthetic(desk_spec(), 64, 64, 4).unwrap();
        let mut rng = Stream::seed_from(14);
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let ep = sample_episode(&ds, 8, &mut rng, false).unwrap();
            counts[ep.target_pos] += 1;
        }
        let expected = n as f64 / 8.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(
            stat < 18.475,
            "chi-square statistic {stat} rejects uniformity"
        );
    }
}
