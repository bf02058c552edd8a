//! Datasets, prior-index splits and mini-batch sampling.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Row-major feature matrix with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    input_dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, input_dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::domain("input_dim and num_classes must be positive"));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::contract(format!(
                "{} features do not form {} rows of width {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y >= num_classes) {
            return Err(Error::domain(format!("label {} at row {i} is out of range", labels[i])));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite feature at row {}", i / input_dim)));
        }
        Ok(Dataset { features, input_dim, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.input_dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            input_dim: self.input_dim,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// `n` rows chosen uniformly without replacement, kept in file order.
    pub fn random_subset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::domain(format!("subset of {n} rows requested from {}", self.len())));
        }
        let mut rng = rng::stream(seed, rng::streams::DATA);
        let mut rows = index::sample(&mut rng, self.len(), n).into_vec();
        rows.sort_unstable();
        Ok(self.subset(&rows))
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    /// Writes `index,label,f0,f1,...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = ["index".to_string(), "label".to_string()]
            .into_iter()
            .chain((0..self.input_dim).map(|j| format!("f{j}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            write!(out, "{i},{}", self.labels[i])?;
            for v in self.row(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, num_classes: Option<usize>) -> Result<Dataset> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Format { offset: 0, msg: "empty CSV".into() })??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "index" || cols[1] != "label" {
            return Err(Error::Format { offset: 0, msg: format!("unexpected header `{header}`") });
        }
        let input_dim = cols.len() - 2;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut offset = header.len() as u64 + 1;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                offset += line.len() as u64 + 1;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = |msg: String| Error::Format { offset, msg };
            if fields.len() != cols.len() {
                return Err(bad(format!("expected {} fields, found {}", cols.len(), fields.len())));
            }
            labels.push(fields[1].parse::<usize>().map_err(|e| bad(format!("label: {e}")))?);
            for f in &fields[2..] {
                features.push(f.parse::<f64>().map_err(|e| bad(format!("feature: {e}")))?);
            }
            offset += line.len() as u64 + 1;
        }
        let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |&m| m + 1));
        Dataset::new(features, input_dim, labels, k)
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format { offset: self.pos as u64, msg: format!("truncated while reading {what}") })?;
        self.pos = end;
        Ok(u32::from_be_bytes(slice.try_into().unwrap()))
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let slice = self.bytes.get(self.pos..self.pos + len).ok_or_else(|| Error::Format {
            offset: self.bytes.len() as u64,
            msg: format!("truncated {what}: need {len} bytes from offset {}", self.pos),
        })?;
        self.pos += len;
        Ok(slice)
    }
}

/// Parse IDX image and label buffers (big-endian headers, magic 2051 / 2049).
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut img = ByteReader { bytes: images, pos: 0 };
    let magic = img.u32_be("image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("image magic {magic:#010x}, expected 0x00000803") });
    }
    let count = img.u32_be("image count")? as usize;
    let rows = img.u32_be("row count")? as usize;
    let cols = img.u32_be("column count")? as usize;
    let pixels = img.take(count * rows * cols, "image data")?;

    let mut lab = ByteReader { bytes: labels, pos: 0 };
    let magic = lab.u32_be("label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("label magic {magic:#010x}, expected 0x00000801") });
    }
    let label_count = lab.u32_be("label count")? as usize;
    if label_count != count {
        return Err(Error::Format { offset: 4, msg: format!("{label_count} labels for {count} images") });
    }
    let raw_labels = lab.take(count, "label data")?;

    let features = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1).max(2);
    Dataset::new(features, rows * cols, labels, num_classes)
}

pub fn load_idx(image_path: &Path, label_path: &Path) -> Result<Dataset> {
    parse_idx(&std::fs::read(image_path)?, &std::fs::read(label_path)?)
}

/// Encode `(images, labels)` as IDX buffers. Pixels must already be bytes.
pub fn encode_idx(pixels: &[u8], rows: u32, cols: u32, labels: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    let per = (rows * cols) as usize;
    if per == 0 || pixels.len() != per * labels.len() {
        return Err(Error::contract("pixel buffer does not match label count and image shape"));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    img.extend_from_slice(&rows.to_be_bytes());
    img.extend_from_slice(&cols.to_be_bytes());
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    Ok((img, lab))
}

/// Deterministic class centre for the blob generator.
///
/// Two classes sit at `±(s/2)·e₀`; otherwise class `c` sits at
/// `±(s/√2)·e_{c mod dim}` so distinct centres are at least `s` apart.
pub fn blob_center(class: usize, input_dim: usize, num_classes: usize, separation: f64) -> Vec<f64> {
    let mut c = vec![0.0; input_dim];
    if num_classes == 2 {
        c[0] = if class == 0 { -separation / 2.0 } else { separation / 2.0 };
    } else {
        let sign = if class < input_dim { 1.0 } else { -1.0 };
        c[class % input_dim] = sign * separation / std::f64::consts::SQRT_2;
    }
    c
}

/// Isotropic unit-variance Gaussian clusters; row `i` has label `i mod k`.
pub fn synth_blobs(n: usize, input_dim: usize, num_classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    synth_blobs_from(n, input_dim, num_classes, separation, &mut rng::stream(seed, rng::streams::DATA))
}

/// [`synth_blobs`] drawing from a caller-owned stream.
pub fn synth_blobs_from(
    n: usize,
    input_dim: usize,
    num_classes: usize,
    separation: f64,
    rng: &mut Stream,
) -> Result<Dataset> {
    if num_classes < 2 || input_dim == 0 || n < num_classes {
        return Err(Error::domain(format!(
            "blobs need num_classes ≥ 2, input_dim ≥ 1 and n ≥ num_classes (n = {n}, dim = {input_dim}, k = {num_classes})"
        )));
    }
    if num_classes > 2 && num_classes > 2 * input_dim {
        return Err(Error::domain("blobs place at most 2·input_dim distinct centres"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::domain(format!("separation must be non-negative, got {separation}")));
    }
    let centers: Vec<Vec<f64>> = (0..num_classes).map(|c| blob_center(c, input_dim, num_classes, separation)).collect();
    let mut features = Vec::with_capacity(n * input_dim);
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    for &y in &labels {
        for &c in &centers[y] {
            features.push(c + rng::standard_normal(rng));
        }
    }
    Dataset::new(features, input_dim, labels, num_classes)
}

/// Replace the labels of `round(n·portion)` rows, chosen without replacement,
/// by labels drawn uniformly over all classes. Returns the corrupted copy and
/// the sorted list of resampled rows.
pub fn corrupt_labels(ds: &Dataset, portion: f64, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if !(0.0..=1.0).contains(&portion) {
        return Err(Error::domain(format!("portion must lie in [0, 1], got {portion}")));
    }
    let count = (ds.len() as f64 * portion).round() as usize;
    let mut rng = rng::stream(seed, rng::streams::LABELS);
    let mut rows = index::sample(&mut rng, ds.len(), count).into_vec();
    rows.sort_unstable();
    let mut labels = ds.labels.clone();
    for &r in &rows {
        labels[r] = rng.random_range(0..ds.num_classes);
    }
    let out = Dataset { labels, ..ds.clone() };
    Ok((out, rows))
}

/// Prior index sequence `J` and its sorted complement `I`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSplit {
    n: usize,
    prior: Vec<usize>,
    complement: Vec<usize>,
}

impl IndexSplit {
    /// Build from an explicit sequence of distinct prior indices.
    pub fn from_prior(n: usize, prior: Vec<usize>) -> Result<Self> {
        if prior.len() >= n {
            return Err(Error::domain(format!("prior size m = {} must be < n = {n}", prior.len())));
        }
        let mut member = vec![false; n];
        for &j in &prior {
            if j >= n {
                return Err(Error::domain(format!("prior index {j} out of range for n = {n}")));
            }
            if std::mem::replace(&mut member[j], true) {
                return Err(Error::contract(format!("prior index {j} repeated")));
            }
        }
        let complement = (0..n).filter(|&i| !member[i]).collect();
        Ok(IndexSplit { n, prior, complement })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.prior.len()
    }

    /// `J` as a sequence.
    pub fn prior(&self) -> &[usize] {
        &self.prior
    }

    /// `I = [n] \ set(J)`, ascending.
    pub fn complement(&self) -> &[usize] {
        &self.complement
    }

    pub fn membership(&self) -> Vec<bool> {
        let mut member = vec![false; self.n];
        for &j in &self.prior {
            member[j] = true;
        }
        member
    }
}

/// `m` indices drawn uniformly from `[n]` without replacement, in random order.
pub fn sample_prior_indices(n: usize, m: usize, seed: u64) -> Result<IndexSplit> {
    if m >= n {
        return Err(Error::domain(format!("prior size m = {m} must be < n = {n}")));
    }
    let mut rng = rng::stream(seed, rng::streams::PRIOR_SPLIT);
    IndexSplit::from_prior(n, index::sample(&mut rng, n, m).into_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BatchMode {
    /// distinct indices from `[n]` (floored SGD)
    WithoutReplacement,
    /// i.i.d. uniform indices, duplicates allowed (SGLD)
    WithReplacement,
    /// fixed counts drawn without replacement from `I` and from `J`
    Stratified { from_complement: usize, from_prior: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub size: usize,
    pub mode: BatchMode,
}

impl BatchSpec {
    pub fn validate(&self, split: &IndexSplit) -> Result<()> {
        if self.size == 0 {
            return Err(Error::domain("batch size must be at least 1"));
        }
        match self.mode {
            BatchMode::WithoutReplacement if self.size > split.n() => {
                Err(Error::domain(format!("batch of {} distinct indices from n = {}", self.size, split.n())))
            }
            BatchMode::Stratified { from_complement, from_prior } => {
                if from_complement + from_prior != self.size {
                    return Err(Error::domain("stratified counts must sum to the batch size"));
                }
                if from_complement > split.complement().len() || from_prior > split.m() {
                    return Err(Error::domain(format!(
                        "stratified counts ({from_complement}, {from_prior}) exceed split sizes ({}, {})",
                        split.complement().len(),
                        split.m()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

pub fn sample_batch(split: &IndexSplit, spec: &BatchSpec, rng: &mut Stream) -> Result<Vec<usize>> {
    spec.validate(split)?;
    Ok(match spec.mode {
        BatchMode::WithoutReplacement => index::sample(rng, split.n(), spec.size).into_vec(),
        BatchMode::WithReplacement => (0..spec.size).map(|_| rng.random_range(0..split.n())).collect(),
        BatchMode::Stratified { from_complement, from_prior } => {
            let mut batch: Vec<usize> = index::sample(rng, split.complement().len(), from_complement)
                .into_iter()
                .map(|i| split.complement()[i])
                .collect();
            batch.extend(index::sample(rng, split.m(), from_prior).into_iter().map(|i| split.prior()[i]));
            batch
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        // four 2×2 images
        let pixels = [0u8, 255, 128, 1, 10, 20, 30, 40, 255, 255, 0, 0, 7, 8, 9, 250];
        encode_idx(&pixels, 2, 2, &[3, 0, 9, 1]).unwrap()
    }

    #[test]
    fn idx_fixture_round_trip() {
        let (img, lab) = fixture();
        let ds = parse_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.input_dim(), 4);
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.row(0), &[0.0, 1.0, 128.0 / 255.0, 1.0 / 255.0]);
        assert_eq!(ds.row(3)[3], 250.0 / 255.0);
        assert_eq!(ds.labels(), &[3, 0, 9, 1]);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let (mut img, lab) = fixture();
        img[3] = 0x02;
        match parse_idx(&img, &lab) {
            Err(Error::Format { offset: 0, msg }) => assert!(msg.contains("magic")),
            other => panic!("{other:?}"),
        }
        let (img, lab) = fixture();
        let truncated = &img[..img.len() - 3];
        assert!(matches!(parse_idx(truncated, &lab), Err(Error::Format { .. })));
        let (_, short) = encode_idx(&[0; 12], 2, 2, &[0, 1, 2]).unwrap();
        assert!(matches!(parse_idx(&img, &short), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let ds = synth_blobs(12, 3, 3, 2.0, 5).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index,label,f0,f1,f2\n"));
        let back = Dataset::read_csv(&buf[..], Some(3)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn blobs_are_reproducible() {
        let a = synth_blobs(100, 2, 2, 4.0, 9).unwrap();
        let b = synth_blobs(100, 2, 2, 4.0, 9).unwrap();
        assert_eq!(a.features(), b.features());
        assert_ne!(a.features(), synth_blobs(100, 2, 2, 4.0, 10).unwrap().features());
        assert!(synth_blobs(1, 2, 2, 1.0, 0).is_err());
    }

    #[test]
    fn corruption_counts() {
        let ds = synth_blobs(100, 5, 10, 1.0, 1).unwrap();
        let (same, rows) = corrupt_labels(&ds, 0.0, 3).unwrap();
        assert!(rows.is_empty());
        assert_eq!(same, ds);
        let (half, rows) = corrupt_labels(&ds, 0.5, 3).unwrap();
        assert_eq!(rows.len(), 50);
        for i in 0..ds.len() {
            if !rows.contains(&i) {
                assert_eq!(half.label(i), ds.label(i));
            }
        }
    }

    #[test]
    fn split_partition() {
        let s = sample_prior_indices(10, 4, 2).unwrap();
        assert_eq!(s.m(), 4);
        let mut all: Vec<usize> = s.prior().iter().chain(s.complement()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let empty = sample_prior_indices(5, 0, 0).unwrap();
        assert_eq!(empty.complement(), &[0, 1, 2, 3, 4]);
        assert!(sample_prior_indices(5, 5, 0).is_err());
        assert!(IndexSplit::from_prior(5, vec![1, 1]).is_err());
        assert_eq!(sample_prior_indices(50, 20, 7).unwrap(), sample_prior_indices(50, 20, 7).unwrap());
    }

    #[test]
    fn batches() {
        let split = sample_prior_indices(20, 10, 1).unwrap();
        let mut rng = rng::stream(1, 3);
        let mut full =
            sample_batch(&split, &BatchSpec { size: 20, mode: BatchMode::WithoutReplacement }, &mut rng).unwrap();
        full.sort_unstable();
        assert_eq!(full, (0..20).collect::<Vec<_>>());
        let strat = BatchSpec { size: 6, mode: BatchMode::Stratified { from_complement: 2, from_prior: 4 } };
        let b = sample_batch(&split, &strat, &mut rng).unwrap();
        let member = split.membership();
        assert_eq!(b.iter().filter(|&&i| member[i]).count(), 4);
        let too_many = BatchSpec { size: 12, mode: BatchMode::Stratified { from_complement: 1, from_prior: 11 } };
        assert!(sample_batch(&split, &too_many, &mut rng).is_err());
    }
}
