//! The voxel x time data model.
//!
//! A [`VTDataset`] holds one row per voxel and one column per acquired brain
//! volume, the labelled columns of the experiment design and a voxel ordering
//! in which consecutive entries are spatial neighbours.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decode::hrf_kernel;
use crate::rng::{rng_from_seed, stage_rng};
use crate::{Error, ParseError, Result};

/// Experiment phase of a labelled column. Encoding samples train the
/// classifier, retrieval samples test it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Encode,
    Retrieve,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Encode => "encode",
            Phase::Retrieve => "retrieve",
        })
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encode" => Ok(Phase::Encode),
            "retrieve" => Ok(Phase::Retrieve),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub column: usize,
    pub class: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VTDataset {
    values: Array2<f64>,
    tr_seconds: f64,
    voxel_order: Vec<usize>,
    labels: Vec<Label>,
}

impl VTDataset {
    pub fn new(
        values: Array2<f64>,
        tr_seconds: f64,
        voxel_order: Vec<usize>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        check_invariants(values.nrows(), values.ncols(), tr_seconds, &voxel_order, &labels)
            .map_err(Error::Contract)?;
        Ok(Self {
            values,
            tr_seconds,
            voxel_order,
            labels,
        })
    }

    /// Dataset with identity voxel order.
    pub fn with_identity_order(values: Array2<f64>, tr_seconds: f64, labels: Vec<Label>) -> Result<Self> {
        let order = (0..values.nrows()).collect();
        Self::new(values, tr_seconds, order, labels)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }

    pub fn voxel_order(&self) -> &[usize] {
        &self.voxel_order
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Number of voxels.
    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    /// Number of time points.
    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn labels_in(&self, phase: Phase) -> impl Iterator<Item = &Label> + '_ {
        self.labels.iter().filter(move |l| l.phase == phase)
    }

    /// One past the largest class id.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|l| l.class + 1).max().unwrap_or(0)
    }
}

fn check_invariants(
    m: usize,
    n: usize,
    tr_seconds: f64,
    voxel_order: &[usize],
    labels: &[Label],
) -> Result<(), String> {
    if m == 0 || n == 0 {
        return Err(format!("matrix must be non-empty, got {m}x{n}"));
    }
    if !(tr_seconds.is_finite() && tr_seconds > 0.0) {
        return Err(format!("tr_seconds must be positive, got {tr_seconds}"));
    }
    if voxel_order.len() != m {
        return Err(format!(
            "voxel_order has {} entries for {m} voxels",
            voxel_order.len()
        ));
    }
    let mut seen = vec![false; m];
    for &v in voxel_order {
        if v >= m || std::mem::replace(&mut seen[v], true) {
            return Err(format!("voxel_order is not a permutation of 0..{m}"));
        }
    }
    let mut columns = BTreeSet::new();
    for label in labels {
        if label.column >= n {
            return Err(format!("label column {} out of range 0..{n}", label.column));
        }
        if !columns.insert(label.column) {
            return Err(format!("label column {} appears twice", label.column));
        }
    }
    Ok(())
}

// --- synthetic data -------------------------------------------------------

/// Length of the HRF bump injected by the generator, in samples.
pub const SYNTH_HRF_SPAN: usize = 6;
/// Minimum distance between consecutive labelled columns.
pub const MIN_LABEL_SPACING: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    pub num_classes: usize,
    pub samples_per_class_per_phase: usize,
    pub noise_sigma: f64,
    pub voxels_per_class: usize,
    pub hrf_amplitude: f64,
    pub tr_seconds: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            m: 64,
            n: 1200,
            num_classes: 10,
            samples_per_class_per_phase: 12,
            noise_sigma: 1.0,
            voxels_per_class: 6,
            hrf_amplitude: 2.0,
            tr_seconds: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn total_labels(&self) -> usize {
        self.num_classes * self.samples_per_class_per_phase * 2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("n", self.n),
            ("num_classes", self.num_classes),
            ("samples_per_class_per_phase", self.samples_per_class_per_phase),
            ("voxels_per_class", self.voxels_per_class),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma must be nonnegative"));
        }
        if !(self.hrf_amplitude.is_finite() && self.hrf_amplitude > 0.0) {
            return Err(Error::config("hrf_amplitude must be positive"));
        }
        if !(self.tr_seconds.is_finite() && self.tr_seconds > 0.0) {
            return Err(Error::config("tr_seconds must be positive"));
        }
        if self.voxels_per_class * self.num_classes > self.m {
            return Err(Error::config(format!(
                "voxels_per_class x num_classes = {} exceeds m = {}",
                self.voxels_per_class * self.num_classes,
                self.m
            )));
        }
        let labels = self.total_labels();
        if self.n < SYNTH_HRF_SPAN || MIN_LABEL_SPACING * labels > self.n - SYNTH_HRF_SPAN {
            return Err(Error::config(format!(
                "{labels} labels need n >= {} for a spacing of {MIN_LABEL_SPACING} columns plus a \
                 {SYNTH_HRF_SPAN}-sample tail, got n = {}",
                MIN_LABEL_SPACING * labels + SYNTH_HRF_SPAN,
                self.n
            )));
        }
        Ok(())
    }
}

/// Labelled columns are spread evenly over `[0, n - 6)`. Each of the
/// `samples_per_class_per_phase` runs presents every class once in the
/// encode phase, then every class once in the retrieve phase, in shuffled
/// class order.
fn synth_labels(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<Label> {
    let total = cfg.total_labels();
    let usable = cfg.n - SYNTH_HRF_SPAN;
    let mut labels = Vec::with_capacity(total);
    let mut slot = 0;
    for _run in 0..cfg.samples_per_class_per_phase {
        for phase in [Phase::Encode, Phase::Retrieve] {
            let mut classes: Vec<usize> = (0..cfg.num_classes).collect();
            classes.shuffle(rng);
            for class in classes {
                labels.push(Label {
                    column: slot * usable / total,
                    class,
                    phase,
                });
                slot += 1;
            }
        }
    }
    labels
}

/// The per-voxel sinusoidal baseline of [`generate_synthetic`].
fn synth_drift(cfg: &SynthConfig) -> Array2<f64> {
    let n = cfg.n;
    let mut values = Array2::<f64>::zeros((cfg.m, n));
    let drift_amp = 0.25 * cfg.hrf_amplitude;
    let mut rng = stage_rng(cfg.seed, "synth/drift");
    for mut row in values.rows_mut() {
        let phase = rng.random_range(0.0..2.0 * PI);
        let period = rng.random_range(n as f64 / 4.0..=n as f64 / 2.0);
        for (t, v) in row.iter_mut().enumerate() {
            *v = drift_amp * (2.0 * PI * t as f64 / period + phase).sin();
        }
    }
    values
}

/// Generate an fMRI-like dataset.
///
/// Voxels of class `c` are the `voxels_per_class` entries of `voxel_order`
/// starting at `c * voxels_per_class`. Their series carry an HRF bump of
/// height `hrf_amplitude` starting at every label column of class `c`. All
/// voxels get a slow sinusoidal drift (amplitude `0.25 * hrf_amplitude`,
/// period in `[n/4, n/2]`) and i.i.d. Gaussian noise.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<VTDataset> {
    cfg.validate()?;
    let m = cfg.m;

    // Rows are stored in shuffled order; voxel_order walks the virtual grid
    // in raster order.
    let mut rng = stage_rng(cfg.seed, "synth/layout");
    let mut grid_of_row: Vec<usize> = (0..m).collect();
    grid_of_row.shuffle(&mut rng);
    let mut voxel_order = vec![0; m];
    for (row, &g) in grid_of_row.iter().enumerate() {
        voxel_order[g] = row;
    }
    let labels = synth_labels(cfg, &mut rng);

    let mut values = synth_drift(cfg);

    let kernel = hrf_kernel(cfg.tr_seconds, SYNTH_HRF_SPAN)?;
    for label in &labels {
        let first = label.class * cfg.voxels_per_class;
        for &row in &voxel_order[first..first + cfg.voxels_per_class] {
            for (s, &tap) in kernel.taps().iter().enumerate() {
                if let Some(v) = values.get_mut((row, label.column + s)) {
                    *v += cfg.hrf_amplitude * tap;
                }
            }
        }
    }

    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        let mut rng = stage_rng(cfg.seed, "synth/noise");
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    VTDataset::new(values, cfg.tr_seconds, voxel_order, labels)
}

// --- persistence ----------------------------------------------------------

const DATASET_MAGIC: &str = "TCNN-VT";
const DATASET_VERSION: &str = "1";
const PAYLOAD_MARKER: &str = "#payload";

/// Serialize a dataset.
///
/// Layout: `key=value` header lines (magic, version, m, n, tr_seconds,
/// labels), a blank line, one `column,class,phase` line per label, the voxel
/// order as one comma-separated line, the `#payload` marker line, then the
/// m x n values as little-endian f64 in row-major order.
pub fn encode_dataset(d: &VTDataset) -> Vec<u8> {
    let mut text = String::new();
    text.push_str(&format!("magic={DATASET_MAGIC}\n"));
    text.push_str(&format!("version={DATASET_VERSION}\n"));
    text.push_str(&format!("m={}\nn={}\n", d.m(), d.n()));
    text.push_str(&format!("tr_seconds={}\n", d.tr_seconds));
    text.push_str(&format!("labels={}\n\n", d.labels.len()));
    for l in &d.labels {
        text.push_str(&format!("{},{},{}\n", l.column, l.class, l.phase));
    }
    let order: Vec<String> = d.voxel_order.iter().map(usize::to_string).collect();
    text.push_str(&order.join(","));
    text.push('\n');
    text.push_str(PAYLOAD_MARKER);
    text.push('\n');

    let mut bytes = text.into_bytes();
    bytes.reserve(d.values.len() * 8);
    for v in d.values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Splits `bytes` at the next newline, returning the line without it.
pub(crate) fn next_line<'a>(bytes: &mut &'a [u8]) -> Option<&'a str> {
    let end = bytes.iter().position(|&b| b == b'\n')?;
    let line = std::str::from_utf8(&bytes[..end]).ok()?;
    *bytes = &bytes[end + 1..];
    Some(line)
}

/// Reads `key=value` lines up to the first blank line.
pub(crate) fn read_header<'a>(
    bytes: &mut &'a [u8],
) -> Result<Vec<(&'a str, &'a str)>, ParseError> {
    let mut pairs = Vec::new();
    loop {
        let line = next_line(bytes)
            .ok_or_else(|| ParseError::MalformedHeader("header is not terminated".into()))?;
        if line.is_empty() {
            return Ok(pairs);
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ParseError::MalformedHeader(format!("expected key=value, got {line:?}")))?;
        pairs.push((k.trim(), v.trim()));
    }
}

pub(crate) fn header_value<T: FromStr>(
    pairs: &[(&str, &str)],
    key: &str,
) -> Result<T, ParseError> {
    let raw = pairs
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| ParseError::MalformedHeader(format!("missing key {key}")))?;
    raw.parse()
        .map_err(|_| ParseError::MalformedHeader(format!("bad value for {key}: {raw:?}")))
}

pub(crate) fn read_f64s(bytes: &[u8], expected: usize) -> Result<Vec<f64>, ParseError> {
    if bytes.len() != expected * 8 {
        return Err(ParseError::DimensionMismatch {
            expected,
            found: bytes.len() / 8,
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn decode_dataset(mut bytes: &[u8]) -> Result<VTDataset, ParseError> {
    let header = read_header(&mut bytes)?;
    let magic: String = header_value(&header, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(ParseError::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let version: String = header_value(&header, "version")?;
    if version != DATASET_VERSION {
        return Err(ParseError::UnknownVersion(version));
    }
    let m: usize = header_value(&header, "m")?;
    let n: usize = header_value(&header, "n")?;
    let tr_seconds: f64 = header_value(&header, "tr_seconds")?;
    let label_count: usize = header_value(&header, "labels")?;
    if m == 0 || n == 0 {
        return Err(ParseError::InvariantViolation(format!(
            "matrix must be non-empty, got {m}x{n}"
        )));
    }

    let truncated = || ParseError::MalformedHeader("unexpected end of metadata".into());
    let mut labels = Vec::with_capacity(label_count);
    for _ in 0..label_count {
        let line = next_line(&mut bytes).ok_or_else(truncated)?;
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || ParseError::MalformedHeader(format!("bad label line {line:?}"));
        if fields.len() != 3 {
            return Err(bad());
        }
        labels.push(Label {
            column: fields[0].parse().map_err(|_| bad())?,
            class: fields[1].parse().map_err(|_| bad())?,
            phase: fields[2].parse().map_err(|_| bad())?,
        });
    }
    let order_line = next_line(&mut bytes).ok_or_else(truncated)?;
    let voxel_order = order_line
        .split(',')
        .map(|s| s.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| ParseError::MalformedHeader("bad voxel_order line".into()))?;
    if next_line(&mut bytes) != Some(PAYLOAD_MARKER) {
        return Err(ParseError::MalformedHeader("missing payload marker".into()));
    }

    check_invariants(m, n, tr_seconds, &voxel_order, &labels)
        .map_err(ParseError::InvariantViolation)?;
    let values = read_f64s(bytes, m * n)?;
    let values = Array2::from_shape_vec((m, n), values).expect("length checked");
    Ok(VTDataset {
        values,
        tr_seconds,
        voxel_order,
        labels,
    })
}

pub fn save_dataset(d: &VTDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(d))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<VTDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_dataset(&bytes).map_err(|source| Error::Parse {
        path: path.to_owned(),
        source,
    })
}

// --- window sampling ------------------------------------------------------

/// Time windows cut from matrix rows, one window per row of `windows`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub windows: Array2<f64>,
    pub tau: usize,
    /// `(row, start_column)` of every window.
    pub source_rows: Vec<(usize, usize)>,
}

impl WindowSet {
    /// Window set without provenance, e.g. for hand-built batches.
    pub fn from_windows(windows: Array2<f64>) -> Self {
        let tau = windows.ncols();
        Self {
            windows,
            tau,
            source_rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.windows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.nrows() == 0
    }
}

/// Window starts whose span `[start, start + tau)` avoids every excluded column.
pub fn admissible_starts(n: usize, tau: usize, excluded: &BTreeSet<usize>) -> Vec<usize> {
    if tau == 0 || tau > n {
        return Vec::new();
    }
    let mut blocked_before = vec![0usize; n + 1];
    for c in 0..n {
        blocked_before[c + 1] = blocked_before[c] + usize::from(excluded.contains(&c));
    }
    (0..=n - tau)
        .filter(|&s| blocked_before[s + tau] == blocked_before[s])
        .collect()
}

/// Draw `count` windows of length `tau` uniformly, with replacement, from
/// every admissible `(row, start)` position of `matrix`.
pub fn sample_windows(
    matrix: ArrayView2<'_, f64>,
    tau: usize,
    count: usize,
    excluded: &BTreeSet<usize>,
    seed: u64,
) -> Result<WindowSet> {
    let (rows, n) = matrix.dim();
    if tau == 0 || tau > n {
        return Err(Error::contract(format!("window length {tau} must be in 1..={n}")));
    }
    if count == 0 {
        return Err(Error::contract("window count must be positive"));
    }
    let starts = admissible_starts(n, tau, excluded);
    if starts.is_empty() || rows == 0 {
        return Err(Error::Sampling(format!(
            "no admissible window of length {tau} in a {rows}x{n} matrix with {} excluded columns",
            excluded.len()
        )));
    }

    let mut rng = rng_from_seed(seed);
    let mut windows = Array2::zeros((count, tau));
    let mut source_rows = Vec::with_capacity(count);
    for mut out in windows.rows_mut() {
        let row = rng.random_range(0..rows);
        let start = starts[rng.random_range(0..starts.len())];
        for (o, &v) in out.iter_mut().zip(matrix.row(row).iter().skip(start)) {
            *o = v;
        }
        source_rows.push((row, start));
    }
    Ok(WindowSet {
        windows,
        tau,
        source_rows,
    })
}

/// Columns whose windows must not be used for training: everything within
/// `max(tau1, tau2) - 1` columns of a retrieve-phase label.
pub fn test_exclusion_columns(d: &VTDataset, tau1: usize, tau2: usize) -> BTreeSet<usize> {
    let reach = tau1.max(tau2).saturating_sub(1);
    let n = d.n();
    d.labels_in(Phase::Retrieve)
        .flat_map(|l| l.column.saturating_sub(reach)..(l.column + reach + 1).min(n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_config() -> SynthConfig {
        SynthConfig {
            m: 64,
            n: 600,
            num_classes: 5,
            samples_per_class_per_phase: 6,
            noise_sigma: 1.0,
            voxels_per_class: 4,
            hrf_amplitude: 1.0,
            tr_seconds: 2.0,
            seed: 7,
        }
    }

    #[test]
    fn synthetic_shape_and_phase_split() {
        let d = generate_synthetic(&small_config()).unwrap();
        assert_eq!(d.values().dim(), (64, 600));
        assert_eq!(d.labels().len(), 60);
        assert_eq!(d.labels_in(Phase::Encode).count(), 30);
        assert_eq!(d.labels_in(Phase::Retrieve).count(), 30);
        for class in 0..5 {
            for phase in [Phase::Encode, Phase::Retrieve] {
                let count = d
                    .labels()
                    .iter()
                    .filter(|l| l.class == class && l.phase == phase)
                    .count();
                assert_eq!(count, 6);
            }
        }
    }

    #[test]
    fn synthetic_noiseless_bumps_are_exact() {
        // 20 labels over 594 columns: bumps never overlap.
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            samples_per_class_per_phase: 2,
            ..small_config()
        };
        let d = generate_synthetic(&cfg).unwrap();
        let drift = synth_drift(&cfg);
        let kernel = hrf_kernel(2.0, 6).unwrap();
        let mut touched = Array2::from_elem((cfg.m, cfg.n), false);
        for l in d.labels() {
            for &row in &d.voxel_order()[l.class * 4..l.class * 4 + 4] {
                for (s, &tap) in kernel.taps().iter().enumerate() {
                    let t = l.column + s;
                    assert_eq!(d.values()[[row, t]], drift[[row, t]] + cfg.hrf_amplitude * tap);
                    touched[[row, t]] = true;
                }
            }
        }
        for ((idx, &v), &hit) in d.values().indexed_iter().zip(touched.iter()) {
            if !hit {
                assert_eq!(v, drift[idx]);
                assert!(v.abs() <= 0.25 * cfg.hrf_amplitude);
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(&small_config()).unwrap();
        let b = generate_synthetic(&small_config()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig {
            seed: 8,
            ..small_config()
        })
        .unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let too_many_voxels = SynthConfig {
            voxels_per_class: 20,
            ..small_config()
        };
        assert!(matches!(generate_synthetic(&too_many_voxels), Err(Error::Config(msg)) if msg.contains("voxels_per_class")));
        let too_dense = SynthConfig {
            n: 200,
            ..small_config()
        };
        assert!(matches!(generate_synthetic(&too_dense), Err(Error::Config(msg)) if msg.contains("labels")));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let d = generate_synthetic(&small_config()).unwrap();
        let decoded = decode_dataset(&encode_dataset(&d)).unwrap();
        assert_eq!(decoded, d);
        for (a, b) in decoded.values().iter().zip(d.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_payload_is_dimension_mismatch() {
        let d = VTDataset::with_identity_order(array![[1.0, 2.0], [3.0, 4.0]], 2.0, vec![]).unwrap();
        let mut bytes = encode_dataset(&d);
        bytes.truncate(bytes.len() - 8);
        assert_eq!(
            decode_dataset(&bytes),
            Err(ParseError::DimensionMismatch {
                expected: 4,
                found: 3
            })
        );
    }

    #[test]
    fn header_errors_are_distinct() {
        let d = VTDataset::with_identity_order(array![[1.0, 2.0]], 2.0, vec![]).unwrap();
        let text = String::from_utf8_lossy(&encode_dataset(&d)).into_owned();

        let zero_m = text.replace("m=1\n", "m=0\n");
        assert!(matches!(
            decode_dataset(zero_m.as_bytes()),
            Err(ParseError::InvariantViolation(_))
        ));
        let version = text.replace("version=1", "version=9");
        assert_eq!(
            decode_dataset(version.as_bytes()),
            Err(ParseError::UnknownVersion("9".into()))
        );
        let broken = text.replace("n=2", "n two");
        assert!(matches!(
            decode_dataset(broken.as_bytes()),
            Err(ParseError::MalformedHeader(_))
        ));
    }

    #[test]
    fn dataset_rejects_bad_order_and_labels() {
        let values = Array2::zeros((2, 3));
        assert!(VTDataset::new(values.clone(), 2.0, vec![0, 0], vec![]).is_err());
        let dup = vec![
            Label { column: 1, class: 0, phase: Phase::Encode },
            Label { column: 1, class: 1, phase: Phase::Retrieve },
        ];
        assert!(VTDataset::new(values.clone(), 2.0, vec![1, 0], dup).is_err());
        let out_of_range = vec![Label { column: 3, class: 0, phase: Phase::Encode }];
        assert!(VTDataset::new(values, 2.0, vec![1, 0], out_of_range).is_err());
    }

    #[test]
    fn sampling_all_excluded_fails() {
        let m = Array2::zeros((3, 10));
        let excluded: BTreeSet<usize> = (0..10).collect();
        assert!(matches!(
            sample_windows(m.view(), 3, 5, &excluded, 1),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn full_length_windows_are_rows() {
        let m = Array2::from_shape_fn((4, 7), |(r, c)| (r * 10 + c) as f64);
        let set = sample_windows(m.view(), 7, 20, &BTreeSet::new(), 3).unwrap();
        for (w, &(row, start)) in set.windows.rows().into_iter().zip(&set.source_rows) {
            assert_eq!(start, 0);
            assert_eq!(w, m.row(row));
        }
    }

    #[test]
    fn windows_avoid_excluded_columns() {
        let m = Array2::from_shape_fn((100, 100), |(r, c)| (r * 100 + c) as f64);
        let excluded: BTreeSet<usize> = (40..60).collect();
        let set = sample_windows(m.view(), 6, 10_000, &excluded, 11).unwrap();
        assert_eq!(set.len(), 10_000);
        for (w, &(row, start)) in set.windows.rows().into_iter().zip(&set.source_rows) {
            assert!(start + 6 <= 40 || start >= 60, "window at {start}");
            assert_eq!(w[0], (row * 100 + start) as f64);
        }
    }

    #[test]
    fn exclusion_of_single_label() {
        let labels = vec![
            Label { column: 100, class: 0, phase: Phase::Retrieve },
            Label { column: 10, class: 1, phase: Phase::Encode },
        ];
        let d = VTDataset::with_identity_order(Array2::zeros((1, 200)), 2.0, labels).unwrap();
        let cols = test_exclusion_columns(&d, 6, 9);
        assert_eq!(cols, (92..=108).collect());
    }

    #[test]
    fn exclusion_without_retrieve_labels_is_empty() {
        let labels = vec![Label { column: 10, class: 1, phase: Phase::Encode }];
        let d = VTDataset::with_identity_order(Array2::zeros((1, 50)), 2.0, labels).unwrap();
        assert!(test_exclusion_columns(&d, 6, 9).is_empty());
    }
}
