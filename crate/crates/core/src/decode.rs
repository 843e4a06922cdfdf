//! Design matrices and the nearest-neighbour classifier.
//!
//! Every method turns a dataset into one feature row per label:
//!
//! * raw MVPA: the voxel intensities at the labelled column;
//! * HRF MVPA: the same, after correlating every voxel with a canonical HRF;
//! * T-MVPA: the intensities of all voxels over the six samples starting at
//!   the labelled column, concatenated voxel by voxel;
//! * CNN: the labelled column of the learned representation.
//!
//! No feature scaling is applied anywhere.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convnet::{output_dim, temporal_convolve, transform, PipelineModel};
use crate::dataset::{Phase, VTDataset};
use crate::{Error, Result};

/// Samples covered by the HRF kernel and the T-MVPA window.
pub const DEFAULT_SPAN: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub phases: Vec<Phase>,
}

impl DesignMatrix {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, phases: Vec<Phase>) -> Result<Self> {
        if labels.len() != features.nrows() || phases.len() != features.nrows() {
            return Err(Error::contract(format!(
                "{} feature rows, {} labels, {} phases",
                features.nrows(),
                labels.len(),
                phases.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            phases,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> DesignMatrix {
        DesignMatrix {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            phases: indices.iter().map(|&i| self.phases[i]).collect(),
        }
    }

    pub fn phase(&self, phase: Phase) -> DesignMatrix {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.phases[i] == phase).collect();
        self.select(&idx)
    }

    /// CSV with a `label,phase,f0,f1,...` header and one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,phase");
        for j in 0..self.feature_dim() {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for (i, row) in self.features.rows().into_iter().enumerate() {
            out.push_str(&format!("{},{}", self.labels[i], self.phases[i]));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Design matrix whose row `i` is column `labels[i].column` of `matrix`.
fn label_columns(d: &VTDataset, matrix: ArrayView2<'_, f64>) -> DesignMatrix {
    let cols: Vec<usize> = d.labels().iter().map(|l| l.column).collect();
    DesignMatrix {
        features: matrix.select(Axis(1), &cols).reversed_axes(),
        labels: d.labels().iter().map(|l| l.class).collect(),
        phases: d.labels().iter().map(|l| l.phase).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HRFKernel {
    taps: Array1<f64>,
    tr_seconds: f64,
}

impl HRFKernel {
    pub fn taps(&self) -> &Array1<f64> {
        &self.taps
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }
}

const HRF_PEAK_SHAPE: f64 = 6.0;
const HRF_UNDERSHOOT_SHAPE: f64 = 16.0;
const HRF_UNDERSHOOT_RATIO: f64 = 1.0 / 6.0;

/// Canonical double-gamma HRF (peak at 6 s, undershoot at 16 s, ratio 1/6).
pub fn double_gamma(t: f64) -> f64 {
    let lobe = |shape: f64| (t / shape).powf(shape) * (-(t - shape)).exp();
    lobe(HRF_PEAK_SHAPE) - HRF_UNDERSHOOT_RATIO * lobe(HRF_UNDERSHOOT_SHAPE)
}

/// The double-gamma HRF sampled at `t = TR, 2 TR, ..., span TR` seconds and
/// scaled so its largest tap is exactly one.
pub fn hrf_kernel(tr_seconds: f64, span: usize) -> Result<HRFKernel> {
    if !(tr_seconds.is_finite() && tr_seconds > 0.0) {
        return Err(Error::config(format!("TR must be positive, got {tr_seconds}")));
    }
    if span < 2 {
        return Err(Error::config(format!("HRF span must be at least 2, got {span}")));
    }
    if span as f64 * tr_seconds < HRF_PEAK_SHAPE {
        return Err(Error::config(format!(
            "{span} samples at TR={tr_seconds}s do not reach the {HRF_PEAK_SHAPE}s peak"
        )));
    }
    let raw = Array1::from_shape_fn(span, |s| double_gamma(tr_seconds * (s + 1) as f64));
    let peak = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let taps = raw.mapv(|v| v / peak);
    Ok(HRFKernel { taps, tr_seconds })
}

pub fn raw_mvpa_features(d: &VTDataset) -> DesignMatrix {
    label_columns(d, d.values().view())
}

pub fn hrf_mvpa_features(d: &VTDataset) -> Result<DesignMatrix> {
    let kernel = hrf_kernel(d.tr_seconds(), DEFAULT_SPAN)?;
    let response = temporal_convolve(d.values().view(), kernel.taps().view())?;
    Ok(label_columns(d, response.view()))
}

/// Columns `t..t + window` of every voxel, voxel-major.
pub fn t_mvpa_features(d: &VTDataset, window: usize) -> Result<DesignMatrix> {
    if window == 0 {
        return Err(Error::contract("window must be positive"));
    }
    let m = d.m();
    let mut features = Array2::zeros((d.labels().len(), m * window));
    for (i, label) in d.labels().iter().enumerate() {
        if label.column + window > d.n() {
            return Err(Error::contract(format!(
                "label at column {} (class {}) leaves fewer than {window} samples",
                label.column, label.class
            )));
        }
        let block = d
            .values()
            .slice(ndarray::s![.., label.column..label.column + window]);
        for (dst, src) in features.row_mut(i).iter_mut().zip(block.iter()) {
            *dst = *src;
        }
    }
    DesignMatrix::new(
        features,
        d.labels().iter().map(|l| l.class).collect(),
        d.labels().iter().map(|l| l.phase).collect(),
    )
}

pub fn cnn_features(d: &VTDataset, model: &PipelineModel, depth: usize) -> Result<DesignMatrix> {
    let repr = transform(d, model, depth)?;
    let expected = output_dim(
        d.m(),
        model.k1(),
        model.k2().unwrap_or(0),
        model.config.delta1,
        model.config.delta2,
        depth,
    )?;
    debug_assert_eq!(repr.nrows(), expected);
    Ok(label_columns(d, repr.view()))
}

// --- kNN ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`; a zero vector is at distance 1 from everything.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let na = a.dot(&a).sqrt();
                let nb = b.dot(&b).sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - a.dot(&b) / (na * nb)
                }
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric {other:?} (expected euclidean or cosine)")),
        }
    }
}

/// Predict a class for every test row by majority vote of its `k` nearest
/// training rows.
///
/// Neighbours at equal distance are taken in training-row order. A vote tie
/// goes to the tied class with the smallest summed neighbour distance, then
/// to the smallest class id.
pub fn knn_classify(train: &DesignMatrix, test: &DesignMatrix, k: usize, metric: Metric) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    if k == 0 || k > train.len() {
        return Err(Error::contract(format!(
            "k = {k} must be in 1..={}",
            train.len()
        )));
    }
    if train.feature_dim() != test.feature_dim() {
        return Err(Error::contract(format!(
            "feature dimensions differ: train {}, test {}",
            train.feature_dim(),
            test.feature_dim()
        )));
    }
    let num_classes = train.labels.iter().max().map_or(0, |c| c + 1);
    Ok((0..test.len())
        .into_par_iter()
        .map(|q| {
            let query = test.features.row(q);
            let mut dist: Vec<(f64, usize)> = train
                .features
                .rows()
                .into_iter()
                .enumerate()
                .map(|(i, row)| (metric.distance(query, row), i))
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![(0usize, 0.0f64); num_classes];
            for &(d, i) in &dist[..k] {
                let v = &mut votes[train.labels[i]];
                v.0 += 1;
                v.1 += d;
            }
            (0..num_classes)
                .filter(|&c| votes[c].0 > 0)
                .min_by(|&a, &b| {
                    votes[b]
                        .0
                        .cmp(&votes[a].0)
                        .then(votes[a].1.total_cmp(&votes[b].1))
                        .then(a.cmp(&b))
                })
                .expect("k >= 1 neighbours voted")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use ndarray::array;

    fn label(column: usize, class: usize, phase: Phase) -> Label {
        Label { column, class, phase }
    }

    #[test]
    fn hrf_kernel_fixtures() {
        let k = hrf_kernel(2.0, 6).unwrap();
        let taps = k.taps();
        assert_eq!(taps.len(), 6);
        assert_eq!(taps.iter().copied().fold(f64::MIN, f64::max), 1.0);
        assert_eq!(taps[2], 1.0);
        // closed form evaluated at 50 digits
        let expected = [
            0.074_936_652_466_028_596,
            0.649_054_364_428_995_85,
            1.0,
            0.753_244_283_617_811_61,
            0.356_317_888_159_319_02,
            0.067_475_490_768_298_008,
        ];
        for (got, want) in taps.iter().zip(expected) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
        assert!(taps[5] < 0.2);
        assert!(taps.windows(2).into_iter().take(2).all(|w| w[1] > w[0]));
        assert!(taps.windows(2).into_iter().skip(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn hrf_kernel_rejects_short_span() {
        assert!(hrf_kernel(1.0, 3).is_err());
        assert!(hrf_kernel(2.0, 1).is_err());
        assert!(hrf_kernel(0.0, 6).is_err());
    }

    fn tiny() -> VTDataset {
        let values = Array2::from_shape_fn((2, 10), |(v, t)| (10 * v + t) as f64);
        VTDataset::with_identity_order(
            values,
            2.0,
            vec![label(3, 1, Phase::Encode), label(1, 0, Phase::Retrieve)],
        )
        .unwrap()
    }

    #[test]
    fn raw_features_are_label_columns() {
        let d = tiny();
        let dm = raw_mvpa_features(&d);
        assert_eq!(dm.features, array![[3.0, 13.0], [1.0, 11.0]]);
        assert_eq!(dm.labels, vec![1, 0]);
        assert_eq!(dm.phases, vec![Phase::Encode, Phase::Retrieve]);
    }

    #[test]
    fn t_mvpa_concatenates_voxel_major() {
        let d = tiny();
        let dm = t_mvpa_features(&d, 3).unwrap();
        assert_eq!(dm.feature_dim(), 6);
        assert_eq!(dm.features.row(0), array![3.0, 4.0, 5.0, 13.0, 14.0, 15.0]);
        assert_eq!(dm.features.row(1), array![1.0, 2.0, 3.0, 11.0, 12.0, 13.0]);
        assert_eq!(t_mvpa_features(&d, 1).unwrap(), raw_mvpa_features(&d));
        assert!(matches!(t_mvpa_features(&d, 8), Err(Error::Contract(msg)) if msg.contains("column 3")));
    }

    #[test]
    fn hrf_features_of_zero_data_are_zero() {
        let d = VTDataset::with_identity_order(Array2::zeros((3, 20)), 2.0, vec![label(4, 0, Phase::Encode)]).unwrap();
        let dm = hrf_mvpa_features(&d).unwrap();
        assert_eq!(dm.feature_dim(), 3);
        assert!(dm.features.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hrf_feature_peaks_at_bump_onset() {
        let kernel = hrf_kernel(2.0, 6).unwrap();
        let mut values = Array2::zeros((1, 40));
        for s in 0..6 {
            values[[0, 20 + s]] = kernel.taps()[s];
        }
        let labels: Vec<Label> = (0..40).map(|t| label(t, 0, Phase::Encode)).collect();
        let d = VTDataset::with_identity_order(values, 2.0, labels).unwrap();
        let dm = hrf_mvpa_features(&d).unwrap();
        let energy: f64 = kernel.taps().iter().map(|v| v * v).sum();
        assert!((dm.features[[20, 0]] - energy).abs() < 1e-12);
        for t in 0..40 {
            assert!(dm.features[[t, 0]] <= dm.features[[20, 0]]);
        }
    }

    #[test]
    fn knn_exact_match_and_full_vote() {
        let train = DesignMatrix::new(
            array![[0.0, 0.0], [1.0, 1.0], [5.0, 5.0], [6.0, 5.0], [5.0, 6.0]],
            vec![0, 0, 1, 1, 1],
            vec![Phase::Encode; 5],
        )
        .unwrap();
        let test = DesignMatrix::new(array![[1.0, 1.0], [0.2, 0.1]], vec![0, 0], vec![Phase::Retrieve; 2]).unwrap();
        assert_eq!(knn_classify(&train, &test, 1, Metric::Euclidean).unwrap(), vec![0, 0]);
        assert_eq!(knn_classify(&train, &test, 5, Metric::Euclidean).unwrap(), vec![1, 1]);
    }

    #[test]
    fn knn_vote_tie_prefers_closer_class() {
        let train = DesignMatrix::new(
            array![[0.0], [3.0], [-1.5], [10.0]],
            vec![2, 1, 1, 2],
            vec![Phase::Encode; 4],
        )
        .unwrap();
        let test = DesignMatrix::new(array![[1.0]], vec![0], vec![Phase::Retrieve]).unwrap();
        // k=2 picks row 0 (class 2, d=1) and row 1 (class 1, d=2): one vote
        // each, class 2 is closer
        assert_eq!(knn_classify(&train, &test, 2, Metric::Euclidean).unwrap(), vec![2]);
        // equal summed distance falls back to the smaller class id
        let train = DesignMatrix::new(array![[0.0], [2.0]], vec![3, 1], vec![Phase::Encode; 2]).unwrap();
        assert_eq!(knn_classify(&train, &test, 2, Metric::Euclidean).unwrap(), vec![1]);
    }

    #[test]
    fn knn_contract_errors() {
        let train = DesignMatrix::new(array![[0.0, 1.0]], vec![0], vec![Phase::Encode]).unwrap();
        let test = DesignMatrix::new(array![[0.0]], vec![0], vec![Phase::Retrieve]).unwrap();
        assert!(knn_classify(&train, &test, 1, Metric::Euclidean).is_err());
        assert!(knn_classify(&train, &train, 2, Metric::Euclidean).is_err());
        assert!(knn_classify(&train, &train, 0, Metric::Euclidean).is_err());
    }

    #[test]
    fn cosine_distance() {
        let a = array![1.0, 0.0];
        let b = array![0.0, 2.0];
        assert!((Metric::Cosine.distance(a.view(), b.view()) - 1.0).abs() < 1e-15);
        assert!(Metric::Cosine.distance(a.view(), (&a * 3.0).view()).abs() < 1e-15);
        assert_eq!(Metric::Cosine.distance(a.view(), array![0.0, 0.0].view()), 1.0);
        assert_eq!("cosine".parse::<Metric>().unwrap(), Metric::Cosine);
    }
}
