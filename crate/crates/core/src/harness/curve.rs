use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::stats::accuracy;
use crate::decode::{knn_classify, DesignMatrix, Metric};
use crate::rng::stage_rng;
use crate::{Error, Result};

/// Samples added to the training set per curve point.
pub const DEFAULT_STEP: usize = 20;
/// Share of the pool held out as the fixed test set.
pub const HOLDOUT_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub train_size: usize,
    pub train_error: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    pub step: usize,
}

/// kNN train and test error as the training set grows by `step` samples.
///
/// A quarter of the pool (rounded up) is drawn as the test set; the rest is
/// shuffled and revealed `step` samples at a time, with a final partial step
/// when the remainder does not divide evenly.
pub fn learning_curve(pool: &DesignMatrix, step: usize, k: usize, metric: Metric, seed: u64) -> Result<LearningCurve> {
    if step == 0 {
        return Err(Error::contract("step must be positive"));
    }
    if pool.len() < 2 * step {
        return Err(Error::contract(format!(
            "pool of {} samples is smaller than two steps of {step}",
            pool.len()
        )));
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut stage_rng(seed, "learning-curve"));
    let test_count = (pool.len() as f64 * HOLDOUT_FRACTION).ceil() as usize;
    let (test_idx, train_idx) = idx.split_at(test_count);
    let test = pool.select(test_idx);

    let mut points = Vec::new();
    let mut size = 0;
    while size < train_idx.len() {
        size = (size + step).min(train_idx.len());
        let train = pool.select(&train_idx[..size]);
        let train_pred = knn_classify(&train, &train, k, metric)?;
        let test_pred = knn_classify(&train, &test, k, metric)?;
        points.push(CurvePoint {
            train_size: size,
            train_error: 1.0 - accuracy(&train_pred, &train.labels)?,
            test_error: 1.0 - accuracy(&test_pred, &test.labels)?,
        });
    }
    Ok(LearningCurve { points, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Phase;
    use crate::rng::rng_from_seed;
    use ndarray::Array2;
    use rand::Rng;

    fn pool(n: usize, seed: u64) -> DesignMatrix {
        let mut rng = rng_from_seed(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let features = Array2::from_shape_fn((n, 4), |(i, j)| {
            (if j == labels[i] { 2.0 } else { 0.0 }) + rng.random_range(-1.0..1.0)
        });
        DesignMatrix::new(features, labels, vec![Phase::Encode; n]).unwrap()
    }

    #[test]
    fn point_count_follows_pool_size() {
        let c = learning_curve(&pool(40, 1), 20, 1, Metric::Euclidean, 3).unwrap();
        let sizes: Vec<usize> = c.points.iter().map(|p| p.train_size).collect();
        assert_eq!(sizes, vec![20, 30]);
        let c = learning_curve(&pool(80, 1), 20, 1, Metric::Euclidean, 3).unwrap();
        let sizes: Vec<usize> = c.points.iter().map(|p| p.train_size).collect();
        assert_eq!(sizes, vec![20, 40, 60]);
    }

    #[test]
    fn one_nn_train_error_is_zero() {
        let c = learning_curve(&pool(100, 2), 20, 1, Metric::Euclidean, 5).unwrap();
        assert!(c.points.iter().all(|p| p.train_error == 0.0));
        assert!(c.points.iter().all(|p| (0.0..=1.0).contains(&p.test_error)));
    }

    #[test]
    fn small_pool_is_rejected() {
        assert!(learning_curve(&pool(30, 1), 20, 1, Metric::Euclidean, 0).is_err());
    }
}
