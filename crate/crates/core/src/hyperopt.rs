//! Hyperparameter selection without a validation set.
//!
//! Filters learned with good hyperparameters should be mutually
//! decorrelated. For each candidate `(k, rho, beta)` the autoencoder is
//! trained, the Pearson correlation matrix `R` of its filters is formed and
//! the candidate is scored by `sum_i |eig_i(R) - 1|`, the L1 distance between
//! the spectrum of `R` and that of the identity. The lowest score wins.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{train, AEHyper, FilterBank};
use crate::dataset::WindowSet;
use crate::{Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Pearson correlation between every pair of filters.
pub fn filter_correlation(bank: &FilterBank) -> Result<Array2<f64>> {
    let k = bank.k();
    if k < 2 {
        return Err(Error::contract(format!("correlation needs at least 2 filters, got {k}")));
    }
    let tau = bank.filters.ncols();
    let mut centered = bank.filters.clone();
    let mut norms = Array1::zeros(k);
    for (j, mut row) in centered.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / tau as f64;
        row.mapv_inplace(|v| v - mean);
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateFilter { index: j });
        }
        norms[j] = norm;
    }
    let mut r = centered.dot(&centered.t());
    for i in 0..k {
        for j in 0..k {
            r[[i, j]] = if i == j {
                1.0
            } else {
                (r[[i, j]] / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
        }
    }
    // exact symmetry
    for i in 0..k {
        for j in 0..i {
            r[[j, i]] = r[[i, j]];
        }
    }
    Ok(r)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, in no
/// particular order. Sweeps until the off-diagonal Frobenius norm drops
/// below `1e-12` (relative to the matrix norm when that exceeds one).
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Result<Array1<f64>> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::contract(format!("matrix is {rows}x{cols}, not square")));
    }
    let n = rows;
    let mut m = a.clone();
    let scale = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let off_norm = |m: &Array2<f64>| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[[i, j]] * m[[i, j]];
                }
            }
        }
        s.sqrt()
    };

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&m) < JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let arp = m[[r, p]];
                    let arq = m[[r, q]];
                    m[[r, p]] = c * arp - s * arq;
                    m[[r, q]] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = m[[p, r]];
                    let aqr = m[[q, r]];
                    m[[p, r]] = c * apr - s * aqr;
                    m[[q, r]] = s * apr + c * aqr;
                }
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
            }
        }
    }
    Ok(m.diag().to_owned())
}

/// `sum_i |eig_i(R) - 1|` for the filter correlation matrix `R`.
pub fn decorrelation_distance(bank: &FilterBank) -> Result<f64> {
    let r = filter_correlation(bank)?;
    let k = r.nrows() as f64;
    let eig = symmetric_eigenvalues(&r)?;
    let trace: f64 = eig.sum();
    debug_assert!((trace - k).abs() <= 1e-9 * k.max(1.0), "trace {trace} != {k}");
    Ok(eig.iter().map(|l| (l - 1.0).abs()).sum())
}

/// How distances of banks with different `k` are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// The plain L1 distance.
    #[default]
    Raw,
    /// Distance divided by `k`.
    PerFilter,
}

impl DistanceMode {
    fn apply(self, distance: f64, k: usize) -> f64 {
        match self {
            DistanceMode::Raw => distance,
            DistanceMode::PerFilter => distance / k as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub k_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    pub beta_values: Vec<f64>,
    /// Held fixed over the grid.
    pub lambda_value: f64,
}

impl HyperGrid {
    /// First-layer search space: k in 9..=25.
    pub fn layer1() -> Self {
        Self {
            k_values: (9..=25).collect(),
            rho_values: vec![0.01, 0.03, 0.09, 0.27],
            beta_values: vec![1.0, 3.0, 5.0],
            lambda_value: 1e-4,
        }
    }

    /// Second-layer search space: k in 4..=9.
    pub fn layer2() -> Self {
        Self {
            k_values: (4..=9).collect(),
            ..Self::layer1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn unique<T: PartialEq>(v: &[T]) -> bool {
            v.iter().enumerate().all(|(i, a)| !v[..i].contains(a))
        }
        if self.k_values.is_empty() || self.rho_values.is_empty() || self.beta_values.is_empty() {
            return Err(Error::config("every grid axis needs at least one value"));
        }
        if !unique(&self.k_values) || !unique(&self.rho_values) || !unique(&self.beta_values) {
            return Err(Error::config("grid values must be unique"));
        }
        Ok(())
    }

    /// Every grid point, `k` slowest and `beta` fastest, with settings other
    /// than `k, rho, beta, lambda` taken from `base`. Point `i` is seeded with
    /// `base.seed + i`.
    pub fn points(&self, base: &AEHyper) -> Vec<AEHyper> {
        let mut out = Vec::new();
        for &k in &self.k_values {
            for &rho in &self.rho_values {
                for &beta in &self.beta_values {
                    out.push(AEHyper {
                        k,
                        rho,
                        beta,
                        lambda: self.lambda_value,
                        seed: base.seed.wrapping_add(out.len() as u64),
                        ..base.clone()
                    });
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.k_values.len() * self.rho_values.len() * self.beta_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub hyper: AEHyper,
    /// Infinite when training diverged or produced a degenerate bank.
    pub distance: f64,
    pub bank: Option<FilterBank>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub entries: Vec<GridEntry>,
    pub best: usize,
}

impl GridResult {
    pub fn best_entry(&self) -> &GridEntry {
        &self.entries[self.best]
    }
}

/// Relative slack under which two distances count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Index of the lowest distance; ties go to the smallest `k`, then `rho`,
/// then `beta`. Distances within [`TIE_TOLERANCE`] of the minimum are ties.
pub fn select_best(entries: &[GridEntry]) -> Option<usize> {
    let lowest = entries.iter().map(|e| e.distance).min_by(f64::total_cmp)?;
    let cutoff = lowest + TIE_TOLERANCE * lowest.abs().max(1.0);
    (0..entries.len())
        .filter(|&i| entries[i].distance <= cutoff)
        .min_by(|&a, &b| {
            let (ha, hb) = (&entries[a].hyper, &entries[b].hyper);
            ha.k.cmp(&hb.k)
                .then(ha.rho.total_cmp(&hb.rho))
                .then(ha.beta.total_cmp(&hb.beta))
        })
}

/// Train one autoencoder per grid point and score each bank.
pub fn grid_search(windows: &WindowSet, grid: &HyperGrid, base: &AEHyper) -> Result<GridResult> {
    grid_search_with(windows, grid, base, DistanceMode::Raw)
}

pub fn grid_search_with(
    windows: &WindowSet,
    grid: &HyperGrid,
    base: &AEHyper,
    mode: DistanceMode,
) -> Result<GridResult> {
    if windows.is_empty() {
        return Err(Error::contract("no training windows"));
    }
    grid.validate()?;
    let points = grid.points(base);
    for p in &points {
        p.validate()?;
    }
    score_points(points, mode, |h| train(windows, h))
}

/// Grid evaluation with an arbitrary bank source. Errors from `fit` and from
/// scoring are recorded as infinite distances.
pub fn score_points<F>(points: Vec<AEHyper>, mode: DistanceMode, fit: F) -> Result<GridResult>
where
    F: Fn(&AEHyper) -> Result<FilterBank> + Sync,
{
    let entries: Vec<GridEntry> = points
        .into_par_iter()
        .map(|hyper| {
            let bank = fit(&hyper).ok();
            let distance = bank
                .as_ref()
                .and_then(|b| decorrelation_distance(b).ok())
                .map_or(f64::INFINITY, |d| mode.apply(d, hyper.k));
            GridEntry {
                hyper,
                distance,
                bank,
            }
        })
        .collect();
    let best = select_best(&entries).ok_or_else(|| Error::contract("empty grid"))?;
    Ok(GridResult { entries, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    fn random_bank(k: usize, tau: usize, seed: u64) -> FilterBank {
        let mut rng = rng_from_seed(seed);
        FilterBank::from_filters(Array2::from_shape_fn((k, tau), |_| rng.random_range(-1.0..1.0)))
    }

    /// Textbook two-pass Pearson correlation.
    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn correlation_matches_two_pass_oracle() {
        let bank = random_bank(7, 9, 3);
        let r = filter_correlation(&bank).unwrap();
        for i in 0..7 {
            assert_eq!(r[[i, i]], 1.0);
            for j in 0..7 {
                let a = bank.filter(i).to_vec();
                let b = bank.filter(j).to_vec();
                if i != j {
                    assert_abs_diff_eq!(r[[i, j]], pearson(&a, &b), epsilon = 1e-12);
                }
                assert_eq!(r[[i, j]], r[[j, i]]);
            }
        }
    }

    #[test]
    fn negated_filter_correlates_minus_one() {
        let bank = FilterBank::from_filters(array![[1.0, 2.0, 4.0], [-1.0, -2.0, -4.0]]);
        let r = filter_correlation(&bank).unwrap();
        assert_abs_diff_eq!(r[[0, 1]], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn flat_filter_is_degenerate() {
        let bank = FilterBank::from_filters(array![[1.0, 2.0, 4.0], [3.0, 3.0, 3.0]]);
        assert!(matches!(filter_correlation(&bank), Err(Error::DegenerateFilter { index: 1 })));
    }

    #[test]
    fn identical_pair_has_distance_two() {
        let bank = FilterBank::from_filters(array![[1.0, 2.0, 4.0], [1.0, 2.0, 4.0]]);
        assert_abs_diff_eq!(decorrelation_distance(&bank).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_on_known_spectrum() {
        let a = array![[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let mut eig = symmetric_eigenvalues(&a).unwrap().to_vec();
        eig.sort_by(f64::total_cmp);
        for (got, want) in eig.iter().zip([1.0, 3.0, 5.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn distance_ignores_order_and_sign() {
        let bank = random_bank(6, 9, 11);
        let base = decorrelation_distance(&bank).unwrap();
        let mut shuffled = bank.filters.clone();
        for (dst, src) in [5, 2, 0, 4, 1, 3].into_iter().enumerate() {
            let mut row = bank.filter(src).to_owned();
            if dst % 2 == 0 {
                row.mapv_inplace(|v| -v);
            }
            shuffled.row_mut(dst).assign(&row);
        }
        let other = decorrelation_distance(&FilterBank::from_filters(shuffled)).unwrap();
        assert_abs_diff_eq!(base, other, epsilon = 1e-10);
    }

    #[test]
    fn grid_points_cover_cartesian_product() {
        let grid = HyperGrid {
            k_values: vec![4, 5],
            rho_values: vec![0.03, 0.09, 0.27],
            beta_values: vec![1.0, 3.0],
            lambda_value: 1e-3,
        };
        let base = AEHyper { seed: 100, ..AEHyper::default() };
        let points = grid.points(&base);
        assert_eq!(points.len(), 12);
        assert_eq!(points[0].seed, 100);
        assert_eq!(points[11].seed, 111);
        assert!(points.iter().all(|p| p.lambda == 1e-3));
        assert!(HyperGrid { k_values: vec![4, 4], ..grid.clone() }.validate().is_err());
        assert!(HyperGrid { beta_values: vec![], ..grid }.validate().is_err());
        assert_eq!(HyperGrid::layer1().len(), 17 * 4 * 3);
        assert_eq!(HyperGrid::layer2().k_values, vec![4, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn ties_prefer_small_hyperparameters() {
        let entry = |k, rho, beta, distance| GridEntry {
            hyper: AEHyper { k, rho, beta, ..AEHyper::default() },
            distance,
            bank: None,
        };
        let entries = vec![
            entry(9, 0.03, 1.0, 0.5),
            entry(8, 0.09, 3.0, 0.5),
            entry(8, 0.09, 1.0, 0.5),
            entry(8, 0.27, 1.0, f64::INFINITY),
        ];
        assert_eq!(select_best(&entries), Some(2));

        let noisy = vec![
            entry(9, 0.27, 1.0, 7.999999999999998),
            entry(9, 0.03, 1.0, 8.000000000000012),
            entry(9, 0.01, 1.0, 8.1),
        ];
        assert_eq!(select_best(&noisy), Some(1));
        assert_eq!(select_best(&[entry(4, 0.1, 1.0, f64::INFINITY)]), Some(0));
    }

    #[test]
    fn failed_points_score_infinity() {
        let points = HyperGrid {
            k_values: vec![2, 3],
            rho_values: vec![0.1],
            beta_values: vec![1.0],
            lambda_value: 0.0,
        }
        .points(&AEHyper::default());
        let result = score_points(points, DistanceMode::Raw, |h| {
            if h.k == 2 {
                Err(Error::Divergence { iteration: 3, cost: f64::NAN })
            } else {
                Ok(random_bank(3, 6, 1))
            }
        })
        .unwrap();
        assert!(result.entries[0].distance.is_infinite());
        assert!(result.entries[0].bank.is_none());
        assert_eq!(result.best, 1);
    }

    #[test]
    fn per_filter_mode_divides_by_k() {
        let points = vec![AEHyper { k: 4, ..AEHyper::default() }];
        let bank = random_bank(4, 6, 9);
        let raw = decorrelation_distance(&bank).unwrap();
        let result = score_points(points, DistanceMode::PerFilter, |_| Ok(bank.clone())).unwrap();
        assert_abs_diff_eq!(result.entries[0].distance, raw / 4.0, epsilon = 1e-15);
    }
}
