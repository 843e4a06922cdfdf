//! Sparse autoencoder over fixed-length time windows.
//!
//! The encoder is `h = sigmoid(W1 x + b1)`, the decoder is linear,
//! `x~ = W2 h + b2`. The training cost over a batch of `N` windows is
//!
//! ```text
//! J = 1/(2N) sum_i |x~_i - x_i|^2  +  beta * sum_j KL(rho || rho_hat_j)  +  lambda * (|W1|^2 + |W2|^2)
//! ```
//!
//! where `rho_hat_j` is the batch mean activation of hidden unit `j`. Biases
//! are not weight-decayed. After training, row `j` of `W1` (the weights
//! feeding hidden unit `j`) is temporal filter `j`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{header_value, read_f64s, read_header, WindowSet};
use crate::rng::rng_from_seed;
use crate::{Error, ParseError, Result};

/// Relative cost improvement below which training stops.
pub const CONVERGENCE_TOL: f64 = 1e-8;
/// Default number of training windows per autoencoder.
pub const DEFAULT_WINDOWS: usize = 10_000;

const STEP_GROWTH: f64 = 1.1;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AEHyper {
    /// Hidden units, i.e. number of filters.
    pub k: usize,
    /// Target mean activation.
    pub rho: f64,
    /// Weight of the KL sparsity term.
    pub beta: f64,
    /// Weight of the L2 penalty on `W1` and `W2`.
    pub lambda: f64,
    pub max_iters: usize,
    /// Initial gradient-descent step.
    pub step_size: f64,
    pub seed: u64,
}

impl Default for AEHyper {
    fn default() -> Self {
        Self {
            k: 16,
            rho: 0.03,
            beta: 1.0,
            lambda: 1e-4,
            max_iters: 400,
            step_size: 0.1,
            seed: 0,
        }
    }
}

impl AEHyper {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be positive"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("step_size must be positive"));
        }
        Ok(())
    }
}

/// Autoencoder weights. `w1` is k x tau, `w2` is tau x k.
#[derive(Debug, Clone, PartialEq)]
pub struct AEParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl AEParams {
    pub fn zeros(tau: usize, k: usize) -> Self {
        Self {
            w1: Array2::zeros((k, tau)),
            b1: Array1::zeros(k),
            w2: Array2::zeros((tau, k)),
            b2: Array1::zeros(tau),
        }
    }

    /// Weights uniform in `[-r, r]` with `r = sqrt(6 / (tau + k))`, zero biases.
    pub fn init(tau: usize, k: usize, seed: u64) -> Self {
        let r = (6.0 / (tau + k) as f64).sqrt();
        let mut rng = rng_from_seed(seed);
        let mut p = Self::zeros(tau, k);
        p.w1.mapv_inplace(|_| rng.random_range(-r..=r));
        p.w2.mapv_inplace(|_| rng.random_range(-r..=r));
        p
    }

    pub fn tau(&self) -> usize {
        self.w1.ncols()
    }

    pub fn k(&self) -> usize {
        self.w1.nrows()
    }

    fn check_shapes(&self) -> Result<()> {
        let (k, tau) = self.w1.dim();
        if self.b1.len() != k || self.w2.dim() != (tau, k) || self.b2.len() != tau {
            return Err(Error::contract(format!(
                "inconsistent parameter shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        Ok(())
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters in the order `w1, b1, w2, b2`, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
            .collect()
    }

    pub fn from_flat(tau: usize, k: usize, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(tau, k);
        if flat.len() != p.len() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                p.len(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for v in p
            .w1
            .iter_mut()
            .chain(p.b1.iter_mut())
            .chain(p.w2.iter_mut())
            .chain(p.b2.iter_mut())
        {
            *v = it.next().expect("length checked");
        }
        Ok(p)
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    /// `self - step * grad`
    fn stepped(&self, grad: &AEParams, step: f64) -> AEParams {
        AEParams {
            w1: &self.w1 - &(&grad.w1 * step),
            b1: &self.b1 - &(&grad.b1 * step),
            w2: &self.w2 - &(&grad.w2 * step),
            b2: &self.b2 - &(&grad.b2 * step),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Encode and reconstruct a single window.
pub fn forward(p: &AEParams, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    p.check_shapes()?;
    if x.len() != p.tau() {
        return Err(Error::contract(format!(
            "window has length {}, parameters expect {}",
            x.len(),
            p.tau()
        )));
    }
    let h = (p.w1.dot(&x) + &p.b1).mapv(sigmoid);
    let recon = p.w2.dot(&h) + &p.b2;
    Ok((h, recon))
}

/// `sum_j KL(rho || rho_hat_j)` between Bernoulli distributions.
pub fn kl_sparsity(rho: f64, rho_hat: ArrayView1<'_, f64>) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("rho = {rho} is outside (0, 1)")));
    }
    rho_hat.iter().enumerate().try_fold(0.0, |acc, (j, &r)| {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Domain(format!("rho_hat[{j}] = {r} is outside (0, 1)")));
        }
        Ok(acc + rho * (rho / r).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - r)).ln())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub sparsity: f64,
    pub weight_decay: f64,
}

/// Forward pass over a whole batch.
struct BatchForward {
    hidden: Array2<f64>,
    /// reconstruction minus input
    residual: Array2<f64>,
    rho_hat: Array1<f64>,
}

fn check_batch(p: &AEParams, x: ArrayView2<'_, f64>) -> Result<()> {
    p.check_shapes()?;
    if x.nrows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    if x.ncols() != p.tau() {
        return Err(Error::contract(format!(
            "windows have length {}, parameters expect {}",
            x.ncols(),
            p.tau()
        )));
    }
    Ok(())
}

fn batch_forward(p: &AEParams, x: ArrayView2<'_, f64>) -> BatchForward {
    let mut hidden = x.dot(&p.w1.t());
    hidden += &p.b1;
    hidden.mapv_inplace(sigmoid);
    let mut residual = hidden.dot(&p.w2.t());
    residual += &p.b2;
    residual -= &x;
    let rho_hat = hidden.mean_axis(Axis(0)).expect("non-empty batch");
    BatchForward {
        hidden,
        residual,
        rho_hat,
    }
}

fn breakdown(p: &AEParams, fwd: &BatchForward, h: &AEHyper) -> Result<CostBreakdown> {
    let n = fwd.residual.nrows() as f64;
    let reconstruction = 0.5 * fwd.residual.iter().map(|e| e * e).sum::<f64>() / n;
    let sparsity = if h.beta == 0.0 {
        0.0
    } else {
        h.beta * kl_sparsity(h.rho, fwd.rho_hat.view())?
    };
    let sq = |m: &Array2<f64>| m.iter().map(|w| w * w).sum::<f64>();
    let weight_decay = h.lambda * (sq(&p.w1) + sq(&p.w2));
    Ok(CostBreakdown {
        total: reconstruction + sparsity + weight_decay,
        reconstruction,
        sparsity,
        weight_decay,
    })
}

pub fn cost(p: &AEParams, batch: &WindowSet, h: &AEHyper) -> Result<CostBreakdown> {
    cost_of(p, batch.windows.view(), h)
}

/// [`cost`] on a bare window matrix (one window per row).
pub fn cost_of(p: &AEParams, x: ArrayView2<'_, f64>, h: &AEHyper) -> Result<CostBreakdown> {
    check_batch(p, x)?;
    breakdown(p, &batch_forward(p, x), h)
}

pub fn gradient(p: &AEParams, batch: &WindowSet, h: &AEHyper) -> Result<AEParams> {
    Ok(cost_and_gradient(p, batch.windows.view(), h)?.1)
}

/// Cost breakdown and its exact gradient with respect to every parameter.
pub fn cost_and_gradient(
    p: &AEParams,
    x: ArrayView2<'_, f64>,
    h: &AEHyper,
) -> Result<(CostBreakdown, AEParams)> {
    check_batch(p, x)?;
    let fwd = batch_forward(p, x);
    let cost = breakdown(p, &fwd, h)?;
    let n = x.nrows() as f64;

    let d_recon = &fwd.residual / n;
    let mut w2 = d_recon.t().dot(&fwd.hidden);
    w2.scaled_add(2.0 * h.lambda, &p.w2);
    let b2 = d_recon.sum_axis(Axis(0));

    let mut d_hidden = d_recon.dot(&p.w2);
    if h.beta != 0.0 {
        let rho = h.rho;
        let kl_grad = fwd
            .rho_hat
            .mapv(|r| h.beta * (-rho / r + (1.0 - rho) / (1.0 - r)) / n);
        d_hidden += &kl_grad;
    }
    Zip::from(&mut d_hidden)
        .and(&fwd.hidden)
        .for_each(|d, &a| *d *= a * (1.0 - a));
    let mut w1 = d_hidden.t().dot(&x);
    w1.scaled_add(2.0 * h.lambda, &p.w1);
    let b1 = d_hidden.sum_axis(Axis(0));

    Ok((cost, AEParams { w1, b1, w2, b2 }))
}

// --- training -------------------------------------------------------------

/// Learned filters: row `j` of `filters` is the encoder weight vector of
/// hidden unit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub filters: Array2<f64>,
    pub tau: usize,
    pub hyper: AEHyper,
    pub final_cost: f64,
}

impl FilterBank {
    pub fn k(&self) -> usize {
        self.filters.nrows()
    }

    pub fn filter(&self, j: usize) -> ArrayView1<'_, f64> {
        self.filters.row(j)
    }

    /// Bank with the given filters and default provenance.
    pub fn from_filters(filters: Array2<f64>) -> Self {
        let tau = filters.ncols();
        let hyper = AEHyper {
            k: filters.nrows(),
            ..AEHyper::default()
        };
        Self {
            filters,
            tau,
            hyper,
            final_cost: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: AEParams,
    /// Cost of every accepted iterate, starting with the initial parameters.
    pub costs: Vec<f64>,
    pub bank: FilterBank,
}

/// Train on `batch` and return the learned filters.
pub fn train(batch: &WindowSet, h: &AEHyper) -> Result<FilterBank> {
    Ok(train_detailed(batch, h)?.bank)
}

/// Full-batch gradient descent with backtracking.
///
/// A trial step that raises the cost (or leaves the KL domain) is halved and
/// retried; an accepted step grows the next step by 10%. Stops after
/// `max_iters` iterations, once the relative improvement drops below
/// [`CONVERGENCE_TOL`], or when no step size decreases the cost.
pub fn train_detailed(batch: &WindowSet, h: &AEHyper) -> Result<TrainOutcome> {
    h.validate()?;
    let x = batch.windows.view();
    if x.nrows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    let tau = x.ncols();
    let mut params = AEParams::init(tau, h.k, h.seed);
    let mut step = h.step_size;

    let (initial, mut grad) = cost_and_gradient(&params, x, h)?;
    if !initial.total.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            cost: initial.total,
        });
    }
    let mut current = initial.total;
    let mut costs = vec![current];

    'outer: for iteration in 1..=h.max_iters {
        if !grad.is_finite() {
            return Err(Error::Divergence {
                iteration,
                cost: current,
            });
        }
        let mut halvings = 0;
        let (trial, trial_cost) = loop {
            let trial = params.stepped(&grad, step);
            match cost_of(&trial, x, h) {
                Ok(c) if c.total.is_finite() && c.total <= current => break (trial, c.total),
                _ => {
                    step *= 0.5;
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        break 'outer;
                    }
                }
            }
        };
        step *= STEP_GROWTH;
        let improvement = (current - trial_cost) / current.abs().max(f64::MIN_POSITIVE);
        params = trial;
        current = trial_cost;
        costs.push(current);
        if improvement < CONVERGENCE_TOL {
            break;
        }
        grad = cost_and_gradient(&params, x, h)?.1;
    }

    let bank = FilterBank {
        filters: params.w1.clone(),
        tau,
        hyper: h.clone(),
        final_cost: current,
    };
    Ok(TrainOutcome {
        params,
        costs,
        bank,
    })
}

// --- persistence ----------------------------------------------------------

const BANK_MAGIC: &str = "TCNN-FILTERS";

/// Serialize a bank: `key=value` header (tau, k, rho, beta, lambda,
/// final_cost and the remaining training settings), a blank line, then the
/// filters as little-endian f64, one filter after another.
pub fn encode_filter_bank(bank: &FilterBank) -> Vec<u8> {
    let h = &bank.hyper;
    let mut text = String::new();
    let _ = writeln!(text, "magic={BANK_MAGIC}");
    let _ = writeln!(text, "tau={}", bank.tau);
    let _ = writeln!(text, "k={}", bank.k());
    let _ = writeln!(text, "rho={}", h.rho);
    let _ = writeln!(text, "beta={}", h.beta);
    let _ = writeln!(text, "lambda={}", h.lambda);
    let _ = writeln!(text, "final_cost={}", bank.final_cost);
    let _ = writeln!(text, "max_iters={}", h.max_iters);
    let _ = writeln!(text, "step_size={}", h.step_size);
    let _ = writeln!(text, "seed={}", h.seed);
    text.push('\n');
    let mut bytes = text.into_bytes();
    for v in bank.filters.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Decode one bank from the front of `bytes`, advancing past it.
pub fn decode_filter_bank_from(bytes: &mut &[u8]) -> Result<FilterBank, ParseError> {
    let header = read_header(bytes)?;
    let magic: String = header_value(&header, "magic")?;
    if magic != BANK_MAGIC {
        return Err(ParseError::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let tau: usize = header_value(&header, "tau")?;
    let k: usize = header_value(&header, "k")?;
    if tau == 0 || k == 0 {
        return Err(ParseError::InvariantViolation(format!(
            "filter bank must be non-empty, got k={k}, tau={tau}"
        )));
    }
    let hyper = AEHyper {
        k,
        rho: header_value(&header, "rho")?,
        beta: header_value(&header, "beta")?,
        lambda: header_value(&header, "lambda")?,
        max_iters: header_value(&header, "max_iters")?,
        step_size: header_value(&header, "step_size")?,
        seed: header_value(&header, "seed")?,
    };
    let final_cost = header_value(&header, "final_cost")?;
    let len = (k * tau * 8).min(bytes.len());
    let values = read_f64s(&bytes[..len], k * tau)?;
    *bytes = &bytes[len..];
    Ok(FilterBank {
        filters: Array2::from_shape_vec((k, tau), values).expect("length checked"),
        tau,
        hyper,
        final_cost,
    })
}

pub fn decode_filter_bank(mut bytes: &[u8]) -> Result<FilterBank, ParseError> {
    let bank = decode_filter_bank_from(&mut bytes)?;
    if !bytes.is_empty() {
        return Err(ParseError::DimensionMismatch {
            expected: bank.filters.len(),
            found: bank.filters.len() + bytes.len() / 8,
        });
    }
    Ok(bank)
}

pub fn save_filter_bank(bank: &FilterBank, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_filter_bank(bank))?;
    Ok(())
}

pub fn load_filter_bank(path: impl AsRef<Path>) -> Result<FilterBank> {
    let path = path.as_ref();
    decode_filter_bank(&std::fs::read(path)?).map_err(|source| Error::Parse {
        path: path.to_owned(),
        source,
    })
}
