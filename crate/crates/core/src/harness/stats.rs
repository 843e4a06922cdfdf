use crate::{Error, Result};

/// Fraction of positions where `predictions` and `truth` agree.
pub fn accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::contract("accuracy of an empty prediction set"));
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `counts[truth][predicted]` over `num_classes` classes.
pub fn confusion_matrix(predictions: &[usize], truth: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != truth.len() {
        return Err(Error::contract("prediction and truth lengths differ"));
    }
    let mut counts = vec![vec![0; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::contract(format!("class id out of range 0..{num_classes}")));
        }
        counts[t][p] += 1;
    }
    Ok(counts)
}

/// `ln(i!)` for `i = 0..=n`, accumulated term by term with compensated
/// summation.
pub fn ln_factorial(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    table.push(0.0);
    for i in 1..=n {
        let term = (i as f64).ln();
        let t = sum + term;
        carry += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
        table.push(sum + carry);
    }
    table
}

/// Exact upper tail `P(X >= n_correct)` for `X ~ Binomial(n_trials, chance)`,
/// summed in log space.
pub fn binomial_pvalue(n_correct: usize, n_trials: usize, chance: f64) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::contract("binomial test needs at least one trial"));
    }
    if n_correct > n_trials {
        return Err(Error::contract(format!(
            "{n_correct} successes exceed {n_trials} trials"
        )));
    }
    if !(chance > 0.0 && chance < 1.0) {
        return Err(Error::contract(format!("chance level {chance} is outside (0, 1)")));
    }
    if n_correct == 0 {
        return Ok(1.0);
    }
    let lf = ln_factorial(n_trials);
    let ln_p = chance.ln();
    let ln_q = (-chance).ln_1p();
    let log_terms: Vec<f64> = (n_correct..=n_trials)
        .map(|i| lf[n_trials] - lf[i] - lf[n_trials - i] + i as f64 * ln_p + (n_trials - i) as f64 * ln_q)
        .collect();
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: f64 = log_terms.iter().map(|l| (l - max).exp()).sum();
    Ok((max + scaled.ln()).exp().min(1.0))
}
