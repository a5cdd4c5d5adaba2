use serde::{Deserialize, Serialize};

use crate::error::{Result, SpineError};
use crate::lse::log_sum_exp;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Mse,
    Nll,
}

impl std::str::FromStr for Loss {
    type Err = SpineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Loss::Mse),
            "nll" => Ok(Loss::Nll),
            other => Err(SpineError::Config(format!("unknown loss '{other}' (mse|nll)"))),
        }
    }
}

/// Mean squared error over all entries and its gradient with respect to `pred`.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(SpineError::Input(format!(
            "mse: {} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = p - t;
            sum += e * e;
            2.0 * e / n
        })
        .collect();
    Ok((sum / n, grad))
}

/// Mean negative log-likelihood of softmax(`logits`) rows (`k` classes per
/// row) and its gradient with respect to the logits, `(p - onehot) / batch`.
pub fn loss_nll(logits: &[f64], k: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if k == 0 || logits.len() != k * labels.len() || labels.is_empty() {
        return Err(SpineError::Input(format!(
            "nll: {} logits for {} labels of {k} classes",
            logits.len(),
            labels.len()
        )));
    }
    let batch = labels.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for ((row, g), &label) in logits.chunks_exact(k).zip(grad.chunks_exact_mut(k)).zip(labels) {
        if label >= k {
            return Err(SpineError::Input(format!("label {label} out of range for {k} classes")));
        }
        let lse = log_sum_exp(row.iter().copied());
        total += lse - row[label];
        for (gi, &l) in g.iter_mut().zip(row) {
            *gi = (l - lse).exp() / batch;
        }
        g[label] -= 1.0 / batch;
    }
    Ok((total / batch, grad))
}

/// Mean `-ln p_label` of probability rows.
pub fn nll_of_probabilities(probs: &[f64], k: usize, labels: &[usize]) -> Result<f64> {
    if k == 0 || labels.is_empty() || probs.len() != k * labels.len() {
        return Err(SpineError::Input("nll: shape mismatch".into()));
    }
    let mut total = 0.0;
    for (row, &label) in probs.chunks_exact(k).zip(labels) {
        if label >= k {
            return Err(SpineError::Input(format!("label {label} out of range for {k} classes")));
        }
        total -= row[label].ln();
    }
    Ok(total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(loss_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        let (l, g) = loss_mse(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g, vec![1.0, 1.0]);
        assert!(loss_mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nll_examples() {
        assert_eq!(nll_of_probabilities(&[0.0, 1.0], 2, &[1]).unwrap(), 0.0);
        let (l, _) = loss_nll(&[0.0; 10], 10, &[3]).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-15);
        assert!(loss_nll(&[0.0, 0.0], 2, &[2]).is_err());
    }

    #[test]
    fn gradients_match_differences() {
        let pred = [0.3, -1.2, 2.0, 0.7];
        let target = [0.1, 0.4, 1.0, -0.3];
        let (_, g) = loss_mse(&pred, &target).unwrap();
        let (_, gn) = loss_nll(&pred, 2, &[0, 1]).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut p = pred;
            p[i] += h;
            let up = loss_mse(&p, &target).unwrap().0;
            let upn = loss_nll(&p, 2, &[0, 1]).unwrap().0;
            p[i] -= 2.0 * h;
            let dn = loss_mse(&p, &target).unwrap().0;
            let dnn = loss_nll(&p, 2, &[0, 1]).unwrap().0;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[i]).abs() / g[i].abs().max(1e-8) < 1e-6);
            let fdn = (upn - dnn) / (2.0 * h);
            assert!((fdn - gn[i]).abs() / gn[i].abs().max(1e-8) < 1e-6);
        }
    }
}
