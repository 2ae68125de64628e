//! Classification objectives on raw logits. Every loss returns its value and
//! the gradient with respect to the logits it was given.

use crate::error::{Error, Result};

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[y]` and `softmax(logits) - onehot(y)`.
pub fn ce_loss_grad(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let mut grad: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    grad[y] -= 1.0;
    (-logp[y], grad)
}

/// Cross-entropy on `logits + ln(class_counts)`.
pub fn balanced_softmax_loss(logits: &[f64], y: usize, class_counts: &[f64]) -> Result<(f64, Vec<f64>)> {
    if class_counts.len() != logits.len() {
        return Err(Error::Shape("class_counts and logits differ in length".into()));
    }
    if class_counts.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::config("class_counts", "every count must be positive"));
    }
    let shifted: Vec<f64> = logits.iter().zip(class_counts).map(|(l, c)| l + c.ln()).collect();
    // the shift is constant in the logits, so the gradient carries over unchanged
    Ok(ce_loss_grad(&shifted, y))
}

/// Post-hoc adjustment `logits - tau * ln(prior)`.
pub fn logit_adjust(logits: &[f64], class_prior: &[f64], tau: f64) -> Vec<f64> {
    if tau == 0.0 {
        return logits.to_vec();
    }
    logits
        .iter()
        .zip(class_prior)
        .map(|(l, p)| l - tau * p.ln())
        .collect()
}

/// `(1 - p_y)^gamma * (-log p_y)` with its analytic gradient.
pub fn focal_loss(logits: &[f64], y: usize, gamma: f64) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    let p = probs[y];
    // 1 - p_y summed from the other classes keeps precision when p_y is near 1
    let q: f64 = probs
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != y)
        .map(|(_, v)| v)
        .sum();
    let ce = -logp[y];
    let loss = q.powf(gamma) * ce;

    // dL/dp_y, then chain through dp_y/dl_j = p_y (delta_jy - p_j)
    let dl_dp_times_p = if gamma == 0.0 {
        -1.0
    } else if q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * logp[y] * p - q.powf(gamma)
    };
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, pj)| {
            let delta = if j == y { 1.0 } else { 0.0 };
            dl_dp_times_p * (delta - pj)
        })
        .collect();
    (loss, grad)
}

/// IRMv1 penalty and its gradient with respect to every logit.
#[derive(Debug, Clone)]
pub struct IrmPenalty {
    pub value: f64,
    /// Per environment, per sample, the gradient of `value` w.r.t. that sample's logits.
    pub grads: Vec<Vec<Vec<f64>>>,
}

/// Sum over environments of the squared derivative of the mean environment
/// cross-entropy with respect to a scalar multiplier on the logits, at 1.0.
pub fn irm_penalty(per_env_logits: &[Vec<Vec<f64>>], per_env_labels: &[Vec<usize>]) -> Result<IrmPenalty> {
    if per_env_logits.len() != per_env_labels.len() {
        return Err(Error::Shape("environment count mismatch".into()));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(per_env_logits.len());
    for (logits, labels) in per_env_logits.iter().zip(per_env_labels) {
        if logits.len() != labels.len() {
            return Err(Error::Shape("logits and labels differ in length".into()));
        }
        if logits.is_empty() {
            grads.push(Vec::new());
            continue;
        }
        let n = logits.len() as f64;
        let mut slope = 0.0;
        let mut dslope = Vec::with_capacity(logits.len());
        for (l, &y) in logits.iter().zip(labels) {
            let p = softmax(l);
            let residual: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(j, pj)| pj - if j == y { 1.0 } else { 0.0 })
                .collect();
            slope += residual.iter().zip(l).map(|(r, v)| r * v).sum::<f64>() / n;
            // d/dl [ (p - e_y) . l ] = (p - e_y) + J l,  J = diag(p) - p p^T
            let pl: f64 = p.iter().zip(l).map(|(a, b)| a * b).sum();
            dslope.push(
                residual
                    .iter()
                    .zip(&p)
                    .zip(l)
                    .map(|((r, pj), lj)| (r + pj * lj - pj * pl) / n)
                    .collect::<Vec<f64>>(),
            );
        }
        value += slope * slope;
        grads.push(
            dslope
                .into_iter()
                .map(|d| d.into_iter().map(|v| 2.0 * slope * v).collect())
                .collect(),
        );
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("IRM penalty".into()));
    }
    Ok(IrmPenalty { value, grads })
}
