use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::error::Result;
use crate::ifl::Environment;
use crate::nn::{softmax, ModelParams};
use crate::splits::Split;

fn features_of(params: &ModelParams, ds: &Dataset, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
    ids.par_iter()
        .map(|&id| Ok(params.forward_f32(&ds.sample(id).x)?.features))
        .collect()
}

fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|v| *v /= rows.len() as f64);
    m
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean over classes of the average pairwise L2 distance between the
/// per-environment feature means of that class.
pub fn center_invariance(params: &ModelParams, ds: &Dataset, envs: &[Environment]) -> Result<f64> {
    if envs.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut classes = 0;
    for k in 0..ds.n_classes {
        if envs.iter().any(|e| e.per_class[k].is_empty()) {
            continue;
        }
        let means = envs
            .iter()
            .map(|e| Ok(mean(&features_of(params, ds, &e.per_class[k])?)))
            .collect::<Result<Vec<_>>>()?;
        let mut sum = 0.0;
        let mut pairs = 0;
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                sum += dist(&means[i], &means[j]);
                pairs += 1;
            }
        }
        total += sum / pairs as f64;
        classes += 1;
    }
    Ok(if classes == 0 { 0.0 } else { total / classes as f64 })
}

/// Pearson correlation; 0 when either side has no variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Pearson r between ground-truth confidence and the cosine similarity of each
/// sample's feature to its class's mean feature over `split`.
pub fn confidence_center_correlation(params: &ModelParams, ds: &Dataset, split: &Split) -> Result<f64> {
    let outputs: Vec<(Vec<f64>, f64, usize)> = split
        .sample_ids
        .par_iter()
        .map(|&id| {
            let s = ds.sample(id);
            let f = params.forward_f32(&s.x)?;
            Ok((f.features, softmax(&f.logits)[s.y], s.y))
        })
        .collect::<Result<_>>()?;
    let dim = params.feature_dim();
    let mut sums = vec![vec![0.0; dim]; ds.n_classes];
    let mut counts = vec![0usize; ds.n_classes];
    for (z, _, y) in &outputs {
        counts[*y] += 1;
        sums[*y].iter_mut().zip(z).for_each(|(a, b)| *a += b);
    }
    for (s, n) in sums.iter_mut().zip(&counts) {
        if *n > 0 {
            s.iter_mut().for_each(|v| *v /= *n as f64);
        }
    }
    let conf: Vec<f64> = outputs.iter().map(|o| o.1).collect();
    let sim: Vec<f64> = outputs.iter().map(|(z, _, y)| cosine(z, &sums[*y])).collect();
    Ok(pearson(&conf, &sim))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_of_affine_pair_is_one() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        assert!((pearson(&x, &y) - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &vec![1.0; 50]), 0.0);
    }
}
