//! Greedy attribute balancing for multi-label samples.
//!
//! Each round adds the not-yet-selected sample whose attribute vector makes the
//! normalized running attribute histogram most uniform (smallest population
//! standard deviation). Ties go to the lowest sample id.

/// Tolerance below which two standard deviations count as a tie.
pub const TIE_EPS: f64 = 1e-12;

/// Population standard deviation of `counts / sum(counts)` (all zeros stay zeros).
pub fn normalized_std(counts: &[f64]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let sum: f64 = counts.iter().sum();
    let n = counts.len() as f64;
    let scaled: Vec<f64> = if sum > 0.0 {
        counts.iter().map(|c| c / sum).collect()
    } else {
        counts.to_vec()
    };
    let mean = scaled.iter().sum::<f64>() / n;
    (scaled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Selects `n` of `candidates` (sample id, attribute 0/1 vector). Candidates are
/// scanned in ascending id order.
pub fn greedy_select(candidates: &[(u32, Vec<f64>)], n: usize) -> Vec<u32> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| candidates[i].0);
    let width = candidates.first().map_or(0, |c| c.1.len());
    let mut dist = vec![0.0; width];
    let mut taken = vec![false; candidates.len()];
    let mut picked = Vec::with_capacity(n);
    let mut temp = vec![0.0; width];
    for _ in 0..n.min(candidates.len()) {
        let mut best: Option<(usize, f64)> = None;
        for &i in &order {
            if taken[i] {
                continue;
            }
            temp.iter_mut()
                .zip(&dist)
                .zip(&candidates[i].1)
                .for_each(|((t, d), z)| *t = d + z);
            let s = normalized_std(&temp);
            if best.is_none_or(|(_, b)| s < b - TIE_EPS) {
                best = Some((i, s));
            }
        }
        let (i, _) = best.expect("an unselected candidate remains");
        taken[i] = true;
        dist.iter_mut().zip(&candidates[i].1).for_each(|(d, z)| *d += z);
        picked.push(candidates[i].0);
    }
    picked
}

/// Std of the normalized histogram of a chosen subset.
pub fn subset_std(candidates: &[(u32, Vec<f64>)], chosen: &[usize]) -> f64 {
    let width = candidates.first().map_or(0, |c| c.1.len());
    let mut dist = vec![0.0; width];
    for &i in chosen {
        dist.iter_mut().zip(&candidates[i].1).for_each(|(d, z)| *d += z);
    }
    normalized_std(&dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::index::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn onehot(a: usize, width: usize) -> Vec<f64> {
        (0..width).map(|j| if j == a { 1.0 } else { 0.0 }).collect()
    }

    fn combos(n: usize, r: usize) -> Vec<Vec<usize>> {
        if r == 0 {
            return vec![vec![]];
        }
        if n < r {
            return vec![];
        }
        let mut out = combos(n - 1, r);
        for mut c in combos(n - 1, r - 1) {
            c.push(n - 1);
            out.push(c);
        }
        out
    }

    #[test]
    fn single_attribute_objects_balance_exactly() {
        // 4 objects of each of 3 attributes, listed head-first
        let cands: Vec<(u32, Vec<f64>)> = (0..12).map(|i| (i as u32, onehot(i as usize / 4, 3))).collect();
        let picked = greedy_select(&cands, 6);
        let mut hist = [0; 3];
        picked.iter().for_each(|&id| hist[id as usize / 4] += 1);
        assert_eq!(hist, [2, 2, 2]);
    }

    #[test]
    fn never_repeats_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cands: Vec<(u32, Vec<f64>)> = (0..30)
            .map(|i| (i, (0..5).map(|_| f64::from(rng.random_bool(0.3))).collect()))
            .collect();
        let a = greedy_select(&cands, 20);
        let b = greedy_select(&cands, 20);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 20);
    }

    #[test]
    fn ten_objects_three_attributes_matches_exhaustive() {
        let attrs = [
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
        ];
        let cands: Vec<(u32, Vec<f64>)> = attrs.iter().enumerate().map(|(i, a)| (i as u32, a.to_vec())).collect();
        let picked: Vec<usize> = greedy_select(&cands, 4).iter().map(|&id| id as usize).collect();
        let greedy = subset_std(&cands, &picked);
        let best = combos(10, 4)
            .iter()
            .map(|c| subset_std(&cands, c))
            .fold(f64::INFINITY, f64::min);
        assert!((greedy - best).abs() < 1e-12, "greedy {greedy} vs exhaustive {best}");
    }

    #[test]
    fn beats_median_random_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let weights = [0.8, 0.5, 0.3, 0.15, 0.05];
        let cands: Vec<(u32, Vec<f64>)> = (0..60)
            .map(|i| (i, weights.iter().map(|p| f64::from(rng.random_bool(*p))).collect()))
            .collect();
        let picked: Vec<usize> = greedy_select(&cands, 15).iter().map(|&id| id as usize).collect();
        let greedy = subset_std(&cands, &picked);
        let mut random: Vec<f64> = (0..1000)
            .map(|_| subset_std(&cands, &sample(&mut rng, 60, 15).into_vec()))
            .collect();
        random.sort_by(f64::total_cmp);
        assert!(greedy <= random[500]);
    }
}
