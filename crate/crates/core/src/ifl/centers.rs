use serde::{Deserialize, Serialize};

/// Moving-average class centers in feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centers {
    rows: Vec<Vec<f64>>,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricVariant {
    /// `0.5 * |z - C_y|^2`.
    #[default]
    Squared,
    /// `|z - C_y|`.
    L2,
}

impl std::str::FromStr for MetricVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "squared" => Ok(MetricVariant::Squared),
            "l2" => Ok(MetricVariant::L2),
            _ => Err(crate::Error::config("metric", format!("unknown metric `{s}` (squared or l2)"))),
        }
    }
}

/// Guards the L2 variant's gradient at `z = C_y`.
pub const L2_EPS: f64 = 1e-8;

impl Centers {
    pub fn new(rows: Vec<Vec<f64>>, eta: f64) -> Self {
        Self { rows, eta }
    }

    pub fn zeros(n_classes: usize, dim: usize, eta: f64) -> Self {
        Self::new(vec![vec![0.0; dim]; n_classes], eta)
    }

    /// Centers at the per-class means of `(feature, label)` pairs; absent classes stay at zero.
    pub fn from_means<'a>(
        n_classes: usize,
        dim: usize,
        eta: f64,
        items: impl IntoIterator<Item = (&'a [f64], usize)>,
    ) -> Self {
        let mut c = Self::zeros(n_classes, dim, eta);
        let mut counts = vec![0usize; n_classes];
        for (z, y) in items {
            counts[y] += 1;
            c.rows[y].iter_mut().zip(z).for_each(|(a, b)| *a += b);
        }
        for (row, n) in c.rows.iter_mut().zip(counts) {
            if n > 0 {
                row.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        c
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.rows[class]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.is_finite())
    }

    /// `C_k <- C_k - eta * (C_k - mean of batch features of class k)` for classes in the batch.
    pub fn update(&mut self, features: &[Vec<f64>], labels: &[usize]) {
        let dim = self.rows.first().map_or(0, Vec::len);
        let mut sums = vec![vec![0.0; dim]; self.rows.len()];
        let mut counts = vec![0usize; self.rows.len()];
        for (z, &y) in features.iter().zip(labels) {
            counts[y] += 1;
            sums[y].iter_mut().zip(z).for_each(|(a, b)| *a += b);
        }
        for ((row, sum), n) in self.rows.iter_mut().zip(sums).zip(counts) {
            if n == 0 {
                continue;
            }
            for (c, s) in row.iter_mut().zip(sum) {
                *c -= self.eta * (*c - s / n as f64);
            }
        }
    }
}

/// Metric loss between a feature and its class center, with the gradient in the feature.
/// No gradient reaches the center.
pub fn ifl_loss_grad(z: &[f64], y: usize, centers: &Centers, variant: MetricVariant) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = z.iter().zip(centers.row(y)).map(|(a, b)| a - b).collect();
    let sq: f64 = diff.iter().map(|d| d * d).sum();
    match variant {
        MetricVariant::Squared => (0.5 * sq, diff),
        MetricVariant::L2 => {
            let norm = sq.sqrt();
            let scale = 1.0 / norm.max(L2_EPS);
            (norm, diff.into_iter().map(|d| d * scale).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_mean_at_center_is_a_fixed_point() {
        let mut c = Centers::new(vec![vec![1.0, 2.0], vec![0.0, 0.0]], 0.5);
        c.update(&[vec![0.0, 2.0], vec![2.0, 2.0]], &[0, 0]);
        assert_eq!(c.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn full_step_jumps_to_mean_and_absent_classes_stay() {
        let mut c = Centers::new(vec![vec![1.0, 2.0], vec![5.0, 5.0]], 1.0);
        c.update(&[vec![3.0, -1.0], vec![5.0, 1.0]], &[0, 0]);
        assert_eq!(c.row(0), &[4.0, 0.0]);
        assert_eq!(c.row(1), &[5.0, 5.0]);
    }

    #[test]
    fn geometric_convergence_ratio() {
        // C_t - m = (1 - eta)^t (C_0 - m)
        let eta = 0.5;
        let mut c = Centers::new(vec![vec![10.0]], eta);
        for t in 1..=20 {
            c.update(&[vec![2.0]], &[0]);
            let want = 2.0 + 8.0 * (1.0f64 - eta).powi(t);
            assert!((c.row(0)[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let c = Centers::new(vec![vec![1.0]], 0.5);
        assert_eq!(ifl_loss_grad(&[1.0], 0, &c, MetricVariant::Squared), (0.0, vec![0.0]));
        assert_eq!(ifl_loss_grad(&[3.0], 0, &c, MetricVariant::Squared), (2.0, vec![2.0]));
        let (l, g) = ifl_loss_grad(&[3.0], 0, &c, MetricVariant::L2);
        assert_eq!((l, g), (2.0, vec![1.0]));
        let (l, g) = ifl_loss_grad(&[1.0], 0, &c, MetricVariant::L2);
        assert_eq!((l, g), (0.0, vec![0.0]));
    }
}
