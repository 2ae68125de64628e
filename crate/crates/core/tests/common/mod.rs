//! Finite-difference gradient suites shared by the integration tests.
#![allow(dead_code)]

use glt::ifl::{ifl_loss_grad, Centers, MetricVariant};
use glt::nn::{balanced_softmax_loss, ce_loss_grad, focal_loss, irm_penalty, Activation, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POINTS: usize = 100;
pub const MAX_REL_ERR: f64 = 1e-4;
const H: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|)` over the whole gradient vector.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric)).max(1e-12);
    norm(&diff) / scale
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

/// Largest relative error seen by one suite over `POINTS` random points.
pub struct SuiteResult {
    pub name: &'static str,
    pub worst: f64,
}

impl SuiteResult {
    pub fn pass(&self) -> bool {
        self.worst.is_finite() && self.worst < MAX_REL_ERR
    }
}

fn suite(name: &'static str, seed: u64, mut point: impl FnMut(&mut ChaCha8Rng) -> f64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let worst = (0..POINTS).map(|_| point(&mut rng)).fold(0.0, f64::max);
    SuiteResult { name, worst }
}

pub fn ce() -> SuiteResult {
    suite("cross-entropy", 1, |rng| {
        let l = normal_vec(rng, 6, 3.0);
        let y = rng.random_range(0..6);
        rel_err(&ce_loss_grad(&l, y).1, &numeric_grad(&l, |v| ce_loss_grad(v, y).0))
    })
}

pub fn focal() -> SuiteResult {
    suite("focal", 2, |rng| {
        let l = normal_vec(rng, 6, 3.0);
        let y = rng.random_range(0..6);
        rel_err(&focal_loss(&l, y, 2.0).1, &numeric_grad(&l, |v| focal_loss(v, y, 2.0).0))
    })
}

pub fn balanced_softmax() -> SuiteResult {
    suite("balanced softmax", 3, |rng| {
        let l = normal_vec(rng, 6, 3.0);
        let y = rng.random_range(0..6);
        let counts: Vec<f64> = (0..6).map(|_| rng.random_range(1..400) as f64).collect();
        let g = balanced_softmax_loss(&l, y, &counts).unwrap().1;
        rel_err(&g, &numeric_grad(&l, |v| balanced_softmax_loss(v, y, &counts).unwrap().0))
    })
}

fn ifl(name: &'static str, seed: u64, variant: MetricVariant) -> SuiteResult {
    suite(name, seed, |rng| {
        let rows = (0..4).map(|_| normal_vec(rng, 8, 2.0)).collect();
        let centers = Centers::new(rows, 0.5);
        let z = normal_vec(rng, 8, 2.0);
        let y = rng.random_range(0..4);
        let g = ifl_loss_grad(&z, y, &centers, variant).1;
        rel_err(&g, &numeric_grad(&z, |v| ifl_loss_grad(v, y, &centers, variant).0))
    })
}

pub fn ifl_squared() -> SuiteResult {
    ifl("IFL squared", 4, MetricVariant::Squared)
}

pub fn ifl_l2() -> SuiteResult {
    ifl("IFL L2", 5, MetricVariant::L2)
}

pub fn irm() -> SuiteResult {
    suite("IRM penalty", 6, |rng| {
        let (envs, per_env, k) = (2, 5, 4);
        let labels: Vec<Vec<usize>> = (0..envs)
            .map(|_| (0..per_env).map(|_| rng.random_range(0..k)).collect())
            .collect();
        let flat = normal_vec(rng, envs * per_env * k, 2.0);
        let unflatten = |v: &[f64]| -> Vec<Vec<Vec<f64>>> {
            v.chunks(per_env * k).map(|e| e.chunks(k).map(<[f64]>::to_vec).collect()).collect()
        };
        let p = irm_penalty(&unflatten(&flat), &labels).unwrap();
        let analytic: Vec<f64> = p.grads.iter().flatten().flatten().copied().collect();
        rel_err(&analytic, &numeric_grad(&flat, |v| irm_penalty(&unflatten(v), &labels).unwrap().value))
    })
}

/// Cross-entropy on the logits plus `<dz, z>` on the features, through every layer.
fn network(name: &'static str, seed: u64, activation: Activation) -> SuiteResult {
    suite(name, seed, |rng| {
        let params = ModelParams::init(&[10, 12, 8], 5, activation, rng).unwrap();
        let x = normal_vec(rng, 10, 1.5);
        let y = rng.random_range(0..5);
        let dz = normal_vec(rng, 8, 1.0);
        let objective = |p: &ModelParams| {
            let f = p.forward(&x).unwrap();
            ce_loss_grad(&f.logits, y).0 + f.features.iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>()
        };
        let f = params.forward(&x).unwrap();
        let dlogits = ce_loss_grad(&f.logits, y).1;
        let analytic = params.backward(&f.cache, &dlogits, Some(&dz)).unwrap().to_flat();
        let mut probe = params.clone();
        let numeric = numeric_grad(&params.to_flat(), |v| {
            probe.load_flat(v).unwrap();
            objective(&probe)
        });
        rel_err(&analytic, &numeric)
    })
}

pub fn network_relu() -> SuiteResult {
    network("network (relu)", 7, Activation::Relu)
}

pub fn network_tanh() -> SuiteResult {
    network("network (tanh)", 8, Activation::Tanh)
}

pub fn all_suites() -> Vec<SuiteResult> {
    vec![
        ce(),
        focal(),
        balanced_softmax(),
        ifl_squared(),
        ifl_l2(),
        irm(),
        network_relu(),
        network_tanh(),
    ]
}
