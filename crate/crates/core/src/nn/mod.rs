//! A small fully connected classifier with hand-written reverse mode.
//!
//! `x -> [dense -> activation]* -> z -> dense -> logits`. The last hidden
//! output `z` is the penultimate feature the metric losses act on.

pub mod checkpoint;
mod config;
pub mod loss;
pub mod optim;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loss::{
    balanced_softmax_loss, ce_loss_grad, focal_loss, irm_penalty, log_softmax, logit_adjust, softmax,
    IrmPenalty,
};
pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use config::{LrSchedule, Method, TrainConfig};
pub use optim::{cosine_lr, multistep_lr, sgd_step, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

/// Row-major `out_dim x in_dim` weights plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    fn random(in_dim: usize, out_dim: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let std = (gain / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>();
        Self {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.w.chunks_exact(self.in_dim).zip(&self.b).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hidden: Vec<Dense>,
    pub head: Dense,
    pub activation: Activation,
}

/// Intermediate values kept by [`ModelParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
    pub cache: Cache,
}

/// Parameter-shaped gradient buffer.
pub type Gradients = ModelParams;

impl ModelParams {
    /// He-initialized network. `dims` lists the input dim followed by every hidden width.
    pub fn init(dims: &[usize], n_classes: usize, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) || n_classes == 0 {
            return Err(Error::Shape(format!("bad layer dims {dims:?} -> {n_classes}")));
        }
        let gain = match activation {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        };
        let hidden = dims
            .windows(2)
            .map(|w| Dense::random(w[0], w[1], gain, rng))
            .collect();
        let head = Dense::random(*dims.last().unwrap(), n_classes, 1.0, rng);
        Ok(Self {
            hidden,
            head,
            activation,
        })
    }

    pub fn zeros(dims: &[usize], n_classes: usize, activation: Activation) -> Self {
        Self {
            hidden: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            head: Dense::zeros(*dims.last().unwrap(), n_classes),
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims(), self.n_classes(), self.activation)
    }

    /// Input dim followed by the hidden widths.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.hidden.iter().map(|l| l.out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().map_or(self.head.in_dim, |l| l.in_dim)
    }

    pub fn feature_dim(&self) -> usize {
        self.head.in_dim
    }

    pub fn n_classes(&self) -> usize {
        self.head.out_dim
    }

    pub fn n_params(&self) -> usize {
        self.hidden.iter().map(Dense::len).sum::<usize>() + self.head.len()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain(std::iter::once(&self.head))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden.iter_mut().chain(std::iter::once(&mut self.head))
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in self.layers() {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut pos = 0;
        for l in self.layers_mut() {
            let (w, b) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&flat[pos..pos + w]);
            l.b.copy_from_slice(&flat[pos + w..pos + w + b]);
            pos += w + b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!("input has {} entries, expected {}", x.len(), self.input_dim())));
        }
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let input = post.last().map_or(x, |v| v.as_slice());
            let mut a = Vec::with_capacity(layer.out_dim);
            layer.apply(input, &mut a);
            let h: Vec<f64> = a.iter().map(|v| self.activation.apply(*v)).collect();
            pre.push(a);
            post.push(h);
        }
        let features = post.last().map_or_else(|| x.to_vec(), Clone::clone);
        let mut logits = Vec::with_capacity(self.n_classes());
        self.head.apply(&features, &mut logits);
        if logits.iter().chain(&features).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward activations".into()));
        }
        Ok(Forward {
            features,
            logits,
            cache: Cache {
                input: x.to_vec(),
                pre,
                post,
            },
        })
    }

    pub fn forward_f32(&self, x: &[f32]) -> Result<Forward> {
        let x: Vec<f64> = x.iter().map(|v| *v as f64).collect();
        self.forward(&x)
    }

    /// Exact gradient of `loss + <dz_extra, z>` given `dloss/dlogits`.
    pub fn backward(&self, cache: &Cache, dlogits: &[f64], dz_extra: Option<&[f64]>) -> Result<Gradients> {
        let mut grads = self.zeros_like();
        self.accumulate_backward(cache, dlogits, dz_extra, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `scale` times the gradient of one sample into `grads`.
    pub fn accumulate_backward(
        &self,
        cache: &Cache,
        dlogits: &[f64],
        dz_extra: Option<&[f64]>,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        if dlogits.len() != self.n_classes() {
            return Err(Error::Shape(format!("dlogits has {} entries, expected {}", dlogits.len(), self.n_classes())));
        }
        if let Some(dz) = dz_extra {
            if dz.len() != self.feature_dim() {
                return Err(Error::Shape(format!("dz_extra has {} entries, expected {}", dz.len(), self.feature_dim())));
            }
        }
        if cache.pre.len() != self.hidden.len() || cache.input.len() != self.input_dim() {
            return Err(Error::Shape("cache does not match these parameters".into()));
        }

        let features = cache.post.last().unwrap_or(&cache.input);
        let head = &self.head;
        let mut delta = vec![0.0; head.in_dim];
        for (o, &g) in dlogits.iter().enumerate() {
            let g = g * scale;
            grads.head.b[o] += g;
            let row = &head.w[o * head.in_dim..(o + 1) * head.in_dim];
            let grow = &mut grads.head.w[o * head.in_dim..(o + 1) * head.in_dim];
            for i in 0..head.in_dim {
                grow[i] += g * features[i];
                delta[i] += dlogits[o] * row[i];
            }
        }
        if let Some(dz) = dz_extra {
            delta.iter_mut().zip(dz).for_each(|(d, e)| *d += e);
        }

        for li in (0..self.hidden.len()).rev() {
            let layer = &self.hidden[li];
            let input = if li == 0 { &cache.input } else { &cache.post[li - 1] };
            let pre = &cache.pre[li];
            let post = &cache.post[li];
            let local: Vec<f64> = (0..layer.out_dim)
                .map(|o| delta[o] * self.activation.derivative(pre[o], post[o]))
                .collect();
            let mut next = vec![0.0; layer.in_dim];
            let g = &mut grads.hidden[li];
            for (o, &d) in local.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.b[o] += d * scale;
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut g.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += d * scale * input[i];
                    next[i] += d * row[i];
                }
            }
            delta = next;
        }
        Ok(())
    }

    /// Adds `scale * other` to every parameter.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.w.iter_mut().zip(&b.w).for_each(|(x, y)| *x += scale * y);
            a.b.iter_mut().zip(&b.b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn fill_zero(&mut self) {
        for l in self.layers_mut() {
            l.w.iter_mut().for_each(|v| *v = 0.0);
            l.b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Replaces the classifier head with a freshly initialized one.
    pub fn reinit_head(&mut self, rng: &mut impl Rng) {
        self.head = Dense::random(self.head.in_dim, self.head.out_dim, 1.0, rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stage_rng;

    #[test]
    fn zero_network_gives_zero_logits() {
        let p = ModelParams::zeros(&[5, 4], 3, Activation::Relu);
        let f = p.forward(&[1.0, -2.0, 3.0, 0.5, 0.0]).unwrap();
        assert!(f.logits.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_layer_passes_nonnegative_inputs() {
        let mut p = ModelParams::zeros(&[3, 3], 2, Activation::Relu);
        for i in 0..3 {
            p.hidden[0].w[i * 3 + i] = 1.0;
        }
        let x = [0.5, 2.0, 0.0];
        let f = p.forward(&x).unwrap();
        assert_eq!(f.features, x.to_vec());
    }

    #[test]
    fn forward_is_pure() {
        let p = ModelParams::init(&[6, 8], 3, Activation::Tanh, &mut stage_rng(1, "init")).unwrap();
        let x = [0.1, -0.3, 0.5, 1.0, -1.0, 0.2];
        let a = p.forward(&x).unwrap();
        let b = p.forward(&x).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = ModelParams::init(&[4, 6], 3, Activation::Relu, &mut stage_rng(2, "init")).unwrap();
        let f = p.forward(&[1.0, 0.5, -0.5, 2.0]).unwrap();
        let g = p.backward(&f.cache, &[0.0; 3], Some(&[0.0; 6])).unwrap();
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn feature_hook_skips_the_head() {
        let p = ModelParams::init(&[4, 6], 3, Activation::Relu, &mut stage_rng(3, "init")).unwrap();
        let f = p.forward(&[1.0, 0.5, -0.5, 2.0]).unwrap();
        let g = p.backward(&f.cache, &[0.0; 3], Some(&[1.0; 6])).unwrap();
        assert!(g.head.w.iter().chain(&g.head.b).all(|v| *v == 0.0));
        assert!(g.hidden[0].w.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn shape_errors() {
        let p = ModelParams::zeros(&[4, 6], 3, Activation::Relu);
        assert!(p.forward(&[1.0; 3]).is_err());
        let f = p.forward(&[1.0; 4]).unwrap();
        assert!(p.backward(&f.cache, &[0.0; 2], None).is_err());
        assert!(p.backward(&f.cache, &[0.0; 3], Some(&[0.0; 5])).is_err());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut p = ModelParams::zeros(&[2, 2], 2, Activation::Relu);
        p.head.b[0] = f64::NAN;
        assert!(matches!(p.forward(&[1.0, 1.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn flat_roundtrip() {
        let p = ModelParams::init(&[3, 5, 4], 2, Activation::Relu, &mut stage_rng(4, "init")).unwrap();
        let mut q = p.zeros_like();
        q.load_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
    }
}
