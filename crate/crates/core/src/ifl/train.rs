use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    confidence_scores, construct_environments, ifl_loss_grad, Centers, EnvConfig, Environment, EnvironmentDump,
};
use crate::datagen::{self, Dataset};
use crate::error::{Error, Result};
use crate::nn::{
    balanced_softmax_loss, ce_loss_grad, cosine_lr, focal_loss, irm_penalty, Forward, Method, ModelParams, Sgd,
    TrainConfig,
};
use crate::rng::{stage_rng, StageRng};
use crate::splits::Split;

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean classification loss per sample.
    pub loss_cls: f64,
    /// Mean weighted auxiliary term per sample (`alpha * L_IFL`, or the IRM penalty term).
    pub loss_ifl: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub centers: Option<Centers>,
    pub log: Vec<EpochLog>,
    /// Environments in force at the end of training.
    pub environments: Vec<Environment>,
    pub dumps: Vec<EnvironmentDump>,
    /// Class frequencies of the training split.
    pub class_prior: Vec<f64>,
}

struct EpochStats {
    loss_cls: f64,
    loss_aux: f64,
    samples: usize,
}

struct Trainer<'a> {
    ds: &'a Dataset,
    cfg: &'a TrainConfig,
    env_cfg: &'a EnvConfig,
    counts: Vec<f64>,
    params: ModelParams,
    grads: ModelParams,
    sgd: Sgd,
    centers: Option<Centers>,
    epoch: usize,
}

impl Trainer<'_> {
    fn diverged(&self, what: &str) -> Error {
        Error::Diverged {
            epoch: self.epoch,
            what: what.to_string(),
        }
    }

    fn forward(&self, id: u32) -> Result<Forward> {
        self.params
            .forward_f32(&self.ds.sample(id).x)
            .map_err(|e| self.diverged(&e.to_string()))
    }

    fn class_loss(&self, logits: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        let (l, g) = match self.cfg.method {
            Method::Blsoftmax => balanced_softmax_loss(logits, y, &self.counts)?,
            Method::Focal => focal_loss(logits, y, self.cfg.gamma),
            _ => ce_loss_grad(logits, y),
        };
        if !l.is_finite() {
            return Err(self.diverged("classification loss"));
        }
        Ok((l, g))
    }

    fn apply_step(&mut self, lr: f64) -> Result<()> {
        self.sgd.step(&mut self.params, &self.grads, lr);
        if !self.params.is_finite() {
            return Err(self.diverged("parameters"));
        }
        Ok(())
    }

    fn step(&mut self, batch: &[u32], lr: f64, alpha: f64, stats: &mut EpochStats) -> Result<()> {
        self.grads.fill_zero();
        let scale = 1.0 / batch.len() as f64;
        let mut feats = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for &id in batch {
            let y = self.ds.sample(id).y;
            let f = self.forward(id)?;
            let (l, dl) = self.class_loss(&f.logits, y)?;
            stats.loss_cls += l;
            let dz = match (&self.centers, alpha > 0.0) {
                (Some(c), true) => {
                    let (m, g) = ifl_loss_grad(&f.features, y, c, self.env_cfg.metric);
                    stats.loss_aux += alpha * m;
                    Some(g.into_iter().map(|v| alpha * v).collect::<Vec<f64>>())
                }
                _ => None,
            };
            self.params
                .accumulate_backward(&f.cache, &dl, dz.as_deref(), scale, &mut self.grads)?;
            if self.centers.is_some() {
                feats.push(f.features);
                labels.push(y);
            }
        }
        stats.samples += batch.len();
        self.apply_step(lr)?;
        if let Some(c) = self.centers.as_mut() {
            c.update(&feats, &labels);
            if !c.is_finite() {
                return Err(self.diverged("class centers"));
            }
        }
        Ok(())
    }

    /// One IRM step: a batch from every environment, mean cross-entropy plus the weighted penalty.
    fn irm_step(&mut self, batches: &[&[u32]], lr: f64, stats: &mut EpochStats) -> Result<()> {
        self.grads.fill_zero();
        let total: usize = batches.iter().map(|b| b.len()).sum();
        let scale = 1.0 / total as f64;
        let mut fwd = Vec::with_capacity(batches.len());
        let mut logits = Vec::with_capacity(batches.len());
        let mut labels = Vec::with_capacity(batches.len());
        for b in batches {
            let mut f_env = Vec::with_capacity(b.len());
            for &id in *b {
                f_env.push(self.forward(id)?);
            }
            logits.push(f_env.iter().map(|f| f.logits.clone()).collect::<Vec<_>>());
            labels.push(b.iter().map(|&id| self.ds.sample(id).y).collect::<Vec<_>>());
            fwd.push(f_env);
        }
        let lambda = self.cfg.irm_lambda;
        let penalty = irm_penalty(&logits, &labels).map_err(|_| self.diverged("IRM penalty"))?;
        stats.loss_aux += lambda * penalty.value * total as f64;
        for (e, f_env) in fwd.iter().enumerate() {
            for (i, f) in f_env.iter().enumerate() {
                let (l, mut dl) = self.class_loss(&f.logits, labels[e][i])?;
                stats.loss_cls += l;
                // penalty gradients are already per-environment means; undo the batch scale
                dl.iter_mut()
                    .zip(&penalty.grads[e][i])
                    .for_each(|(d, p)| *d += lambda * p * total as f64);
                self.params
                    .accumulate_backward(&f.cache, &dl, None, scale, &mut self.grads)?;
            }
        }
        stats.samples += total;
        self.apply_step(lr)
    }

    fn run_epoch(&mut self, envs: &[Environment], rng: &mut StageRng, lr: f64, alpha: f64) -> Result<EpochStats> {
        let bs = self.cfg.batch_size;
        let orders: Vec<Vec<u32>> = envs.iter().map(|e| datagen::shuffled(&e.flatten(), rng)).collect();
        let batches: Vec<Vec<&[u32]>> = orders.iter().map(|o| o.chunks(bs).collect()).collect();
        let rounds = batches.iter().map(Vec::len).max().unwrap_or(0);
        let mut stats = EpochStats {
            loss_cls: 0.0,
            loss_aux: 0.0,
            samples: 0,
        };
        let irm = self.cfg.method == Method::Irm && envs.len() > 1;
        for i in 0..rounds {
            if irm {
                let round: Vec<&[u32]> = batches.iter().filter_map(|b| b.get(i).copied()).collect();
                self.irm_step(&round, lr, &mut stats)?;
            } else {
                // environments alternate batch by batch
                for env_batches in &batches {
                    if let Some(b) = env_batches.get(i) {
                        self.step(b, lr, alpha, &mut stats)?;
                    }
                }
            }
        }
        Ok(stats)
    }

    fn split_features(&self, split: &Split) -> Result<Vec<(Vec<f64>, usize)>> {
        split
            .sample_ids
            .par_iter()
            .map(|&id| {
                let s = self.ds.sample(id);
                Ok((self.params.forward_f32(&s.x)?.features, s.y))
            })
            .collect()
    }
}

/// Trains `cfg.method` on `split`.
///
/// Methods with environments (`center`, `ifl2`, `ifl3`, `irm`) warm up with the
/// plain objective, then rebuild environments from the current confidences every
/// `refresh_period_epochs`, cycling through them batch by batch. An epoch is one
/// pass over every environment.
pub fn train(ds: &Dataset, split: &Split, cfg: &TrainConfig, env_cfg: &EnvConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    env_cfg.validate()?;
    split.check_ids(ds)?;
    if split.sample_ids.is_empty() {
        return Err(Error::config("split", "training split is empty"));
    }
    let counts: Vec<f64> = split.class_counts(ds).into_iter().map(|c| c as f64).collect();
    let total: f64 = counts.iter().sum();
    let class_prior: Vec<f64> = counts.iter().map(|c| c / total).collect();
    if cfg.method == Method::Blsoftmax && counts.contains(&0.0) {
        return Err(Error::config("split", "balanced softmax needs every class present"));
    }

    let mut dims = vec![ds.feat_dim];
    dims.extend(&cfg.hidden);
    let params = ModelParams::init(&dims, ds.n_classes, cfg.activation, &mut stage_rng(cfg.seed, "init"))?;
    let method = cfg.method;
    let with_envs = method.uses_centers() || method == Method::Irm;
    let n_envs = if with_envs { env_cfg.envs_for(method) } else { 1 };

    let mut t = Trainer {
        ds,
        cfg,
        env_cfg,
        counts,
        grads: params.zeros_like(),
        params,
        sgd: Sgd::new(cfg.momentum, cfg.weight_decay),
        centers: None,
        epoch: 0,
    };
    let mut batch_rng = stage_rng(cfg.seed, "batches");
    let mut envs = vec![Environment::identity(ds, split, 0)];
    let mut dumps = Vec::new();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        t.epoch = epoch;
        let lr = cfg.lr_at(epoch);
        let alpha = if method.uses_centers() {
            env_cfg.alpha_schedule.at(epoch, cfg.epochs)
        } else {
            0.0
        };
        let due = epoch >= env_cfg.warmup_epochs && (epoch - env_cfg.warmup_epochs).is_multiple_of(env_cfg.refresh_period_epochs);
        if with_envs && due {
            let scores = confidence_scores(&t.params, ds, split).map_err(|e| t.diverged(&e.to_string()))?;
            let mut env_rng = stage_rng(cfg.seed, &format!("env/{epoch}"));
            envs = construct_environments(ds, split, &scores, n_envs, env_cfg.rule, epoch, &mut env_rng)?;
            dumps.push(EnvironmentDump::new(ds, split, &scores, env_cfg.rule, &envs));
            if method.uses_centers() && t.centers.is_none() {
                let feats = t.split_features(split)?;
                t.centers = Some(Centers::from_means(
                    ds.n_classes,
                    t.params.feature_dim(),
                    env_cfg.center_lr,
                    feats.iter().map(|(z, y)| (z.as_slice(), *y)),
                ));
            }
        }
        let stats = t.run_epoch(&envs, &mut batch_rng, lr, alpha)?;
        let n = stats.samples.max(1) as f64;
        log.push(EpochLog {
            epoch,
            lr,
            loss_cls: stats.loss_cls / n,
            loss_ifl: stats.loss_aux / n,
            alpha,
        });
    }

    let mut params = t.params;
    if method == Method::Crt {
        params = crt_stage2(&params, ds, split, cfg, cfg.crt_epochs)?;
    }
    Ok(TrainOutcome {
        params,
        centers: t.centers,
        log,
        environments: envs,
        dumps,
        class_prior,
    })
}

/// Freezes the backbone, re-initializes the classifier head and retrains it on
/// class-balanced draws (uniform class, then uniform sample within the class).
pub fn crt_stage2(
    params: &ModelParams,
    ds: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    stage2_epochs: usize,
) -> Result<ModelParams> {
    if stage2_epochs == 0 {
        return Ok(params.clone());
    }
    let mut out = params.clone();
    out.reinit_head(&mut stage_rng(cfg.seed, "crt/init"));
    // the head alone, viewed as a network without hidden layers
    let mut head = ModelParams {
        hidden: Vec::new(),
        head: out.head.clone(),
        activation: out.activation,
    };
    let features: Vec<Vec<f64>> = split
        .sample_ids
        .par_iter()
        .map(|&id| Ok(params.forward_f32(&ds.sample(id).x)?.features))
        .collect::<Result<_>>()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (i, &id) in split.sample_ids.iter().enumerate() {
        by_class[ds.sample(id).y].push(i);
    }
    let present: Vec<usize> = (0..ds.n_classes).filter(|&k| !by_class[k].is_empty()).collect();

    let mut rng = stage_rng(cfg.seed, "crt/batches");
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut grads = head.zeros_like();
    for epoch in 0..stage2_epochs {
        let lr = cosine_lr(epoch, stage2_epochs, cfg.lr0);
        let draws: Vec<usize> = (0..split.sample_ids.len())
            .map(|_| {
                let k = present[rng.random_range(0..present.len())];
                by_class[k][rng.random_range(0..by_class[k].len())]
            })
            .collect();
        for batch in draws.chunks(cfg.batch_size) {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let f = head.forward(&features[i])?;
                let (l, dl) = ce_loss_grad(&f.logits, ds.sample(split.sample_ids[i]).y);
                if !l.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        what: "classifier re-training loss".into(),
                    });
                }
                head.accumulate_backward(&f.cache, &dl, None, scale, &mut grads)?;
            }
            sgd.step(&mut head, &grads, lr);
        }
    }
    out.head = head.head;
    Ok(out)
}
