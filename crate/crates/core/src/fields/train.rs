//! Joint training of the velocity and score nets on interpolant batches.

use ndarray::Array2;
use rand::Rng as _;

use super::loss::{score_loss_ism, velocity_loss};
use super::net::FieldNet;
use super::optim::{AdamW, StepLr};
use crate::distributions::{Prior, SampleSet};
use crate::error::{Error, Result};
use crate::interpolant::{repair_cut_locus, InterpolantBatch};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Iterations between learning-rate decays.
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub seed: u64,
    /// Iterations per loss-trace entry.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            lr_step: 2000,
            lr_gamma: 0.5,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if self.lr_step == 0 || self.eval_every == 0 {
            return bad("lr_step and eval_every must be positive");
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return bad("lr_gamma must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Mean batch losses over one window of `eval_every` iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// Iterations completed at the end of the window.
    pub iteration: usize,
    pub velocity_loss: f64,
    pub score_loss: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<TraceEntry>,
    /// Batch velocity loss of every iteration.
    pub velocity_losses: Vec<f64>,
    /// Batch score loss of every iteration (empty without a score net).
    pub score_losses: Vec<f64>,
    /// Prior draws replaced because they hit the cut locus of their pair.
    pub repaired_pairs: usize,
}

/// Builds the interpolant batch of iteration `it`.
pub fn draw_batch(prior: &Prior, data: &SampleSet, batch: usize, seed: u64, it: usize) -> (InterpolantBatch, usize) {
    let m = prior.manifold();
    let d = m.ambient_dim();
    let mut r = rng::stream(rng::derive(seed, "train"), it as u64);
    let t: Vec<f64> = (0..batch).map(|_| r.random::<f64>()).collect();
    let mut x0 = Array2::zeros((batch, d));
    for mut row in x0.outer_iter_mut() {
        prior.draw_into(row.as_slice_mut().unwrap(), &mut r);
    }
    let mut x1 = Array2::zeros((batch, d));
    for mut row in x1.outer_iter_mut() {
        let k = r.random_range(0..data.len());
        row.as_slice_mut().unwrap().copy_from_slice(data.row(k));
    }
    let repaired = repair_cut_locus(m, &mut x0, &x1, |row| prior.draw_into(row, &mut r));
    let b = InterpolantBatch::build(m, &t, x0, x1).expect("pairs repaired off the cut locus");
    (b, repaired)
}

/// Trains `velocity` (and `score`, when given) on interpolants between
/// `prior` and the empirical law of `data`. Both nets step once per
/// iteration on the same batch.
pub fn train(
    velocity: &mut FieldNet,
    mut score: Option<&mut FieldNet>,
    prior: &Prior,
    data: &SampleSet,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let m = prior.manifold();
    if data.is_empty() {
        return Err(Error::Size("training data is empty".into()));
    }
    if data.manifold() != m || velocity.manifold() != m {
        return Err(Error::Config(format!(
            "prior on {m}, data on {}, velocity net on {}",
            data.manifold(),
            velocity.manifold()
        )));
    }
    if let Some(s) = score.as_deref() {
        if s.manifold() != m {
            return Err(Error::Config(format!("score net on {}, prior on {m}", s.manifold())));
        }
        if !s.activation().is_smooth() {
            return Err(Error::Config("score net needs a smooth activation".into()));
        }
    }
    let sched = StepLr {
        base: cfg.learning_rate,
        step: cfg.lr_step,
        gamma: cfg.lr_gamma,
    };
    let mut opt_v = AdamW::new(velocity.num_params(), cfg.weight_decay);
    let mut opt_s = score.as_deref().map(|s| AdamW::new(s.num_params(), cfg.weight_decay));
    let mut report = TrainReport::default();
    for it in 0..cfg.iterations {
        let (batch, repaired) = draw_batch(prior, data, cfg.batch_size, cfg.seed, it);
        report.repaired_pairs += repaired;
        let lr = sched.rate(it);
        let (lv, gv) = velocity_loss(velocity, &batch)?;
        opt_v.step(velocity.params_mut(), &gv, lr);
        report.velocity_losses.push(lv);
        if let (Some(s), Some(opt)) = (score.as_deref_mut(), opt_s.as_mut()) {
            let (ls, gs) = score_loss_ism(s, &batch)?;
            opt.step(s.params_mut(), &gs, lr);
            report.score_losses.push(ls);
        }
        if (it + 1) % cfg.eval_every == 0 {
            let lo = it + 1 - cfg.eval_every;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            report.trace.push(TraceEntry {
                iteration: it + 1,
                velocity_loss: mean(&report.velocity_losses[lo..]),
                score_loss: (!report.score_losses.is_empty()).then(|| mean(&report.score_losses[lo..])),
                learning_rate: lr,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::sample_uniform;
    use crate::fields::net::Activation;
    use crate::manifold::Manifold;

    fn cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 64,
            eval_every: 10,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_leaves_nets_alone() {
        let mut v = FieldNet::new(Manifold::S2, &[8], Activation::Tanh, 4, 1).unwrap();
        let before = v.clone();
        let data = sample_uniform(Manifold::S2, 100, 1).unwrap();
        let r = train(&mut v, None, &Prior::Uniform(Manifold::S2), &data, &cfg(0)).unwrap();
        assert!(r.trace.is_empty());
        assert_eq!(v, before);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let mut v = FieldNet::new(Manifold::S5, &[8], Activation::Tanh, 4, 1).unwrap();
        let data = sample_uniform(Manifold::S2, 100, 1).unwrap();
        let e = train(&mut v, None, &Prior::Uniform(Manifold::S2), &data, &cfg(1)).unwrap_err();
        assert_eq!(e.class(), "ConfigError");
        let bad = TrainConfig {
            lr_gamma: 1.5,
            ..cfg(1)
        };
        let mut v = FieldNet::new(Manifold::S2, &[8], Activation::Tanh, 4, 1).unwrap();
        assert_eq!(
            train(&mut v, None, &Prior::Uniform(Manifold::S2), &data, &bad)
                .unwrap_err()
                .class(),
            "ConfigError"
        );
    }

    #[test]
    fn training_is_deterministic_and_traces() {
        let data = sample_uniform(Manifold::S2, 500, 2).unwrap();
        let run = || {
            let mut v = FieldNet::new(Manifold::S2, &[16], Activation::Tanh, 4, 1).unwrap();
            let mut s = FieldNet::new(Manifold::S2, &[16], Activation::Tanh, 4, 2).unwrap();
            let r = train(&mut v, Some(&mut s), &Prior::Uniform(Manifold::S2), &data, &cfg(30)).unwrap();
            (v, s, r)
        };
        let (v1, s1, r1) = run();
        let (v2, s2, r2) = run();
        assert_eq!(v1, v2);
        assert_eq!(s1, s2);
        assert_eq!(r1, r2);
        assert_eq!(r1.trace.len(), 3);
        assert_eq!(r1.score_losses.len(), 30);
    }
}
