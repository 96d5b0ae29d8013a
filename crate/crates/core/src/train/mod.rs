//! Optimizers, window sampling and the early-stopping training loop.

mod optim;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use optim::{
    adagrad_step, adam_step, rmsprop_step, Optimizer, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2,
    EPSILON,
};

use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::net::{LossGrad, Model, ModelParams};
use crate::tensor::Tensor;

/// A ChaCha8 generator on a stream derived from `name`, so that e.g. weight
/// initialization and window sampling never share random numbers.
pub fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a
    let stream = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// RMSProp decay.
    pub decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Evaluations without validation improvement before stopping.
    pub early_stop_patience: usize,
    /// Iterations between validation evaluations.
    pub eval_interval: usize,
    /// Trailing fraction of windows held out for validation.
    pub validation_fraction: f64,
    /// Rescale the mini-batch gradient to this global L2 norm when exceeded.
    pub clip_norm: Option<f64>,
    /// Worker threads for per-window gradients; results do not depend on it.
    pub threads: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::RmsProp,
            learning_rate: 1e-4,
            decay: 0.9,
            batch_size: 5,
            max_iterations: 2000,
            early_stop_patience: 10,
            eval_interval: 100,
            validation_fraction: 0.2,
            clip_norm: None,
            threads: 1,
            seed: 0,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "optimizer",
    "learning_rate",
    "decay",
    "batch_size",
    "max_iterations",
    "early_stop_patience",
    "eval_interval",
    "validation_fraction",
    "clip_norm",
    "threads",
    "seed",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config("decay must be in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction must be in [0, 1)"));
        }
        if matches!(self.clip_norm, Some(c) if !(c.is_finite() && c > 0.0)) {
            return Err(Error::config("clip_norm must be > 0"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be >= 1"));
        }
        Ok(())
    }

    /// Read the [`TRAIN_KEYS`] present in `doc`; `seed` is mandatory.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            optimizer: doc.parse_or("optimizer", d.optimizer)?,
            learning_rate: doc.parse_or("learning_rate", d.learning_rate)?,
            decay: doc.parse_or("decay", d.decay)?,
            batch_size: doc.parse_or("batch_size", d.batch_size)?,
            max_iterations: doc.parse_or("max_iterations", d.max_iterations)?,
            early_stop_patience: doc.parse_or("early_stop_patience", d.early_stop_patience)?,
            eval_interval: doc.parse_or("eval_interval", d.eval_interval)?,
            validation_fraction: doc.parse_or("validation_fraction", d.validation_fraction)?,
            clip_norm: doc.parse_opt("clip_norm")?,
            threads: doc.parse_or("threads", d.threads)?,
            seed: doc.require("seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One row of `loss_history.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    /// 0 is the initialization; `i >= 1` is the state after the i-th update.
    pub iteration: usize,
    /// Mini-batch loss of the i-th update (measured before it was applied).
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation evaluation (the final ones without a validation split).
    pub params: ModelParams,
    pub history: Vec<LossRecord>,
    pub best_iteration: usize,
    pub best_val_loss: Option<f64>,
    pub iterations_run: usize,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.history.iter().rev().find_map(|r| r.train_loss)
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.history.iter().rev().find_map(|r| r.val_loss)
    }
}

/// `(clip, start)` for every window of `window_len` consecutive frames.
pub fn enumerate_windows(clips: &[VideoClip], window_len: usize) -> Vec<(usize, usize)> {
    clips
        .iter()
        .enumerate()
        .flat_map(|(c, clip)| (0..(clip.len() + 1).saturating_sub(window_len)).map(move |s| (c, s)))
        .collect()
}

/// Split windows into `(train, validation)`; validation is the trailing
/// `fraction`, rounded down, and never takes the last training window.
pub fn split_windows(windows: &[(usize, usize)], fraction: f64) -> (&[(usize, usize)], &[(usize, usize)]) {
    let n_val = ((windows.len() as f64 * fraction).floor() as usize).min(windows.len().saturating_sub(1));
    windows.split_at(windows.len() - n_val)
}

pub fn render_history(history: &[LossRecord]) -> String {
    let mut s = String::from("iteration,train_loss,val_loss\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in history {
        let _ = writeln!(s, "{},{},{}", r.iteration, opt(r.train_loss), opt(r.val_loss));
    }
    s
}

pub fn write_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    fs::write(path, render_history(history)).map_err(|e| Error::io(path, e))
}

fn check_finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("{what} is {loss}")))
    }
}

struct Trainer<'a> {
    model: &'a mut Model,
    clips: &'a [VideoClip],
    pool: Option<rayon::ThreadPool>,
}

impl Trainer<'_> {
    fn windows(&self, picks: &[(usize, usize)]) -> Result<Vec<(Tensor, Tensor)>> {
        let c = &self.model.config;
        picks
            .iter()
            .map(|&(clip, start)| self.clips[clip].window(start, c.input_len, c.output_len))
            .collect()
    }

    fn map_windows<T: Send>(
        &self,
        picks: &[(usize, usize)],
        f: impl Fn(&Model, &Tensor, &Tensor) -> Result<T> + Sync,
    ) -> Result<Vec<T>> {
        let windows = self.windows(picks)?;
        let model: &Model = self.model;
        match &self.pool {
            // collect keeps window order, so the reduction below is thread-count independent
            Some(pool) => pool.install(|| windows.par_iter().map(|(x, y)| f(model, x, y)).collect()),
            None => windows.iter().map(|(x, y)| f(model, x, y)).collect(),
        }
    }

    fn batch_gradient(&self, picks: &[(usize, usize)]) -> Result<LossGrad> {
        let per_window = self.map_windows(picks, |m, x, y| m.loss_and_grads(x, y))?;
        let n = per_window.len() as f64;
        let mut iter = per_window.into_iter();
        let mut acc = iter.next().expect("non-empty batch");
        for lg in iter {
            acc.loss += lg.loss;
            for (a, g) in acc.grads.iter_mut().zip(&lg.grads) {
                a.add_assign(g);
            }
        }
        acc.loss /= n;
        for g in &mut acc.grads {
            *g = g.scale(1.0 / n);
        }
        Ok(acc)
    }

    fn mean_loss(&self, picks: &[(usize, usize)]) -> Result<f64> {
        let losses = self.map_windows(picks, |m, x, y| m.loss(x, y))?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Scale `grads` down to global L2 norm `max_norm` if they exceed it.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            *g = g.scale(s);
        }
    }
}

/// Train `model` in place on windows drawn from `clips`.
///
/// The model ends up holding [`TrainOutcome::params`].
pub fn train(model: &mut Model, clips: &[VideoClip], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let window_len = model.config.window_len();
    let all = enumerate_windows(clips, window_len);
    if all.is_empty() {
        return Err(Error::domain(format!(
            "no clip has the {window_len} frames (input_len + output_len) needed for one window"
        )));
    }
    let (train_w, val_w) = split_windows(&all, cfg.validation_fraction);
    let pool = if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::config(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
        Some(pool)
    } else {
        None
    };
    let t = Trainer { model, clips, pool };
    let mut rng = named_rng(cfg.seed, "train.sampling");
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.decay, t.model.params.tensors());

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    let evaluate = |t: &Trainer, it: usize, best: &mut Option<(f64, usize, ModelParams)>, stale: &mut usize| -> Result<Option<f64>> {
        if val_w.is_empty() {
            return Ok(None);
        }
        let v = check_finite(t.mean_loss(val_w)?, "validation loss")?;
        match best {
            Some((b, _, _)) if v >= *b => *stale += 1,
            _ => {
                *best = Some((v, it, t.model.params.clone()));
                *stale = 0;
            }
        }
        Ok(Some(v))
    };

    let v0 = evaluate(&t, 0, &mut best, &mut stale)?;
    if v0.is_some() {
        history.push(LossRecord {
            iteration: 0,
            train_loss: None,
            val_loss: v0,
        });
    }

    let mut iterations_run = 0;
    for it in 1..=cfg.max_iterations {
        let picks: Vec<(usize, usize)> = (0..cfg.batch_size)
            .map(|_| train_w[rng.gen_range(0..train_w.len())])
            .collect();
        let mut lg = t.batch_gradient(&picks)?;
        check_finite(lg.loss, &format!("training loss at iteration {it}"))?;
        if let Some(c) = cfg.clip_norm {
            clip_gradients(&mut lg.grads, c);
        }
        opt.step(t.model.params.tensors_mut(), &lg.grads);
        iterations_run = it;

        let val_loss = if it % cfg.eval_interval == 0 || it == cfg.max_iterations {
            evaluate(&t, it, &mut best, &mut stale)?
        } else {
            None
        };
        history.push(LossRecord {
            iteration: it,
            train_loss: Some(lg.loss),
            val_loss,
        });
        if val_loss.is_some() && stale >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }

    let (best_val_loss, best_iteration) = match best {
        Some((v, it, params)) => {
            t.model.params = params;
            (Some(v), it)
        }
        None => (None, iterations_run),
    };
    Ok(TrainOutcome {
        params: t.model.params.clone(),
        history,
        best_iteration,
        best_val_loss,
        iterations_run,
        stopped_early,
    })
}
