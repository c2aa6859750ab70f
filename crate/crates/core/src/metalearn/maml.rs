use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{FlatParams, LabeledBatch, Loss, MlpModel, OptimizerKind, OptimizerSpec, OptimizerState};

/// K-shot support and query sets of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeData {
    pub task_id: usize,
    pub support: LabeledBatch,
    pub query: LabeledBatch,
}

/// How per-task meta-gradients are combined into one update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

fn one() -> usize {
    1
}
fn fifty() -> usize {
    50
}
fn mse() -> Loss {
    Loss::Mse
}
fn sgd() -> OptimizerKind {
    OptimizerKind::Sgd
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub epochs: usize,
    pub k: usize,
    #[serde(default = "one")]
    pub inner_steps: usize,
    #[serde(default)]
    pub second_order: bool,
    /// tasks per meta-step; `None` uses every task
    #[serde(default)]
    pub task_batch: Option<usize>,
    #[serde(default = "mse")]
    pub loss: Loss,
    /// epochs between fresh support/query draws
    #[serde(default = "fifty")]
    pub refresh_every: usize,
    #[serde(default = "sgd")]
    pub meta_optimizer: OptimizerKind,
    #[serde(default)]
    pub reduction: Reduction,
}

impl MetaConfig {
    pub fn new(inner_lr: f64, meta_lr: f64, epochs: usize, k: usize) -> Self {
        Self {
            inner_lr,
            meta_lr,
            epochs,
            k,
            inner_steps: 1,
            second_order: false,
            task_batch: None,
            loss: Loss::Mse,
            refresh_every: 50,
            meta_optimizer: OptimizerKind::Sgd,
            reduction: Reduction::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr >= 0.0) || !(self.meta_lr > 0.0) {
            return Err(Error::Config(format!(
                "need inner_lr >= 0 and meta_lr > 0, got {} / {}",
                self.inner_lr, self.meta_lr
            )));
        }
        if self.k == 0 || self.inner_steps == 0 || self.refresh_every == 0 {
            return Err(Error::Config("k, inner_steps and refresh_every must be at least 1".into()));
        }
        if self.task_batch == Some(0) {
            return Err(Error::Config("task_batch must be at least 1".into()));
        }
        Ok(())
    }
}

fn training_error(task: usize, e: Error) -> Error {
    match e {
        Error::Training { .. } => e,
        other => Error::Training {
            epoch: 0,
            task: task.to_string(),
            msg: other.to_string(),
        },
    }
}

/// Plain gradient descent on the support loss, `steps` times. Returns every
/// iterate `θ₀ … θ_steps`.
fn inner_trajectory(
    net: &MlpModel,
    theta: &FlatParams,
    support: &LabeledBatch,
    alpha: f64,
    steps: usize,
    loss: Loss,
    task_id: usize,
) -> Result<Vec<FlatParams>> {
    let mut iterates = vec![theta.clone()];
    for _ in 0..steps {
        let cur = iterates.last().unwrap();
        let g = net
            .with_params(cur.clone())?
            .param_gradient(support, loss)
            .map_err(|e| training_error(task_id, e))?;
        if !g.is_finite() {
            return Err(Error::Training {
                epoch: 0,
                task: task_id.to_string(),
                msg: "non-finite support gradient".into(),
            });
        }
        iterates.push(cur.add_scaled(-alpha, &g));
    }
    Ok(iterates)
}

/// θ′ = θ − α∇L_support(θ), applied `steps` times.
pub fn inner_adapt(
    net: &MlpModel,
    theta: &FlatParams,
    support: &LabeledBatch,
    alpha: f64,
    steps: usize,
    loss: Loss,
    task_id: usize,
) -> Result<FlatParams> {
    if steps == 0 {
        return Err(Error::Argument("inner adaptation needs at least one step".into()));
    }
    Ok(inner_trajectory(net, theta, support, alpha, steps, loss, task_id)?
        .pop()
        .unwrap())
}

/// Meta-gradient of the query loss after inner adaptation, together with
/// that query loss.
///
/// First-order: ∇L_query(θ′). Second-order: the exact derivative of
/// θ ↦ L_query(θ′(θ)), i.e. ∏ (I − α H_support(θ_j)) applied to ∇L_query(θ′).
pub fn meta_gradient(
    net: &MlpModel,
    theta: &FlatParams,
    episode: &EpisodeData,
    cfg: &MetaConfig,
) -> Result<(FlatParams, f64)> {
    let iterates = inner_trajectory(
        net,
        theta,
        &episode.support,
        cfg.inner_lr,
        cfg.inner_steps,
        cfg.loss,
        episode.task_id,
    )?;
    let adapted = net.with_params(iterates.last().unwrap().clone())?;
    let (query_loss, mut g) = adapted
        .loss_and_gradient(&episode.query, cfg.loss)
        .map_err(|e| training_error(episode.task_id, e))?;
    if cfg.second_order && cfg.inner_lr != 0.0 {
        for theta_j in iterates[..iterates.len() - 1].iter().rev() {
            let hv = net
                .with_params(theta_j.clone())?
                .hessian_vector_product(&episode.support, cfg.loss, &g)
                .map_err(|e| training_error(episode.task_id, e))?;
            g = g.add_scaled(-cfg.inner_lr, &hv);
        }
    }
    Ok((g, query_loss))
}

/// Query loss before and after adapting on the support set.
pub fn evaluate_few_shot(
    net: &MlpModel,
    theta: &FlatParams,
    held_out: &EpisodeData,
    alpha: f64,
    steps: usize,
    loss: Loss,
) -> Result<(f64, f64)> {
    let pre = net.with_params(theta.clone())?.loss(&held_out.query, loss)?;
    let adapted = inner_adapt(net, theta, &held_out.support, alpha, steps, loss, held_out.task_id)?;
    let post = net.with_params(adapted)?.loss(&held_out.query, loss)?;
    Ok((pre, post))
}

/// Anything that can produce fresh K-shot episodes for one task.
pub trait EpisodeSource {
    fn task_id(&self) -> usize;
    fn draw(&self, k: usize, rng: &mut ChaCha8Rng) -> Result<EpisodeData>;
}

impl EpisodeSource for EpisodeData {
    fn task_id(&self) -> usize {
        self.task_id
    }

    /// A fixed episode ignores `k` and the generator.
    fn draw(&self, _k: usize, _rng: &mut ChaCha8Rng) -> Result<EpisodeData> {
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub mean_query_loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// Writes the training log as CSV with header
/// `epoch,mean_query_loss,grad_norm,wall_ms`.
pub fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "mean_query_loss", "grad_norm", "wall_ms"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            crate::trace::fmt_f64(r.mean_query_loss),
            crate::trace::fmt_f64(r.grad_norm),
            crate::trace::fmt_f64(r.wall_ms),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// MAML outer loop. Every epoch draws (or reuses) one episode per task,
/// sums or averages the per-task meta-gradients in task order and applies
/// one meta-optimizer step. Deterministic per `seed`.
pub fn meta_train<S: EpisodeSource>(
    net: &MlpModel,
    sources: &[S],
    theta0: &FlatParams,
    cfg: &MetaConfig,
    seed: u64,
) -> Result<(FlatParams, Vec<TrainLogRow>)> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::Config("meta-training needs at least one task".into()));
    }
    if theta0.len() != net.param_count() {
        return Err(Error::Shape("initial parameters do not match the network".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = OptimizerState::new(
        OptimizerSpec {
            kind: cfg.meta_optimizer,
            learning_rate: cfg.meta_lr,
        },
        theta0.len(),
    )?;
    let mut theta = theta0.clone();
    let mut episodes: Vec<EpisodeData> = Vec::new();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let with_epoch = |e: Error| match e {
            Error::Training { task, msg, .. } => Error::Training { epoch, task, msg },
            other => Error::Training {
                epoch,
                task: "-".into(),
                msg: other.to_string(),
            },
        };
        if epoch % cfg.refresh_every == 0 {
            episodes = sources
                .iter()
                .map(|s| s.draw(cfg.k, &mut rng))
                .collect::<Result<_>>()
                .map_err(with_epoch)?;
        }
        let batch: Vec<usize> = match cfg.task_batch {
            Some(b) if b < episodes.len() => {
                let mut idx = rand::seq::index::sample(&mut rng, episodes.len(), b).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..episodes.len()).collect(),
        };

        let mut total = FlatParams::zeros(theta.len());
        let mut loss_sum = 0.0;
        for &i in &batch {
            let (g, l) = meta_gradient(net, &theta, &episodes[i], cfg).map_err(with_epoch)?;
            if !l.is_finite() || !g.is_finite() {
                return Err(Error::Training {
                    epoch,
                    task: episodes[i].task_id.to_string(),
                    msg: "query loss or meta-gradient is not finite".into(),
                });
            }
            total = total.add_scaled(1.0, &g);
            loss_sum += l;
        }
        let count = batch.len() as f64;
        if cfg.reduction == Reduction::Mean {
            total = total.scale(1.0 / count);
        }
        theta = opt.step(&theta, &total).map_err(with_epoch)?;
        log.push(TrainLogRow {
            epoch,
            mean_query_loss: loss_sum / count,
            grad_norm: total.norm2(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((theta, log))
}
