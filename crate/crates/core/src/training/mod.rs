//! One-step derivative supervision and the optimization loop.
//!
//! Each pair maps a state `u^t` to the forward difference
//! `(u^{t+1} - u^t) / dt`, the quantity an explicit Euler rollout consumes.
//! Mini-batches are sets of whole graphs stacked block-diagonally, the loss is
//! the mean squared error of standardized derivatives, and parameters follow
//! Adam with a cosine-decayed learning rate.

mod normalizer;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use normalizer::{ChannelStats, Normalizer, STD_FLOOR};

use crate::datagen::{Dataset, PdeCase};
use crate::error::{GnsError, Result};
use crate::graphs::{build_topology, GraphState, GraphTopology};
use crate::model::{normalized_features, GnsConfig, GnsParams};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor};

/// One supervision example borrowed from a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct OneStepPair<'a> {
    pub trajectory: usize,
    pub time: usize,
    /// Node-major `[n, C]` state `u^t`.
    pub state: &'a [f64],
    /// `(u^{t+1} - u^t) / dt`.
    pub target: Vec<f64>,
}

/// `Nt - 1` forward-difference pairs per selected trajectory, in selection
/// order and then time order.
pub fn build_pairs<'a>(dataset: &'a Dataset, ids: &[usize]) -> Result<Vec<OneStepPair<'a>>> {
    if ids.is_empty() {
        return Err(GnsError::Config("no training trajectories selected".into()));
    }
    let mut pairs = Vec::with_capacity(ids.len() * dataset.n_snapshots().saturating_sub(1));
    for &id in ids {
        let traj = dataset.trajectories.get(id).ok_or_else(|| {
            GnsError::Config(format!("trajectory id {id} out of range ({} available)", dataset.len()))
        })?;
        let inv_dt = 1.0 / traj.dt;
        for t in 0..traj.n_snapshots().saturating_sub(1) {
            let (a, b) = (traj.snapshot(t), traj.snapshot(t + 1));
            let target: Vec<f64> = a.iter().zip(b).map(|(x, y)| (y - x) * inv_dt).collect();
            if target.iter().any(|v| !v.is_finite()) {
                return Err(GnsError::Input(format!("non-finite target in trajectory {id} at step {t}")));
            }
            pairs.push(OneStepPair {
                trajectory: id,
                time: t,
                state: a,
                target,
            });
        }
    }
    Ok(pairs)
}

/// Fit standardization statistics on training pairs.
pub fn fit_normalizer(pairs: &[OneStepPair<'_>], topo: &GraphTopology, channels: usize) -> Result<Normalizer> {
    let states: Vec<&[f64]> = pairs.iter().map(|p| p.state).collect();
    let targets: Vec<&[f64]> = pairs.iter().map(|p| p.target.as_slice()).collect();
    Normalizer::fit(&states, &targets, topo, channels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reached at the final step of the cosine schedule.
    pub lr_final: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    /// Standard deviation of Gaussian noise added to standardized input
    /// fields, in units of the field standard deviation (0 = off).
    pub input_noise: f64,
    /// Gradient shards per batch, computed in parallel and summed in shard
    /// order. Results are reproducible for a fixed shard count.
    pub shards: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_case(PdeCase::BurgersScalar)
    }
}

impl TrainConfig {
    /// Standard epoch and batch settings for each case.
    pub fn for_case(case: PdeCase) -> Self {
        let (epochs, batch_size) = match case {
            PdeCase::BurgersScalar => (600, 4),
            PdeCase::BurgersCoupled => (400, 4),
            PdeCase::AllenCahn => (500, 4),
            PdeCase::Swe => (600, 2),
        };
        TrainConfig {
            epochs,
            batch_size,
            lr: 1e-3,
            lr_final: 1e-5,
            seed: 0,
            checkpoint_every: 50,
            input_noise: 0.0,
            shards: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.shards > 0
            && self.lr > 0.0
            && self.lr_final > 0.0
            && self.lr_final <= self.lr
            && self.input_noise >= 0.0;
        if !ok {
            return Err(GnsError::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    /// Cosine decay from `lr` at step 0 to `lr_final` at the last step.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let frac = if total_steps <= 1 {
            0.0
        } else {
            step as f64 / (total_steps - 1) as f64
        };
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (PI * frac).cos())
    }
}

/// Mean training loss of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

/// Everything needed to continue a run bit-for-bit.
///
/// Shuffling and noise for epoch `e` draw from stream `e` of a generator
/// seeded with `config.seed`, so the epoch counter is the whole RNG state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: GnsParams,
    pub normalizer: Normalizer,
    pub optimizer: Adam,
    pub epochs_done: usize,
    pub history: Vec<EpochRecord>,
}

/// Block-diagonal batch of standardized inputs and targets.
struct Batch {
    topo: Arc<GraphTopology>,
    state: GraphState,
    target: Tensor,
}

struct Batcher<'a> {
    topo: &'a GraphTopology,
    cfg: &'a GnsConfig,
    norm: &'a Normalizer,
    batched: HashMap<usize, Arc<GraphTopology>>,
}

impl Batcher<'_> {
    fn build(&mut self, pairs: &[&OneStepPair<'_>], noise: Option<(&mut ChaCha8Rng, f64)>) -> Result<Batch> {
        let c = self.cfg.out_channels;
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut target = Vec::new();
        let mut noise = noise;
        for p in pairs {
            let mut u = p.state.to_vec();
            if let Some((rng, sigma)) = noise.as_mut() {
                for (k, v) in u.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(*rng);
                    *v += *sigma * self.norm.field.std[k % c] * z;
                }
            }
            let g = normalized_features(&u, self.topo, self.cfg, self.norm)?;
            nodes.extend_from_slice(g.node_features.data());
            edges.extend_from_slice(g.edge_features.data());
            let mut t = p.target.clone();
            self.norm.normalize_target(&mut t);
            target.extend(t);
        }
        let b = pairs.len();
        let topo = self
            .batched
            .entry(b)
            .or_insert_with(|| Arc::new(self.topo.batched(b)))
            .clone();
        let (n, e) = (topo.n_nodes(), topo.n_edges());
        Ok(Batch {
            state: GraphState {
                node_features: Tensor::matrix(n, self.cfg.node_in, nodes)?,
                edge_features: Tensor::matrix(e, self.cfg.edge_in, edges)?,
            },
            target: Tensor::matrix(n, c, target)?,
            topo,
        })
    }
}

/// Loss and parameter gradients of one shard, weighted by `weight`.
fn shard_gradients(params: &GnsParams, batch: &Batch, weight: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true)?;
    let pred = bound.predict_normalized(&mut tape, &batch.topo, &batch.state)?;
    let target = tape.constant(batch.target.clone())?;
    let loss = tape.mse_loss(pred, target)?;
    let loss = tape.scale(loss, weight)?;
    tape.backward(loss)?;
    let grads = bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    Ok((tape.value(loss).item(), grads))
}

fn divergence(epoch: usize, loss: f64) -> impl Fn(GnsError) -> GnsError {
    move |e| match e {
        GnsError::NonFinite(_) => GnsError::TrainingDivergence { epoch, loss },
        other => other,
    }
}

/// Fresh training state: fitted normalizer, initialized parameters and
/// optimizer, no epochs run.
pub fn init_training(
    dataset: &Dataset,
    ids: &[usize],
    cfg: &TrainConfig,
    gns: &GnsConfig,
) -> Result<TrainState> {
    cfg.validate()?;
    gns.validate()?;
    if gns.out_channels != dataset.channels() {
        return Err(GnsError::Config(format!(
            "model predicts {} channels, dataset has {}",
            gns.out_channels,
            dataset.channels()
        )));
    }
    let topo = build_topology(dataset.grid)?;
    let pairs = build_pairs(dataset, ids)?;
    let normalizer = fit_normalizer(&pairs, &topo, dataset.channels())?;
    let params = GnsParams::init(gns.clone(), cfg.seed)?;
    let optimizer = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        params.tensors(),
    );
    Ok(TrainState {
        config: cfg.clone(),
        params,
        normalizer,
        optimizer,
        epochs_done: 0,
        history: Vec::new(),
    })
}

/// Run the remaining epochs of `state`. `on_checkpoint` receives the state
/// every `checkpoint_every` epochs and after the final epoch.
pub fn resume_training(
    dataset: &Dataset,
    ids: &[usize],
    mut state: TrainState,
    on_checkpoint: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    let cfg = state.config.clone();
    cfg.validate()?;
    let topo = build_topology(dataset.grid)?;
    let pairs = build_pairs(dataset, ids)?;
    let gns = state.params.config().clone();
    let steps_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let started = Instant::now();
    let wall_offset = state.history.last().map_or(0.0, |r| r.wall_seconds);
    let norm = state.normalizer.clone();
    let mut batcher = Batcher {
        topo: &topo,
        cfg: &gns,
        norm: &norm,
        batched: HashMap::new(),
    };

    while state.epochs_done < cfg.epochs {
        let epoch = state.epochs_done;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut lr = cfg.lr;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + b;
            lr = cfg.lr_at(step, total_steps);
            let members: Vec<&OneStepPair<'_>> = chunk.iter().map(|&i| &pairs[i]).collect();
            let shard_len = members.len().div_ceil(cfg.shards);
            let mut batches = Vec::new();
            for shard in members.chunks(shard_len) {
                let noise = (cfg.input_noise > 0.0).then_some((&mut rng, cfg.input_noise));
                let weight = shard.len() as f64 / members.len() as f64;
                batches.push((batcher.build(shard, noise)?, weight));
            }
            let params = &state.params;
            let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = if batches.len() == 1 {
                vec![shard_gradients(params, &batches[0].0, batches[0].1)]
            } else {
                batches.par_iter().map(|(bt, w)| shard_gradients(params, bt, *w)).collect()
            };
            let mut loss = 0.0;
            let mut grads: Option<Vec<Vec<f64>>> = None;
            for r in results {
                let (l, g) = r.map_err(divergence(epoch + 1, f64::NAN))?;
                loss += l;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, x) in acc.iter_mut().zip(&g) {
                            a.iter_mut().zip(x).for_each(|(a, x)| *a += x);
                        }
                    }
                }
            }
            if !loss.is_finite() {
                return Err(GnsError::TrainingDivergence { epoch: epoch + 1, loss });
            }
            let grads = grads.expect("at least one shard");
            let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            state.optimizer.step_with_lr(state.params.tensors_mut(), &refs, lr)?;
            loss_sum += loss;
        }
        let mean_loss = loss_sum / steps_per_epoch as f64;
        state.epochs_done += 1;
        state.history.push(EpochRecord {
            epoch: state.epochs_done,
            mean_loss,
            lr,
            wall_seconds: wall_offset + started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {}/{} loss {mean_loss:.6e} lr {lr:.3e}", state.epochs_done, cfg.epochs);
        let periodic = cfg.checkpoint_every > 0 && state.epochs_done % cfg.checkpoint_every == 0;
        if periodic || state.epochs_done == cfg.epochs {
            on_checkpoint(&state)?;
        }
    }
    Ok(state)
}

/// Train from scratch on the trajectories `ids` of `dataset`.
pub fn train(dataset: &Dataset, ids: &[usize], cfg: &TrainConfig, gns: &GnsConfig) -> Result<TrainState> {
    let state = init_training(dataset, ids, cfg, gns)?;
    resume_training(dataset, ids, state, &mut |_| Ok(()))
}
