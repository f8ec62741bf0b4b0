//! Encoder-processor-decoder graph neural simulator.
//!
//! Encoders lift raw node and edge features to latent vectors. Each
//! message-passing layer builds a message per edge from the
//! `[receiver, sender, edge]` latents, mean-aggregates messages at
//! receivers, and applies residual, layer-normalized updates to node and
//! edge latents. Both updates read the node latents from before the layer.
//! The decoder maps node latents to the standardized time derivative.
//!
//! The first layer of every MLP over `[receiver, sender, edge]` inputs is
//! evaluated as two node projections gathered onto edges plus one edge
//! projection, which equals the concatenated product without materializing
//! three latent copies per edge.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::PdeCase;
use crate::error::{GnsError, Result};
use crate::graphs::{build_features, FeatureConfig, GraphState, GraphTopology};
use crate::tensor::{Tape, Tensor, Var};
use crate::training::Normalizer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnsConfig {
    pub node_in: usize,
    pub edge_in: usize,
    pub out_channels: usize,
    pub latent: usize,
    pub mp_layers: usize,
    /// Hidden widths of every processor MLP.
    pub hidden: Vec<usize>,
    /// Positional-encoding frequency of the node features.
    pub omega: f64,
}

impl GnsConfig {
    /// Default architecture for fields with `channels` components.
    pub fn for_channels(channels: usize) -> Self {
        GnsConfig {
            node_in: channels + 6,
            edge_in: channels + 6,
            out_channels: channels,
            latent: 64,
            mp_layers: 6,
            hidden: vec![64, 64],
            omega: TAU,
        }
    }

    pub fn for_case(case: PdeCase) -> Self {
        GnsConfig::for_channels(case.channels())
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            omega: self.omega,
            channels: self.out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.feature_config();
        f.validate()?;
        let widths_ok = self.latent >= 2 && self.hidden.iter().all(|&h| h > 0);
        if !widths_ok || self.node_in != f.node_width() || self.edge_in != f.edge_width() {
            return Err(GnsError::Config(format!(
                "inconsistent model config {self:?}: features need node width {} and edge width {}, latent >= 2",
                f.node_width(),
                f.edge_width()
            )));
        }
        Ok(())
    }
}

/// Name and shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Position of an MLP in the parameter list: weights at `first + 2k`,
/// biases at `first + 2k + 1`.
#[derive(Clone, Copy, Debug)]
struct MlpIdx {
    first: usize,
    layers: usize,
    act_last: bool,
}

#[derive(Clone, Copy, Debug)]
struct LayerIdx {
    message: MlpIdx,
    node: MlpIdx,
    edge: MlpIdx,
    /// Gamma at `i`, beta at `i + 1`.
    node_norm: usize,
    edge_norm: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    specs: Vec<ParamSpec>,
    node_enc: MlpIdx,
    edge_enc: MlpIdx,
    layers: Vec<LayerIdx>,
    decoder: MlpIdx,
}

fn push_mlp(specs: &mut Vec<ParamSpec>, prefix: &str, widths: &[usize], act_last: bool) -> MlpIdx {
    let first = specs.len();
    for (k, w) in widths.windows(2).enumerate() {
        specs.push(ParamSpec {
            name: format!("{prefix}.{k}.weight"),
            shape: vec![w[0], w[1]],
        });
        specs.push(ParamSpec {
            name: format!("{prefix}.{k}.bias"),
            shape: vec![w[1]],
        });
    }
    MlpIdx {
        first,
        layers: widths.len() - 1,
        act_last,
    }
}

fn push_norm(specs: &mut Vec<ParamSpec>, prefix: &str, width: usize) -> usize {
    let first = specs.len();
    for part in ["gamma", "beta"] {
        specs.push(ParamSpec {
            name: format!("{prefix}.{part}"),
            shape: vec![width],
        });
    }
    first
}

impl Layout {
    fn new(cfg: &GnsConfig) -> Self {
        let l = cfg.latent;
        let mut specs = Vec::new();
        let node_enc = push_mlp(&mut specs, "encoder.node", &[cfg.node_in, l, l], true);
        let edge_enc = push_mlp(&mut specs, "encoder.edge", &[cfg.edge_in, l, l], true);
        let widths = |input: usize| -> Vec<usize> {
            std::iter::once(input).chain(cfg.hidden.iter().copied()).chain([l]).collect()
        };
        let layers = (0..cfg.mp_layers)
            .map(|i| LayerIdx {
                message: push_mlp(&mut specs, &format!("processor.{i}.message"), &widths(3 * l), false),
                node: push_mlp(&mut specs, &format!("processor.{i}.node"), &widths(2 * l), false),
                edge: push_mlp(&mut specs, &format!("processor.{i}.edge"), &widths(3 * l), false),
                node_norm: push_norm(&mut specs, &format!("processor.{i}.node_norm"), l),
                edge_norm: push_norm(&mut specs, &format!("processor.{i}.edge_norm"), l),
            })
            .collect();
        let decoder = push_mlp(&mut specs, "decoder", &[l, l, cfg.out_channels], false);
        Layout {
            specs,
            node_enc,
            edge_enc,
            layers,
            decoder,
        }
    }
}

/// All trainable tensors of one model, in a fixed order determined by the
/// config.
#[derive(Clone, Debug)]
pub struct GnsParams {
    config: GnsConfig,
    layout: Layout,
    tensors: Vec<Tensor>,
}

impl PartialEq for GnsParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors
    }
}

impl GnsParams {
    /// Glorot-uniform weights, zero biases, unit gains and zero shifts.
    pub fn init(config: GnsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|s| {
                if s.name.ends_with(".weight") {
                    let limit = (6.0 / (s.shape[0] + s.shape[1]) as f64).sqrt();
                    let data = (0..s.numel()).map(|_| rng.random_range(-limit..=limit)).collect();
                    Tensor::new(s.shape.clone(), data).expect("spec shape")
                } else if s.name.ends_with(".gamma") {
                    Tensor::full(&s.shape, 1.0)
                } else {
                    Tensor::zeros(&s.shape)
                }
            })
            .collect();
        Ok(GnsParams {
            config,
            layout,
            tensors,
        })
    }

    /// Rebuild from a flat vector in [`GnsParams::specs`] order.
    pub fn from_flat(config: GnsConfig, flat: &[f64]) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let total: usize = layout.specs.iter().map(ParamSpec::numel).sum();
        if total != flat.len() {
            return Err(GnsError::dim(
                "params",
                format!("config needs {total} parameters, got {}", flat.len()),
            ));
        }
        let mut off = 0;
        let mut tensors = Vec::with_capacity(layout.specs.len());
        for s in &layout.specs {
            tensors.push(Tensor::new(s.shape.clone(), flat[off..off + s.numel()].to_vec())?);
            off += s.numel();
        }
        Ok(GnsParams {
            config,
            layout,
            tensors,
        })
    }

    pub fn config(&self) -> &GnsConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout.specs.iter().position(|s| s.name == name)
    }

    /// Record every parameter on `tape`, as gradient leaves if `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound<'_>> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect::<Result<_>>()?;
        Ok(Bound { params: self, vars })
    }
}

/// Parameters recorded on a tape.
pub struct Bound<'a> {
    params: &'a GnsParams,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn mlp_from(&self, tape: &mut Tape, idx: MlpIdx, mut x: Var, start: usize) -> Result<Var> {
        for k in start..idx.layers {
            x = tape.linear(x, self.vars[idx.first + 2 * k], self.vars[idx.first + 2 * k + 1])?;
            if k + 1 < idx.layers || idx.act_last {
                x = tape.gelu(x)?;
            }
        }
        Ok(x)
    }

    fn mlp(&self, tape: &mut Tape, idx: MlpIdx, x: Var) -> Result<Var> {
        self.mlp_from(tape, idx, x, 0)
    }

    /// MLP over per-edge `[h_receiver, h_sender, z]` inputs.
    fn edge_mlp(&self, tape: &mut Tape, idx: MlpIdx, topo: &GraphTopology, h: Var, z: Var) -> Result<Var> {
        let l = self.params.config.latent;
        let w = self.vars[idx.first];
        let (wr, ws, wz) = (tape.slice_rows(w, 0, l)?, tape.slice_rows(w, l, l)?, tape.slice_rows(w, 2 * l, l)?);
        let pr = tape.matmul(h, wr)?;
        let ps = tape.matmul(h, ws)?;
        let pz = tape.linear(z, wz, self.vars[idx.first + 1])?;
        let mut x = tape.gather_pair_add(pr, topo.receivers().clone(), ps, topo.senders().clone(), pz)?;
        if idx.layers > 1 || idx.act_last {
            x = tape.gelu(x)?;
        }
        self.mlp_from(tape, idx, x, 1)
    }

    fn check_width(&self, tape: &Tape, v: Var, want: usize, what: &str) -> Result<()> {
        let got = tape.value(v).cols();
        if got != want {
            return Err(GnsError::Config(format!("{what} features have width {got}, model expects {want}")));
        }
        Ok(())
    }

    pub fn encode(&self, tape: &mut Tape, nodes: Var, edges: Var) -> Result<(Var, Var)> {
        let cfg = &self.params.config;
        self.check_width(tape, nodes, cfg.node_in, "node")?;
        self.check_width(tape, edges, cfg.edge_in, "edge")?;
        let h = self.mlp(tape, self.params.layout.node_enc, nodes)?;
        let z = self.mlp(tape, self.params.layout.edge_enc, edges)?;
        Ok((h, z))
    }

    pub fn process(&self, tape: &mut Tape, topo: &GraphTopology, mut h: Var, mut z: Var) -> Result<Var> {
        let n = topo.n_nodes();
        for layer in &self.params.layout.layers {
            let m = self.edge_mlp(tape, layer.message, topo, h, z)?;
            let mbar = tape.scatter_mean(m, topo.receivers().clone(), n)?;
            let hm = tape.concat_cols(&[h, mbar])?;
            let dh = self.mlp(tape, layer.node, hm)?;
            let dz = self.edge_mlp(tape, layer.edge, topo, h, z)?;
            let h_res = tape.add(h, dh)?;
            let z_res = tape.add(z, dz)?;
            let (g, b) = (self.vars[layer.node_norm], self.vars[layer.node_norm + 1]);
            h = tape.layer_norm(h_res, g, b)?;
            let (g, b) = (self.vars[layer.edge_norm], self.vars[layer.edge_norm + 1]);
            z = tape.layer_norm(z_res, g, b)?;
        }
        Ok(h)
    }

    pub fn decode(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        self.mlp(tape, self.params.layout.decoder, h)
    }

    /// Standardized derivative `[n, C]` from already-standardized features.
    pub fn predict_normalized(&self, tape: &mut Tape, topo: &GraphTopology, state: &GraphState) -> Result<Var> {
        let nodes = tape.constant(state.node_features.clone())?;
        let edges = tape.constant(state.edge_features.clone())?;
        let (h, z) = self.encode(tape, nodes, edges)?;
        let h = self.process(tape, topo, h, z)?;
        self.decode(tape, h)
    }

    /// Physical-unit derivative of field `u` (`[n, C]`, node-major),
    /// recorded on the tape.
    pub fn forward(&self, tape: &mut Tape, u: &[f64], topo: &GraphTopology, norm: &Normalizer) -> Result<Var> {
        let state = normalized_features(u, topo, self.params.config(), norm)?;
        let y = self.predict_normalized(tape, topo, &state)?;
        tape.col_affine(y, &norm.target.std, &norm.target.mean)
    }
}

/// Raw features of `u` with the normalizer applied.
pub fn normalized_features(u: &[f64], topo: &GraphTopology, cfg: &GnsConfig, norm: &Normalizer) -> Result<GraphState> {
    if norm.channels() != cfg.out_channels {
        return Err(GnsError::Config(format!(
            "normalizer has {} channels, model {}",
            norm.channels(),
            cfg.out_channels
        )));
    }
    let mut state = build_features(u, topo, &cfg.feature_config())?;
    norm.normalize_graph(&mut state);
    Ok(state)
}

/// Inference-only derivative prediction in physical units.
pub fn forward(u: &[f64], topo: &GraphTopology, params: &GnsParams, norm: &Normalizer) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false)?;
    let y = bound.forward(&mut tape, u, topo, norm)?;
    Ok(tape.value(y).data().to_vec())
}
