use serde::{Deserialize, Serialize};

use crate::error::{GnsError, Result};
use crate::graphs::{GraphState, GraphTopology, EDGE_GEOMETRY_WIDTH};

/// Lower bound on every fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-column mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(width: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Population statistics over rows of width `width` (Welford updates).
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Result<Self> {
        let mut count = 0usize;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for row in rows {
            if row.len() != width {
                return Err(GnsError::dim("normalizer", format!("row of width {} vs {width}", row.len())));
            }
            count += 1;
            for (c, &x) in row.iter().enumerate() {
                let delta = x - mean[c];
                mean[c] += delta / count as f64;
                m2[c] += delta * (x - mean[c]);
            }
        }
        if count == 0 {
            return Err(GnsError::Config("cannot fit normalization statistics on no data".into()));
        }
        let std = m2.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(ChannelStats { mean, std })
    }

    /// Standardize `data` in place, treating it as rows of `stride` values
    /// whose columns `offset..offset + width` carry these statistics.
    pub fn apply(&self, data: &mut [f64], stride: usize, offset: usize) {
        for row in data.chunks_exact_mut(stride) {
            for (c, v) in row[offset..offset + self.width()].iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }

    pub fn invert(&self, data: &mut [f64], stride: usize, offset: usize) {
        for row in data.chunks_exact_mut(stride) {
            for (c, v) in row[offset..offset + self.width()].iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
    }
}

/// Standardization of model inputs and outputs, fitted on training pairs.
///
/// Positional node features and edge geometry are already O(1) and pass
/// through unchanged; field channels, edge field differences (including
/// their norm) and derivative targets are standardized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub field: ChannelStats,
    pub edge_diff: ChannelStats,
    pub target: ChannelStats,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Normalizer {
            field: ChannelStats::identity(channels),
            edge_diff: ChannelStats::identity(channels + 1),
            target: ChannelStats::identity(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.field.width()
    }

    /// Fit on input states and derivative targets, both node-major `[n, C]`.
    pub fn fit(states: &[&[f64]], targets: &[&[f64]], topo: &GraphTopology, channels: usize) -> Result<Self> {
        if states.is_empty() || targets.is_empty() {
            return Err(GnsError::Config("normalizer needs at least one training pair".into()));
        }
        let c = channels;
        let field = ChannelStats::fit(states.iter().flat_map(|s| s.chunks_exact(c)), c)?;
        let target = ChannelStats::fit(targets.iter().flat_map(|s| s.chunks_exact(c)), c)?;
        let (snd, rcv) = (topo.senders(), topo.receivers());
        let mut row = vec![0.0; c + 1];
        let mut edge_rows = Vec::with_capacity(states.len() * topo.n_edges() * (c + 1));
        for s in states {
            for (&a, &b) in snd.iter().zip(rcv.iter()) {
                let mut n2 = 0.0;
                for ch in 0..c {
                    let df = s[a * c + ch] - s[b * c + ch];
                    row[ch] = df;
                    n2 += df * df;
                }
                row[c] = n2.sqrt();
                edge_rows.extend_from_slice(&row);
            }
        }
        let edge_diff = ChannelStats::fit(edge_rows.chunks_exact(c + 1), c + 1)?;
        Ok(Normalizer {
            field,
            edge_diff,
            target,
        })
    }

    /// Standardize the field and field-difference columns of raw features.
    pub fn normalize_graph(&self, g: &mut GraphState) {
        let nw = g.node_features.cols();
        let ew = g.edge_features.cols();
        self.field.apply(g.node_features.data_mut(), nw, 0);
        self.edge_diff.apply(g.edge_features.data_mut(), ew, EDGE_GEOMETRY_WIDTH);
    }

    pub fn normalize_target(&self, d: &mut [f64]) {
        self.target.apply(d, self.channels(), 0);
    }

    pub fn denormalize_target(&self, d: &mut [f64]) {
        self.target.invert(d, self.channels(), 0);
    }
}
