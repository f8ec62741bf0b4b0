//! Static grid-graph topology and per-state node/edge features.
//!
//! Every node of a periodic `nx x ny` grid receives one edge from each of its
//! eight stencil neighbours. Edges are stored receiver-major with the fixed
//! neighbour order E, W, N, S, NE, NW, SE, SW, so reductions over incoming
//! edges always run in the same order.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::sync::Arc;

use crate::datagen::GridSpec;
use crate::error::{GnsError, Result};
use crate::tensor::Tensor;

/// Stencil offsets `(dx, dy)` in edge order.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (-1, 1),
    (1, -1),
    (-1, -1),
];

/// Edge columns that do not depend on the field: displacement, distance and
/// unit direction.
pub const EDGE_GEOMETRY_WIDTH: usize = 5;
/// Node columns after the field channels: coordinates and their encodings.
pub const NODE_POSITION_WIDTH: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct GraphTopology {
    coords: Vec<[f64; 2]>,
    senders: Arc<[usize]>,
    receivers: Arc<[usize]>,
    /// `[e, 5]` rows of `(dx, dy, d, dx/d, dy/d)`, sender minus receiver.
    geometry: Vec<f64>,
}

/// Component-wise minimum-image displacement on the periodic unit square.
fn min_image(d: f64) -> f64 {
    d - d.round()
}

impl GraphTopology {
    /// Topology from explicit node positions in `[0, 1)^2` and edges.
    pub fn from_edges(coords: Vec<[f64; 2]>, senders: Vec<usize>, receivers: Vec<usize>) -> Result<Self> {
        let n = coords.len();
        if senders.len() != receivers.len() {
            return Err(GnsError::dim("graph", "sender and receiver lists differ in length"));
        }
        if let Some(c) = coords.iter().find(|c| !c.iter().all(|v| (0.0..1.0).contains(v))) {
            return Err(GnsError::Input(format!("node coordinate {c:?} outside [0, 1)")));
        }
        let mut seen = HashSet::with_capacity(senders.len());
        for (&s, &r) in senders.iter().zip(&receivers) {
            if s >= n || r >= n {
                return Err(GnsError::Index {
                    op: "graph",
                    index: s.max(r),
                    len: n,
                });
            }
            if s == r {
                return Err(GnsError::Input(format!("self-edge at node {s}")));
            }
            if !seen.insert((s, r)) {
                return Err(GnsError::Input(format!("duplicate edge {s} -> {r}")));
            }
        }
        let mut geometry = Vec::with_capacity(senders.len() * EDGE_GEOMETRY_WIDTH);
        for (&s, &r) in senders.iter().zip(&receivers) {
            let dx = min_image(coords[s][0] - coords[r][0]);
            let dy = min_image(coords[s][1] - coords[r][1]);
            let d = dx.hypot(dy);
            if d == 0.0 {
                return Err(GnsError::Input(format!("nodes {s} and {r} coincide")));
            }
            geometry.extend([dx, dy, d, dx / d, dy / d]);
        }
        Ok(GraphTopology {
            coords,
            senders: senders.into(),
            receivers: receivers.into(),
            geometry,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn senders(&self) -> &Arc<[usize]> {
        &self.senders
    }

    pub fn receivers(&self) -> &Arc<[usize]> {
        &self.receivers
    }

    /// `[e, 5]` static edge geometry.
    pub fn geometry(&self) -> &[f64] {
        &self.geometry
    }

    /// Rename node `i` to `perm[i]`, keeping each edge in its position.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        if perm.len() != n || {
            let mut hit = vec![false; n];
            perm.iter().any(|&p| p >= n || std::mem::replace(&mut hit[p], true))
        } {
            return Err(GnsError::Input("relabeling is not a permutation".into()));
        }
        let mut coords = vec![[0.0; 2]; n];
        for (i, &p) in perm.iter().enumerate() {
            coords[p] = self.coords[i];
        }
        Ok(GraphTopology {
            coords,
            senders: self.senders.iter().map(|&s| perm[s]).collect(),
            receivers: self.receivers.iter().map(|&r| perm[r]).collect(),
            geometry: self.geometry.clone(),
        })
    }

    /// `count` disjoint copies laid out block-diagonally: copy `b` owns nodes
    /// `b * n .. (b + 1) * n` and edges `b * e .. (b + 1) * e`.
    pub fn batched(&self, count: usize) -> Self {
        let n = self.n_nodes();
        let shift = |idx: &[usize]| -> Arc<[usize]> {
            (0..count).flat_map(|b| idx.iter().map(move |&i| i + b * n)).collect()
        };
        GraphTopology {
            coords: self.coords.repeat(count),
            senders: shift(&self.senders),
            receivers: shift(&self.receivers),
            geometry: self.geometry.repeat(count),
        }
    }
}

/// Periodic 8-neighbour stencil graph of a grid.
pub fn build_topology(grid: GridSpec) -> Result<GraphTopology> {
    let (nx, ny) = (grid.nx, grid.ny);
    if nx < 3 || ny < 3 {
        return Err(GnsError::StencilDegenerate { nx, ny });
    }
    let coords = (0..grid.len())
        .map(|p| {
            let (x, y) = grid.coords(p);
            [x, y]
        })
        .collect();
    let mut senders = Vec::with_capacity(8 * grid.len());
    let mut receivers = Vec::with_capacity(8 * grid.len());
    for p in 0..grid.len() {
        let (ix, iy) = ((p % nx) as isize, (p / nx) as isize);
        for (ox, oy) in NEIGHBOR_OFFSETS {
            let jx = (ix + ox).rem_euclid(nx as isize) as usize;
            let jy = (iy + oy).rem_euclid(ny as isize) as usize;
            senders.push(jy * nx + jx);
            receivers.push(p);
        }
    }
    GraphTopology::from_edges(coords, senders, receivers)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureConfig {
    /// Positional-encoding frequency in radians per unit length.
    pub omega: f64,
    pub channels: usize,
}

impl FeatureConfig {
    pub fn new(channels: usize) -> Self {
        FeatureConfig { omega: TAU, channels }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) || self.channels == 0 {
            return Err(GnsError::Config(format!(
                "feature config needs omega > 0 and channels > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn node_width(&self) -> usize {
        self.channels + NODE_POSITION_WIDTH
    }

    pub fn edge_width(&self) -> usize {
        self.channels + EDGE_GEOMETRY_WIDTH + 1
    }
}

/// Raw (unnormalized) graph features of one field state.
///
/// Node columns: `(f_1..f_C, x, y, sin wx, cos wx, sin wy, cos wy)`.
/// Edge columns: `(dx, dy, d, dx/d, dy/d, df_1..df_C, |df|)` with
/// `df = f_sender - f_receiver`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphState {
    pub node_features: Tensor,
    pub edge_features: Tensor,
}

/// Features of field `u` laid out node-major `[n, C]`.
pub fn build_features(u: &[f64], topo: &GraphTopology, cfg: &FeatureConfig) -> Result<GraphState> {
    cfg.validate()?;
    let (n, c) = (topo.n_nodes(), cfg.channels);
    if u.len() != n * c {
        return Err(GnsError::dim(
            "build_features",
            format!("field has {} values, topology needs {n} x {c}", u.len()),
        ));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(GnsError::Input("field contains non-finite values".into()));
    }
    let w = cfg.omega;
    let mut nodes = Vec::with_capacity(n * cfg.node_width());
    for (p, [x, y]) in topo.coords.iter().enumerate() {
        nodes.extend_from_slice(&u[p * c..(p + 1) * c]);
        nodes.extend([*x, *y, (w * x).sin(), (w * x).cos(), (w * y).sin(), (w * y).cos()]);
    }
    let e = topo.n_edges();
    let mut edges = Vec::with_capacity(e * cfg.edge_width());
    for (k, (&s, &r)) in topo.senders.iter().zip(topo.receivers.iter()).enumerate() {
        edges.extend_from_slice(&topo.geometry[k * EDGE_GEOMETRY_WIDTH..(k + 1) * EDGE_GEOMETRY_WIDTH]);
        let mut norm2 = 0.0;
        for ch in 0..c {
            let df = u[s * c + ch] - u[r * c + ch];
            norm2 += df * df;
            edges.push(df);
        }
        edges.push(norm2.sqrt());
    }
    Ok(GraphState {
        node_features: Tensor::matrix(n, cfg.node_width(), nodes)?,
        edge_features: Tensor::matrix(e, cfg.edge_width(), edges)?,
    })
}
