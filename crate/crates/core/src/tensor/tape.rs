use std::sync::Arc;

use super::{gemm, Tensor};
use crate::error::{GnsError, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    /// Keeps the standard normal CDF of the input for the backward pass.
    Gelu { x: Var, cdf: Vec<f64> },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        x: Var,
        idx: Arc<[usize]>,
    },
    ScatterMean {
        x: Var,
        receivers: Arc<[usize]>,
        inv_degree: Vec<f64>,
    },
    GatherPairAdd {
        a: Var,
        a_idx: Arc<[usize]>,
        b: Var,
        b_idx: Arc<[usize]>,
        c: Var,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    ColAffine {
        x: Var,
        scale: Vec<f64>,
    },
    Mse(Var, Var),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Records operations in execution order and replays them backwards.
///
/// Gradients of leaves created with `requires_grad = true` accumulate across
/// [`Tape::backward`] calls until [`Tape::zero_grad`] is called.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn check_index(op: &'static str, idx: &[usize], len: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= len) {
        Some(&index) => Err(GnsError::Index { op, index, len }),
        None => Ok(()),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(GnsError::dim(
            op,
            format!("expected a matrix, got shape {:?}", t.shape()),
        ));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() * 0.398_942_280_401_432_7
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, name: &'static str, op: Op, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(GnsError::NonFinite(name));
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// Record an input. Rejects non-finite values.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        let n = value.len();
        let v = self.push("leaf", Op::Leaf, value, requires_grad)?;
        if requires_grad {
            self.grads[v.0] = Some(vec![0.0; n]);
        }
        Ok(v)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Accumulated gradient of a leaf; `None` unless it requires grad.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_matrix("matmul", self.value(a))?;
        let (k2, n) = require_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(GnsError::dim(
                "matmul",
                format!("inner dimensions {k} and {k2} differ"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let rg = self.any_grad(&[a, b]);
        self.push("matmul", Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, rg)
    }

    /// `x * w + b` with `b` added to every row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = require_matrix("linear", self.value(x))?;
        let (k2, n) = require_matrix("linear", self.value(w))?;
        if k != k2 || self.value(b).len() != n {
            return Err(GnsError::dim(
                "linear",
                format!(
                    "x {:?}, w {:?}, b {:?}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let mut out = Vec::with_capacity(m * n);
        let bias = self.value(b).data();
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        gemm(m, k, n, self.value(x).data(), false, self.value(w).data(), false, 1.0, &mut out);
        let rg = self.any_grad(&[x, w, b]);
        self.push("linear", Op::Linear { x, w, b }, Tensor::new(vec![m, n], out)?, rg)
    }

    /// Exact GELU, `0.5 x (1 + erf(x / sqrt 2))`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let rg = self.any_grad(&[x]);
        let cdf: Vec<f64> = xv.data().iter().map(|&v| std_normal_cdf(v)).collect();
        let data = xv.data().iter().zip(&cdf).map(|(v, c)| v * c).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let cdf = if rg { cdf } else { Vec::new() };
        self.push("gelu", Op::Gelu { x, cdf }, out, rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, d) = require_matrix("layer_norm", self.value(x))?;
        if d < 2 {
            return Err(GnsError::DegenerateNormalization(d));
        }
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(GnsError::dim("layer_norm", "affine parameters must have d entries"));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = g[c] * h + bt[c];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(
            "layer_norm",
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            Tensor::new(vec![n, d], out)?,
            rg,
        )
    }

    /// `out[i] = x[idx[i]]`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (n, d) = require_matrix("gather_rows", self.value(x))?;
        check_index("gather_rows", &idx, n)?;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            out.extend_from_slice(&xv[i * d..(i + 1) * d]);
        }
        let rg = self.any_grad(&[x]);
        let t = Tensor::new(vec![idx.len(), d], out)?;
        self.push("gather_rows", Op::GatherRows { x, idx }, t, rg)
    }

    /// Mean of message rows per receiver; receivers without messages get zero.
    pub fn scatter_mean(&mut self, msgs: Var, receivers: Arc<[usize]>, n: usize) -> Result<Var> {
        let (e, d) = require_matrix("scatter_mean", self.value(msgs))?;
        if receivers.len() != e {
            return Err(GnsError::dim(
                "scatter_mean",
                format!("{e} messages but {} receivers", receivers.len()),
            ));
        }
        check_index("scatter_mean", &receivers, n)?;
        let mut degree = vec![0usize; n];
        for &r in receivers.iter() {
            degree[r] += 1;
        }
        let inv_degree: Vec<f64> = degree
            .iter()
            .map(|&k| if k == 0 { 0.0 } else { 1.0 / k as f64 })
            .collect();
        let mv = self.value(msgs).data();
        let mut out = vec![0.0; n * d];
        for (i, &r) in receivers.iter().enumerate() {
            add_into(&mut out[r * d..(r + 1) * d], &mv[i * d..(i + 1) * d]);
        }
        for (r, s) in inv_degree.iter().enumerate() {
            out[r * d..(r + 1) * d].iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.any_grad(&[msgs]);
        self.push(
            "scatter_mean",
            Op::ScatterMean {
                x: msgs,
                receivers,
                inv_degree,
            },
            Tensor::new(vec![n, d], out)?,
            rg,
        )
    }

    /// `out[i] = a[a_idx[i]] + b[b_idx[i]] + c[i]`: the per-edge sum of two
    /// gathered node projections and an edge projection.
    pub fn gather_pair_add(
        &mut self,
        a: Var,
        a_idx: Arc<[usize]>,
        b: Var,
        b_idx: Arc<[usize]>,
        c: Var,
    ) -> Result<Var> {
        let (na, d) = require_matrix("gather_pair_add", self.value(a))?;
        let (nb, db) = require_matrix("gather_pair_add", self.value(b))?;
        let (e, dc) = require_matrix("gather_pair_add", self.value(c))?;
        if d != db || d != dc || a_idx.len() != e || b_idx.len() != e {
            return Err(GnsError::dim("gather_pair_add", "operand widths or edge counts differ"));
        }
        check_index("gather_pair_add", &a_idx, na)?;
        check_index("gather_pair_add", &b_idx, nb)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = self.value(c).data().to_vec();
        for i in 0..e {
            let o = &mut out[i * d..(i + 1) * d];
            let (ra, rb) = (a_idx[i], b_idx[i]);
            add_into(o, &av[ra * d..(ra + 1) * d]);
            add_into(o, &bv[rb * d..(rb + 1) * d]);
        }
        let rg = self.any_grad(&[a, b, c]);
        self.push(
            "gather_pair_add",
            Op::GatherPairAdd {
                a,
                a_idx,
                b,
                b_idx,
                c,
            },
            Tensor::new(vec![e, d], out)?,
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(GnsError::dim("concat_cols", "no inputs"));
        }
        let n = require_matrix("concat_cols", self.value(parts[0]))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = require_matrix("concat_cols", self.value(p))?;
            if r != n {
                return Err(GnsError::dim("concat_cols", format!("row counts {n} and {r} differ")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..n {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = self.any_grad(parts);
        self.push(
            "concat_cols",
            Op::ConcatCols(parts.to_vec()),
            Tensor::new(vec![n, total], out)?,
            rg,
        )
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = require_matrix("slice_rows", self.value(x))?;
        if start + len > n {
            return Err(GnsError::Index {
                op: "slice_rows",
                index: start + len,
                len: n,
            });
        }
        let data = self.value(x).data()[start * d..(start + len) * d].to_vec();
        let rg = self.any_grad(&[x]);
        self.push("slice_rows", Op::SliceRows { x, start }, Tensor::new(vec![len, d], data)?, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(GnsError::dim(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        self.push("add", Op::Add(a, b), t, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        self.push("sub", Op::Sub(a, b), t, rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * s).collect())?;
        let rg = self.any_grad(&[x]);
        self.push("scale", Op::Scale(x, s), t, rg)
    }

    /// Per-column `x * scale + shift` with constant coefficients.
    pub fn col_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let (n, d) = require_matrix("col_affine", self.value(x))?;
        if scale.len() != d || shift.len() != d {
            return Err(GnsError::dim("col_affine", format!("{d} columns, {} coefficients", scale.len())));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for c in 0..d {
                out[r * d + c] = xv[r * d + c] * scale[c] + shift[c];
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(
            "col_affine",
            Op::ColAffine {
                x,
                scale: scale.to_vec(),
            },
            Tensor::new(vec![n, d], out)?,
            rg,
        )
    }

    /// Mean of squared differences over all elements, as a scalar.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        if p.is_empty() {
            return Err(GnsError::dim("mse_loss", "empty operands"));
        }
        let sum: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.any_grad(&[pred, target]);
        self.push("mse_loss", Op::Mse(pred, target), Tensor::scalar(sum / p.len() as f64), rg)
    }

    /// Propagate d(loss)/d(node) back to every gradient-requiring leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(GnsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let Tape { nodes, grads } = self;
        let mut work: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        work[loss.0] = Some(vec![1.0]);

        // Accumulate `f`'s contribution into the working gradient of `v`.
        fn acc(nodes: &[Node], work: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
            let node = &nodes[v.0];
            if !node.requires_grad {
                return;
            }
            let buf = work[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
            f(buf);
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = work[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if let Some(dst) = grads[id].as_mut() {
                        add_into(dst, &g);
                    }
                }
                Op::MatMul(a, b) | Op::Linear { x: a, w: b, .. } => {
                    let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                    let n = nodes[b.0].value.cols();
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(nodes, &mut work, *a, |ga| gemm(m, n, k, &g, false, bv, true, 1.0, ga));
                    acc(nodes, &mut work, *b, |gb| gemm(k, m, n, av, true, &g, false, 1.0, gb));
                    if let Op::Linear { b: bias, .. } = &node.op {
                        acc(nodes, &mut work, *bias, |gbias| {
                            for row in g.chunks_exact(n) {
                                add_into(gbias, row);
                            }
                        });
                    }
                }
                Op::Gelu { x, cdf } => {
                    let xv = nodes[x.0].value.data();
                    acc(nodes, &mut work, *x, |gx| {
                        for (((d, &v), &c), &go) in gx.iter_mut().zip(xv).zip(cdf).zip(&g) {
                            *d += go * (c + v * std_normal_pdf(v));
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let d = node.value.cols();
                    let gam = nodes[gamma.0].value.data();
                    acc(nodes, &mut work, *gamma, |gg| {
                        for (grow, hrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                            for c in 0..d {
                                gg[c] += grow[c] * hrow[c];
                            }
                        }
                    });
                    acc(nodes, &mut work, *beta, |gb| {
                        for grow in g.chunks_exact(d) {
                            add_into(gb, grow);
                        }
                    });
                    acc(nodes, &mut work, *x, |gx| {
                        let mut gh = vec![0.0; d];
                        for (r, ((grow, hrow), gxrow)) in g
                            .chunks_exact(d)
                            .zip(xhat.chunks_exact(d))
                            .zip(gx.chunks_exact_mut(d))
                            .enumerate()
                        {
                            let mut sum_gh = 0.0;
                            let mut sum_ghh = 0.0;
                            for c in 0..d {
                                gh[c] = grow[c] * gam[c];
                                sum_gh += gh[c];
                                sum_ghh += gh[c] * hrow[c];
                            }
                            let k = inv_std[r] / d as f64;
                            for c in 0..d {
                                gxrow[c] += k * (d as f64 * gh[c] - sum_gh - hrow[c] * sum_ghh);
                            }
                        }
                    });
                }
                Op::GatherRows { x, idx } => {
                    let d = node.value.cols();
                    acc(nodes, &mut work, *x, |gx| {
                        for (i, &src) in idx.iter().enumerate() {
                            add_into(&mut gx[src * d..(src + 1) * d], &g[i * d..(i + 1) * d]);
                        }
                    });
                }
                Op::ScatterMean {
                    x,
                    receivers,
                    inv_degree,
                } => {
                    let d = node.value.cols();
                    acc(nodes, &mut work, *x, |gx| {
                        for (i, &r) in receivers.iter().enumerate() {
                            let s = inv_degree[r];
                            for c in 0..d {
                                gx[i * d + c] += g[r * d + c] * s;
                            }
                        }
                    });
                }
                Op::GatherPairAdd {
                    a,
                    a_idx,
                    b,
                    b_idx,
                    c,
                } => {
                    let d = node.value.cols();
                    for (v, idx) in [(a, a_idx), (b, b_idx)] {
                        acc(nodes, &mut work, *v, |gv| {
                            for (i, &src) in idx.iter().enumerate() {
                                add_into(&mut gv[src * d..(src + 1) * d], &g[i * d..(i + 1) * d]);
                            }
                        });
                    }
                    acc(nodes, &mut work, *c, |gc| add_into(gc, &g));
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let n = node.value.rows();
                    let mut off = 0;
                    for p in parts {
                        let w = nodes[p.0].value.cols();
                        acc(nodes, &mut work, *p, |gp| {
                            for r in 0..n {
                                add_into(
                                    &mut gp[r * w..(r + 1) * w],
                                    &g[r * total + off..r * total + off + w],
                                );
                            }
                        });
                        off += w;
                    }
                }
                Op::SliceRows { x, start } => {
                    let d = node.value.cols();
                    acc(nodes, &mut work, *x, |gx| {
                        add_into(&mut gx[start * d..start * d + g.len()], &g);
                    });
                }
                Op::Add(a, b) => {
                    acc(nodes, &mut work, *a, |ga| add_into(ga, &g));
                    acc(nodes, &mut work, *b, |gb| add_into(gb, &g));
                }
                Op::Sub(a, b) => {
                    acc(nodes, &mut work, *a, |ga| add_into(ga, &g));
                    acc(nodes, &mut work, *b, |gb| {
                        gb.iter_mut().zip(&g).for_each(|(d, s)| *d -= s);
                    });
                }
                Op::Scale(x, s) => {
                    acc(nodes, &mut work, *x, |gx| {
                        gx.iter_mut().zip(&g).for_each(|(d, v)| *d += v * s);
                    });
                }
                Op::ColAffine { x, scale } => {
                    let d = scale.len();
                    acc(nodes, &mut work, *x, |gx| {
                        for (grow, gxrow) in g.chunks_exact(d).zip(gx.chunks_exact_mut(d)) {
                            for c in 0..d {
                                gxrow[c] += grow[c] * scale[c];
                            }
                        }
                    });
                }
                Op::Mse(p, t) => {
                    let (pv, tv) = (nodes[p.0].value.data(), nodes[t.0].value.data());
                    let k = 2.0 * g[0] / pv.len() as f64;
                    acc(nodes, &mut work, *p, |gp| {
                        for ((d, a), b) in gp.iter_mut().zip(pv).zip(tv) {
                            *d += k * (a - b);
                        }
                    });
                    acc(nodes, &mut work, *t, |gt| {
                        for ((d, a), b) in gt.iter_mut().zip(pv).zip(tv) {
                            *d -= k * (a - b);
                        }
                    });
                }
            }
        }
        if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(GnsError::NonFinite("backward"));
        }
        Ok(())
    }
}
