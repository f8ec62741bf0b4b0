//! Straightforward forward pass of the simulator: explicit per-edge
//! concatenation, loop-based matrix products and per-receiver means. Used as
//! an oracle for the tape-based implementation.

use gns_core::graphs::GraphTopology;
use gns_core::model::GnsParams;
use gns_core::tensor::Tensor;

type Rows = Vec<Vec<f64>>;

fn param<'a>(p: &'a GnsParams, name: &str) -> Option<&'a Tensor> {
    p.index_of(name).map(|i| &p.tensors()[i])
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

fn linear(x: &Rows, w: &Tensor, b: &Tensor) -> Rows {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), k);
            (0..n)
                .map(|j| b.data()[j] + (0..k).map(|i| row[i] * w.at(i, j)).sum::<f64>())
                .collect()
        })
        .collect()
}

fn mlp(p: &GnsParams, prefix: &str, mut x: Rows, act_last: bool) -> Rows {
    let mut k = 0;
    while let Some(w) = param(p, &format!("{prefix}.{k}.weight")) {
        let b = param(p, &format!("{prefix}.{k}.bias")).unwrap();
        x = linear(&x, w, b);
        let last = param(p, &format!("{prefix}.{}.weight", k + 1)).is_none();
        if !last || act_last {
            x.iter_mut().flatten().for_each(|v| *v = gelu(*v));
        }
        k += 1;
    }
    x
}

fn layer_norm(x: &Rows, gamma: &Tensor, beta: &Tensor) -> Rows {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(c, v)| gamma.data()[c] * (v - mean) / (var + 1e-5).sqrt() + beta.data()[c])
                .collect()
        })
        .collect()
}

fn rows(t: &Tensor) -> Rows {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.concat()
}

/// Standardized derivative prediction from standardized features.
pub fn forward(p: &GnsParams, topo: &GraphTopology, nodes: &Tensor, edges: &Tensor) -> Rows {
    let mut h = mlp(p, "encoder.node", rows(nodes), true);
    let mut z = mlp(p, "encoder.edge", rows(edges), true);
    let (snd, rcv) = (topo.senders(), topo.receivers());
    for l in 0..p.config().mp_layers {
        let edge_in: Rows = (0..z.len()).map(|k| cat(&[&h[rcv[k]], &h[snd[k]], &z[k]])).collect();
        let msgs = mlp(p, &format!("processor.{l}.message"), edge_in.clone(), false);
        let node_in: Rows = (0..h.len())
            .map(|i| {
                let incoming: Vec<usize> = (0..z.len()).filter(|&k| rcv[k] == i).collect();
                let mut mean = vec![0.0; h[i].len()];
                for &k in &incoming {
                    mean.iter_mut().zip(&msgs[k]).for_each(|(m, v)| *m += v);
                }
                if !incoming.is_empty() {
                    mean.iter_mut().for_each(|m| *m /= incoming.len() as f64);
                }
                cat(&[&h[i], &mean])
            })
            .collect();
        let dh = mlp(p, &format!("processor.{l}.node"), node_in, false);
        let dz = mlp(p, &format!("processor.{l}.edge"), edge_in, false);
        let add = |a: &Rows, b: &Rows| -> Rows {
            a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
        };
        let norm = |name: &str, x: Rows| {
            let g = param(p, &format!("processor.{l}.{name}.gamma")).unwrap();
            let b = param(p, &format!("processor.{l}.{name}.beta")).unwrap();
            layer_norm(&x, g, b)
        };
        let h_next = norm("node_norm", add(&h, &dh));
        z = norm("edge_norm", add(&z, &dz));
        h = h_next;
    }
    mlp(p, "decoder", h, false)
}
