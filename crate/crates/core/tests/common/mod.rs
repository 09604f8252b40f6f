//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's forward/backward code: networks are
//! physically pruned (masked units and connections are deleted from plain
//! `Vec` matrices) and evaluated with scalar loops.

#![allow(dead_code)]

use maskopt_core::net::{Batch, WeightStore};
use maskopt_core::{BernoulliTheta, MaskMode, MaskedTopology, StructureMask};

/// One layer of a pruned network.
pub struct PrunedLayer {
    /// `(source node, rows of the full weight matrix, kept source units)`
    pub sources: Vec<(usize, usize, Vec<usize>)>,
    /// Kept units of the target node.
    pub outputs: Vec<usize>,
    /// `weights[r][c]`, rows follow `sources` in order.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Full-matrix row of every pruned row.
    pub row_origin: Vec<usize>,
}

pub struct PrunedNet {
    pub layers: Vec<PrunedLayer>,
    pub node_units: Vec<Vec<usize>>,
}

fn kept_units(topology: &MaskedTopology, mask: &StructureMask, node: usize) -> Vec<usize> {
    let widths = topology.widths();
    let last = widths.len() - 1;
    if topology.mode() == MaskMode::Unit && node >= 1 && node < last {
        let start: usize = widths[1..node].iter().sum();
        (0..widths[node]).filter(|&u| mask.get(start + u)).collect()
    } else {
        (0..widths[node]).collect()
    }
}

/// Builds the network that remains after deleting every gated entity.
pub fn prune(
    topology: &MaskedTopology,
    weights: &WeightStore<f64>,
    mask: &StructureMask,
) -> PrunedNet {
    let widths = topology.widths();
    let nodes = widths.len();
    let node_units: Vec<Vec<usize>> = (0..nodes).map(|n| kept_units(topology, mask, n)).collect();
    let mut layers = Vec::new();
    for target in 1..nodes {
        let full = &weights.layers[target - 1];
        let outputs = node_units[target].clone();
        let mut sources = Vec::new();
        match topology.mode() {
            MaskMode::Unit => sources.push((target - 1, 0, node_units[target - 1].clone())),
            MaskMode::Connection => {
                let mut offset = 0;
                for s in 0..target {
                    let bit = target * (target - 1) / 2 + s;
                    if mask.get(bit) {
                        sources.push((s, offset, node_units[s].clone()));
                    }
                    offset += widths[s];
                }
            }
        }
        let mut rows = Vec::new();
        let mut row_origin = Vec::new();
        for (_, offset, units) in &sources {
            for &u in units {
                row_origin.push(offset + u);
                rows.push(
                    outputs
                        .iter()
                        .map(|&o| full.weight[[offset + u, o]])
                        .collect(),
                );
            }
        }
        layers.push(PrunedLayer {
            sources,
            bias: outputs.iter().map(|&o| full.bias[o]).collect(),
            outputs,
            weights: rows,
            row_origin,
        });
    }
    PrunedNet { layers, node_units }
}

impl PrunedNet {
    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.row_origin.len() * l.outputs.len())
            .sum()
    }

    /// Activations of every node (kept units only) for one sample.
    fn activations(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut pres: Vec<Vec<f64>> = vec![Vec::new()];
        let last = self.layers.len();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            let mut r = 0;
            for (src, _, units) in &layer.sources {
                for (k, _) in units.iter().enumerate() {
                    let a = acts[*src][k];
                    for (c, zc) in z.iter_mut().enumerate() {
                        *zc += a * layer.weights[r][c];
                    }
                    r += 1;
                }
            }
            let a = if li + 1 == last {
                z.clone()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pres.push(z);
            acts.push(a);
        }
        (acts, pres)
    }

    /// Logits per sample. Source activations of kept units are indexed in
    /// kept order, which matches `node_units`.
    pub fn forward(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|x| {
                let full_input: Vec<f64> = self.node_units[0].iter().map(|&u| x[u]).collect();
                self.activations(&full_input).0.pop().unwrap()
            })
            .collect()
    }

    pub fn loss(&self, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        self.forward(rows)
            .iter()
            .zip(labels)
            .map(|(z, &y)| {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
                lse - z[y]
            })
            .sum::<f64>()
            / rows.len() as f64
    }

    /// Loop-based backprop; gradients scattered back into full-size stores
    /// (deleted entries stay zero).
    pub fn gradient(
        &self,
        topology: &MaskedTopology,
        rows: &[Vec<f64>],
        labels: &[usize],
    ) -> WeightStore<f64> {
        let mut grads = WeightStore::<f64>::zeros(topology);
        let n = rows.len() as f64;
        let nodes = self.node_units.len();
        for (x, &y) in rows.iter().zip(labels) {
            let (acts, pres) = self.activations(x);
            let mut d_act: Vec<Vec<f64>> = acts.iter().map(|a| vec![0.0; a.len()]).collect();
            for target in (1..nodes).rev() {
                let layer = &self.layers[target - 1];
                let dz: Vec<f64> = if target == nodes - 1 {
                    let z = &acts[target];
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter()
                        .enumerate()
                        .map(|(c, v)| (v / s - if layer.outputs[c] == y { 1.0 } else { 0.0 }) / n)
                        .collect()
                } else {
                    d_act[target]
                        .iter()
                        .zip(&pres[target])
                        .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
                        .collect()
                };
                let full = &mut grads.layers[target - 1];
                for (c, &o) in layer.outputs.iter().enumerate() {
                    full.bias[o] += dz[c];
                }
                let mut r = 0;
                for (src, _, units) in &layer.sources {
                    for k in 0..units.len() {
                        let a = acts[*src][k];
                        for (c, &o) in layer.outputs.iter().enumerate() {
                            full.weight[[layer.row_origin[r], o]] += a * dz[c];
                            d_act[*src][k] += layer.weights[r][c] * dz[c];
                        }
                        r += 1;
                    }
                }
            }
        }
        grads
    }
}

pub fn rows_of(batch: &Batch<f64>) -> Vec<Vec<f64>> {
    batch
        .inputs
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect()
}

/// Central finite differences of the pruned network's loss with respect to
/// every full-size parameter (entries that were deleted get derivative 0).
pub fn finite_difference_gradient(
    topology: &MaskedTopology,
    weights: &WeightStore<f64>,
    mask: &StructureMask,
    batch: &Batch<f64>,
    step: f64,
) -> Vec<f64> {
    let rows = rows_of(batch);
    let count = weights.param_count();
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let eval = |delta: f64| {
            let mut w = weights.clone();
            *w.iter_mut().nth(idx).unwrap() += delta;
            prune(topology, &w, mask).loss(&rows, &batch.labels)
        };
        out.push((eval(step) - eval(-step)) / (2.0 * step));
    }
    out
}

/// `|n - a| / max(|n| + |a|, 1e-8)`.
pub fn relative_error(numerical: f64, analytical: f64) -> f64 {
    (numerical - analytical).abs() / (numerical.abs() + analytical.abs()).max(1e-8)
}

/// `p(M | θ)` computed directly from the product formula.
pub fn mask_probability(theta: &BernoulliTheta, mask: &StructureMask) -> f64 {
    theta
        .probs()
        .iter()
        .zip(mask.as_slice())
        .map(|(&p, &m)| if m { p } else { 1.0 - p })
        .product()
}

/// Exact predictive distribution: `Σ_M p(M | θ) softmax(f(x; M))` over all `2^d` masks.
pub fn exact_mixture(
    topology: &MaskedTopology,
    weights: &WeightStore<f64>,
    theta: &BernoulliTheta,
    rows: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let d = theta.dim();
    assert!(d <= 16, "enumeration over 2^{d} masks");
    let classes = topology.output_dim();
    let mut out = vec![vec![0.0; classes]; rows.len()];
    for code in 0..(1u64 << d) {
        let mask = StructureMask::from_code(code, d);
        let p = mask_probability(theta, &mask);
        let logits = prune(topology, weights, &mask).forward(rows);
        for (acc, z) in out.iter_mut().zip(logits) {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            for (a, v) in acc.iter_mut().zip(e) {
                *a += p * v / s;
            }
        }
    }
    out
}

/// Fraction of ones in each coordinate over a set of masks.
pub fn bit_means(masks: &[StructureMask]) -> Vec<f64> {
    let d = masks[0].len();
    (0..d)
        .map(|i| masks.iter().filter(|m| m.get(i)).count() as f64 / masks.len() as f64)
        .collect()
}
