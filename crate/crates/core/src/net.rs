//! Dense networks whose hidden units or layer-to-layer connections are gated by
//! a [`StructureMask`].
//!
//! Hidden layers use ReLU; the output layer returns logits and softmax is fused
//! into [`cross_entropy_loss`]. Masked-off weights stay in the [`WeightStore`],
//! they are simply skipped (or multiplied by zero) in the forward pass and
//! receive exactly zero gradient.

use std::io::{Read, Write};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::real::Real;
use crate::relaxation::StructureMask;
use crate::topology::MaskedTopology;

/// Weights and bias of the layer feeding one node. `weight` is `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

/// All trainable parameters, one [`DenseLayer`] per non-input node.
///
/// Also used to hold gradients and optimizer velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore<F> {
    pub layers: Vec<DenseLayer<F>>,
}

pub type Gradients<F> = WeightStore<F>;

impl<F: Real> WeightStore<F> {
    pub fn zeros(topology: &MaskedTopology) -> Self {
        Self {
            layers: topology
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| DenseLayer {
                    weight: Array2::zeros((i, o)),
                    bias: Array1::zeros(o),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn check_shapes(&self, topology: &MaskedTopology) -> Result<()> {
        let shapes = topology.layer_shapes();
        check_dim("layer count", shapes.len(), self.layers.len())?;
        for (layer, (i, o)) in self.layers.iter().zip(shapes) {
            if layer.weight.dim() != (i, o) || layer.bias.len() != o {
                return Err(Error::invalid(format!(
                    "weight shape {:?} does not match topology layer {i}x{o}",
                    layer.weight.dim()
                )));
            }
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        check_dim("layer count", self.layers.len(), other.layers.len())?;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.weight.dim() != b.weight.dim() || a.bias.len() != b.bias.len() {
                return Err(Error::invalid("parameter stores have different shapes"));
            }
        }
        Ok(())
    }

    /// Parameters in checkpoint order: per layer, the weight matrix row-major,
    /// then the bias.
    pub fn iter(&self) -> impl Iterator<Item = &F> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut F> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: F, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn scale(&mut self, alpha: F) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|x| x * alpha);
            l.bias.mapv_inplace(|x| x * alpha);
        }
    }

    /// Element-wise arithmetic mean of equally shaped stores.
    pub fn mean(stores: &[Self]) -> Result<Self> {
        let first = stores
            .first()
            .ok_or_else(|| Error::invalid("mean of zero parameter stores"))?;
        let mut acc = first.clone();
        for s in &stores[1..] {
            acc.check_same_shape(s)?;
            acc.scaled_add(F::one(), s);
        }
        acc.scale(F::one() / F::from_usize(stores.len()).unwrap());
        Ok(acc)
    }

    pub fn cast<G: Real>(&self) -> WeightStore<G> {
        WeightStore {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: l.weight.mapv(|x| G::from_f64_lossy(x.to_f64_lossy())),
                    bias: l.bias.mapv(|x| G::from_f64_lossy(x.to_f64_lossy())),
                })
                .collect(),
        }
    }
}

/// A mini-batch: one row of `inputs` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub inputs: Array2<F>,
    pub labels: Vec<usize>,
}

impl<F: Real> Batch<F> {
    pub fn new(inputs: Array2<F>, labels: Vec<usize>) -> Result<Self> {
        check_dim("batch labels", inputs.nrows(), labels.len())?;
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("batch input"));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// He initialization: weights `~ N(0, 2 / fan_in)`, biases zero.
pub fn he_init<F: Real, R: Rng + ?Sized>(topology: &MaskedTopology, rng: &mut R) -> WeightStore<F> {
    let mut store = WeightStore::zeros(topology);
    for layer in &mut store.layers {
        let fan_in = layer.weight.nrows();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        for w in layer.weight.iter_mut() {
            *w = F::from_f64_lossy(normal.sample(rng));
        }
    }
    store
}

/// Activations kept for the backward pass.
struct Trace<F> {
    /// Node outputs `a_0 .. a_L` after ReLU and unit gating.
    activations: Vec<Array2<F>>,
    /// Pre-activations of hidden nodes `1..=L` (index 0 unused).
    pre: Vec<Array2<F>>,
    logits: Array2<F>,
}

fn check_inputs<F: Real>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    mask: &StructureMask,
    inputs: &ArrayView2<'_, F>,
) -> Result<()> {
    weights.check_shapes(topology)?;
    check_dim("mask", topology.mask_dim(), mask.len())?;
    check_dim("input features", topology.input_dim(), inputs.ncols())
}

fn bit_on(mask: &StructureMask, bit: Option<usize>) -> bool {
    bit.is_none_or(|b| mask.get(b))
}

fn run_forward<F: Real>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    mask: &StructureMask,
    inputs: ArrayView2<'_, F>,
) -> Trace<F> {
    let n = inputs.nrows();
    let out_node = topology.output_node();
    let mut activations = Vec::with_capacity(out_node);
    let mut pre = Vec::with_capacity(out_node);
    activations.push(inputs.to_owned());
    pre.push(Array2::zeros((0, 0)));

    for target in 1..=out_node {
        let layer = &weights.layers[target - 1];
        let mut z = Array2::from_shape_fn((n, layer.bias.len()), |(_, j)| layer.bias[j]);
        for inc in topology.incoming(target) {
            if bit_on(mask, inc.bit) {
                let w = layer.weight.slice(s![inc.rows.clone(), ..]);
                general_mat_mul(F::one(), &activations[inc.source], &w, F::one(), &mut z);
            }
        }
        if target == out_node {
            return Trace {
                activations,
                pre,
                logits: z,
            };
        }
        let mut a = z.mapv(|x| if x > F::zero() { x } else { F::zero() });
        if let Some(bits) = topology.unit_bits(target) {
            for (col, bit) in bits.enumerate() {
                if !mask.get(bit) {
                    a.column_mut(col).fill(F::zero());
                }
            }
        }
        pre.push(z);
        activations.push(a);
    }
    unreachable!("topology always has an output node")
}

/// Logits of the masked network, one row per input row.
pub fn forward<F: Real>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    mask: &StructureMask,
    inputs: ArrayView2<'_, F>,
) -> Result<Array2<F>> {
    check_inputs(weights, topology, mask, &inputs)?;
    Ok(run_forward(weights, topology, mask, inputs).logits)
}

/// Row-wise softmax with max-shift.
pub fn softmax_rows<F: Real>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy_loss<F: Real>(logits: &Array2<F>, labels: &[usize]) -> Result<f64> {
    check_dim("labels", logits.nrows(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::invalid("cross-entropy of an empty batch"));
    }
    let mut total = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                row.len()
            )));
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x.to_f64_lossy()));
        let lse = row
            .iter()
            .map(|&x| (x.to_f64_lossy() - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        total += lse - row[label].to_f64_lossy();
    }
    let loss = total / labels.len() as f64;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("cross-entropy loss"))
    }
}

/// Loss and its exact gradient with respect to every weight and bias.
pub fn loss_and_gradient<F: Real>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    mask: &StructureMask,
    batch: &Batch<F>,
) -> Result<(f64, Gradients<F>)> {
    let inputs = batch.inputs.view();
    check_inputs(weights, topology, mask, &inputs)?;
    let trace = run_forward(weights, topology, mask, inputs);
    let loss = cross_entropy_loss(&trace.logits, &batch.labels)?;

    let n = F::from_usize(batch.len()).unwrap();
    let mut delta = softmax_rows(&trace.logits);
    for (mut row, &label) in delta.rows_mut().into_iter().zip(&batch.labels) {
        row[label] = row[label] - F::one();
        row.mapv_inplace(|x| x / n);
    }

    let out_node = topology.output_node();
    let mut grads = weights.zeros_like();
    // dL/da for hidden nodes, accumulated from every consumer
    let mut upstream: Vec<Option<Array2<F>>> = vec![None; out_node];

    for target in (1..=out_node).rev() {
        if target < out_node {
            let mut d = upstream[target]
                .take()
                .unwrap_or_else(|| Array2::zeros(trace.pre[target].raw_dim()));
            Zip::from(&mut d).and(&trace.pre[target]).for_each(|g, &z| {
                if z <= F::zero() {
                    *g = F::zero();
                }
            });
            if let Some(bits) = topology.unit_bits(target) {
                for (col, bit) in bits.enumerate() {
                    if !mask.get(bit) {
                        d.column_mut(col).fill(F::zero());
                    }
                }
            }
            delta = d;
        }

        let layer = &weights.layers[target - 1];
        let grad = &mut grads.layers[target - 1];
        grad.bias = delta.sum_axis(Axis(0));
        for inc in topology.incoming(target) {
            if !bit_on(mask, inc.bit) {
                continue;
            }
            let a = &trace.activations[inc.source];
            let mut gw = grad.weight.slice_mut(s![inc.rows.clone(), ..]);
            general_mat_mul(F::one(), &a.t(), &delta, F::zero(), &mut gw);
            if inc.source >= 1 {
                let w = layer.weight.slice(s![inc.rows.clone(), ..]);
                let acc = upstream[inc.source].get_or_insert_with(|| Array2::zeros(a.raw_dim()));
                general_mat_mul(F::one(), &delta, &w.t(), F::one(), acc);
            }
        }
    }
    Ok((loss, grads))
}

/// Gradient of `cross_entropy_loss ∘ forward`.
pub fn backward<F: Real>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    mask: &StructureMask,
    batch: &Batch<F>,
) -> Result<Gradients<F>> {
    loss_and_gradient(weights, topology, mask, batch).map(|(_, g)| g)
}

/// Monte-Carlo weight gradient: mean of the per-mask gradients on one shared batch.
pub fn averaged_weight_gradient<F: Real>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    masks: &[StructureMask],
    batch: &Batch<F>,
) -> Result<Gradients<F>> {
    let grads = masks
        .iter()
        .map(|m| backward(weights, topology, m, batch))
        .collect::<Result<Vec<_>>>()?;
    WeightStore::mean(&grads)
}

const WEIGHTS_MAGIC: &str = "maskopt-weights";

/// Writes a weight checkpoint: one ASCII header line naming the topology and
/// parameter count, then every parameter as little-endian `f64`.
pub fn write_weights<F: Real, W: Write>(
    topology: &MaskedTopology,
    weights: &WeightStore<F>,
    mut out: W,
) -> Result<()> {
    weights.check_shapes(topology)?;
    let io = |e| Error::io("<weights>", e);
    writeln!(
        out,
        "{WEIGHTS_MAGIC} {} params={}",
        topology.describe(),
        weights.param_count()
    )
    .map_err(io)?;
    let mut buf = Vec::with_capacity(weights.param_count() * 8);
    for x in weights.iter() {
        buf.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
    }
    out.write_all(&buf).map_err(io)
}

/// Reads a checkpoint written by [`write_weights`].
pub fn read_weights<F: Real, R: Read>(mut input: R) -> Result<(MaskedTopology, WeightStore<F>)> {
    const KIND: &str = "weight checkpoint";
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<weights>", e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(KIND, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::format(KIND, "header is not UTF-8"))?;
    let rest = header
        .strip_prefix(WEIGHTS_MAGIC)
        .ok_or_else(|| Error::format(KIND, format!("bad magic in {header:?}")))?;
    let topology = MaskedTopology::parse_description(rest)?;
    let declared: usize = rest
        .split_whitespace()
        .find_map(|f| f.strip_prefix("params="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(KIND, "missing params= field"))?;
    if declared != topology.param_count() {
        return Err(Error::format(
            KIND,
            format!(
                "params={declared} but topology has {}",
                topology.param_count()
            ),
        ));
    }
    let payload = &bytes[newline + 1..];
    if payload.len() != declared * 8 {
        return Err(Error::format(
            KIND,
            format!(
                "expected {} payload bytes, found {}",
                declared * 8,
                payload.len()
            ),
        ));
    }
    let mut store = WeightStore::zeros(&topology);
    for (x, chunk) in store.iter_mut().zip(payload.chunks_exact(8)) {
        *x = F::from_f64_lossy(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((topology, store))
}
