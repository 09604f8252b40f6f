//! Model-complexity coefficients `c` and weight-usage accounting.
//!
//! Usage rates count weights only; biases are never included.

use crate::error::{check_dim, Error, Result};
use crate::relaxation::StructureMask;
use crate::topology::{MaskMode, MaskedTopology};

/// Per-bit complexity weights of the penalty `Σ c_i m_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityCoefficients(Vec<f64>);

impl ComplexityCoefficients {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid(
                "complexity coefficients must be finite and >= 0",
            ));
        }
        if !c.iter().any(|&x| x > 0.0) {
            return Err(Error::invalid(
                "at least one complexity coefficient must be positive",
            ));
        }
        Ok(Self(c))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `c = (1, ..., 1)`: every unit costs the same.
pub fn unit_selection_coeffs(d: usize) -> Result<ComplexityCoefficients> {
    if d < 3 {
        return Err(Error::DegenerateDimension(d));
    }
    ComplexityCoefficients::new(vec![1.0; d])
}

/// `c_i` = number of weights in the slice gated by connection bit `i`.
pub fn connection_selection_coeffs(topology: &MaskedTopology) -> Result<ComplexityCoefficients> {
    if topology.mode() != MaskMode::Connection {
        return Err(Error::invalid(
            "connection coefficients need a connection-mask topology",
        ));
    }
    let mut c = vec![0.0; topology.mask_dim()];
    for target in 1..=topology.output_node() {
        let fan_out = topology.widths()[target];
        for inc in topology.incoming(target) {
            c[inc.bit.expect("connection edges are gated")] = (inc.rows.len() * fan_out) as f64;
        }
    }
    ComplexityCoefficients::new(c)
}

/// Number of weights left active by `mask`.
///
/// Unit masks: a weight is active iff both endpoint units are active; input and
/// output units are always active. Connection masks: a slice is active iff its
/// bit is set.
pub fn active_weight_count(topology: &MaskedTopology, mask: &StructureMask) -> Result<usize> {
    check_dim("mask", topology.mask_dim(), mask.len())?;
    let active_units = |node: usize| -> usize {
        match topology.unit_bits(node) {
            Some(bits) => bits.filter(|&b| mask.get(b)).count(),
            None => topology.widths()[node],
        }
    };
    let mut count = 0;
    for target in 1..=topology.output_node() {
        for inc in topology.incoming(target) {
            match inc.bit {
                Some(bit) if !mask.get(bit) => {}
                Some(_) => count += inc.rows.len() * topology.widths()[target],
                None => count += active_units(inc.source) * active_units(target),
            }
        }
    }
    Ok(count)
}

/// Active weights under `mask` divided by all weights of the unmasked network.
pub fn weight_usage_rate(topology: &MaskedTopology, mask: &StructureMask) -> Result<f64> {
    Ok(active_weight_count(topology, mask)? as f64 / topology.weight_count() as f64)
}
