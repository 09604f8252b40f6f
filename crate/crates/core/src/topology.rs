//! Network shapes and the mapping from mask bits to the entities they gate.
//!
//! Nodes are numbered `0..=L+1`: node `0` is the input, nodes `1..=L` are the
//! hidden (or dense-block) layers and node `L+1` is the output layer.
//!
//! - [`MaskMode::Unit`]: a plain MLP. Each hidden unit owns one bit; bits are
//!   laid out layer by layer.
//! - [`MaskMode::Connection`]: densely connected wiring, every node `t >= 1`
//!   consumes the concatenation of all nodes `s < t`. Each pair `(s, t)` owns
//!   one bit that gates the whole slice of weights from `s` into `t`. Bits are
//!   ordered target-major: `(0,1), (0,2), (1,2), (0,3), ...`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskMode {
    Unit,
    Connection,
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Unit => "unit",
            MaskMode::Connection => "connection",
        })
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(MaskMode::Unit),
            "connection" => Ok(MaskMode::Connection),
            other => Err(Error::invalid(format!("unknown mask mode {other:?}"))),
        }
    }
}

/// One incoming edge of a layer: which node feeds it and where its rows sit
/// in the layer's weight matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incoming {
    pub source: usize,
    pub rows: Range<usize>,
    /// Gating bit in connection mode; `None` for ungated edges.
    pub bit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedTopology {
    widths: Vec<usize>,
    mode: MaskMode,
}

impl MaskedTopology {
    /// Fully connected network with unit masks on the hidden layers.
    pub fn unit(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        Self::new(MaskMode::Unit, input, hidden, output)
    }

    /// Densely connected block of `layers` layers of width `growth`, followed by
    /// the output layer, with one gating bit per layer pair.
    pub fn dense_block(input: usize, growth: usize, layers: usize, output: usize) -> Result<Self> {
        Self::new(MaskMode::Connection, input, &vec![growth; layers], output)
    }

    pub fn new(mode: MaskMode, input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::invalid("topology needs at least one hidden layer"));
        }
        if input == 0 || output == 0 || hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        Ok(Self { widths, mode })
    }

    #[inline]
    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    /// Node widths `[input, hidden..., output]`.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    /// Number of hidden (block) layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 2
    }

    /// Index of the output node, `L + 1`.
    pub fn output_node(&self) -> usize {
        self.widths.len() - 1
    }

    /// Dimension `d` of the structure mask.
    pub fn mask_dim(&self) -> usize {
        match self.mode {
            MaskMode::Unit => self.hidden_widths().iter().sum(),
            MaskMode::Connection => {
                let targets = self.depth() + 1;
                targets * (targets + 1) / 2
            }
        }
    }

    /// Edges feeding node `target` (`1..=L+1`), in weight-row order.
    pub fn incoming(&self, target: usize) -> Vec<Incoming> {
        assert!(
            target >= 1 && target < self.widths.len(),
            "no layer {target}"
        );
        match self.mode {
            MaskMode::Unit => vec![Incoming {
                source: target - 1,
                rows: 0..self.widths[target - 1],
                bit: None,
            }],
            MaskMode::Connection => {
                let first_bit = target * (target - 1) / 2;
                let mut offset = 0;
                (0..target)
                    .map(|source| {
                        let rows = offset..offset + self.widths[source];
                        offset = rows.end;
                        Incoming {
                            source,
                            rows,
                            bit: Some(first_bit + source),
                        }
                    })
                    .collect()
            }
        }
    }

    /// `(fan_in, fan_out)` of the weight matrix feeding node `target`.
    pub fn layer_shape(&self, target: usize) -> (usize, usize) {
        let fan_in = match self.mode {
            MaskMode::Unit => self.widths[target - 1],
            MaskMode::Connection => self.widths[..target].iter().sum(),
        };
        (fan_in, self.widths[target])
    }

    /// Weight-matrix shapes of every layer, input side first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (1..self.widths.len())
            .map(|t| self.layer_shape(t))
            .collect()
    }

    /// Bits gating the units of hidden node `node` (unit mode only).
    pub fn unit_bits(&self, node: usize) -> Option<Range<usize>> {
        if self.mode != MaskMode::Unit || node == 0 || node > self.depth() {
            return None;
        }
        let start: usize = self.widths[1..node].iter().sum();
        Some(start..start + self.widths[node])
    }

    /// The `(source, target)` pair gated by connection bit `bit`.
    pub fn connection_of(&self, bit: usize) -> Option<(usize, usize)> {
        if self.mode != MaskMode::Connection || bit >= self.mask_dim() {
            return None;
        }
        let mut target = 1;
        while target * (target + 1) / 2 <= bit {
            target += 1;
        }
        Some((bit - target * (target - 1) / 2, target))
    }

    /// Contiguous bit ranges used for per-layer reporting: one range per hidden
    /// layer in unit mode, one per target layer in connection mode.
    pub fn bit_groups(&self) -> Vec<Range<usize>> {
        match self.mode {
            MaskMode::Unit => (1..=self.depth())
                .filter_map(|n| self.unit_bits(n))
                .collect(),
            MaskMode::Connection => (1..=self.output_node())
                .map(|t| {
                    let start = t * (t - 1) / 2;
                    start..start + t
                })
                .collect(),
        }
    }

    /// Total number of weights, biases excluded.
    pub fn weight_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o).sum()
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Compact description, e.g. `mode=unit widths=784,64,64,10`.
    pub fn describe(&self) -> String {
        let widths: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        format!("mode={} widths={}", self.mode, widths.join(","))
    }

    /// Inverse of [`describe`](Self::describe).
    pub fn parse_description(s: &str) -> Result<Self> {
        let mut mode = None;
        let mut widths: Option<Vec<usize>> = None;
        for field in s.split_whitespace() {
            if let Some(v) = field.strip_prefix("mode=") {
                mode = Some(v.parse::<MaskMode>()?);
            } else if let Some(v) = field.strip_prefix("widths=") {
                widths = Some(
                    v.split(',')
                        .map(|w| {
                            w.parse()
                                .map_err(|_| Error::invalid(format!("bad width {w:?}")))
                        })
                        .collect::<Result<_>>()?,
                );
            }
        }
        let (mode, widths) = mode
            .zip(widths)
            .ok_or_else(|| Error::invalid(format!("incomplete topology description {s:?}")))?;
        if widths.len() < 3 {
            return Err(Error::invalid("topology needs at least one hidden layer"));
        }
        Self::new(
            mode,
            widths[0],
            &widths[1..widths.len() - 1],
            widths[widths.len() - 1],
        )
    }
}
