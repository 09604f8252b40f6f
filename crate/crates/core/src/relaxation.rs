//! Multivariate Bernoulli distribution over binary structure masks and its
//! penalized stochastic natural-gradient update.
//!
//! The distribution `p(M | θ) = Π θ_i^{m_i} (1 - θ_i)^{1 - m_i}` has Fisher
//! information `diag(1 / (θ(1-θ)))`, so natural gradients are available in
//! closed form:
//!
//! - log-likelihood: `M - θ`
//! - expected complexity `Σ c_i θ_i`: `c θ (1 - θ)`
//!
//! One step of the optimizer is
//!
//! ```text
//! θ ← clamp( θ + η_θ ( Σ_k (u_k / λ)(M_k - θ) - ε c θ (1 - θ) ) )
//! ```
//!
//! where `u_k` are ranking utilities of the sampled losses and the clamp keeps
//! every coordinate inside `[1/d, 1 - 1/d]`.

use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::complexity::ComplexityCoefficients;
use crate::error::{check_dim, Error, Result};

/// A binary vector selecting which units or connections are active.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct StructureMask {
    bits: Vec<bool>,
}

impl StructureMask {
    pub fn from_bools(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Builds a mask from `0`/`1` values, rejecting anything else.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::invalid(format!(
                    "mask bit must be 0 or 1, got {other}"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bools)
    }

    pub fn ones(d: usize) -> Self {
        Self {
            bits: vec![true; d],
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            bits: vec![false; d],
        }
    }

    /// Mask whose bit `i` is bit `i` of `code` (little-endian); used for enumeration.
    pub fn from_code(code: u64, d: usize) -> Self {
        Self {
            bits: (0..d).map(|i| (code >> i) & 1 == 1).collect(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.bits[i] = on;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }

    /// Bits as `0.0` / `1.0`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

impl fmt::Debug for StructureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("StructureMask(")?;
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

/// Parameters of the multivariate Bernoulli distribution `p(M | θ)`.
///
/// Coordinates produced by [`update_theta`] or [`clamp_theta`] always lie in
/// `[1/d, 1 - 1/d]`. Arbitrary probabilities in `[0, 1]` can be constructed with
/// [`BernoulliTheta::from_probs`] for sampling and testing.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliTheta {
    probs: Vec<f64>,
}

impl BernoulliTheta {
    /// All coordinates set to `init`, which must lie inside the clamp range.
    pub fn uniform(d: usize, init: f64) -> Result<Self> {
        check_degenerate(d)?;
        let (lo, hi) = bounds(d);
        if !(lo..=hi).contains(&init) {
            return Err(Error::invalid(format!(
                "initial theta {init} outside [{lo}, {hi}] for d = {d}"
            )));
        }
        Ok(Self {
            probs: vec![init; d],
        })
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        check_degenerate(probs.len())?;
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self { probs })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn lower(&self) -> f64 {
        bounds(self.dim()).0
    }

    #[inline]
    pub fn upper(&self) -> f64 {
        bounds(self.dim()).1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().sum::<f64>() / self.dim() as f64
    }

    pub fn is_clamped(&self) -> bool {
        let (lo, hi) = bounds(self.dim());
        self.probs.iter().all(|p| (lo..=hi).contains(p))
    }

    /// Writes the checkpoint format: a `theta <d>` header, then one probability per line.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "theta {}", self.dim())?;
        for p in &self.probs {
            writeln!(out, "{p}")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        const KIND: &str = "theta checkpoint";
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(KIND, "empty file"))?
            .map_err(|e| Error::format(KIND, e.to_string()))?;
        let d: usize = header
            .strip_prefix("theta ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::format(KIND, format!("bad header {header:?}")))?;
        let mut probs = Vec::with_capacity(d);
        for line in lines {
            let line = line.map_err(|e| Error::format(KIND, e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let p: f64 = line
                .parse()
                .map_err(|_| Error::format(KIND, format!("bad probability {line:?}")))?;
            probs.push(p);
        }
        if probs.len() != d {
            return Err(Error::format(
                KIND,
                format!("header declares {d} values, found {}", probs.len()),
            ));
        }
        Self::from_probs(probs)
    }
}

fn check_degenerate(d: usize) -> Result<()> {
    if d < 3 {
        Err(Error::DegenerateDimension(d))
    } else {
        Ok(())
    }
}

#[inline]
fn bounds(d: usize) -> (f64, f64) {
    let lo = 1.0 / d as f64;
    (lo, 1.0 - lo)
}

/// Ranking-based utilities of `λ` sampled losses.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityVector(Vec<f64>);

impl UtilityVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&u| u == 0.0)
    }
}

/// Draws `lambda` independent masks, bit `i` set with probability `θ_i`.
pub fn sample_masks<R: Rng + ?Sized>(
    theta: &BernoulliTheta,
    lambda: usize,
    rng: &mut R,
) -> Result<Vec<StructureMask>> {
    if lambda < 2 {
        return Err(Error::invalid(format!(
            "sample size lambda must be >= 2, got {lambda}"
        )));
    }
    Ok((0..lambda)
        .map(|_| {
            StructureMask::from_bools(
                theta
                    .probs
                    .iter()
                    .map(|&p| rng.random::<f64>() < p)
                    .collect(),
            )
        })
        .collect())
}

/// Number of rank slots that receive `+1` (and, symmetrically, `-1`).
#[inline]
pub fn utility_quota(lambda: usize) -> usize {
    lambda.div_ceil(4)
}

/// Converts losses into ranking utilities: the `⌈λ/4⌉` smallest losses get
/// `+1`, the `⌈λ/4⌉` largest get `-1`, the rest `0`.
///
/// Tied losses share the mean utility of the rank slots they occupy, so the
/// result always sums to zero and a two-way tie at `λ = 2` yields `(0, 0)`.
pub fn compute_utilities(losses: &[f64]) -> Result<UtilityVector> {
    let lambda = losses.len();
    if lambda < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 losses to rank, got {lambda}"
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("sampled loss"));
    }
    let quota = utility_quota(lambda);
    let slot_utility = |rank: usize| -> f64 {
        if rank < quota {
            1.0
        } else if rank >= lambda - quota {
            -1.0
        } else {
            0.0
        }
    };

    let mut order: Vec<usize> = (0..lambda).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));

    let mut utilities = vec![0.0; lambda];
    let mut start = 0;
    while start < lambda {
        let mut end = start + 1;
        while end < lambda && losses[order[end]] == losses[order[start]] {
            end += 1;
        }
        let shared = (start..end).map(slot_utility).sum::<f64>() / (end - start) as f64;
        for &idx in &order[start..end] {
            utilities[idx] = shared;
        }
        start = end;
    }
    Ok(UtilityVector(utilities))
}

/// `ε = ε' / max(c)`. The sign of `ε'` is kept.
pub fn normalize_epsilon(eps_prime: f64, c: &ComplexityCoefficients) -> Result<f64> {
    let max = c.max();
    if max <= 0.0 {
        return Err(Error::invalid("complexity coefficients are all zero"));
    }
    Ok(eps_prime / max)
}

/// Natural gradient of the penalty `ε Σ c_i θ_i`: element-wise `ε c_i θ_i (1 - θ_i)`.
pub fn penalty_natural_gradient(
    theta: &BernoulliTheta,
    c: &ComplexityCoefficients,
    eps: f64,
) -> Result<Vec<f64>> {
    check_dim("penalty coefficients", theta.dim(), c.len())?;
    Ok(theta
        .probs
        .iter()
        .zip(c.values())
        .map(|(&p, &ci)| eps * ci * p * (1.0 - p))
        .collect())
}

/// Monte-Carlo natural gradient of the expected loss, `Σ_k (u_k / λ)(M_k - θ)`.
pub fn loss_natural_gradient(
    theta: &BernoulliTheta,
    masks: &[StructureMask],
    utilities: &UtilityVector,
) -> Result<Vec<f64>> {
    check_dim("utilities", masks.len(), utilities.len())?;
    let d = theta.dim();
    let lambda = masks.len() as f64;
    let mut grad = vec![0.0; d];
    for (mask, &u) in masks.iter().zip(utilities.values()) {
        check_dim("sampled mask", d, mask.len())?;
        let w = u / lambda;
        for ((g, &p), m) in grad.iter_mut().zip(&theta.probs).zip(mask.iter()) {
            let m = if m { 1.0 } else { 0.0 };
            *g += w * (m - p);
        }
    }
    Ok(grad)
}

/// Penalized natural-gradient step followed by the clamp to `[1/d, 1 - 1/d]`.
pub fn update_theta(
    theta: &BernoulliTheta,
    masks: &[StructureMask],
    utilities: &UtilityVector,
    c: &ComplexityCoefficients,
    eps: f64,
    eta_theta: f64,
) -> Result<BernoulliTheta> {
    check_eta(eta_theta)?;
    let loss_grad = loss_natural_gradient(theta, masks, utilities)?;
    let penalty = penalty_natural_gradient(theta, c, eps)?;
    let raw: Vec<f64> = theta
        .probs
        .iter()
        .zip(loss_grad.iter().zip(&penalty))
        .map(|(&p, (&g, &r))| p + eta_theta * (g - r))
        .collect();
    clamp_theta(raw, theta.dim())
}

/// The unpenalized update (no complexity term at all), followed by the clamp.
///
/// [`update_theta`] with `eps = 0` reproduces this bit for bit.
pub fn baseline_update_theta(
    theta: &BernoulliTheta,
    masks: &[StructureMask],
    utilities: &UtilityVector,
    eta_theta: f64,
) -> Result<BernoulliTheta> {
    check_eta(eta_theta)?;
    let loss_grad = loss_natural_gradient(theta, masks, utilities)?;
    let raw: Vec<f64> = theta
        .probs
        .iter()
        .zip(&loss_grad)
        .map(|(&p, &g)| p + eta_theta * g)
        .collect();
    clamp_theta(raw, theta.dim())
}

fn check_eta(eta_theta: f64) -> Result<()> {
    if eta_theta > 0.0 && eta_theta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "eta_theta must be positive, got {eta_theta}"
        )))
    }
}

/// Projects each coordinate into `[1/d, 1 - 1/d]`.
pub fn clamp_theta(mut raw: Vec<f64>, d: usize) -> Result<BernoulliTheta> {
    check_degenerate(d)?;
    check_dim("theta", d, raw.len())?;
    let (lo, hi) = bounds(d);
    for p in &mut raw {
        if p.is_nan() {
            return Err(Error::NonFinite("theta update"));
        }
        *p = p.clamp(lo, hi);
    }
    Ok(BernoulliTheta { probs: raw })
}

/// Most probable mask: bit `i` is on iff `θ_i >= 0.5`.
pub fn deterministic_mask(theta: &BernoulliTheta) -> StructureMask {
    StructureMask::from_bools(theta.probs.iter().map(|&p| p >= 0.5).collect())
}

/// `ln p(M | θ)`.
pub fn log_prob(theta: &BernoulliTheta, mask: &StructureMask) -> f64 {
    theta
        .probs
        .iter()
        .zip(mask.iter())
        .map(|(&p, m)| if m { p.ln() } else { (1.0 - p).ln() })
        .sum()
}
