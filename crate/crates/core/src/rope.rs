//! Weight sequences with shared support, the RoPE instantiation, attention
//! instances, and their one-sparse decomposition into rescaled Toeplitz
//! components.
//!
//! A weight sequence assigns a `d x d` matrix `W_t` to every offset
//! `t = i - j`. Only the support entries are stored, each as a Toeplitz
//! generator whose offset-`t` slot holds `(W_t)[l1][l2]`. Support indices are
//! zero-based.
//!
//! For RoPE, `W_t` is the block-diagonal rotation `R_{-t}`: the score between
//! query row `i` and key row `j` uses `R_{j-i}` with `R(theta)` blocks
//! `[[cos, -sin], [sin, cos]]` and frequencies `theta_b = alpha^(-2b/d)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::structured::{RescaledToeplitz, ToeplitzGenerator};

/// Base of the RoPE frequency ladder used by the original construction.
pub const DEFAULT_ROPE_BASE: f64 = 1.0e4;

/// Ordered, duplicate-free list of `(l1, l2)` coordinates in `[d] x [d]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportSet {
    d: usize,
    entries: Vec<(usize, usize)>,
}

impl SupportSet {
    pub fn new(d: usize, entries: Vec<(usize, usize)>) -> Result<Self> {
        if d == 0 {
            return Err(Error::domain("dimension d must be positive"));
        }
        if entries.is_empty() {
            return Err(Error::domain("support must contain at least one entry"));
        }
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in &entries {
            if a >= d || b >= d {
                return Err(Error::domain(format!(
                    "support entry ({a}, {b}) lies outside [0, {d})"
                )));
            }
            if !seen.insert((a, b)) {
                return Err(Error::domain(format!("support entry ({a}, {b}) is repeated")));
            }
        }
        Ok(Self { d, entries })
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn position(&self, l1: usize, l2: usize) -> Option<usize> {
        self.entries.iter().position(|&e| e == (l1, l2))
    }
}

/// Support-resident generators of a sequence `W_{-(n-1)}, ..., W_{n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSequence {
    n: usize,
    support: SupportSet,
    gens: Vec<ToeplitzGenerator>,
}

impl WeightSequence {
    pub fn new(n: usize, support: SupportSet, gens: Vec<ToeplitzGenerator>) -> Result<Self> {
        if gens.len() != support.len() {
            return Err(Error::size(format!(
                "{} generators for {} support entries",
                gens.len(),
                support.len()
            )));
        }
        if let Some(g) = gens.iter().find(|g| g.side() != n) {
            return Err(Error::size(format!(
                "generator of side {} in a sequence of side {n}",
                g.side()
            )));
        }
        Ok(Self { n, support, gens })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.support.dim()
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn generators(&self) -> &[ToeplitzGenerator] {
        &self.gens
    }

    /// `||W||_inf` over all offsets and support entries.
    pub fn max_abs(&self) -> f64 {
        self.gens.iter().map(ToeplitzGenerator::max_abs).fold(0.0, f64::max)
    }

    /// Dense `W_t`, reassembled from the one-sparse pieces.
    pub fn dense_at(&self, t: isize) -> Matrix {
        let mut w = Matrix::zeros(self.d(), self.d());
        for (&(a, b), g) in self.support.entries().iter().zip(&self.gens) {
            w.set(a, b, g.at(t));
        }
        w
    }
}

/// RoPE weights: `d/2` rotation blocks, four support entries each.
pub fn rope_weights(n: usize, d: usize, alpha: f64) -> Result<WeightSequence> {
    if n == 0 {
        return Err(Error::domain("sequence length must be positive"));
    }
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::domain(format!("RoPE needs a positive even d, got {d}")));
    }
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::domain(format!("RoPE base must exceed 1, got {alpha}")));
    }
    let span = n as isize - 1;
    let mut entries = Vec::with_capacity(2 * d);
    let mut gens = Vec::with_capacity(2 * d);
    for block in 0..d / 2 {
        let theta = rope_frequency(block, d, alpha);
        let (cos, sin): (Vec<f64>, Vec<f64>) = (-span..=span)
            .map(|t| {
                let (s, c) = (t as f64 * theta).sin_cos();
                (c, s)
            })
            .unzip();
        let neg_sin: Vec<f64> = sin.iter().map(|s| -s).collect();
        let (p, q) = (2 * block, 2 * block + 1);
        // W_t = R(-t theta): [[cos t.theta, sin t.theta], [-sin t.theta, cos t.theta]]
        entries.extend([(p, p), (p, q), (q, p), (q, q)]);
        gens.push(ToeplitzGenerator::new(n, cos.clone())?);
        gens.push(ToeplitzGenerator::new(n, sin)?);
        gens.push(ToeplitzGenerator::new(n, neg_sin)?);
        gens.push(ToeplitzGenerator::new(n, cos)?);
    }
    WeightSequence::new(n, SupportSet::new(d, entries)?, gens)
}

/// `theta_b = alpha^(-2b/d)` for zero-based block `b`.
pub fn rope_frequency(block: usize, d: usize, alpha: f64) -> f64 {
    alpha.powf(-2.0 * block as f64 / d as f64)
}

/// Inputs to one attention computation.
#[derive(Debug, Clone)]
pub struct AttentionInstance {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub weights: WeightSequence,
    /// Entry bound `B` on Q, K and V.
    pub bound: f64,
    /// Target `||T - exact||_inf`.
    pub eps: f64,
}

impl AttentionInstance {
    /// Shape-checked constructor. Bound checks live in [`validate_instance`].
    pub fn new(
        q: Matrix,
        k: Matrix,
        v: Matrix,
        weights: WeightSequence,
        bound: f64,
        eps: f64,
    ) -> Result<Self> {
        let inst = Self {
            q,
            k,
            v,
            weights,
            bound,
            eps,
        };
        if let Some(msg) = inst.shape_problems().into_iter().next() {
            return Err(Error::Size(msg));
        }
        Ok(inst)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.weights.n()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.weights.d()
    }

    fn shape_problems(&self) -> Vec<String> {
        let (n, d) = (self.n(), self.d());
        [("Q", &self.q), ("K", &self.k), ("V", &self.v)]
            .into_iter()
            .filter(|(_, m)| m.rows() != n || m.cols() != d)
            .map(|(name, m)| {
                format!("{name} is {}x{}, weights expect {n}x{d}", m.rows(), m.cols())
            })
            .collect()
    }

    /// Exact pre-exponential score `Q_i W_{i-j} K_j^T / sqrt(d)`.
    pub fn score(&self, i: usize, j: usize) -> f64 {
        let t = i as isize - j as isize;
        let raw: f64 = self
            .weights
            .support()
            .entries()
            .iter()
            .zip(self.weights.generators())
            .map(|(&(a, b), g)| self.q.get(i, a) * g.at(t) * self.k.get(j, b))
            .sum();
        raw / (self.d() as f64).sqrt()
    }
}

/// One failed check from [`validate_instance`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Dimension { message: String },
    Bound { message: String },
    Entry { matrix: char, row: usize, col: usize, value: f64 },
    Weight { l1: usize, l2: usize, offset: isize, value: f64 },
}

/// Outcome of [`validate_instance`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    /// Up to [`ValidationReport::MAX_LISTED`] violations, in scan order.
    pub violations: Vec<Violation>,
    pub violation_count: usize,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub const MAX_LISTED: usize = 64;

    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }

    fn push(&mut self, v: Violation) {
        if self.violations.len() < Self::MAX_LISTED {
            self.violations.push(v);
        }
        self.violation_count += 1;
    }

    /// Converts a failed report into a domain error.
    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            return Ok(());
        }
        let first = self
            .violations
            .first()
            .map(|v| format!("{v:?}"))
            .unwrap_or_default();
        Err(Error::domain(format!(
            "instance fails validation ({} violations; first: {first})",
            self.violation_count
        )))
    }
}

/// Checks shapes, `||Q||, ||K||, ||V|| <= B` and `||W|| <= 1`.
pub fn validate_instance(inst: &AttentionInstance) -> ValidationReport {
    let mut report = ValidationReport::default();
    let shape = inst.shape_problems();
    let shapes_ok = shape.is_empty();
    for message in shape {
        report.push(Violation::Dimension { message });
    }
    if !(inst.bound >= 0.0 && inst.bound.is_finite()) {
        report.push(Violation::Bound {
            message: format!("B = {} is not a finite non-negative number", inst.bound),
        });
    }
    if !(inst.eps > 0.0 && inst.eps.is_finite()) {
        report.push(Violation::Bound {
            message: format!("eps = {} is not positive", inst.eps),
        });
    }
    if shapes_ok {
        for (name, m) in [('Q', &inst.q), ('K', &inst.k), ('V', &inst.v)] {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    let value = m.get(i, j);
                    if !(value.abs() <= inst.bound) {
                        report.push(Violation::Entry {
                            matrix: name,
                            row: i,
                            col: j,
                            value,
                        });
                    }
                }
            }
        }
    }
    let w = &inst.weights;
    let span = w.n() as isize - 1;
    for (&(l1, l2), g) in w.support().entries().iter().zip(w.generators()) {
        for t in -span..=span {
            let value = g.at(t);
            if !(value.abs() <= 1.0) {
                report.push(Violation::Weight {
                    l1,
                    l2,
                    offset: t,
                    value,
                });
            }
        }
    }
    let (k, d) = (w.support().len(), w.d());
    if k > 4 * d {
        report
            .warnings
            .push(format!("support has {k} entries, more than 4d = {}", 4 * d));
    }
    report
}

/// The component for support entry `(l1, l2)`:
/// `diag(Q[:, l1]) * Toep(W[l1][l2] / sqrt(d)) * diag(K[:, l2])`.
pub fn build_component(inst: &AttentionInstance, l1: usize, l2: usize) -> Result<RescaledToeplitz> {
    let idx = inst
        .weights
        .support()
        .position(l1, l2)
        .ok_or_else(|| Error::domain(format!("({l1}, {l2}) is not in the support")))?;
    component_at(inst, idx)
}

/// Component for the support entry at position `idx`.
pub fn component_at(inst: &AttentionInstance, idx: usize) -> Result<RescaledToeplitz> {
    let (l1, l2) = inst.weights.support().entries()[idx];
    let scale = 1.0 / (inst.d() as f64).sqrt();
    RescaledToeplitz::new(
        inst.q.column(l1),
        inst.weights.generators()[idx].scaled(scale),
        inst.k.column(l2),
    )
}

/// All components, in support order.
pub fn components(inst: &AttentionInstance) -> Result<Vec<RescaledToeplitz>> {
    (0..inst.weights.support().len())
        .map(|idx| component_at(inst, idx))
        .collect()
}

/// Certified bound on `|Q_i W_{i-j} K_j^T| / sqrt(d)` over all `i, j`:
/// the sum over support entries of column and generator maxima.
pub fn exponent_bound(inst: &AttentionInstance) -> f64 {
    let w = &inst.weights;
    let total: f64 = w
        .support()
        .entries()
        .iter()
        .zip(w.generators())
        .map(|(&(a, b), g)| inst.q.max_abs_column(a) * g.max_abs() * inst.k.max_abs_column(b))
        .sum();
    total / (inst.d() as f64).sqrt()
}
