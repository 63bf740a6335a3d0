//! Fast and exact attention evaluation.
//!
//! The fast exp path approximates `exp` by a polynomial on `[-R, R]`, expands
//! it over the rescaled Toeplitz components of the instance and applies the
//! result to `1_n` and the columns of `V` with FFTs. The oracle materializes
//! every entry.

mod spectral;

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::polyexp::{build_exp_poly, monomial_count, MonomialTable, DEFAULT_MONOMIAL_BUDGET};
use crate::rope::{components, exponent_bound, validate_instance, AttentionInstance};
use crate::structured::{hadamard_chain_matvec, rescaled_matvec, RescaledToeplitz, DEFAULT_DENSE_LIMIT};

pub use spectral::{CachePlan, ProfileCounts};

/// Normalizer entries at or below this magnitude are rejected.
pub const NORMALIZATION_FLOOR: f64 = 1e-12;

/// Default memory allowed for cached spectra.
pub const DEFAULT_CACHE_BYTES: usize = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    /// Largest `n` the oracle will materialize.
    pub dense_limit: usize,
    /// Largest monomial table the fast path will enumerate.
    pub monomial_budget: usize,
    /// Bytes available for cached spectra in the fast path.
    pub cache_bytes: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            dense_limit: DEFAULT_DENSE_LIMIT,
            monomial_budget: DEFAULT_MONOMIAL_BUDGET,
            cache_bytes: DEFAULT_CACHE_BYTES,
        }
    }
}

/// Wall-clock time of one named phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phase {
    pub name: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    /// Number of monomials in the expansion; 0 for paths without one.
    pub monomial_count: usize,
    pub poly_degree: Option<usize>,
    pub exponent_bound: Option<f64>,
    /// Uniform error target handed to the polynomial construction.
    pub poly_eps: Option<f64>,
    pub profiles: Option<ProfileCounts>,
    /// Passes over the monomial groups (more than one when right-hand sides
    /// are batched to fit the cache).
    pub passes: usize,
    pub phases: Vec<Phase>,
}

impl RunStats {
    fn phase(&mut self, name: &'static str, start: Instant) -> Instant {
        let now = Instant::now();
        self.phases.push(Phase {
            name,
            seconds: now.duration_since(start).as_secs_f64(),
        });
        now
    }

    /// Sum of all phase times.
    pub fn total_seconds(&self) -> f64 {
        self.phases.iter().map(|p| p.seconds).sum()
    }
}

/// `T = D^-1 A V` together with `D` and run statistics.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub t: Matrix,
    pub diag_d: Vec<f64>,
    pub stats: RunStats,
}

/// Divides each `av[c]` by `d`, rejecting unusable normalizers.
fn normalize(n: usize, d: Vec<f64>, av: &[Vec<f64>], stats: RunStats) -> Result<AttentionOutput> {
    if let Some(row) = d.iter().position(|&x| !(x > NORMALIZATION_FLOOR)) {
        return Err(Error::Normalization { row, value: d[row] });
    }
    let t = Matrix::from_fn(n, av.len(), |i, c| av[c][i] / d[i]);
    if let Some(pos) = t.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::Normalization {
            row: pos / av.len().max(1),
            value: d[pos / av.len().max(1)],
        });
    }
    Ok(AttentionOutput { t, diag_d: d, stats })
}

/// `1_n` followed by the columns of `V`.
fn right_hand_sides(inst: &AttentionInstance) -> Vec<Vec<f64>> {
    std::iter::once(vec![1.0; inst.n()])
        .chain((0..inst.v.cols()).map(|c| inst.v.column(c)))
        .collect()
}

/// Linear attention with `A_ij = Q_i W_{i-j} K_j^T`, evaluated as a sum of
/// rescaled Toeplitz products.
///
/// The components carry a `1/sqrt(d)` factor; it scales `A` and `D` alike
/// and cancels in `D^-1 A V`.
pub fn linear_attention(inst: &AttentionInstance) -> Result<AttentionOutput> {
    validate_instance(inst).into_result()?;
    let mut stats = RunStats::default();
    let start = Instant::now();
    let comps = components(inst)?;
    let mark = stats.phase("components", start);

    let mut results = Vec::new();
    for v in right_hand_sides(inst) {
        let mut sum = vec![0.0; inst.n()];
        for c in &comps {
            let part = rescaled_matvec(c, &v)?;
            sum.iter_mut().zip(&part).for_each(|(s, p)| *s += p);
        }
        results.push(sum);
    }
    let mark = stats.phase("apply", mark);
    let d = results.remove(0);
    let out = normalize(inst.n(), d, &results, stats);
    out.map(|mut o| {
        o.stats.phase("normalize", mark);
        o
    })
}

/// Dense reference for [`linear_attention`]: `A_ij = Q_i W_{i-j} K_j^T`
/// without any scale.
pub fn linear_attention_oracle(inst: &AttentionInstance, dense_limit: usize) -> Result<AttentionOutput> {
    check_dense_limit(inst.n(), dense_limit)?;
    let start = Instant::now();
    let n = inst.n();
    let a = Matrix::from_fn(n, n, |i, j| {
        let w = inst.weights.dense_at(i as isize - j as isize);
        let mut s = 0.0;
        for x in 0..inst.d() {
            for y in 0..inst.d() {
                s += inst.q.get(i, x) * w.get(x, y) * inst.k.get(j, y);
            }
        }
        s
    });
    dense_normalize(inst, &a, start)
}

fn check_dense_limit(n: usize, limit: usize) -> Result<()> {
    if n > limit {
        return Err(Error::Resource {
            what: format!("dense {n}x{n} attention matrix"),
            requested: n as u128,
            limit: limit as u128,
        });
    }
    Ok(())
}

fn dense_normalize(inst: &AttentionInstance, a: &Matrix, start: Instant) -> Result<AttentionOutput> {
    let n = inst.n();
    let d = a.mat_vec(&vec![1.0; n])?;
    let av: Vec<Vec<f64>> = (0..inst.v.cols())
        .map(|c| a.mat_vec(&inst.v.column(c)))
        .collect::<Result<_>>()?;
    let mut stats = RunStats::default();
    stats.phase("dense", start);
    normalize(n, d, &av, stats)
}

/// `sum_m alpha_m (components^m) v`, one Hadamard chain per monomial,
/// accumulated with Kahan compensation in table order.
pub fn exp_attention_matvec(
    table: &MonomialTable,
    components: &[RescaledToeplitz],
    v: &[f64],
) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; v.len()];
    let mut comp = vec![0.0; v.len()];
    for (m, alpha) in table.entries() {
        if m.arity() != components.len() {
            return Err(Error::size(format!(
                "monomial over {} entries, {} components given",
                m.arity(),
                components.len()
            )));
        }
        let factors: Vec<(&RescaledToeplitz, u32)> =
            components.iter().zip(m.exponents().iter().copied()).collect();
        let y = hadamard_chain_matvec(&factors, v)?;
        for ((s, c), yi) in sum.iter_mut().zip(comp.iter_mut()).zip(y) {
            let term = alpha * yi - *c;
            let t = *s + term;
            *c = (t - *s) - term;
            *s = t;
        }
    }
    Ok(sum)
}

/// Approximate exp attention in almost linear time.
///
/// Uses the Taylor polynomial of `exp` on `[-R, R]` with
/// `R = exponent_bound(inst)` and uniform error `eps * e^-R / (4n)`.
pub fn arattc_fast(inst: &AttentionInstance, config: &EngineConfig) -> Result<AttentionOutput> {
    validate_instance(inst).into_result()?;
    let n = inst.n();
    let k = inst.weights.support().len();
    let mut stats = RunStats::default();
    let start = Instant::now();

    let radius = exponent_bound(inst);
    let poly_eps = inst.eps * (-radius).exp() / (4.0 * n as f64);
    let poly = build_exp_poly(radius, poly_eps)?;
    let count = monomial_count(k, poly.degree());
    if count > config.monomial_budget as u128 {
        return Err(Error::Resource {
            what: format!(
                "monomials for degree {} over {k} support entries (reduce d or relax eps)",
                poly.degree()
            ),
            requested: count,
            limit: config.monomial_budget as u128,
        });
    }
    let table = MonomialTable::build(&poly, k, config.monomial_budget)?;
    stats.monomial_count = table.len();
    stats.poly_degree = Some(poly.degree());
    stats.exponent_bound = Some(radius);
    stats.poly_eps = Some(poly_eps);
    let mark = stats.phase("polynomial", start);

    let expansion = spectral::Expansion::new(inst, &table)?;
    drop(table);
    stats.profiles = Some(expansion.profile_counts());
    let mark = stats.phase("expansion", mark);

    let rhs = right_hand_sides(inst);
    let plan = expansion.cache_plan(rhs.len(), config.cache_bytes);
    stats.passes = match plan {
        CachePlan::Cached { batch } => rhs.len().div_ceil(batch),
        CachePlan::Streaming => 1,
    };
    let mut results = expansion.apply(&rhs, plan);
    let mark = stats.phase("apply", mark);

    let d = results.remove(0);
    normalize(n, d, &results, stats).map(|mut o| {
        o.stats.phase("normalize", mark);
        o
    })
}

/// Exact exp attention, materializing `A_ij = exp(score(i, j))` row by row.
pub fn arattc_oracle(inst: &AttentionInstance, config: &EngineConfig) -> Result<AttentionOutput> {
    let n = inst.n();
    check_dense_limit(n, config.dense_limit)?;
    let start = Instant::now();
    let a = Matrix::from_fn(n, n, |i, j| inst.score(i, j).exp());
    dense_normalize(inst, &a, start)
}

/// `max |a_ij - b_ij|`.
pub fn linf_error(a: &Matrix, b: &Matrix) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::size(format!(
            "shapes {}x{} and {}x{} differ",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
