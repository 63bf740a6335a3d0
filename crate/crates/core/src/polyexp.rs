//! Polynomial approximation of `exp` and the multinomial expansion of
//! `p(z_1 + ... + z_k)` into monomials.
//!
//! The approximant is the truncated Taylor series on a symmetric interval
//! `[-R, R]`, of the smallest degree `g` whose Lagrange remainder bound
//! `e^R R^(g+1) / (g+1)!` is at most the target error. Its expansion over `k`
//! summands has one term per exponent vector `m` with `|m| <= g`, weighted by
//! `alpha_m = c_|m| * |m|! / prod_l m(l)!`.

use crate::error::{Error, Result};

/// Degrees above this are treated as unreachable accuracy targets.
pub const MAX_DEGREE: usize = 512;

/// Default cap on the number of monomials an expansion may produce.
pub const DEFAULT_MONOMIAL_BUDGET: usize = 1 << 24;

/// Points used to spot-check an approximant on its interval.
pub const GRID_POINTS: usize = 1000;

/// Polynomial approximating `exp` on `[-radius, radius]` within `target_eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpPolynomial {
    coeffs: Vec<f64>,
    radius: f64,
    target_eps: f64,
}

impl ExpPolynomial {
    /// Polynomial with the given coefficients (constant term first) and no
    /// certified interval: `radius` and `target_eps` are zero.
    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("coefficients must be finite and non-empty"));
        }
        Ok(Self {
            coeffs,
            radius: 0.0,
            target_eps: 0.0,
        })
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn target_eps(&self) -> f64 {
        self.target_eps
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Largest `|P(x) - exp(x)|` over `points` equispaced samples of the
    /// interval (endpoints included).
    pub fn max_grid_error(&self, points: usize) -> f64 {
        if self.radius == 0.0 || points < 2 {
            return (self.eval(0.0) - 1.0).abs();
        }
        let step = 2.0 * self.radius / (points - 1) as f64;
        (0..points)
            .map(|i| {
                let x = -self.radius + step * i as f64;
                (self.eval(x) - x.exp()).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Truncated Taylor approximant of `exp` on `[-radius, radius]`.
pub fn build_exp_poly(radius: f64, eps: f64) -> Result<ExpPolynomial> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::domain(format!("radius must be finite and >= 0, got {radius}")));
    }
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(Error::domain(format!("eps must lie in (0, 0.1], got {eps}")));
    }

    // remainder(g) = e^R R^(g+1) / (g+1)!
    let mut remainder = radius.exp() * radius;
    let mut degree = 0;
    while remainder > eps {
        degree += 1;
        if degree > MAX_DEGREE {
            return Err(Error::Configuration(format!(
                "no Taylor degree <= {MAX_DEGREE} reaches eps = {eps:e} on [-{radius}, {radius}]"
            )));
        }
        remainder *= radius / (degree + 1) as f64;
    }

    let mut coeffs = Vec::with_capacity(degree + 1);
    let mut c = 1.0;
    for t in 0..=degree {
        if t > 0 {
            c /= t as f64;
        }
        coeffs.push(c);
    }
    let poly = ExpPolynomial {
        coeffs,
        radius,
        target_eps: eps,
    };

    let observed = poly.max_grid_error(GRID_POINTS);
    if !(observed <= eps) {
        return Err(Error::Configuration(format!(
            "degree-{degree} approximant deviates by {observed:e} > eps = {eps:e} on \
             [-{radius}, {radius}]; eps is below what f64 arithmetic resolves at this radius"
        )));
    }
    Ok(poly)
}

/// Evaluates `p` at `x`; accuracy is only promised on `p`'s interval.
pub fn eval_poly(p: &ExpPolynomial, x: f64) -> f64 {
    p.eval(x)
}

/// Exponents assigned to each of `k` summands.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MonomialMap(Vec<u32>);

impl MonomialMap {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self(exponents)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }
}

/// `C(n, r)` in 128-bit arithmetic, saturating on overflow.
pub fn binomial(n: u64, r: u64) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of exponent vectors over `k` summands with total at most `g`.
pub fn monomial_count(k: usize, g: usize) -> u128 {
    binomial((g + k) as u64, k as u64)
}

/// All exponent vectors over `k` summands with total at most `g`.
///
/// Order: by total degree, then lexicographically descending, so for
/// `k = 2, g = 2` the result is `(0,0) (1,0) (0,1) (2,0) (1,1) (0,2)`.
pub fn enumerate_monomials(k: usize, g: usize, budget: usize) -> Result<Vec<MonomialMap>> {
    if k == 0 {
        return Err(Error::domain("monomials need at least one summand"));
    }
    let count = monomial_count(k, g);
    if count > budget as u128 {
        return Err(Error::Resource {
            what: format!("expansion over k = {k} summands to degree {g}"),
            requested: count,
            limit: budget as u128,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current = vec![0u32; k];
    for total in 0..=g as u32 {
        compositions(&mut current, 0, total, &mut out);
    }
    debug_assert_eq!(out.len() as u128, count);
    Ok(out)
}

fn compositions(current: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<MonomialMap>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(MonomialMap(current.to_vec()));
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        compositions(current, pos + 1, remaining - e, out);
    }
    current[pos] = 0;
}

/// `alpha_m = c_|m| * |m|! / prod m(l)!`.
pub fn monomial_coefficient(p: &ExpPolynomial, m: &MonomialMap) -> Result<f64> {
    let total = m.total() as usize;
    if total > p.degree() {
        return Err(Error::domain(format!(
            "monomial of degree {total} exceeds polynomial degree {}",
            p.degree()
        )));
    }
    Ok(p.coeffs()[total] * multinomial(m.exponents()))
}

/// `(sum e)! / prod e!`, accumulated as a product of binomials.
fn multinomial(exponents: &[u32]) -> f64 {
    let mut running = 0u32;
    let mut acc = 1.0;
    for &e in exponents {
        for i in 1..=e {
            acc *= (running + i) as f64 / i as f64;
        }
        running += e;
    }
    acc
}

/// Every monomial of an expansion paired with its coefficient.
#[derive(Debug, Clone)]
pub struct MonomialTable {
    entries: Vec<(MonomialMap, f64)>,
}

impl MonomialTable {
    pub fn build(p: &ExpPolynomial, k: usize, budget: usize) -> Result<Self> {
        let entries = enumerate_monomials(k, p.degree(), budget)?
            .into_iter()
            .map(|m| {
                let alpha = monomial_coefficient(p, &m)?;
                Ok((m, alpha))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    /// Table from explicit entries; used for hand-built expansions.
    pub fn from_entries(entries: Vec<(MonomialMap, f64)>) -> Result<Self> {
        if let Some((first, _)) = entries.first() {
            if entries.iter().any(|(m, _)| m.arity() != first.arity()) {
                return Err(Error::size("monomials have differing arity"));
            }
        }
        if entries.iter().any(|(_, a)| !a.is_finite()) {
            return Err(Error::domain("monomial coefficients must be finite"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(MonomialMap, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `sum_m alpha_m prod_l z_l^m(l)`.
    pub fn evaluate(&self, z: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|(m, alpha)| {
                alpha
                    * m.exponents()
                        .iter()
                        .zip(z)
                        .map(|(&e, &v)| v.powi(e as i32))
                        .product::<f64>()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn maps(v: &[&[u32]]) -> Vec<MonomialMap> {
        v.iter().map(|e| MonomialMap::new(e.to_vec())).collect()
    }

    #[test]
    fn zero_radius_gives_constant() {
        let p = build_exp_poly(0.0, 1e-3).unwrap();
        assert_eq!(p.degree(), 0);
        assert_eq!(p.eval(0.0), 1.0);
    }

    #[test]
    fn unit_radius_coarse_eps_degree() {
        // e/5! ~ 0.0227 <= 0.1 < e/4! ~ 0.113
        assert_eq!(build_exp_poly(1.0, 0.1).unwrap().degree(), 4);
    }

    #[test]
    fn radius_two_grid_error() {
        let p = build_exp_poly(2.0, 1e-6).unwrap();
        assert!(p.max_grid_error(GRID_POINTS) <= 1e-6);
    }

    #[test]
    fn eval_examples() {
        let p = build_exp_poly(1.0, 0.05).unwrap();
        assert_eq!(eval_poly(&p, 0.0), 1.0);
        let linear = ExpPolynomial {
            coeffs: vec![1.0, 1.0],
            radius: 0.0,
            target_eps: 0.01,
        };
        assert_eq!(eval_poly(&linear, 0.5), 1.5);
        let ten = ExpPolynomial {
            coeffs: (0..=10)
                .scan(1.0, |c, t| {
                    if t > 0 {
                        *c /= t as f64;
                    }
                    Some(*c)
                })
                .collect(),
            radius: 1.0,
            target_eps: 1e-7,
        };
        assert!((eval_poly(&ten, 1.0) - std::f64::consts::E).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(build_exp_poly(-1.0, 1e-3), Err(Error::Domain(_))));
        assert!(matches!(build_exp_poly(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(build_exp_poly(1.0, 0.11), Err(Error::Domain(_))));
    }

    #[test]
    fn unresolvable_eps_is_configuration_error() {
        assert!(matches!(
            build_exp_poly(20.0, 1e-12),
            Err(Error::Configuration(_))
        ));
        assert!(matches!(
            build_exp_poly(1.0, 1e-18),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn enumeration_examples() {
        assert_eq!(
            enumerate_monomials(2, 2, 100).unwrap(),
            maps(&[&[0, 0], &[1, 0], &[0, 1], &[2, 0], &[1, 1], &[0, 2]])
        );
        assert_eq!(
            enumerate_monomials(1, 3, 100).unwrap(),
            maps(&[&[0], &[1], &[2], &[3]])
        );
        assert_eq!(enumerate_monomials(3, 2, 100).unwrap().len(), 10);
    }

    #[test]
    fn enumeration_budget() {
        match enumerate_monomials(8, 8, 100) {
            Err(Error::Resource { requested, .. }) => assert_eq!(requested, 12870),
            other => panic!("expected resource error, got {other:?}"),
        }
        assert!(enumerate_monomials(0, 2, 100).is_err());
    }

    #[test]
    fn coefficient_examples() {
        let p = build_exp_poly(1.0, 1e-3).unwrap();
        let a = |e: &[u32]| monomial_coefficient(&p, &MonomialMap::new(e.to_vec())).unwrap();
        assert_eq!(a(&[0, 0]), 1.0);
        assert!((a(&[1, 1]) - 1.0).abs() < 1e-15);
        assert!((a(&[2, 1]) - 0.5).abs() < 1e-15);
        let too_high = MonomialMap::new(vec![p.degree() as u32 + 1]);
        assert!(matches!(
            monomial_coefficient(&p, &too_high),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(20, 8), 125_970);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(monomial_count(8, 12), 125_970);
    }

    #[test]
    fn table_rejects_non_finite() {
        let e = vec![(MonomialMap::new(vec![0]), f64::NAN)];
        assert!(MonomialTable::from_entries(e).is_err());
    }

    proptest! {
        #[test]
        fn expansion_identity(k in 1usize..=4, g in 0usize..=5, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let coeffs = (0..=g)
                .scan(1.0, |c, t| {
                    if t > 0 {
                        *c /= t as f64;
                    }
                    Some(*c)
                })
                .collect();
            let p = ExpPolynomial { coeffs, radius: 1.0, target_eps: 0.01 };
            let table = MonomialTable::build(&p, k, 1 << 20).unwrap();
            let z: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let expanded = table.evaluate(&z);
            let direct = p.eval(z.iter().sum());
            prop_assert!((expanded - direct).abs() < 1e-10);
        }

        #[test]
        fn count_identity(k in 1usize..=8, g in 0usize..=8) {
            let ms = enumerate_monomials(k, g, 1 << 20).unwrap();
            prop_assert_eq!(ms.len() as u128, monomial_count(k, g));
            prop_assert!(ms.iter().all(|m| m.total() as usize <= g && m.arity() == k));
            let unique: std::collections::HashSet<_> = ms.iter().collect();
            prop_assert_eq!(unique.len(), ms.len());
        }

        #[test]
        fn degree_monotone(r1 in 0.0f64..4.0, dr in 0.0f64..2.0, e1 in 1e-9f64..0.09, shrink in 0.01f64..1.0) {
            let base = build_exp_poly(r1, e1).unwrap().degree();
            prop_assert!(build_exp_poly(r1 + dr, e1).unwrap().degree() >= base);
            prop_assert!(build_exp_poly(r1, e1 * shrink).unwrap().degree() >= base);
        }

        #[test]
        fn grid_bound_holds(radius in 0.0f64..4.0, exp10 in 1.5f64..10.0) {
            let eps = 10f64.powf(-exp10);
            let p = build_exp_poly(radius, eps).unwrap();
            prop_assert!(p.max_grid_error(GRID_POINTS) <= eps);
        }
    }
}
