//! Circulant, Toeplitz and rescaled Toeplitz matrices with FFT-backed
//! products.
//!
//! A Toeplitz matrix of side `n` is stored by its generator `a` of length
//! `2n - 1`, indexed by offset `t = i - j` in `-(n-1)..=n-1` at slot
//! `t + (n - 1)`. This layout is used everywhere in the crate.
//!
//! Products go through the circulant embedding of side `2n`:
//! `a' = [a_0, ..., a_{n-1}, 0, a_{-(n-1)}, ..., a_{-1}]`, whose top-left
//! block is `Toep(a)`. To keep radix-2 transforms the embedding is widened to
//! `next_pow2(2n)` by extending the central zero block, which leaves every
//! product between the first `n` rows and columns unchanged.

use crate::dft::{next_pow2, FftPlan};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Largest side length [`to_dense`] materializes unless told otherwise.
pub const DEFAULT_DENSE_LIMIT: usize = 4096;

/// Generator of an `n x n` Toeplitz matrix, `T[i][j] = a[i - j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzGenerator {
    n: usize,
    a: Vec<f64>,
}

impl ToeplitzGenerator {
    /// Wraps a slot-ordered generator (`a[t + n - 1]` holds offset `t`).
    pub fn new(n: usize, a: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("Toeplitz side length must be positive"));
        }
        if a.len() != 2 * n - 1 {
            return Err(Error::size(format!(
                "Toeplitz generator of side {n} needs {} entries, got {}",
                2 * n - 1,
                a.len()
            )));
        }
        Ok(Self { n, a })
    }

    /// Builds a generator from a function of the offset `t = i - j`.
    pub fn from_offsets(n: usize, mut f: impl FnMut(isize) -> f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("Toeplitz side length must be positive"));
        }
        let span = n as isize - 1;
        let a = (-span..=span).map(&mut f).collect();
        Ok(Self { n, a })
    }

    /// Generator of the identity matrix.
    pub fn identity(n: usize) -> Result<Self> {
        Self::from_offsets(n, |t| if t == 0 { 1.0 } else { 0.0 })
    }

    /// Generator of the all-ones matrix.
    pub fn ones(n: usize) -> Result<Self> {
        Self::from_offsets(n, |_| 1.0)
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.n
    }

    /// Entry for offset `t`; panics when `|t| >= n`.
    #[inline]
    pub fn at(&self, t: isize) -> f64 {
        self.a[(t + self.n as isize - 1) as usize]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Elementwise scaling of every offset.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            a: self.a.iter().map(|x| x * factor).collect(),
        }
    }

    /// Pointwise product of two generators: `Toep(a) o Toep(b) = Toep(a * b)`.
    pub fn pointwise(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::size(format!(
                "generator sides differ: {} vs {}",
                self.n, other.n
            )));
        }
        Ok(Self {
            n: self.n,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x * y).collect(),
        })
    }

    /// Writes the circulant embedding of this generator into `out`, whose
    /// length must be a power of two no smaller than `2n`.
    pub fn embed_circulant(&self, out: &mut [f64]) {
        write_embedding(&self.a, self.n, out);
    }
}

/// Fills `out` with the zero-widened circulant embedding of a slot-ordered
/// generator of side `n`.
pub(crate) fn write_embedding(a: &[f64], n: usize, out: &mut [f64]) {
    let m = out.len();
    debug_assert!(m >= 2 * n && a.len() == 2 * n - 1);
    out.iter_mut().for_each(|v| *v = 0.0);
    // a_0..a_{n-1} occupy slots n-1..2n-1 of the generator.
    out[..n].copy_from_slice(&a[n - 1..]);
    // a_{-(n-1)}..a_{-1} go to the tail.
    out[m - (n - 1)..].copy_from_slice(&a[..n - 1]);
}

/// First column of an `m x m` circulant matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantGenerator {
    c: Vec<f64>,
}

impl CirculantGenerator {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::domain("circulant side length must be positive"));
        }
        Ok(Self { c })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.c.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c
    }

    /// Equivalent Toeplitz generator, `a_t = c_{t mod m}`.
    pub fn to_toeplitz(&self) -> ToeplitzGenerator {
        let m = self.c.len() as isize;
        ToeplitzGenerator::from_offsets(self.c.len(), |t| self.c[t.rem_euclid(m) as usize])
            .expect("non-empty circulant")
    }
}

/// `D1 * Toep(gen) * D2` with diagonal vectors `d1`, `d2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledToeplitz {
    d1: Vec<f64>,
    gen: ToeplitzGenerator,
    d2: Vec<f64>,
}

impl RescaledToeplitz {
    pub fn new(d1: Vec<f64>, gen: ToeplitzGenerator, d2: Vec<f64>) -> Result<Self> {
        let n = gen.side();
        if d1.len() != n || d2.len() != n {
            return Err(Error::size(format!(
                "diagonals of length {} and {} do not match Toeplitz side {n}",
                d1.len(),
                d2.len()
            )));
        }
        Ok(Self { d1, gen, d2 })
    }

    /// The plain Toeplitz matrix, with unit diagonals.
    pub fn from_toeplitz(gen: ToeplitzGenerator) -> Self {
        let n = gen.side();
        Self {
            d1: vec![1.0; n],
            gen,
            d2: vec![1.0; n],
        }
    }

    /// The all-ones matrix, the identity for [`hadamard`].
    pub fn ones(n: usize) -> Result<Self> {
        Ok(Self::from_toeplitz(ToeplitzGenerator::ones(n)?))
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.gen.side()
    }

    pub fn d1(&self) -> &[f64] {
        &self.d1
    }

    pub fn gen(&self) -> &ToeplitzGenerator {
        &self.gen
    }

    pub fn d2(&self) -> &[f64] {
        &self.d2
    }

    /// Entry `(i, j)` straight from the definition.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.d1[i] * self.gen.at(i as isize - j as isize) * self.d2[j]
    }
}

fn check_len(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::size(format!(
            "vector has length {}, matrix side is {expected}",
            x.len()
        )));
    }
    Ok(())
}

/// Circulant product for a power-of-two side `c.len()`, via
/// `F^-1 (F c .* F x)`. `x` may be shorter than `c`; it is zero-padded.
fn pow2_circulant_product(c: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let m = c.len();
    let plan = FftPlan::cached(m)?;
    let (mut cr, mut ci) = (c.to_vec(), vec![0.0; m]);
    let (mut xr, mut xi) = (vec![0.0; m], vec![0.0; m]);
    xr[..x.len()].copy_from_slice(x);
    plan.forward(&mut cr, &mut ci);
    plan.forward(&mut xr, &mut xi);
    for k in 0..m {
        let (a, b) = (cr[k], ci[k]);
        let (u, v) = (xr[k], xi[k]);
        xr[k] = a * u - b * v;
        xi[k] = a * v + b * u;
    }
    plan.inverse(&mut xr, &mut xi);
    Ok(xr)
}

/// `Circ(c) * x`.
///
/// Power-of-two sides are transformed directly; other sides are routed
/// through the Toeplitz embedding, since zero-padding a circulant of
/// arbitrary side would break its wraparound.
pub fn circulant_matvec(c: &CirculantGenerator, x: &[f64]) -> Result<Vec<f64>> {
    check_len(c.side(), x)?;
    if c.side().is_power_of_two() {
        pow2_circulant_product(c.as_slice(), x)
    } else {
        toeplitz_matvec(&c.to_toeplitz(), x)
    }
}

/// `Toep(a) * x` through the zero-widened circulant embedding; the residual
/// block of the circulant product is discarded.
pub fn toeplitz_matvec(t: &ToeplitzGenerator, x: &[f64]) -> Result<Vec<f64>> {
    let n = t.side();
    check_len(n, x)?;
    let m = next_pow2(2 * n)?;
    let mut embedded = vec![0.0; m];
    t.embed_circulant(&mut embedded);
    let mut y = pow2_circulant_product(&embedded, x)?;
    y.truncate(n);
    Ok(y)
}

/// `D1 * Toep(a) * D2 * x`, applied right to left.
pub fn rescaled_matvec(m: &RescaledToeplitz, x: &[f64]) -> Result<Vec<f64>> {
    check_len(m.side(), x)?;
    let scaled: Vec<f64> = m.d2.iter().zip(x).map(|(d, v)| d * v).collect();
    let mut y = toeplitz_matvec(&m.gen, &scaled)?;
    y.iter_mut().zip(&m.d1).for_each(|(v, d)| *v *= d);
    Ok(y)
}

/// Entrywise product, which stays rescaled Toeplitz:
/// `(D1 A D2) o (E1 B E2) = (D1 E1) (A o B) (D2 E2)`.
pub fn hadamard(a: &RescaledToeplitz, b: &RescaledToeplitz) -> Result<RescaledToeplitz> {
    if a.side() != b.side() {
        return Err(Error::size(format!(
            "Hadamard operands have sides {} and {}",
            a.side(),
            b.side()
        )));
    }
    Ok(RescaledToeplitz {
        d1: a.d1.iter().zip(&b.d1).map(|(x, y)| x * y).collect(),
        gen: a.gen.pointwise(&b.gen)?,
        d2: a.d2.iter().zip(&b.d2).map(|(x, y)| x * y).collect(),
    })
}

/// `(F1^{o e1} o F2^{o e2} o ...) * x` for factors `Fi` with exponents `ei`.
///
/// Entrywise powers follow `x^0 = 1` (including `0^0`), so when every
/// exponent is zero the product is the all-ones matrix.
pub fn hadamard_chain_matvec(
    factors: &[(&RescaledToeplitz, u32)],
    x: &[f64],
) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::size("empty vector"));
    }
    let mut acc: Option<RescaledToeplitz> = None;
    for &(factor, exponent) in factors {
        if factor.side() != n {
            return Err(Error::size(format!(
                "factor side {} does not match vector length {n}",
                factor.side()
            )));
        }
        for _ in 0..exponent {
            acc = Some(match acc {
                None => factor.clone(),
                Some(prev) => hadamard(&prev, factor)?,
            });
        }
    }
    let product = match acc {
        Some(p) => p,
        None => RescaledToeplitz::ones(n)?,
    };
    rescaled_matvec(&product, x)
}

/// Materializes `D1 * Toep(a) * D2`; refuses sides above `limit`.
pub fn to_dense(m: &RescaledToeplitz, limit: usize) -> Result<Matrix> {
    let n = m.side();
    if n > limit {
        return Err(Error::Resource {
            what: format!("dense {n}x{n} matrix"),
            requested: n as u128,
            limit: limit as u128,
        });
    }
    Ok(Matrix::from_fn(n, n, |i, j| m.entry(i, j)))
}
