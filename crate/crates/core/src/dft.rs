//! Radix-2 complex FFT over split real/imaginary buffers.
//!
//! Convention: the forward transform is unnormalized,
//! `y_j = sum_t x_t * exp(-2*pi*i*j*t/len)`, and the inverse carries the
//! `1/len` factor, so that `Circ(a) = F^-1 diag(F a) F` holds with the
//! spectrum of `a` taken from [`fft_forward`].
//!
//! Plans hold precomputed bit-reversal and per-stage twiddle tables. They are
//! immutable once built and are shared through a process-wide cache keyed by
//! length.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{Error, Result};

/// A complex vector stored as separate real and imaginary arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBuffer {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexBuffer {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::size(format!(
                "real part has {} entries, imaginary part {}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    pub fn from_real(re: &[f64]) -> Self {
        Self {
            re: re.to_vec(),
            im: vec![0.0; re.len()],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.re.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

/// Smallest power of two that is at least `n`.
pub fn next_pow2(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::domain("next_pow2 requires n >= 1"));
    }
    n.checked_next_power_of_two()
        .ok_or_else(|| Error::domain(format!("no power of two >= {n} fits in usize")))
}

/// Forward DFT of `x`; the input is left untouched.
pub fn fft_forward(x: &ComplexBuffer) -> Result<ComplexBuffer> {
    let plan = FftPlan::cached(x.len())?;
    let mut out = x.clone();
    plan.forward(&mut out.re, &mut out.im);
    Ok(out)
}

/// Inverse DFT of `y`, including the `1/len` normalization.
pub fn fft_inverse(y: &ComplexBuffer) -> Result<ComplexBuffer> {
    let plan = FftPlan::cached(y.len())?;
    let mut out = y.clone();
    plan.inverse(&mut out.re, &mut out.im);
    Ok(out)
}

/// Precomputed tables for transforms of one power-of-two length.
#[derive(Debug)]
pub struct FftPlan {
    len: usize,
    bitrev: Vec<u32>,
    // Stage with half-width h stores its h twiddles at offset h - 1.
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
}

fn plan_cache() -> &'static RwLock<HashMap<usize, Arc<FftPlan>>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<FftPlan>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::size(format!(
                "transform length {len} is not a power of two"
            )));
        }
        if len > u32::MAX as usize {
            return Err(Error::size(format!("transform length {len} is too large")));
        }
        let bits = len.trailing_zeros();
        let bitrev = (0..len as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();

        let mut tw_re = Vec::with_capacity(len.saturating_sub(1));
        let mut tw_im = Vec::with_capacity(len.saturating_sub(1));
        let mut half = 1;
        while half < len {
            // exp(-i*pi*j/half), evaluated directly for every j to avoid
            // recurrence drift.
            let stride = len / (2 * half);
            for j in 0..half {
                let angle = -2.0 * PI * (j * stride) as f64 / len as f64;
                tw_re.push(angle.cos());
                tw_im.push(angle.sin());
            }
            half *= 2;
        }
        Ok(Self {
            len,
            bitrev,
            tw_re,
            tw_im,
        })
    }

    /// Returns a shared plan for `len`, building it on first use.
    pub fn cached(len: usize) -> Result<Arc<Self>> {
        if let Some(plan) = plan_cache().read().expect("plan cache poisoned").get(&len) {
            return Ok(Arc::clone(plan));
        }
        let plan = Arc::new(Self::new(len)?);
        let mut cache = plan_cache().write().expect("plan cache poisoned");
        Ok(Arc::clone(cache.entry(len).or_insert(plan)))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        assert_eq!(re.len(), self.len, "real buffer length");
        assert_eq!(im.len(), self.len, "imaginary buffer length");
        self.permute(re, im);
        self.butterflies(re, im);
    }

    /// In-place inverse transform including the `1/len` factor.
    pub fn inverse(&self, re: &mut [f64], im: &mut [f64]) {
        // Swapping real and imaginary parts conjugates the kernel.
        self.forward(im, re);
        let scale = 1.0 / self.len as f64;
        re.iter_mut().for_each(|x| *x *= scale);
        im.iter_mut().for_each(|x| *x *= scale);
    }

    fn permute(&self, re: &mut [f64], im: &mut [f64]) {
        for (i, &j) in self.bitrev.iter().enumerate() {
            let j = j as usize;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
    }

    fn butterflies(&self, re: &mut [f64], im: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        if self.len >= 64 && is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 support was just detected.
            unsafe { self.butterflies_avx2(re, im) };
            return;
        }
        self.butterflies_impl(re, im);
    }

    /// Same arithmetic as the portable path (no contraction), wider vectors.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn butterflies_avx2(&self, re: &mut [f64], im: &mut [f64]) {
        self.butterflies_impl(re, im);
    }

    #[inline(always)]
    fn butterflies_impl(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.len;
        if n >= 2 {
            for (r, i) in re.chunks_exact_mut(2).zip(im.chunks_exact_mut(2)) {
                let (ar, ai, br, bi) = (r[0], i[0], r[1], i[1]);
                r[0] = ar + br;
                i[0] = ai + bi;
                r[1] = ar - br;
                i[1] = ai - bi;
            }
        }
        if n >= 4 {
            // Twiddles 1 and -i.
            for (r, i) in re.chunks_exact_mut(4).zip(im.chunks_exact_mut(4)) {
                let (ar, ai, br, bi) = (r[0], i[0], r[2], i[2]);
                r[0] = ar + br;
                i[0] = ai + bi;
                r[2] = ar - br;
                i[2] = ai - bi;
                let (ar, ai, br, bi) = (r[1], i[1], r[3], i[3]);
                r[1] = ar + bi;
                i[1] = ai - br;
                r[3] = ar - bi;
                i[3] = ai + br;
            }
        }
        let mut half = 4;
        while half < n {
            let wr = &self.tw_re[half - 1..2 * half - 1];
            let wi = &self.tw_im[half - 1..2 * half - 1];
            for (r, i) in re
                .chunks_exact_mut(2 * half)
                .zip(im.chunks_exact_mut(2 * half))
            {
                let (lo_r, hi_r) = r.split_at_mut(half);
                let (lo_i, hi_i) = i.split_at_mut(half);
                for ((((ar, ai), br), bi), (&cr, &ci)) in lo_r
                    .iter_mut()
                    .zip(lo_i.iter_mut())
                    .zip(hi_r.iter_mut())
                    .zip(hi_i.iter_mut())
                    .zip(wr.iter().zip(wi))
                {
                    let tr = cr * *br - ci * *bi;
                    let ti = cr * *bi + ci * *br;
                    *br = *ar - tr;
                    *bi = *ai - ti;
                    *ar += tr;
                    *ai += ti;
                }
            }
            half *= 2;
        }
    }
}

// ── Real-signal helpers ─────────────────────────────────────────────────────
//
// A real signal of power-of-two length `len` has a Hermitian spectrum; only
// bins `0..=len/2` are kept ("half spectrum"), laid out as `[re..., im...]`
// in one slice of length `2 * (len/2 + 1)`. Two real signals share one
// complex transform.

/// Number of stored bins in a half spectrum of a length-`len` real signal.
#[inline]
pub fn half_len(len: usize) -> usize {
    len / 2 + 1
}

/// Reusable work area for paired real transforms.
#[derive(Debug, Clone)]
pub struct RealPairScratch {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl RealPairScratch {
    pub fn new(len: usize) -> Self {
        Self {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }
}

/// Half spectra of two zero-padded real signals.
///
/// `x` and `y` may be shorter than the plan length; the remainder is taken as
/// zero. `y = None` treats the second signal as zero. Each output slice has
/// length `2 * half_len(plan.len())`.
pub fn real_pair_forward(
    plan: &FftPlan,
    x: &[f64],
    y: Option<&[f64]>,
    scratch: &mut RealPairScratch,
    out_x: &mut [f64],
    out_y: Option<&mut [f64]>,
) {
    let len = plan.len();
    let h = half_len(len);
    let (re, im) = (&mut scratch.re, &mut scratch.im);
    re.iter_mut().for_each(|v| *v = 0.0);
    im.iter_mut().for_each(|v| *v = 0.0);
    re[..x.len()].copy_from_slice(x);
    if let Some(y) = y {
        im[..y.len()].copy_from_slice(y);
    }
    plan.forward(re, im);

    let (xr, xi) = out_x.split_at_mut(h);
    match out_y {
        None => {
            if y.is_none() {
                xr.copy_from_slice(&re[..h]);
                xi.copy_from_slice(&im[..h]);
                return;
            }
            for k in 0..h {
                let m = (len - k) % len;
                xr[k] = 0.5 * (re[k] + re[m]);
                xi[k] = 0.5 * (im[k] - im[m]);
            }
        }
        Some(out_y) => {
            let (yr, yi) = out_y.split_at_mut(h);
            for k in 0..h {
                let m = (len - k) % len;
                // X = (Z_k + conj Z_m)/2, Y = (Z_k - conj Z_m)/(2i)
                xr[k] = 0.5 * (re[k] + re[m]);
                xi[k] = 0.5 * (im[k] - im[m]);
                yr[k] = 0.5 * (im[k] + im[m]);
                yi[k] = -0.5 * (re[k] - re[m]);
            }
        }
    }
}

/// Inverse of [`real_pair_forward`]: recovers the first `out_x.len()` samples
/// of the real signals whose half spectra are `x` and (optionally) `y`.
pub fn real_pair_inverse(
    plan: &FftPlan,
    x: &[f64],
    y: Option<&[f64]>,
    scratch: &mut RealPairScratch,
    out_x: &mut [f64],
    out_y: Option<&mut [f64]>,
) {
    let len = plan.len();
    let h = half_len(len);
    let (xr, xi) = x.split_at(h);
    let (re, im) = (&mut scratch.re, &mut scratch.im);
    match y {
        Some(y) => {
            let (yr, yi) = y.split_at(h);
            // Z = X + iY on bins 0..=len/2, Hermitian extension above.
            for k in 0..h {
                re[k] = xr[k] - yi[k];
                im[k] = xi[k] + yr[k];
            }
            for k in h..len {
                let m = len - k;
                re[k] = xr[m] + yi[m];
                im[k] = -xi[m] + yr[m];
            }
        }
        None => {
            re[..h].copy_from_slice(xr);
            im[..h].copy_from_slice(xi);
            for k in h..len {
                let m = len - k;
                re[k] = xr[m];
                im[k] = -xi[m];
            }
        }
    }
    plan.inverse(re, im);
    let n = out_x.len();
    out_x.copy_from_slice(&re[..n]);
    if let Some(out_y) = out_y {
        let n = out_y.len();
        out_y.copy_from_slice(&im[..n]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(n^2) summation with exactly reduced angles.
    fn direct_dft(x: &ComplexBuffer) -> ComplexBuffer {
        let n = x.len();
        let mut out = ComplexBuffer::zeros(n);
        for j in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for t in 0..n {
                let angle = -2.0 * PI * ((j * t) % n) as f64 / n as f64;
                let (s, c) = angle.sin_cos();
                sr += x.re[t] * c - x.im[t] * s;
                si += x.re[t] * s + x.im[t] * c;
            }
            out.re[j] = sr;
            out.im[j] = si;
        }
        out
    }

    fn random_buffer(len: usize, rng: &mut ChaCha8Rng) -> ComplexBuffer {
        ComplexBuffer {
            re: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            im: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn max_dev(a: &ComplexBuffer, b: &ComplexBuffer) -> f64 {
        a.re.iter()
            .zip(&b.re)
            .chain(a.im.iter().zip(&b.im))
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn impulse_transforms_to_ones() {
        let y = fft_forward(&ComplexBuffer::from_real(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(y.re, vec![1.0; 4]);
        assert_eq!(y.im, vec![0.0; 4]);
    }

    #[test]
    fn constant_transforms_to_scaled_impulse() {
        let c = 0.75;
        let y = fft_forward(&ComplexBuffer::from_real(&[c; 4])).unwrap();
        assert_eq!(y.re, vec![4.0 * c, 0.0, 0.0, 0.0]);
        assert!(y.im.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn inverse_of_constant_spectrum() {
        let x = fft_inverse(&ComplexBuffer::from_real(&[4.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(x.re, vec![1.0; 4]);
    }

    #[test]
    fn round_trip_small() {
        let x = ComplexBuffer::from_real(&[1.0, 2.0, 3.0, 4.0]);
        let back = fft_inverse(&fft_forward(&x).unwrap()).unwrap();
        assert!(max_dev(&x, &back) < 1e-15);
    }

    #[test]
    fn random_16_matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random_buffer(16, &mut rng);
        assert!(max_dev(&fft_forward(&x).unwrap(), &direct_dft(&x)) < 1e-12);
    }

    #[test]
    fn random_32_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = random_buffer(32, &mut rng);
        let back = fft_inverse(&fft_forward(&x).unwrap()).unwrap();
        assert!(max_dev(&x, &back) < 1e-12);
    }

    #[test]
    fn all_lengths_agree_with_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in 0..=8 {
            let x = random_buffer(1 << p, &mut rng);
            let dev = max_dev(&fft_forward(&x).unwrap(), &direct_dft(&x));
            assert!(dev < 1e-12, "len {} deviates by {dev:e}", 1 << p);
        }
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        for len in [0, 3, 6, 12] {
            let x = ComplexBuffer::zeros(len);
            assert!(matches!(fft_forward(&x), Err(Error::Size(_))));
            assert!(matches!(fft_inverse(&x), Err(Error::Size(_))));
        }
    }

    #[test]
    fn mismatched_parts_are_rejected() {
        assert!(ComplexBuffer::new(vec![0.0; 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn next_pow2_values() {
        assert_eq!(next_pow2(1).unwrap(), 1);
        assert_eq!(next_pow2(5).unwrap(), 8);
        assert_eq!(next_pow2(1024).unwrap(), 1024);
        assert!(matches!(next_pow2(0), Err(Error::Domain(_))));
    }

    #[test]
    fn real_pair_matches_complex_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let len = 64;
        let plan = FftPlan::cached(len).unwrap();
        let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = half_len(len);
        let mut scratch = RealPairScratch::new(len);
        let (mut sx, mut sy) = (vec![0.0; 2 * h], vec![0.0; 2 * h]);
        real_pair_forward(&plan, &x, Some(&y), &mut scratch, &mut sx, Some(&mut sy));

        for (signal, spectrum) in [(&x, &sx), (&y, &sy)] {
            let mut padded = signal.clone();
            padded.resize(len, 0.0);
            let full = direct_dft(&ComplexBuffer::from_real(&padded));
            for k in 0..h {
                assert!((spectrum[k] - full.re[k]).abs() < 1e-12);
                assert!((spectrum[h + k] - full.im[k]).abs() < 1e-12);
            }
        }

        let (mut bx, mut by) = (vec![0.0; 40], vec![0.0; 40]);
        real_pair_inverse(&plan, &sx, Some(&sy), &mut scratch, &mut bx, Some(&mut by));
        for i in 0..40 {
            assert!((bx[i] - x[i]).abs() < 1e-14);
            assert!((by[i] - y[i]).abs() < 1e-14);
        }

        // Single-signal variants.
        let mut sx1 = vec![0.0; 2 * h];
        real_pair_forward(&plan, &x, None, &mut scratch, &mut sx1, None);
        assert!(sx1.iter().zip(&sx).all(|(a, b)| (a - b).abs() < 1e-13));
        let mut bx1 = vec![0.0; 40];
        real_pair_inverse(&plan, &sx1, None, &mut scratch, &mut bx1, None);
        assert!(bx1.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    proptest! {
        #[test]
        fn linearity(p in 0u32..=7, seed in any::<u64>(), a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = 1usize << p;
            let x = random_buffer(len, &mut rng);
            let y = random_buffer(len, &mut rng);
            let combo = ComplexBuffer {
                re: x.re.iter().zip(&y.re).map(|(u, v)| a * u + b * v).collect(),
                im: x.im.iter().zip(&y.im).map(|(u, v)| a * u + b * v).collect(),
            };
            let (fx, fy) = (fft_forward(&x).unwrap(), fft_forward(&y).unwrap());
            let expected = ComplexBuffer {
                re: fx.re.iter().zip(&fy.re).map(|(u, v)| a * u + b * v).collect(),
                im: fx.im.iter().zip(&fy.im).map(|(u, v)| a * u + b * v).collect(),
            };
            prop_assert!(max_dev(&fft_forward(&combo).unwrap(), &expected) < 1e-10);
        }

        #[test]
        fn parseval(p in 0u32..=9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = 1usize << p;
            let x = random_buffer(len, &mut rng);
            let y = fft_forward(&x).unwrap();
            let ex: f64 = x.re.iter().chain(&x.im).map(|v| v * v).sum();
            let ey: f64 = y.re.iter().chain(&y.im).map(|v| v * v).sum::<f64>() / len as f64;
            prop_assert!((ex - ey).abs() <= 1e-10 * ex.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn round_trip(p in 0u32..=10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_buffer(1 << p, &mut rng);
            let back = fft_inverse(&fft_forward(&x).unwrap()).unwrap();
            prop_assert!(max_dev(&x, &back) < 1e-12);
        }
    }
}
