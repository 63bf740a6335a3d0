//! Evaluation of `sum_m alpha_m N^(m) v` for many right-hand sides.
//!
//! Each support entry `l` contributes the component
//! `diag(Q[:, a_l]) Toep(s_l * base_{c_l}) diag(K[:, b_l])`, where the base
//! generators are the distinct scaled generators up to sign. The Hadamard
//! product of components under a monomial `m` is again rescaled Toeplitz:
//!
//! ```text
//! N^(m) = diag(prod_f Q[:, f]^L_f) Toep(sign * prod_c base_c^G_c) diag(prod_f K[:, f]^R_f)
//! ```
//!
//! so it depends on `m` only through a left profile `L`, a generator profile
//! `G` and a right profile `R`. Monomials are grouped by `L`; within a group
//! the products `F(gen_G) .* F(D_R v)` are summed in the frequency domain and
//! inverted once. Transforms are therefore needed per distinct profile, not
//! per monomial, and per-monomial work is one pointwise multiply-add per
//! right-hand side.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dft::{half_len, next_pow2, real_pair_forward, real_pair_inverse, FftPlan, RealPairScratch};
use crate::error::Result;
use crate::polyexp::MonomialTable;
use crate::rope::AttentionInstance;
use crate::structured::write_embedding;

/// Groups per batch when spectra are computed per batch.
const STREAMING_GROUP_BATCH: usize = 8;
/// Groups inverted and reduced together.
const INVERSE_BATCH: usize = 64;
/// Profiles transformed per parallel batch when filling a store.
const TRANSFORM_BATCH: usize = 64;
/// Frequency bins per accumulation chunk.
const BIN_CHUNK: usize = 64;
/// Values per spectrum per chunk (`re | im`).
const SLOT: usize = 2 * BIN_CHUNK;

/// Distinct profile counts of an expansion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ProfileCounts {
    pub left: usize,
    pub generator: usize,
    pub right: usize,
    /// Distinct `(L, G)` pairs; each costs one complex multiply per bin.
    pub pairs: usize,
    /// Distinct `(L, G, R)` terms after merging equal ones.
    pub terms: usize,
}

/// Terms of one group sharing a generator profile: `gen` times the
/// combination `sum coef * D_R v` over `rights`.
#[derive(Debug)]
struct Sub {
    gen: u32,
    rights: Vec<(u32, f64)>,
}

#[derive(Debug)]
struct Group {
    left: u32,
    subs: Vec<Sub>,
}

/// Entrywise powers `x^e`, `1 <= e <= max_e`, of each factor vector, built
/// by repeated multiplication.
struct PowerTable {
    powers: Vec<Vec<Vec<f64>>>,
}

impl PowerTable {
    fn new(factors: &[Vec<f64>], profiles: &[Vec<u16>]) -> Self {
        let powers = factors
            .iter()
            .enumerate()
            .map(|(f, x)| {
                let top = profiles.iter().map(|p| p[f]).max().unwrap_or(0) as usize;
                let mut table: Vec<Vec<f64>> = Vec::with_capacity(top);
                for e in 0..top {
                    let next = match table.last() {
                        None => x.clone(),
                        Some(prev) => prev.iter().zip(x).map(|(a, b)| a * b).collect(),
                    };
                    debug_assert_eq!(table.len(), e);
                    table.push(next);
                }
                table
            })
            .collect();
        Self { powers }
    }

    /// `prod_f x_f^profile[f]`, entrywise, over `len` entries.
    fn product(&self, profile: &[u16], len: usize) -> Vec<f64> {
        let mut out: Option<Vec<f64>> = None;
        for (table, &e) in self.powers.iter().zip(profile) {
            if e == 0 {
                continue;
            }
            let p = &table[e as usize - 1];
            match out.as_mut() {
                None => out = Some(p.clone()),
                Some(o) => o.iter_mut().zip(p).for_each(|(a, b)| *a *= b),
            }
        }
        out.unwrap_or_else(|| vec![1.0; len])
    }
}

/// How spectra are held while evaluating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CachePlan {
    /// Generator spectra cached; right spectra cached for `batch` right-hand
    /// sides at a time.
    Cached { batch: usize },
    /// Only the spectra needed by the current batch of groups are held;
    /// shared spectra are recomputed across batches.
    Streaming,
}

/// Interns exponent profiles, assigning ids in first-seen order.
#[derive(Default)]
struct Interner {
    ids: HashMap<Vec<u16>, u32>,
    profiles: Vec<Vec<u16>>,
}

impl Interner {
    fn id(&mut self, profile: &[u16]) -> u32 {
        if let Some(&id) = self.ids.get(profile) {
            return id;
        }
        let id = self.profiles.len() as u32;
        self.ids.insert(profile.to_vec(), id);
        self.profiles.push(profile.to_vec());
        id
    }
}

pub(crate) struct Expansion {
    n: usize,
    plan: Arc<FftPlan>,
    left_powers: PowerTable,
    right_powers: PowerTable,
    gen_powers: PowerTable,
    left_profiles: Vec<Vec<u16>>,
    gen_profiles: Vec<Vec<u16>>,
    right_profiles: Vec<Vec<u16>>,
    groups: Vec<Group>,
    pair_count: usize,
    term_count: usize,
}

impl Expansion {
    /// Factors the instance's components and folds `table` into profile
    /// groups. `table` must range over the instance's support entries.
    pub(crate) fn new(inst: &AttentionInstance, table: &MonomialTable) -> Result<Self> {
        let n = inst.n();
        let plan = FftPlan::cached(next_pow2(2 * n)?)?;
        let scale = 1.0 / (inst.d() as f64).sqrt();
        let support = inst.weights.support().entries();

        // Column and generator factors, deduplicated.
        let mut left_index: Vec<usize> = Vec::new();
        let mut right_index: Vec<usize> = Vec::new();
        let mut bases: Vec<Vec<f64>> = Vec::new();
        let mut summands = Vec::with_capacity(support.len());
        for (&(a, b), g) in support.iter().zip(inst.weights.generators()) {
            let left = position_or_push(&mut left_index, a);
            let right = position_or_push(&mut right_index, b);
            let scaled: Vec<f64> = g.as_slice().iter().map(|x| x * scale).collect();
            let (class, negated) = match bases.iter().position(|base| base == &scaled) {
                Some(c) => (c, false),
                None => match bases
                    .iter()
                    .position(|base| base.iter().zip(&scaled).all(|(x, y)| *x == -*y))
                {
                    Some(c) => (c, true),
                    None => {
                        bases.push(scaled);
                        (bases.len() - 1, false)
                    }
                },
            };
            summands.push((left, class, negated, right));
        }

        let mut lefts = Interner::default();
        let mut gens = Interner::default();
        let mut rights = Interner::default();
        let mut groups: Vec<Group> = Vec::new();
        let mut group_of_left: HashMap<u32, usize> = HashMap::new();
        let mut sub_of: HashMap<(usize, u32), usize> = HashMap::new();
        let mut term_of: HashMap<(usize, usize, u32), usize> = HashMap::new();

        let (mut lp, mut gp, mut rp) = (
            vec![0u16; left_index.len()],
            vec![0u16; bases.len()],
            vec![0u16; right_index.len()],
        );
        for (m, alpha) in table.entries() {
            lp.iter_mut().for_each(|e| *e = 0);
            gp.iter_mut().for_each(|e| *e = 0);
            rp.iter_mut().for_each(|e| *e = 0);
            let mut negative = false;
            for (&e, &(left, class, negated, right)) in m.exponents().iter().zip(&summands) {
                let e16 = e as u16;
                lp[left] += e16;
                gp[class] += e16;
                rp[right] += e16;
                negative ^= negated && e % 2 == 1;
            }
            let coef = if negative { -alpha } else { *alpha };
            let (l, g, r) = (lefts.id(&lp), gens.id(&gp), rights.id(&rp));
            let gi = *group_of_left.entry(l).or_insert_with(|| {
                groups.push(Group { left: l, subs: Vec::new() });
                groups.len() - 1
            });
            let subs = &mut groups[gi].subs;
            let si = *sub_of.entry((gi, g)).or_insert_with(|| {
                subs.push(Sub { gen: g, rights: Vec::new() });
                subs.len() - 1
            });
            let rights_of_sub = &mut subs[si].rights;
            match term_of.get(&(gi, si, r)) {
                Some(&ti) => rights_of_sub[ti].1 += coef,
                None => {
                    term_of.insert((gi, si, r), rights_of_sub.len());
                    rights_of_sub.push((r, coef));
                }
            }
        }
        let pair_count = sub_of.len();
        let term_count = term_of.len();

        let left_cols: Vec<Vec<f64>> = left_index.iter().map(|&c| inst.q.column(c)).collect();
        let right_cols: Vec<Vec<f64>> = right_index.iter().map(|&c| inst.k.column(c)).collect();
        Ok(Self {
            n,
            plan,
            left_powers: PowerTable::new(&left_cols, &lefts.profiles),
            right_powers: PowerTable::new(&right_cols, &rights.profiles),
            gen_powers: PowerTable::new(&bases, &gens.profiles),
            left_profiles: lefts.profiles,
            gen_profiles: gens.profiles,
            right_profiles: rights.profiles,
            groups,
            pair_count,
            term_count,
        })
    }

    pub(crate) fn profile_counts(&self) -> ProfileCounts {
        ProfileCounts {
            left: self.left_profiles.len(),
            generator: self.gen_profiles.len(),
            right: self.right_profiles.len(),
            pairs: self.pair_count,
            terms: self.term_count,
        }
    }

    fn half(&self) -> usize {
        half_len(self.plan.len())
    }

    /// Bytes of one spectrum in chunked storage.
    fn spectrum_bytes(&self) -> usize {
        self.half().div_ceil(BIN_CHUNK) * SLOT * std::mem::size_of::<f64>()
    }

    /// Chooses a caching strategy that fits in `cache_bytes`: generator
    /// spectra plus, per right-hand side, right spectra and accumulators.
    pub(crate) fn cache_plan(&self, rhs_count: usize, cache_bytes: usize) -> CachePlan {
        let per_spectrum = self.spectrum_bytes();
        let gen_bytes = self.gen_profiles.len().saturating_mul(per_spectrum);
        let per_rhs = (self.right_profiles.len() + self.groups.len()).saturating_mul(per_spectrum);
        if gen_bytes.saturating_add(per_rhs) > cache_bytes {
            return CachePlan::Streaming;
        }
        let batch = ((cache_bytes - gen_bytes) / per_rhs.max(1)).clamp(1, rhs_count.max(1));
        CachePlan::Cached { batch }
    }

    fn left_diag(&self, id: u32) -> Vec<f64> {
        self.left_powers.product(&self.left_profiles[id as usize], self.n)
    }

    fn right_diag(&self, id: u32) -> Vec<f64> {
        self.right_powers.product(&self.right_profiles[id as usize], self.n)
    }

    fn embedded_generator(&self, id: u32) -> Vec<f64> {
        let product = self.gen_powers.product(&self.gen_profiles[id as usize], 2 * self.n - 1);
        let mut out = vec![0.0; self.plan.len()];
        write_embedding(&product, self.n, &mut out);
        out
    }

    /// Half spectra of real `signals`, two per complex transform.
    fn forward_all(&self, signals: &[Vec<f64>], scratch: &mut RealPairScratch) -> Vec<Vec<f64>> {
        let len = 2 * self.half();
        let mut out = vec![vec![0.0; len]; signals.len()];
        for (pair, spectra) in signals.chunks(2).zip(out.chunks_mut(2)) {
            let (first, rest) = spectra.split_first_mut().expect("non-empty chunk");
            real_pair_forward(
                &self.plan,
                &pair[0],
                pair.get(1).map(Vec::as_slice),
                scratch,
                first,
                rest.first_mut().map(Vec::as_mut_slice),
            );
        }
        out
    }

    /// Refills `store` with `per_id` spectra for each id, produced in
    /// parallel from the signals `make(id)`.
    fn fill_store(
        &self,
        store: &mut SpectrumStore,
        ids: &[u32],
        per_id: usize,
        make: impl Fn(u32) -> Vec<Vec<f64>> + Sync,
    ) {
        store.reset(ids.len() * per_id, false);
        for (b, batch) in ids.chunks(TRANSFORM_BATCH).enumerate() {
            let spectra: Vec<Vec<f64>> = batch
                .par_chunks(2)
                .map_init(
                    || RealPairScratch::new(self.plan.len()),
                    |scratch, pair| {
                        let signals: Vec<Vec<f64>> = pair.iter().flat_map(|&id| make(id)).collect();
                        self.forward_all(&signals, scratch)
                    },
                )
                .flatten()
                .collect();
            let base = b * TRANSFORM_BATCH * per_id;
            for (i, spectrum) in spectra.iter().enumerate() {
                store.scatter(base + i, spectrum);
            }
        }
    }

    fn generator_store(&self, ids: &[u32]) -> SpectrumStore {
        let mut store = SpectrumStore::new(self.half());
        self.fill_store(&mut store, ids, 1, |id| vec![self.embedded_generator(id)]);
        store
    }

    /// Spectra of `D_R v`, slot `position * rhs.len() + r`.
    fn fill_right_store(&self, store: &mut SpectrumStore, ids: &[u32], rhs: &[&[f64]]) {
        self.fill_store(store, ids, rhs.len(), |id| {
            let diag = self.right_diag(id);
            rhs.iter()
                .map(|v| diag.iter().zip(*v).map(|(d, x)| d * x).collect())
                .collect()
        })
    }

    /// `sum_m alpha_m N^(m) v` for each `v` in `rhs`.
    pub(crate) fn apply(&self, rhs: &[Vec<f64>], plan: CachePlan) -> Vec<Vec<f64>> {
        let mut sums = vec![vec![0.0; self.n]; rhs.len()];
        let mut comps = vec![vec![0.0; self.n]; rhs.len()];
        // Reused across passes so large buffers are faulted in once.
        let mut rights = SpectrumStore::new(self.half());
        let mut acc = SpectrumStore::new(self.half());
        match plan {
            CachePlan::Cached { batch } => {
                let gen_ids: Vec<u32> = (0..self.gen_profiles.len() as u32).collect();
                let right_ids: Vec<u32> = (0..self.right_profiles.len() as u32).collect();
                let gens = self.generator_store(&gen_ids);
                let terms = resolve(&self.groups, |id| id as usize, |id| id as usize);
                let batch = batch.max(1);
                for start in (0..rhs.len()).step_by(batch) {
                    let end = (start + batch).min(rhs.len());
                    let views: Vec<&[f64]> = rhs[start..end].iter().map(Vec::as_slice).collect();
                    self.fill_right_store(&mut rights, &right_ids, &views);
                    self.reduce(
                        &self.groups,
                        &terms,
                        &gens,
                        &rights,
                        &mut acc,
                        &mut sums[start..end],
                        &mut comps[start..end],
                    );
                }
            }
            CachePlan::Streaming => {
                let views: Vec<&[f64]> = rhs.iter().map(Vec::as_slice).collect();
                for groups in self.groups.chunks(STREAMING_GROUP_BATCH) {
                    let subs = || groups.iter().flat_map(|g| g.subs.iter());
                    let (gen_ids, gen_slot) = distinct(subs().map(|s| s.gen));
                    let (right_ids, right_slot) = distinct(subs().flat_map(|s| s.rights.iter().map(|&(r, _)| r)));
                    let gens = self.generator_store(&gen_ids);
                    self.fill_right_store(&mut rights, &right_ids, &views);
                    let terms = resolve(groups, |id| gen_slot[&id], |id| right_slot[&id]);
                    self.reduce(groups, &terms, &gens, &rights, &mut acc, &mut sums, &mut comps);
                }
            }
        }
        sums
    }

    /// Accumulates the frequency-domain sums of `groups`, inverts them and
    /// adds each group's contribution, in group order, to `sums` with Kahan
    /// compensation.
    ///
    /// Bins are processed in chunks; the stores keep each chunk of every
    /// spectrum contiguous, so a chunk's working set stays cache resident
    /// across all terms. Chunks are independent and run in parallel.
    #[allow(clippy::too_many_arguments)]
    fn reduce(
        &self,
        groups: &[Group],
        terms: &[Vec<Resolved>],
        gens: &SpectrumStore,
        rights: &SpectrumStore,
        acc: &mut SpectrumStore,
        sums: &mut [Vec<f64>],
        comps: &mut [Vec<f64>],
    ) {
        let width = sums.len();
        let h = self.half();
        acc.reset(groups.len() * width, true);
        let fused = fma_available();
        let block_len = acc.count * SLOT;
        acc.data.par_chunks_mut(block_len).enumerate().for_each(|(c, block)| {
            let len = BIN_CHUNK.min(h - c * BIN_CHUNK);
            accumulate_chunk(block, gens.chunk(c), rights.chunk(c), terms, width, len, fused);
        });

        for (b, batch) in groups.chunks(INVERSE_BATCH).enumerate() {
            let first_group = b * INVERSE_BATCH;
            let diags: Vec<Vec<f64>> = batch.par_iter().map(|g| self.left_diag(g.left)).collect();
            let slots: Vec<usize> = (first_group * width..(first_group + batch.len()) * width).collect();
            let outputs: Vec<Vec<f64>> = slots
                .par_chunks(2)
                .map_init(
                    || (RealPairScratch::new(self.plan.len()), vec![0.0; 2 * h], vec![0.0; 2 * h]),
                    |(pair, x, y), slots| {
                        acc.gather(slots[0], x);
                        let second = slots.get(1).map(|&s| {
                            acc.gather(s, y);
                            &y[..]
                        });
                        let mut out_x = vec![0.0; self.n];
                        let mut out_y = second.map(|_| vec![0.0; self.n]);
                        real_pair_inverse(&self.plan, x, second, pair, &mut out_x, out_y.as_deref_mut());
                        std::iter::once((slots[0], out_x))
                            .chain(out_y.map(|o| (slots[1], o)))
                            .map(|(slot, mut o)| {
                                let diag = &diags[slot / width - first_group];
                                o.iter_mut().zip(diag).for_each(|(v, d)| *v *= d);
                                o
                            })
                            .collect::<Vec<_>>()
                    },
                )
                .flatten()
                .collect();
            for (i, part) in outputs.iter().enumerate() {
                let r = i % width;
                kahan_add(&mut sums[r], &mut comps[r], part);
            }
        }
    }
}

fn position_or_push(list: &mut Vec<usize>, value: usize) -> usize {
    match list.iter().position(|&v| v == value) {
        Some(p) => p,
        None => {
            list.push(value);
            list.len() - 1
        }
    }
}

/// Half spectra stored chunk-major: chunk `c` of spectrum `s` occupies
/// `SLOT` values at `(c * count + s) * SLOT`, real parts then imaginary.
struct SpectrumStore {
    count: usize,
    h: usize,
    data: Vec<f64>,
}

impl SpectrumStore {
    fn new(h: usize) -> Self {
        Self {
            count: 0,
            h,
            data: Vec::new(),
        }
    }

    /// Resizes for `count` spectra, keeping the allocation. Existing values
    /// are zeroed only when `zero` is set; every slot is then either
    /// overwritten by `scatter` or ignored as chunk padding.
    fn reset(&mut self, count: usize, zero: bool) {
        let len = self.h.div_ceil(BIN_CHUNK) * count * SLOT;
        if zero {
            self.data.clear();
        } else {
            self.data.truncate(len);
        }
        self.data.resize(len, 0.0);
        self.count = count;
    }

    fn chunk(&self, c: usize) -> &[f64] {
        &self.data[c * self.count * SLOT..(c + 1) * self.count * SLOT]
    }

    /// Stores a `[re | im]` half spectrum as spectrum `s`.
    fn scatter(&mut self, s: usize, spectrum: &[f64]) {
        let (re, im) = spectrum.split_at(self.h);
        for (c, (re, im)) in re.chunks(BIN_CHUNK).zip(im.chunks(BIN_CHUNK)).enumerate() {
            let base = (c * self.count + s) * SLOT;
            self.data[base..base + re.len()].copy_from_slice(re);
            self.data[base + BIN_CHUNK..base + BIN_CHUNK + im.len()].copy_from_slice(im);
        }
    }

    /// Copies spectrum `s` out as `[re | im]`.
    fn gather(&self, s: usize, out: &mut [f64]) {
        let (re, im) = out.split_at_mut(self.h);
        for (c, (re, im)) in re.chunks_mut(BIN_CHUNK).zip(im.chunks_mut(BIN_CHUNK)).enumerate() {
            let base = (c * self.count + s) * SLOT;
            re.copy_from_slice(&self.data[base..base + re.len()]);
            im.copy_from_slice(&self.data[base + BIN_CHUNK..base + BIN_CHUNK + im.len()]);
        }
    }
}

/// A [`Sub`] with store slots resolved and zero coefficients dropped; a
/// right slot addresses the first of its per-rhs spectra.
struct Resolved {
    gen: u32,
    rights: Vec<(u32, f64)>,
}

fn resolve(groups: &[Group], gen: impl Fn(u32) -> usize, right: impl Fn(u32) -> usize) -> Vec<Vec<Resolved>> {
    groups
        .iter()
        .map(|g| {
            g.subs
                .iter()
                .map(|sub| Resolved {
                    gen: gen(sub.gen) as u32,
                    rights: sub
                        .rights
                        .iter()
                        .filter(|&&(_, c)| c != 0.0)
                        .map(|&(r, c)| (right(r) as u32, c))
                        .collect(),
                })
                .filter(|sub| !sub.rights.is_empty())
                .collect()
        })
        .collect()
}

/// Distinct ids in first-seen order, with their positions.
fn distinct(ids: impl Iterator<Item = u32>) -> (Vec<u32>, HashMap<u32, usize>) {
    let mut order = Vec::new();
    let mut slot = HashMap::new();
    for id in ids {
        slot.entry(id).or_insert_with(|| {
            order.push(id);
            order.len() - 1
        });
    }
    (order, slot)
}

#[cfg(target_arch = "x86_64")]
fn fma_available() -> bool {
    is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma")
}

#[cfg(not(target_arch = "x86_64"))]
fn fma_available() -> bool {
    false
}

/// Adds every term's `coef * (g .* r)` over the first `len` bins of one
/// chunk. `acc` holds `[group][rhs]` slots, `gens` and `rights` the chunk
/// of each stored spectrum.
fn accumulate_chunk(
    acc: &mut [f64],
    gens: &[f64],
    rights: &[f64],
    terms: &[Vec<Resolved>],
    width: usize,
    len: usize,
    fused: bool,
) {
    #[cfg(target_arch = "x86_64")]
    if fused {
        // SAFETY: `fused` is only set when AVX2 and FMA were detected.
        unsafe { accumulate_chunk_fma(acc, gens, rights, terms, width, len) };
        return;
    }
    let _ = fused;
    accumulate_chunk_impl::<false>(acc, gens, rights, terms, width, len);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn accumulate_chunk_fma(
    acc: &mut [f64],
    gens: &[f64],
    rights: &[f64],
    terms: &[Vec<Resolved>],
    width: usize,
    len: usize,
) {
    accumulate_chunk_impl::<true>(acc, gens, rights, terms, width, len);
}

#[inline(always)]
fn accumulate_chunk_impl<const FUSED: bool>(
    acc: &mut [f64],
    gens: &[f64],
    rights: &[f64],
    terms: &[Vec<Resolved>],
    width: usize,
    len: usize,
) {
    #[inline(always)]
    fn mul_add<const FUSED: bool>(a: f64, b: f64, c: f64) -> f64 {
        if FUSED {
            a.mul_add(b, c)
        } else {
            a * b + c
        }
    }

    let mut scaled = [0.0f64; SLOT];
    let mut combined = vec![0.0f64; width * SLOT];
    for (g, subs) in terms.iter().enumerate() {
        let accs = &mut acc[g * width * SLOT..(g + 1) * width * SLOT];
        for sub in subs {
            let gen = &gens[sub.gen as usize * SLOT..][..SLOT];
            let spectra_of = |slot: u32| &rights[slot as usize * width * SLOT..][..width * SLOT];
            // Either a single right spectrum with the coefficient folded into
            // the generator, or a real combination of several.
            let (factor, spectra): (&[f64], &[f64]) = match sub.rights.as_slice() {
                &[(slot, coef)] => {
                    for (s, &x) in scaled.iter_mut().zip(gen) {
                        *s = coef * x;
                    }
                    (&scaled, spectra_of(slot))
                }
                many => {
                    for (i, &(slot, coef)) in many.iter().enumerate() {
                        let src = spectra_of(slot);
                        for (dst, src) in combined.chunks_exact_mut(BIN_CHUNK).zip(src.chunks_exact(BIN_CHUNK)) {
                            if i == 0 {
                                for (d, &x) in dst[..len].iter_mut().zip(&src[..len]) {
                                    *d = coef * x;
                                }
                            } else {
                                for (d, &x) in dst[..len].iter_mut().zip(&src[..len]) {
                                    *d = mul_add::<FUSED>(coef, x, *d);
                                }
                            }
                        }
                    }
                    (gen, &combined)
                }
            };
            let (f_re, f_im) = factor.split_at(BIN_CHUNK);
            for (spectrum, a) in spectra.chunks_exact(SLOT).zip(accs.chunks_exact_mut(SLOT)) {
                let (a_re, a_im) = a.split_at_mut(BIN_CHUNK);
                let (r_re, r_im) = spectrum.split_at(BIN_CHUNK);
                for (((((ar, ai), &gr), &gi), &rr), &ri) in a_re[..len]
                    .iter_mut()
                    .zip(a_im[..len].iter_mut())
                    .zip(&f_re[..len])
                    .zip(&f_im[..len])
                    .zip(&r_re[..len])
                    .zip(&r_im[..len])
                {
                    *ar = mul_add::<FUSED>(gr, rr, mul_add::<FUSED>(-gi, ri, *ar));
                    *ai = mul_add::<FUSED>(gr, ri, mul_add::<FUSED>(gi, rr, *ai));
                }
            }
        }
    }
}

fn kahan_add(sum: &mut [f64], comp: &mut [f64], values: &[f64]) {
    for ((s, c), &v) in sum.iter_mut().zip(comp.iter_mut()).zip(values) {
        let y = v - *c;
        let t = *s + y;
        *c = (t - *s) - y;
        *s = t;
    }
}
