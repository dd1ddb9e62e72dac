//! Linear recurrences `s_n = M s_{n-1} + F_n` over block-diagonal transitions.
//!
//! The state `s` holds `P` pairs `(u_j, v_j)`; `M` couples only the two
//! entries of each pair through a 2x2 block. Every operation here therefore
//! costs `O(P)` per element and never forms a dense `2P x 2P` matrix.
//!
//! Flat element layout used by the parallel scan: `4P` block entries
//! (`a11, a12, a21, a22` per pair) followed by the `u` half and then the `v`
//! half of the affine part.

use std::fmt::Debug;

use num_traits::Float;

use crate::error::{structural, Result};
use crate::par;

/// Scalar types the scan runs on (`f64` by default, `f32` for lighter runs).
pub trait Scalar: Float + Send + Sync + Debug + 'static {}
impl<T: Float + Send + Sync + Debug + 'static> Scalar for T {}

/// One 2x2 block coupling a `(u_j, v_j)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block2<T> {
    pub a11: T,
    pub a12: T,
    pub a21: T,
    pub a22: T,
}

impl<T: Scalar> Block2<T> {
    pub fn new(a11: T, a12: T, a21: T, a22: T) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::one())
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero(), T::zero())
    }

    /// Matrix product `self * rhs`.
    #[inline]
    pub fn mul(&self, rhs: &Self) -> Self {
        Self {
            a11: self.a11 * rhs.a11 + self.a12 * rhs.a21,
            a12: self.a11 * rhs.a12 + self.a12 * rhs.a22,
            a21: self.a21 * rhs.a11 + self.a22 * rhs.a21,
            a22: self.a21 * rhs.a12 + self.a22 * rhs.a22,
        }
    }

    #[inline]
    pub fn apply(&self, u: T, v: T) -> (T, T) {
        (self.a11 * u + self.a12 * v, self.a21 * u + self.a22 * v)
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }

    pub fn trace(&self) -> T {
        self.a11 + self.a22
    }

    pub fn det(&self) -> T {
        self.a11 * self.a22 - self.a12 * self.a21
    }
}

/// A time-invariant block-diagonal transition with a per-step forcing stream.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagRecurrence<T> {
    blocks: Vec<Block2<T>>,
    forcing_u: Vec<T>,
    forcing_v: Vec<T>,
}

impl<T: Scalar> BlockDiagRecurrence<T> {
    /// `forcing_u` / `forcing_v` are time-major, `L x P` each.
    pub fn new(blocks: Vec<Block2<T>>, forcing_u: Vec<T>, forcing_v: Vec<T>) -> Result<Self> {
        let p = blocks.len();
        if p == 0 {
            return Err(structural("recurrence needs at least one state pair"));
        }
        if forcing_u.len() != forcing_v.len() {
            return Err(structural(format!(
                "forcing halves differ in length ({} vs {})",
                forcing_u.len(),
                forcing_v.len()
            )));
        }
        if !forcing_u.len().is_multiple_of(p) {
            return Err(structural(format!(
                "forcing length {} is not a multiple of state size {p}",
                forcing_u.len()
            )));
        }
        if let Some(j) = blocks.iter().position(|b| !b.is_finite()) {
            return Err(structural(format!("block {j} has a non-finite entry")));
        }
        Ok(Self {
            blocks,
            forcing_u,
            forcing_v,
        })
    }

    pub fn state_size(&self) -> usize {
        self.blocks.len()
    }

    pub fn len(&self) -> usize {
        self.forcing_u.len() / self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forcing_u.is_empty()
    }

    pub fn blocks(&self) -> &[Block2<T>] {
        &self.blocks
    }

    /// Forcing at 0-based step `n` (the paper-style `F_{n+1}`).
    pub fn forcing(&self, n: usize) -> (&[T], &[T]) {
        let p = self.state_size();
        (&self.forcing_u[n * p..(n + 1) * p], &self.forcing_v[n * p..(n + 1) * p])
    }

    /// The `(M, F_n)` tuple for 0-based step `n`.
    pub fn element(&self, n: usize) -> ScanElement<T> {
        let (fu, fv) = self.forcing(n);
        let mut vec = Vec::with_capacity(2 * fu.len());
        vec.extend_from_slice(fu);
        vec.extend_from_slice(fv);
        ScanElement {
            mat: self.blocks.clone(),
            vec,
        }
    }
}

/// `(matrix, vector)` pair acted on by [`combine`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScanElement<T> {
    pub mat: Vec<Block2<T>>,
    /// `2P` entries: `u` half then `v` half.
    pub vec: Vec<T>,
}

impl<T: Scalar> ScanElement<T> {
    pub fn identity(p: usize) -> Self {
        Self {
            mat: vec![Block2::identity(); p],
            vec: vec![T::zero(); 2 * p],
        }
    }

    pub fn state_size(&self) -> usize {
        self.mat.len()
    }

    fn check(&self) -> Result<()> {
        if self.vec.len() != 2 * self.mat.len() {
            return Err(structural(format!(
                "element vector has {} entries, expected {}",
                self.vec.len(),
                2 * self.mat.len()
            )));
        }
        Ok(())
    }
}

/// `(a1, a2) • (b1, b2) = (b1 a1, b1 a2 + b2)`: apply `a` first, then `b`.
pub fn combine<T: Scalar>(a: &ScanElement<T>, b: &ScanElement<T>) -> Result<ScanElement<T>> {
    a.check()?;
    b.check()?;
    let p = a.state_size();
    if b.state_size() != p {
        return Err(structural(format!("combine of state sizes {p} and {}", b.state_size())));
    }
    let mut vec = vec![T::zero(); 2 * p];
    let mat = a
        .mat
        .iter()
        .zip(&b.mat)
        .enumerate()
        .map(|(j, (ma, mb))| {
            let (u, v) = mb.apply(a.vec[j], a.vec[p + j]);
            vec[j] = u + b.vec[j];
            vec[p + j] = v + b.vec[p + j];
            mb.mul(ma)
        })
        .collect();
    Ok(ScanElement { mat, vec })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub mode: ScanMode,
    /// Parallel mode falls back to the sequential loop below this length.
    pub sequential_threshold: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            mode: ScanMode::Parallel,
            sequential_threshold: 1024,
        }
    }
}

impl ScanConfig {
    pub fn sequential() -> Self {
        Self {
            mode: ScanMode::Sequential,
            ..Self::default()
        }
    }

    /// Parallel scan at every length, no fallback.
    pub fn parallel_always() -> Self {
        Self {
            mode: ScanMode::Parallel,
            sequential_threshold: 0,
        }
    }
}

/// Work done by one scan call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScanStats {
    /// Calls of the associative operator.
    pub combines: usize,
    /// Matrix-vector applications `M s + F`.
    pub applies: usize,
    /// Floating-point operations in both of the above.
    pub flops: usize,
    /// Up-sweep plus down-sweep levels (0 for the sequential loop).
    pub depth: usize,
}

/// Flops per combine per state pair: 2x2 product (12) plus 2x2 apply and add (6).
pub const COMBINE_FLOPS_PER_PAIR: usize = 18;
/// Flops per apply per state pair.
pub const APPLY_FLOPS_PER_PAIR: usize = 6;

/// Output states `s_1 .. s_L`, time-major, `2P` per step (`u` half then `v` half).
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence<T> {
    p: usize,
    data: Vec<T>,
}

impl<T: Scalar> StateSequence<T> {
    pub fn state_size(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.data.len() / (2 * self.p)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state(&self, n: usize) -> &[T] {
        &self.data[n * 2 * self.p..(n + 1) * 2 * self.p]
    }

    pub fn u(&self, n: usize) -> &[T] {
        &self.state(n)[..self.p]
    }

    pub fn v(&self, n: usize) -> &[T] {
        &self.state(n)[self.p..]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

pub fn scan<T: Scalar>(rec: &BlockDiagRecurrence<T>, s0: &[T], config: ScanConfig) -> Result<StateSequence<T>> {
    scan_with_stats(rec, s0, config).map(|(s, _)| s)
}

pub fn scan_with_stats<T: Scalar>(
    rec: &BlockDiagRecurrence<T>,
    s0: &[T],
    config: ScanConfig,
) -> Result<(StateSequence<T>, ScanStats)> {
    let p = rec.state_size();
    if rec.is_empty() {
        return Err(structural("scan over an empty sequence"));
    }
    if s0.len() != 2 * p {
        return Err(structural(format!(
            "initial state has {} entries, expected {}",
            s0.len(),
            2 * p
        )));
    }
    if s0.iter().any(|x| !x.is_finite()) {
        return Err(structural("initial state is not finite"));
    }
    let use_tree = config.mode == ScanMode::Parallel && rec.len() >= config.sequential_threshold;
    if use_tree {
        Ok(tree_scan(rec, s0))
    } else {
        Ok(sequential_scan(rec, s0))
    }
}

fn sequential_scan<T: Scalar>(rec: &BlockDiagRecurrence<T>, s0: &[T]) -> (StateSequence<T>, ScanStats) {
    let p = rec.state_size();
    let len = rec.len();
    let mut data = Vec::with_capacity(len * 2 * p);
    let mut state = s0.to_vec();
    for n in 0..len {
        let (fu, fv) = rec.forcing(n);
        for (j, block) in rec.blocks().iter().enumerate() {
            let (u, v) = block.apply(state[j], state[p + j]);
            state[j] = u + fu[j];
            state[p + j] = v + fv[j];
        }
        data.extend_from_slice(&state);
    }
    let stats = ScanStats {
        combines: 0,
        applies: len,
        flops: len * p * APPLY_FLOPS_PER_PAIR,
        depth: 0,
    };
    (StateSequence { p, data }, stats)
}

/// `b <- a • b` on flat elements. Each pair only reads its own entries, so
/// the update can be done in place.
#[inline]
fn combine_in_place<T: Scalar>(a: &[T], b: &mut [T], p: usize) {
    let (bm, bv) = b.split_at_mut(4 * p);
    let (am, av) = a.split_at(4 * p);
    for j in 0..p {
        let ma = Block2::new(am[4 * j], am[4 * j + 1], am[4 * j + 2], am[4 * j + 3]);
        let mb = Block2::new(bm[4 * j], bm[4 * j + 1], bm[4 * j + 2], bm[4 * j + 3]);
        let (u, v) = mb.apply(av[j], av[p + j]);
        bv[j] = u + bv[j];
        bv[p + j] = v + bv[p + j];
        let m = mb.mul(&ma);
        bm[4 * j] = m.a11;
        bm[4 * j + 1] = m.a12;
        bm[4 * j + 2] = m.a21;
        bm[4 * j + 3] = m.a22;
    }
}

fn write_identity<T: Scalar>(e: &mut [T], p: usize) {
    for j in 0..p {
        e[4 * j] = T::one();
        e[4 * j + 1] = T::zero();
        e[4 * j + 2] = T::zero();
        e[4 * j + 3] = T::one();
    }
    for x in &mut e[4 * p..] {
        *x = T::zero();
    }
}

/// Work-efficient up-sweep/down-sweep over a power-of-two padded buffer.
///
/// The first element is pre-applied to `s0`, so the exclusive prefix at
/// step `n` carries `s_{n-1}` in its vector half and the output is one
/// apply away. Combines against padding (identity) or against the empty
/// leftmost prefix are replaced by copies, which keeps the combine count
/// at most `2 (L - 1)`.
fn tree_scan<T: Scalar>(rec: &BlockDiagRecurrence<T>, s0: &[T]) -> (StateSequence<T>, ScanStats) {
    let p = rec.state_size();
    let len = rec.len();
    let es = 6 * p;
    let n = len.next_power_of_two();
    let mut buf = vec![T::zero(); n * es];

    for (i, e) in buf.chunks_mut(es).enumerate() {
        if i >= len {
            write_identity(e, p);
            continue;
        }
        let (fu, fv) = rec.forcing(i);
        for (j, b) in rec.blocks().iter().enumerate() {
            e[4 * j] = b.a11;
            e[4 * j + 1] = b.a12;
            e[4 * j + 2] = b.a21;
            e[4 * j + 3] = b.a22;
            let (u, v) = if i == 0 {
                b.apply(s0[j], s0[p + j])
            } else {
                (T::zero(), T::zero())
            };
            e[4 * p + j] = u + fu[j];
            e[5 * p + j] = v + fv[j];
        }
    }

    let mut combines = 0usize;
    let mut depth = 0usize;

    // Up-sweep: the right child of every node accumulates its subtree total.
    let mut half = 1usize;
    while half < n {
        let stride = 2 * half;
        combines += par::chunks_mut_sum(&mut buf, stride * es, |k, chunk| {
            let start = k * stride;
            if start + half >= len {
                // Right subtree is pure padding: its total is the left total.
                if start < len {
                    let (l, r) = chunk.split_at_mut((stride - 1) * es);
                    r[..es].copy_from_slice(&l[(half - 1) * es..half * es]);
                }
                return 0;
            }
            let (l, r) = chunk.split_at_mut((stride - 1) * es);
            combine_in_place(&l[(half - 1) * es..half * es], &mut r[..es], p);
            1
        });
        depth += 1;
        half = stride;
    }

    // Down-sweep: turn subtree totals into exclusive prefixes.
    write_identity(&mut buf[(n - 1) * es..], p);
    let mut half = n / 2;
    while half >= 1 {
        let stride = 2 * half;
        combines += par::chunks_mut_sum(&mut buf, stride * es, |k, chunk| {
            let start = k * stride;
            if start >= len {
                return 0;
            }
            let (l, r) = chunk.split_at_mut((stride - 1) * es);
            let left = &mut l[(half - 1) * es..half * es];
            let right = &mut r[..es];
            left.swap_with_slice(right);
            if start + half >= len {
                // Nothing real to the right; its prefix is never read.
                return 0;
            }
            if start == 0 {
                // Prefix is the identity: right keeps the left total as is.
                return 0;
            }
            combine_in_place(left, right, p);
            1
        });
        depth += 1;
        half /= 2;
    }

    let blocks = rec.blocks();
    let mut data = vec![T::zero(); len * 2 * p];
    par::chunks_mut_sum(&mut data, 2 * p, |i, out| {
        let prefix = &buf[i * es + 4 * p..(i + 1) * es];
        let (fu, fv) = rec.forcing(i);
        for (j, b) in blocks.iter().enumerate() {
            let (u, v) = b.apply(prefix[j], prefix[p + j]);
            if i == 0 {
                // Element 0 already had s0 folded in; the prefix is zero.
                let (u0, v0) = b.apply(s0[j], s0[p + j]);
                out[j] = u + u0 + fu[j];
                out[p + j] = v + v0 + fv[j];
            } else {
                out[j] = u + fu[j];
                out[p + j] = v + fv[j];
            }
        }
        0
    });

    let applies = len;
    let stats = ScanStats {
        combines,
        applies,
        flops: combines * p * COMBINE_FLOPS_PER_PAIR + applies * p * APPLY_FLOPS_PER_PAIR,
        depth,
    };
    (StateSequence { p, data }, stats)
}

/// Adjoint of a scan: `λ_t = g_t + M^T λ_{t+1}` with `λ_L = 0`, returned
/// in forward time order. `g` is the loss gradient with respect to each
/// output state (`upstream_u`, `upstream_v` are `L x P`, time-major).
///
/// Given `λ`, the gradient with respect to `F_t` is `λ_t`, with respect to
/// `s_0` it is `M^T λ_1`, and with respect to `M` it is `Σ_t λ_t s_{t-1}^T`.
/// The reversed recurrence is itself a scan over transposed blocks, so it
/// runs in either mode.
pub fn adjoint_scan<T: Scalar>(
    blocks: &[Block2<T>],
    upstream_u: &[T],
    upstream_v: &[T],
    config: ScanConfig,
) -> Result<StateSequence<T>> {
    let p = blocks.len();
    if p == 0 || upstream_u.len() != upstream_v.len() || !upstream_u.len().is_multiple_of(p) {
        return Err(structural("adjoint upstream does not match the block count"));
    }
    let len = upstream_u.len() / p;
    let reverse = |g: &[T]| -> Vec<T> {
        (0..len)
            .rev()
            .flat_map(|t| g[t * p..(t + 1) * p].iter().copied())
            .collect()
    };
    let rec = BlockDiagRecurrence::new(
        blocks.iter().map(Block2::transpose).collect(),
        reverse(upstream_u),
        reverse(upstream_v),
    )?;
    let out = scan(&rec, &vec![T::zero(); 2 * p], config)?;
    let mut data = Vec::with_capacity(out.data.len());
    for t in (0..len).rev() {
        data.extend_from_slice(out.state(t));
    }
    Ok(StateSequence { p, data })
}
