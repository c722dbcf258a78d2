//! Row-stochastic sparse kernels, exact distribution evolution and
//! total-variation mixing profiles.

use thiserror::Error;

use crate::stats::KahanSum;

/// Entries smaller than this after arithmetic are dropped from sparse rows.
pub const ENTRY_FLOOR: f64 = 1e-15;
/// Tolerance for row sums and distribution mass.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row {row} sums to {sum}, not 1")]
    RowSum { row: usize, sum: f64 },
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: u32, value: f64 },
    #[error("distribution mass {0} is not 1")]
    BadMass(f64),
    #[error("chain did not mix within the horizon")]
    NotMixing,
}

/// Row-stochastic sparse matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernel {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseKernel {
    /// Build from per-row `(col, value)` lists. Duplicate columns are merged,
    /// entries below [`ENTRY_FLOOR`] dropped, and every row must sum to 1
    /// within [`MASS_TOL`].
    pub fn from_rows(dim: usize, rows: Vec<Vec<(u32, f64)>>) -> Result<Self, KernelError> {
        if rows.len() != dim {
            return Err(KernelError::DimensionMismatch { expected: dim, got: rows.len() });
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                if let Some(last) = merged.last_mut() {
                    if last.0 == c {
                        last.1 += v;
                        continue;
                    }
                }
                merged.push((c, v));
            }
            let mut sum = KahanSum::new();
            for &(c, v) in &merged {
                if v < 0.0 {
                    return Err(KernelError::NegativeEntry { row: r, col: c, value: v });
                }
                sum.add(v);
            }
            let sum = sum.value();
            if (sum - 1.0).abs() > MASS_TOL {
                return Err(KernelError::RowSum { row: r, sum });
            }
            for (c, v) in merged {
                if v >= ENTRY_FLOOR {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self { dim, row_ptr, cols, vals })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    pub fn entry(&self, r: usize, c: u32) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Smallest positive entry, the uniform transition floor of the kernel.
    pub fn min_positive_entry(&self) -> f64 {
        self.vals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Dense representation, for small oracles and eigen computations.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[r * self.dim + c as usize] = v;
            }
        }
        out
    }
}

/// Dense probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(weights: Vec<f64>) -> Result<Self, KernelError> {
        let mass: f64 = crate::stats::ksum(&weights);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(KernelError::BadMass(mass));
        }
        if let Some(&bad) = weights.iter().find(|&&w| w < 0.0) {
            return Err(KernelError::BadMass(bad));
        }
        Ok(Self(weights))
    }

    pub fn delta(dim: usize, at: usize) -> Self {
        let mut w = vec![0.0; dim];
        w[at] = 1.0;
        Self(w)
    }

    pub fn uniform(dim: usize) -> Self {
        Self(vec![1.0 / dim as f64; dim])
    }

    /// Normalise a nonnegative weight vector.
    pub fn from_weights(weights: Vec<f64>) -> Self {
        let mass: f64 = crate::stats::ksum(&weights);
        Self(weights.into_iter().map(|w| w / mass).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One step of exact evolution, `dist · kernel`.
pub fn step_distribution(kernel: &SparseKernel, dist: &Distribution) -> Result<Distribution, KernelError> {
    if dist.len() != kernel.dim() {
        return Err(KernelError::DimensionMismatch { expected: kernel.dim(), got: dist.len() });
    }
    let mut out = vec![0.0; kernel.dim()];
    for (r, &w) in dist.as_slice().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (cols, vals) = kernel.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            out[c as usize] += w * v;
        }
    }
    debug_assert!((crate::stats::ksum(&out) - 1.0).abs() < 1e-9);
    Ok(Distribution(out))
}

/// Total variation distance `(1/2) Σ |μ(x) − ν(x)|`.
pub fn tv_distance(mu: &Distribution, nu: &Distribution) -> Result<f64, KernelError> {
    if mu.len() != nu.len() {
        return Err(KernelError::DimensionMismatch { expected: mu.len(), got: nu.len() });
    }
    let mut acc = KahanSum::new();
    for (&a, &b) in mu.as_slice().iter().zip(nu.as_slice()) {
        acc.add((a - b).abs());
    }
    Ok(0.5 * acc.value())
}

fn tv_slice(row: &[f64], target: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for (&a, &b) in row.iter().zip(target) {
        acc.add((a - b).abs());
    }
    0.5 * acc.value()
}

/// Total-variation profile of `kernel^t(start, ·)` against `target`.
#[derive(Debug, Clone)]
pub struct MixingProfile {
    /// `tv[t]` is the distance after `t` steps, `t = 0..=t_max`.
    pub tv: Vec<f64>,
    /// Requested thresholds, in input order.
    pub epsilons: Vec<f64>,
    /// First `t` with `tv[t] < ε`, `None` when not reached by `t_max`.
    pub tmix: Vec<Option<usize>>,
}

pub fn mixing_profile(
    kernel: &SparseKernel,
    start: usize,
    target: &Distribution,
    t_max: usize,
    epsilons: &[f64],
) -> Result<MixingProfile, KernelError> {
    if target.len() != kernel.dim() {
        return Err(KernelError::DimensionMismatch { expected: kernel.dim(), got: target.len() });
    }
    let mut dist = Distribution::delta(kernel.dim(), start);
    let mut tv = Vec::with_capacity(t_max + 1);
    tv.push(tv_slice(dist.as_slice(), target.as_slice()));
    for _ in 0..t_max {
        dist = step_distribution(kernel, &dist)?;
        tv.push(tv_slice(dist.as_slice(), target.as_slice()));
    }
    let tmix = epsilons
        .iter()
        .map(|&eps| tv.iter().position(|&d| d < eps))
        .collect();
    Ok(MixingProfile { tv, epsilons: epsilons.to_vec(), tmix })
}

/// Per-start mixing times at two thresholds, computed by evolving all rows of
/// the kernel power simultaneously.
#[derive(Debug, Clone)]
pub struct AllStartsMixing {
    /// First `t` with `‖kernel^t(x,·) − target‖ < eps_hi`, per start `x`.
    pub tmix_hi: Vec<Option<usize>>,
    /// Same at `eps_lo`.
    pub tmix_lo: Vec<Option<usize>>,
}

pub fn all_starts_mixing(
    kernel: &SparseKernel,
    target: &Distribution,
    eps_hi: f64,
    eps_lo: f64,
    t_max: usize,
) -> Result<AllStartsMixing, KernelError> {
    let n = kernel.dim();
    if target.len() != n {
        return Err(KernelError::DimensionMismatch { expected: n, got: target.len() });
    }
    let mut cur = vec![0.0; n * n];
    for x in 0..n {
        cur[x * n + x] = 1.0;
    }
    let mut next = vec![0.0; n * n];
    let mut tmix_hi = vec![None; n];
    let mut tmix_lo = vec![None; n];
    let mut pending = n;
    for t in 0..=t_max {
        for x in 0..n {
            if tmix_hi[x].is_some() {
                continue;
            }
            let d = tv_slice(&cur[x * n..(x + 1) * n], target.as_slice());
            if tmix_lo[x].is_none() && d < eps_lo {
                tmix_lo[x] = Some(t);
            }
            if d < eps_hi {
                tmix_hi[x] = Some(t);
                pending -= 1;
            }
        }
        if pending == 0 || t == t_max {
            break;
        }
        next.iter_mut().for_each(|v| *v = 0.0);
        for x in 0..n {
            if tmix_hi[x].is_some() {
                continue;
            }
            let row = &cur[x * n..(x + 1) * n];
            let out = &mut next[x * n..(x + 1) * n];
            for (k, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let (cols, vals) = kernel.row(k);
                for (&c, &v) in cols.iter().zip(vals) {
                    out[c as usize] += w * v;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(AllStartsMixing { tmix_hi, tmix_lo })
}

/// Worst-start to best-start mixing time ratio,
/// `max_x tmix(x, ε) / min_x tmix(x, 1−ε)`.
pub fn cutoff_ratio(
    kernel: &SparseKernel,
    target: &Distribution,
    eps: f64,
    t_max: usize,
) -> Result<f64, KernelError> {
    let m = all_starts_mixing(kernel, target, eps, 1.0 - eps, t_max)?;
    let mut hi = 0usize;
    let mut lo = usize::MAX;
    for x in 0..kernel.dim() {
        match (m.tmix_hi[x], m.tmix_lo[x]) {
            (Some(a), Some(b)) => {
                hi = hi.max(a);
                lo = lo.min(b);
            }
            _ => return Err(KernelError::NotMixing),
        }
    }
    if lo == 0 {
        // a one-state chain mixes instantly from every start
        return Ok(if hi == 0 { 1.0 } else { f64::INFINITY });
    }
    Ok(hi as f64 / lo as f64)
}
