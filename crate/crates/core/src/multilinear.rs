//! Multilinear functions of a permutation matrix: evaluation, the averaged
//! derivative operator `D` and the entry-swap operator `U`, smoothness
//! constants, Bernstein-type tail bounds and the exchangeable-pair algebra
//! used to prove them.
//!
//! A polynomial lives in the indeterminates `X_{ij}`; multilinearity means
//! no monomial repeats a row or a column index, and such monomials are
//! annihilated at construction. Restricted to permutation matrices each
//! monomial is the indicator of a coset `{σ : σ(i_1)=j_1, …, σ(i_k)=j_k}`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::stats::wilson_ci;

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: polynomial over {expected}, argument over {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("exact constants require n ≤ {max}, got {got}")]
    TooLargeForExact { max: usize, got: usize },
    #[error("tail bounds require non-negative coefficients")]
    SignedCoefficients,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Permutation of `[0, n)`, stored as its image array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    image: Vec<u32>,
}

impl Permutation {
    pub fn new(image: Vec<u32>) -> Option<Self> {
        let n = image.len();
        let mut seen = vec![false; n];
        for &v in &image {
            if v as usize >= n || seen[v as usize] {
                return None;
            }
            seen[v as usize] = true;
        }
        Some(Self { image })
    }

    pub fn identity(n: usize) -> Self {
        Self { image: (0..n as u32).collect() }
    }

    pub fn uniform<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut image: Vec<u32> = (0..n as u32).collect();
        image.shuffle(rng);
        Self { image }
    }

    pub fn n(&self) -> usize {
        self.image.len()
    }

    #[inline]
    pub fn apply(&self, i: usize) -> u32 {
        self.image[i]
    }

    /// Right-compose with the transposition `(i j)`: the result maps `i` to
    /// `σ(j)`, `j` to `σ(i)` and agrees with `σ` elsewhere.
    pub fn compose_transposition(&self, i: usize, j: usize) -> Self {
        let mut image = self.image.clone();
        image.swap(i, j);
        Self { image }
    }

    /// All permutations of `[0, n)`, for exhaustive oracles (`n ≤ 8`).
    pub fn enumerate(n: usize) -> Vec<Self> {
        assert!(n <= 8, "enumeration is factorial");
        let mut out = Vec::new();
        let mut cur: Vec<u32> = (0..n as u32).collect();
        fn heap(k: usize, cur: &mut Vec<u32>, out: &mut Vec<Permutation>) {
            if k == 1 {
                out.push(Permutation { image: cur.clone() });
                return;
            }
            for i in 0..k {
                heap(k - 1, cur, out);
                if k % 2 == 0 {
                    cur.swap(i, k - 1);
                } else {
                    cur.swap(0, k - 1);
                }
            }
        }
        heap(n.max(1), &mut cur, &mut out);
        out
    }
}

type Monomial = Box<[(u16, u16)]>;

/// Sparse multilinear polynomial over `X_{ij}`, `i, j ∈ [0, n)`, with an
/// explicit scalar part (produced by the `D` operator; constructors of
/// fresh polynomials keep it zero).
#[derive(Debug, Clone, PartialEq)]
pub struct MultilinearPoly {
    n: usize,
    constant: f64,
    monomials: BTreeMap<Monomial, f64>,
}

impl MultilinearPoly {
    /// Canonicalise and aggregate terms; monomials violating multilinearity
    /// (a repeated row or column index) are silently dropped and counted.
    pub fn new(n: usize, terms: impl IntoIterator<Item = (Vec<(u16, u16)>, f64)>) -> (Self, usize) {
        let mut monomials: BTreeMap<Monomial, f64> = BTreeMap::new();
        let mut dropped = 0usize;
        'term: for (mut pairs, coef) in terms {
            if coef == 0.0 {
                continue;
            }
            pairs.sort_unstable();
            for w in pairs.windows(2) {
                if w[0].0 == w[1].0 {
                    dropped += 1;
                    continue 'term;
                }
            }
            let mut cols: Vec<u16> = pairs.iter().map(|&(_, j)| j).collect();
            cols.sort_unstable();
            if cols.windows(2).any(|w| w[0] == w[1]) {
                dropped += 1;
                continue;
            }
            if pairs.iter().any(|&(i, j)| i as usize >= n || j as usize >= n) {
                dropped += 1;
                continue;
            }
            *monomials.entry(pairs.into_boxed_slice()).or_insert(0.0) += coef;
        }
        monomials.retain(|_, c| *c != 0.0);
        (Self { n, constant: 0.0, monomials }, dropped)
    }

    pub fn zero(n: usize) -> Self {
        Self { n, constant: 0.0, monomials: BTreeMap::new() }
    }

    /// `Σ_i X_{i,i}`, the fixed-point counter.
    pub fn fixed_point_counter(n: usize) -> Self {
        Self::new(n, (0..n as u16).map(|i| (vec![(i, i)], 1.0))).0
    }

    /// `Σ_{ij} A_{ij} X_{ij}` for a dense coefficient matrix.
    pub fn linear(n: usize, a: &[f64]) -> Self {
        assert_eq!(a.len(), n * n);
        Self::new(n, (0..n * n).map(|k| (vec![((k / n) as u16, (k % n) as u16)], a[k]))).0
    }

    /// Monomials `X_{i,i+1} X_{i+1,i+2} …` of length `d` around the cycle:
    /// counts length-`d` runs of consecutive mappings.
    pub fn path_counting(n: usize, d: usize) -> Self {
        assert!(d >= 1 && d + 1 <= n);
        let terms = (0..n).map(|s| {
            let pairs = (0..d)
                .map(|k| (((s + k) % n) as u16, ((s + k + 1) % n) as u16))
                .collect::<Vec<_>>();
            (pairs, 1.0)
        });
        Self::new(n, terms).0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn monomial_count(&self) -> usize {
        self.monomials.len()
    }

    pub fn degree(&self) -> usize {
        self.monomials.keys().map(|m| m.len()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.monomials.is_empty()
    }

    pub fn has_nonnegative_coefficients(&self) -> bool {
        self.constant >= 0.0 && self.monomials.values().all(|&c| c >= 0.0)
    }

    pub fn iter_terms(&self) -> impl Iterator<Item = (&[(u16, u16)], f64)> {
        self.monomials.iter().map(|(m, &c)| (m.as_ref(), c))
    }

    pub fn evaluate(&self, sigma: &Permutation) -> f64 {
        debug_assert_eq!(sigma.n(), self.n);
        let mut acc = self.constant;
        'mono: for (m, &coef) in &self.monomials {
            for &(i, j) in m.iter() {
                if sigma.apply(i as usize) != j as u32 {
                    continue 'mono;
                }
            }
            acc += coef;
        }
        acc
    }

    /// Evaluate at an arbitrary real matrix (row-major `n×n`).
    pub fn evaluate_matrix(&self, m: &[f64]) -> f64 {
        assert_eq!(m.len(), self.n * self.n);
        let mut acc = self.constant;
        for (mono, &coef) in &self.monomials {
            let mut prod = coef;
            for &(i, j) in mono.iter() {
                prod *= m[i as usize * self.n + j as usize];
            }
            acc += prod;
        }
        acc
    }

    /// Partial derivative in the entry `(i, j)`: keeps the monomials
    /// containing the pair, with the pair removed.
    pub fn partial_derivative(&self, i: u16, j: u16) -> Self {
        let mut out = Self::zero(self.n);
        for (m, &coef) in &self.monomials {
            if let Some(pos) = m.iter().position(|&p| p == (i, j)) {
                let rest: Vec<(u16, u16)> =
                    m.iter().enumerate().filter(|&(k, _)| k != pos).map(|(_, &p)| p).collect();
                out.add_term(rest, coef);
            }
        }
        out
    }

    /// Second partial derivative in two distinct entries.
    pub fn second_partial(&self, a: (u16, u16), b: (u16, u16)) -> Self {
        if a == b {
            return Self::zero(self.n);
        }
        self.partial_derivative(a.0, a.1).partial_derivative(b.0, b.1)
    }

    fn add_term(&mut self, mut pairs: Vec<(u16, u16)>, coef: f64) {
        if coef == 0.0 {
            return;
        }
        if pairs.is_empty() {
            self.constant += coef;
            return;
        }
        pairs.sort_unstable();
        let rows_ok = pairs.windows(2).all(|w| w[0].0 != w[1].0);
        let mut cols: Vec<u16> = pairs.iter().map(|&(_, j)| j).collect();
        cols.sort_unstable();
        let cols_ok = cols.windows(2).all(|w| w[0] != w[1]);
        if !rows_ok || !cols_ok {
            return; // annihilated by multilinearity
        }
        let entry = self.monomials.entry(pairs.into_boxed_slice()).or_insert(0.0);
        *entry += coef;
        if *entry == 0.0 {
            self.monomials.retain(|_, c| *c != 0.0);
        }
    }

    /// The averaged derivative `D`, applied per homogeneous component:
    /// a degree-`k` component contributes `(1/(kn)) Σ_{ij} ∂_{ij}`.
    /// The scalar part is dropped (its derivative vanishes).
    pub fn op_d(&self) -> Self {
        let mut out = Self::zero(self.n);
        for (m, &coef) in &self.monomials {
            let k = m.len();
            let w = coef / (k as f64 * self.n as f64);
            for drop in 0..k {
                let rest: Vec<(u16, u16)> =
                    m.iter().enumerate().filter(|&(p, _)| p != drop).map(|(_, &x)| x).collect();
                out.add_term(rest, w);
            }
        }
        out
    }

    /// The entry-swap operator `U`: per degree-`k` component,
    /// `(1/(kn)) Σ X_{il} X_{kj} ∂_{ij} ∂_{kl}`, with the mixed partial in
    /// the tensor-calculus normalisation (one term per ordered position
    /// pair, i.e. half the standard mixed partial). Output monomials
    /// violating multilinearity are annihilated.
    ///
    /// Under this normalisation `‖Uφ‖_∞ ≤ ((d−1)/n) M(φ) N(φ)` and the
    /// conditional-difference identity closes exactly; with standard mixed
    /// partials both would acquire a spurious factor 2.
    pub fn op_u(&self) -> Self {
        let mut out = Self::zero(self.n);
        for (m, &coef) in &self.monomials {
            let k = m.len();
            if k < 2 {
                continue;
            }
            let w = coef / (2.0 * k as f64 * self.n as f64);
            for a in 0..k {
                for b in 0..k {
                    if a == b {
                        continue;
                    }
                    let (ia, ja) = m[a];
                    let (ib, jb) = m[b];
                    let mut pairs: Vec<(u16, u16)> = m
                        .iter()
                        .enumerate()
                        .filter(|&(p, _)| p != a && p != b)
                        .map(|(_, &x)| x)
                        .collect();
                    pairs.push((ia, jb));
                    pairs.push((ib, ja));
                    out.add_term(pairs, w);
                }
            }
        }
        out
    }

    /// Exact mean under the uniform permutation: a consistent monomial of
    /// size `k` is active with probability `1/(n(n−1)…(n−k+1))`.
    pub fn exact_mean(&self) -> f64 {
        let mut acc = self.constant;
        for (m, &coef) in &self.monomials {
            acc += coef * falling_inverse(self.n, m.len());
        }
        acc
    }

    /// Exact variance via pairwise coset intersection probabilities.
    pub fn exact_variance(&self) -> f64 {
        let terms: Vec<(&Monomial, f64)> = self.monomials.iter().map(|(m, &c)| (m, c)).collect();
        let mut var = 0.0;
        for (a, ca) in &terms {
            for (b, cb) in &terms {
                let joint = match joint_size(a, b) {
                    Some(u) => falling_inverse(self.n, u),
                    None => 0.0,
                };
                var += ca * cb
                    * (joint - falling_inverse(self.n, a.len()) * falling_inverse(self.n, b.len()));
            }
        }
        var.max(0.0)
    }

    /// Largest coefficient in absolute value (the scalar part counts as the
    /// empty monomial's coefficient when present).
    pub fn max_abs_coefficient(&self) -> f64 {
        let m = self.monomials.values().fold(0.0f64, |acc, &c| acc.max(c.abs()));
        if self.constant != 0.0 {
            m.max(self.constant.abs())
        } else {
            m
        }
    }

    /// Number of monomials active at `σ` (plus one for a nonzero scalar).
    pub fn active_count(&self, sigma: &Permutation) -> usize {
        let mut count = usize::from(self.constant != 0.0);
        'mono: for m in self.monomials.keys() {
            for &(i, j) in m.iter() {
                if sigma.apply(i as usize) != j as u32 {
                    continue 'mono;
                }
            }
            count += 1;
        }
        count
    }

    /// Default bound on the active-monomial count: the total count.
    pub fn active_count_bound(&self) -> usize {
        self.monomials.len() + usize::from(self.constant != 0.0)
    }

    /// Exact `max_σ` of [`Self::active_count`], factorial in `n`.
    pub fn active_count_max(&self) -> Result<usize, PolyError> {
        if self.n > EXACT_LIMIT {
            return Err(PolyError::TooLargeForExact { max: EXACT_LIMIT, got: self.n });
        }
        Ok(Permutation::enumerate(self.n).iter().map(|s| self.active_count(s)).max().unwrap_or(0))
    }

    /// Sup norm over permutations, factorial in `n`.
    pub fn sup_norm(&self) -> Result<f64, PolyError> {
        if self.n > EXACT_LIMIT {
            return Err(PolyError::TooLargeForExact { max: EXACT_LIMIT, got: self.n });
        }
        Ok(Permutation::enumerate(self.n)
            .iter()
            .map(|s| self.evaluate(s).abs())
            .fold(0.0, f64::max))
    }

    /// Flattened representation for tight evaluation loops.
    pub fn compile(&self) -> CompiledPoly {
        let mut starts = vec![0u32];
        let mut pairs = Vec::new();
        let mut coefs = Vec::new();
        for (m, &c) in &self.monomials {
            pairs.extend_from_slice(m);
            starts.push(pairs.len() as u32);
            coefs.push(c);
        }
        CompiledPoly { n: self.n, constant: self.constant, starts, pairs, coefs }
    }
}

/// `1 / (n (n−1) … (n−k+1))`.
fn falling_inverse(n: usize, k: usize) -> f64 {
    let mut p = 1.0;
    for i in 0..k {
        p /= (n - i) as f64;
    }
    p
}

/// Size of the union of two coset constraints, `None` when inconsistent.
fn joint_size(a: &Monomial, b: &Monomial) -> Option<usize> {
    let mut union: Vec<(u16, u16)> = a.to_vec();
    for &(i, j) in b.iter() {
        let mut fresh = true;
        for &(x, y) in a.iter() {
            if x == i && y == j {
                fresh = false;
                break;
            }
            if (x == i) != (y == j) {
                return None; // same row to a different column, or vice versa
            }
        }
        if fresh {
            union.push((i, j));
        }
    }
    let mut cols: Vec<u16> = union.iter().map(|&(_, j)| j).collect();
    cols.sort_unstable();
    let mut rows: Vec<u16> = union.iter().map(|&(i, _)| i).collect();
    rows.sort_unstable();
    if cols.windows(2).any(|w| w[0] == w[1]) || rows.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some(union.len())
}

/// Flattened polynomial for batch evaluation.
#[derive(Debug, Clone)]
pub struct CompiledPoly {
    n: usize,
    constant: f64,
    starts: Vec<u32>,
    pairs: Vec<(u16, u16)>,
    coefs: Vec<f64>,
}

impl CompiledPoly {
    #[inline]
    pub fn evaluate(&self, image: &[u32]) -> f64 {
        debug_assert_eq!(image.len(), self.n);
        let mut acc = self.constant;
        for k in 0..self.coefs.len() {
            let lo = self.starts[k] as usize;
            let hi = self.starts[k + 1] as usize;
            let mut active = true;
            for &(i, j) in &self.pairs[lo..hi] {
                if image[i as usize] != j as u32 {
                    active = false;
                    break;
                }
            }
            if active {
                acc += self.coefs[k];
            }
        }
        acc
    }
}

const EXACT_LIMIT: usize = 8;

/// Smoothness constants feeding the tail bounds.
#[derive(Debug, Clone)]
pub struct ConcentrationConstants {
    pub n: usize,
    pub degree: usize,
    /// Bound on `‖D^k φ‖_∞`, `k ≤ d`.
    pub c_d: f64,
    /// Bound on `‖∇ D^k φ‖_∞`.
    pub c_d_grad: f64,
    /// Bound on `‖D^k U φ‖_∞`.
    pub c_u: f64,
    /// Largest coefficient `M(φ)`.
    pub m_coef: f64,
    /// Active-monomial bound `N(φ)`.
    pub n_count: f64,
    /// `A_φ = M(φ) N(φ)`.
    pub a_phi: f64,
    /// `A_∇φ = max_{ij} M(∂_{ij}φ) N(∂_{ij}φ)`.
    pub a_grad: f64,
    /// Exact mean of `φ`.
    pub mean: f64,
    /// Bernstein slope `β_φ = 6 d C'_D (log⁺(4 C_D n / C'_D) + κ(n))`.
    pub beta: f64,
    /// Bernstein variance proxy `γ_φ = (2β_φ/3)(2 E[φ] + C_U)`.
    pub gamma: f64,
    /// Two-sided variant slope `α_φ = 6 d 2^d A_∇φ (log⁺(4 A_φ n / A_∇φ) + κ(n))`.
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantsMode {
    /// Sup norms by factorial enumeration, `n ≤ 8`.
    Exact,
    /// Coefficient-count bounds `2^k M N` and `((d−1)/n) M N`, any `n`.
    Bounded,
}

/// `κ(n) = (2/n)(2 − e^{−2/n}) / (1 − e^{−2/n})`, the tail of the geometric
/// mixing sum; natural logarithms throughout.
fn kappa(n: usize) -> f64 {
    let x = (-2.0 / n as f64).exp();
    (2.0 / n as f64) * (2.0 - x) / (1.0 - x)
}

fn log_plus(x: f64) -> f64 {
    x.ln().max(0.0)
}

fn bernstein_slope(d: usize, numerator: f64, grad: f64, n: usize, scale: f64) -> f64 {
    if grad == 0.0 {
        return 0.0;
    }
    6.0 * d as f64 * scale * grad * (log_plus(4.0 * numerator * n as f64 / grad) + kappa(n))
}

/// Compute the constants in the requested mode. Requires nonnegative
/// coefficients: the bounds are only stated for that class.
pub fn constants(
    phi: &MultilinearPoly,
    mode: ConstantsMode,
) -> Result<ConcentrationConstants, PolyError> {
    if !phi.has_nonnegative_coefficients() {
        return Err(PolyError::SignedCoefficients);
    }
    let n = phi.n();
    let d = phi.degree().max(1);
    let mean = phi.exact_mean();
    let m_coef = phi.max_abs_coefficient();
    let n_count = phi.active_count_bound() as f64;
    let a_phi = m_coef * n_count;
    let mut a_grad: f64 = 0.0;
    for i in 0..n as u16 {
        for j in 0..n as u16 {
            let dij = phi.partial_derivative(i, j);
            if !dij.is_zero() {
                a_grad = a_grad.max(dij.max_abs_coefficient() * dij.active_count_bound() as f64);
            }
        }
    }

    let (c_d, c_d_grad, c_u) = match mode {
        ConstantsMode::Bounded => {
            let two_d = (1u64 << d) as f64;
            (two_d * a_phi, two_d * a_grad, (d as f64 - 1.0) / n as f64 * a_phi)
        }
        ConstantsMode::Exact => {
            if n > EXACT_LIMIT {
                return Err(PolyError::TooLargeForExact { max: EXACT_LIMIT, got: n });
            }
            let perms = Permutation::enumerate(n);
            let sup =
                |p: &MultilinearPoly| perms.iter().map(|s| p.evaluate(s).abs()).fold(0.0, f64::max);
            let grad_sup = |p: &MultilinearPoly| -> f64 {
                let mut best: f64 = 0.0;
                for i in 0..n as u16 {
                    for j in 0..n as u16 {
                        let dij = p.partial_derivative(i, j);
                        if !dij.is_zero() {
                            best = best.max(sup(&dij));
                        }
                    }
                }
                best
            };
            let mut c_d: f64 = 0.0;
            let mut c_d_grad: f64 = 0.0;
            let mut c_u: f64 = 0.0;
            let mut cur = phi.clone();
            let mut cur_u = phi.op_u();
            for _ in 0..=d {
                c_d = c_d.max(sup(&cur));
                c_d_grad = c_d_grad.max(grad_sup(&cur));
                c_u = c_u.max(sup(&cur_u));
                cur = cur.op_d();
                cur_u = cur_u.op_d();
            }
            (c_d, c_d_grad, c_u)
        }
    };

    let beta = bernstein_slope(d, c_d, c_d_grad, n, 1.0);
    let gamma = 2.0 * beta / 3.0 * (2.0 * mean + c_u);
    let alpha = bernstein_slope(d, a_phi, a_grad, n, (1u64 << d) as f64);
    Ok(ConcentrationConstants {
        n,
        degree: d,
        c_d,
        c_d_grad,
        c_u,
        m_coef,
        n_count,
        a_phi,
        a_grad,
        mean,
        beta,
        gamma,
        alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Upper,
    Lower,
    /// Two-sided variant driven by `α_φ` and `A_φ`.
    TwoSided,
}

/// Tail bound at deviation `t ≥ 0`, capped at 1.
pub fn tail_bound(c: &ConcentrationConstants, t: f64, side: TailSide) -> f64 {
    assert!(t >= 0.0);
    let v = match side {
        TailSide::Upper => {
            let denom = 2.0 * (c.gamma + c.beta * t);
            if denom == 0.0 {
                return if t == 0.0 { 1.0 } else { 0.0 };
            }
            (-t * t / denom).exp()
        }
        TailSide::Lower => {
            if c.gamma == 0.0 {
                return if t == 0.0 { 1.0 } else { 0.0 };
            }
            (-t * t / (2.0 * c.gamma)).exp()
        }
        TailSide::TwoSided => {
            let d = c.degree;
            let spread = 4.0 / 3.0 * c.mean
                + (1u64 << (d + 1)) as f64 * (d as f64 - 1.0) / (3.0 * c.n as f64) * c.a_phi
                + t;
            let denom = 2.0 * c.alpha * spread;
            if denom == 0.0 {
                return if t == 0.0 { 1.0 } else { 0.0 };
            }
            2.0 * (-t * t / denom).exp()
        }
    };
    v.min(1.0)
}

/// Degree-one Bernstein bound `2 exp(−t² / (2‖A‖(t + 2E[Z])))` for
/// `Z = Σ_i A_{i σ(i)}`. The raw formula value is returned (it exceeds 1
/// for small `t`).
pub fn degree_one_bound(a_max: f64, mean: f64, t: f64) -> f64 {
    assert!(t >= 0.0);
    let denom = 2.0 * a_max * (t + 2.0 * mean);
    if denom == 0.0 {
        return if t == 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * (-t * t / denom).exp()
}

/// Empirical tail estimate with an independently sampled centre.
#[derive(Debug, Clone)]
pub struct McTail {
    /// Empirical mean from the independent centring sample.
    pub e_hat: f64,
    /// Per threshold: `(t, hits, probability, wilson95)`.
    pub tails: Vec<(f64, u64, f64, (f64, f64))>,
    pub samples: u64,
}

/// Estimate `P[φ(σ) − Ê[φ] ≥ t]` for each `t`, with `Ê[φ]` taken from an
/// independent sample of the same size.
pub fn monte_carlo_tail(phi: &MultilinearPoly, ts: &[f64], samples: u64, seed: u64) -> McTail {
    assert!(samples >= 1_000, "tail estimation needs at least 1e3 samples");
    let compiled = phi.compile();
    let n = phi.n();
    let mut centre = crate::rng::stream_rng(seed, crate::rng::StreamContext::PermSample, 0);
    let mut acc = crate::stats::KahanSum::new();
    let mut image: Vec<u32> = (0..n as u32).collect();
    for _ in 0..samples {
        image.shuffle(&mut centre);
        acc.add(compiled.evaluate(&image));
    }
    let e_hat = acc.value() / samples as f64;

    let mut hits = vec![0u64; ts.len()];
    let mut tail_rng = crate::rng::stream_rng(seed, crate::rng::StreamContext::McTail, 0);
    for _ in 0..samples {
        image.shuffle(&mut tail_rng);
        let v = compiled.evaluate(&image);
        for (k, &t) in ts.iter().enumerate() {
            if v - e_hat >= t {
                hits[k] += 1;
            }
        }
    }
    let tails = ts
        .iter()
        .zip(&hits)
        .map(|(&t, &h)| (t, h, h as f64 / samples as f64, wilson_ci(h, samples, 1.96)))
        .collect();
    McTail { e_hat, tails, samples }
}

/// Upper-tail hit counts for a battery of polynomials over one shared
/// permutation pool: `thresholds[p]` holds absolute cutoffs for polynomial
/// `p`; returns hits per polynomial per cutoff. Replicas are fanned out in
/// fixed chunks so the counts are independent of thread count.
pub fn batch_tail_counts(
    polys: &[&MultilinearPoly],
    thresholds: &[Vec<f64>],
    samples: u64,
    seed: u64,
    threads: usize,
) -> Vec<Vec<u64>> {
    assert_eq!(polys.len(), thresholds.len());
    let n = polys.first().map(|p| p.n()).unwrap_or(0);
    assert!(polys.iter().all(|p| p.n() == n));
    let compiled: Vec<CompiledPoly> = polys.iter().map(|p| p.compile()).collect();
    let chunk = 8_192u64;
    let chunks = samples.div_ceil(chunk);
    let partials = crate::parallel::map_replicas(chunks as usize, threads, |c| {
        let lo = c as u64 * chunk;
        let hi = (lo + chunk).min(samples);
        let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamContext::McTail, c as u64 + 1);
        let mut image: Vec<u32> = (0..n as u32).collect();
        let mut hits: Vec<Vec<u64>> = thresholds.iter().map(|ts| vec![0u64; ts.len()]).collect();
        for _ in lo..hi {
            image.shuffle(&mut rng);
            for (p, cp) in compiled.iter().enumerate() {
                let v = cp.evaluate(&image);
                for (k, &cut) in thresholds[p].iter().enumerate() {
                    if v >= cut {
                        hits[p][k] += 1;
                    }
                }
            }
        }
        hits
    });
    let mut total: Vec<Vec<u64>> = thresholds.iter().map(|ts| vec![0u64; ts.len()]).collect();
    for part in partials {
        for (p, row) in part.into_iter().enumerate() {
            for (k, h) in row.into_iter().enumerate() {
                total[p][k] += h;
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Exchangeable-pair algebra
// ---------------------------------------------------------------------------

/// Residual of the transposition expansion at `(σ, τ = (i j))`:
/// `φ(στ) − [φ + ∂_{iσ(j)}φ + ∂_{jσ(i)}φ − ∂_{iσ(i)}φ − ∂_{jσ(j)}φ
///   + ∂²_{iσ(i),jσ(j)}φ + ∂²_{iσ(j),jσ(i)}φ](σ)`,
/// with standard mixed partials (the tensor-calculus form writes the last
/// two terms as `2∂²` under its half-per-ordering convention).
pub fn exchange_residual(phi: &MultilinearPoly, sigma: &Permutation, i: usize, j: usize) -> f64 {
    let si = sigma.apply(i) as u16;
    let sj = sigma.apply(j) as u16;
    let (i16, j16) = (i as u16, j as u16);
    let lhs = phi.evaluate(&sigma.compose_transposition(i, j));
    let rhs = phi.evaluate(sigma)
        + phi.partial_derivative(i16, sj).evaluate(sigma)
        + phi.partial_derivative(j16, si).evaluate(sigma)
        - phi.partial_derivative(i16, si).evaluate(sigma)
        - phi.partial_derivative(j16, sj).evaluate(sigma)
        + phi.second_partial((i16, si), (j16, sj)).evaluate(sigma)
        + phi.second_partial((i16, sj), (j16, si)).evaluate(sigma);
    lhs - rhs
}

/// Residual of the conditional-difference identity for homogeneous `φ` of
/// degree `d` at `σ`:
/// `(n/2d) E_{I,J}[φ(σ) − φ(στ)] = (1 − (d−1)/(2n)) φ(σ) − Dφ(σ) − Uφ(σ)`,
/// the expectation running over all `n²` ordered pairs (identity included).
pub fn conditional_residual(phi: &MultilinearPoly, sigma: &Permutation) -> f64 {
    let n = phi.n();
    let d = phi.degree();
    assert!(d >= 1, "identity needs a non-constant polynomial");
    debug_assert!(
        phi.iter_terms().all(|(m, _)| m.len() == d),
        "identity holds per homogeneous component"
    );
    let base = phi.evaluate(sigma);
    let mut acc = crate::stats::KahanSum::new();
    for i in 0..n {
        for j in 0..n {
            acc.add(base - phi.evaluate(&sigma.compose_transposition(i, j)));
        }
    }
    let lhs = n as f64 / (2.0 * d as f64) * acc.value() / (n * n) as f64;
    let rhs = (1.0 - (d as f64 - 1.0) / (2.0 * n as f64)) * base
        - phi.op_d().evaluate(sigma)
        - phi.op_u().evaluate(sigma);
    lhs - rhs
}

/// Residual of the homogeneous reconstruction
/// `φ(σ) = (1/d) Σ_i ∂_{i,σ(i)} φ(σ)`.
pub fn euler_residual(phi: &MultilinearPoly, sigma: &Permutation) -> f64 {
    let d = phi.degree();
    assert!(d >= 1);
    let mut acc = crate::stats::KahanSum::new();
    for i in 0..phi.n() {
        acc.add(phi.partial_derivative(i as u16, sigma.apply(i) as u16).evaluate(sigma));
    }
    phi.evaluate(sigma) - acc.value() / d as f64
}

/// Random homogeneous polynomial with nonnegative coefficients: `monomials`
/// draws of `degree` disjoint row and column indices.
pub fn random_nonneg_poly<R: Rng>(
    n: usize,
    degree: usize,
    monomials: usize,
    rng: &mut R,
) -> MultilinearPoly {
    assert!(degree <= n);
    let mut terms = Vec::with_capacity(monomials);
    let mut rows: Vec<u16> = (0..n as u16).collect();
    let mut cols: Vec<u16> = (0..n as u16).collect();
    for _ in 0..monomials {
        rows.shuffle(rng);
        cols.shuffle(rng);
        let pairs: Vec<(u16, u16)> =
            rows[..degree].iter().zip(&cols[..degree]).map(|(&r, &c)| (r, c)).collect();
        terms.push((pairs, rng.gen_range(0.1..1.0)));
    }
    MultilinearPoly::new(n, terms).0
}

// ---------------------------------------------------------------------------
// File format: `coef (i1,j1) (i2,j2) ...`, 1-based indices
// ---------------------------------------------------------------------------

pub fn parse_poly(n: usize, text: &str) -> Result<MultilinearPoly, PolyError> {
    let mut terms = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let mut it = s.split_whitespace();
        let coef: f64 = it
            .next()
            .unwrap()
            .parse()
            .map_err(|_| PolyError::Parse { line, msg: "bad coefficient".to_string() })?;
        let mut pairs = Vec::new();
        for tok in it {
            let inner = tok
                .strip_prefix('(')
                .and_then(|t| t.strip_suffix(')'))
                .ok_or_else(|| PolyError::Parse { line, msg: format!("bad pair {tok}") })?;
            let (a, b) = inner
                .split_once(',')
                .ok_or_else(|| PolyError::Parse { line, msg: format!("bad pair {tok}") })?;
            let i: u16 =
                a.parse().map_err(|_| PolyError::Parse { line, msg: format!("bad index {a}") })?;
            let j: u16 =
                b.parse().map_err(|_| PolyError::Parse { line, msg: format!("bad index {b}") })?;
            if i == 0 || j == 0 || i as usize > n || j as usize > n {
                return Err(PolyError::Parse { line, msg: format!("index out of range in {tok}") });
            }
            pairs.push((i - 1, j - 1));
        }
        terms.push((pairs, coef));
    }
    Ok(MultilinearPoly::new(n, terms).0)
}

pub fn write_poly(phi: &MultilinearPoly) -> String {
    let mut out = String::new();
    for (m, c) in phi.iter_terms() {
        out.push_str(&format!("{c}"));
        for &(i, j) in m {
            out.push_str(&format!(" ({},{})", i + 1, j + 1));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, StreamContext};

    fn poly(n: usize, terms: &[(&[(u16, u16)], f64)]) -> MultilinearPoly {
        MultilinearPoly::new(n, terms.iter().map(|&(m, c)| (m.to_vec(), c))).0
    }

    #[test]
    fn evaluate_diagonal_of_target_permutation() {
        let mut rng = stream_rng(1, StreamContext::PermSample, 0);
        let n = 7;
        let sigma = Permutation::uniform(n, &mut rng);
        let terms: Vec<(Vec<(u16, u16)>, f64)> =
            (0..n).map(|i| (vec![(i as u16, sigma.apply(i) as u16)], 1.0)).collect();
        let phi = MultilinearPoly::new(n, terms).0;
        assert_eq!(phi.evaluate(&sigma), n as f64);
    }

    #[test]
    fn fixed_point_counter_on_three_cycle() {
        let phi = MultilinearPoly::fixed_point_counter(3);
        let cycle = Permutation::new(vec![1, 2, 0]).unwrap();
        assert_eq!(phi.evaluate(&cycle), 0.0);
        assert_eq!(phi.evaluate(&Permutation::identity(3)), 3.0);
    }

    #[test]
    fn evaluate_matches_term_oracle_exhaustively() {
        let mut rng = stream_rng(2, StreamContext::PermSample, 0);
        let phi = random_nonneg_poly(6, 3, 12, &mut rng);
        let compiled = phi.compile();
        for sigma in Permutation::enumerate(6) {
            let mut expect = 0.0;
            for (m, c) in phi.iter_terms() {
                if m.iter().all(|&(i, j)| sigma.apply(i as usize) == j as u32) {
                    expect += c;
                }
            }
            assert!((phi.evaluate(&sigma) - expect).abs() < 1e-12);
            let image: Vec<u32> = (0..6).map(|i| sigma.apply(i)).collect();
            assert!((compiled.evaluate(&image) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn multilinearity_violations_dropped() {
        let (phi, dropped) = MultilinearPoly::new(
            3,
            vec![
                (vec![(0, 1), (0, 2)], 1.0), // repeated row
                (vec![(1, 0), (2, 0)], 1.0), // repeated column
                (vec![(0, 1), (1, 0)], 2.0),
            ],
        );
        assert_eq!(dropped, 2);
        assert_eq!(phi.monomial_count(), 1);
    }

    #[test]
    fn partial_derivative_examples() {
        let phi = poly(2, &[(&[(0, 1), (1, 0)], 1.0)]);
        let d01 = phi.partial_derivative(0, 1);
        assert_eq!(d01.monomial_count(), 1);
        assert_eq!(d01.iter_terms().next().unwrap().0, &[(1u16, 0u16)][..]);
        assert!(phi.partial_derivative(0, 0).is_zero());
    }

    #[test]
    fn partial_derivative_is_exact_entry_slope() {
        let mut rng = stream_rng(3, StreamContext::PermSample, 1);
        let phi = random_nonneg_poly(5, 3, 8, &mut rng);
        for trial in 0..5 {
            let m: Vec<f64> =
                (0..25).map(|k| ((trial * 31 + k * 7) % 11) as f64 / 3.0 - 1.0).collect();
            for i in 0..5u16 {
                for j in 0..5u16 {
                    let mut bumped = m.clone();
                    bumped[i as usize * 5 + j as usize] += 1.0;
                    let slope = phi.evaluate_matrix(&bumped) - phi.evaluate_matrix(&m);
                    let deriv = phi.partial_derivative(i, j).evaluate_matrix(&m);
                    assert!((slope - deriv).abs() < 1e-9, "entry ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn op_d_examples() {
        // degree-1 all-ones over n = 3: D collapses to the scalar 3
        let ones = MultilinearPoly::linear(3, &[1.0; 9]);
        let d = ones.op_d();
        assert_eq!(d.monomial_count(), 0);
        assert!((d.constant() - 3.0).abs() < 1e-15);

        // D(X12 X21) over n = 2 is (1/4)(X21 + X12)
        let phi = poly(2, &[(&[(0, 1), (1, 0)], 1.0)]);
        let d = phi.op_d();
        assert_eq!(d.monomial_count(), 2);
        for (_, c) in d.iter_terms() {
            assert!((c - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn op_d_mean_recursion_by_enumeration() {
        let mut rng = stream_rng(4, StreamContext::PermSample, 2);
        let n = 5;
        let phi = random_nonneg_poly(n, 2, 6, &mut rng);
        let d = phi.op_d();
        let perms = Permutation::enumerate(n);
        let mean =
            |p: &MultilinearPoly| perms.iter().map(|s| p.evaluate(s)).sum::<f64>() / perms.len() as f64;
        let expect = (1.0 - 1.0 / n as f64) * mean(&phi);
        assert!((mean(&d) - expect).abs() < 1e-12);
        // and the closed-form mean agrees with enumeration
        assert!((phi.exact_mean() - mean(&phi)).abs() < 1e-12);
    }

    #[test]
    fn op_u_examples() {
        let lin = MultilinearPoly::linear(3, &[0.3; 9]);
        assert!(lin.op_u().is_zero());

        let phi = poly(2, &[(&[(0, 1), (1, 0)], 1.0)]);
        let u = phi.op_u();
        assert_eq!(u.monomial_count(), 1);
        let (m, c) = u.iter_terms().next().unwrap();
        assert_eq!(m, &[(0u16, 0u16), (1, 1)][..]);
        assert!((c - 0.25).abs() < 1e-15);
    }

    #[test]
    fn op_u_sup_bound_from_coefficients() {
        let mut rng = stream_rng(5, StreamContext::PermSample, 3);
        for trial in 0..10u64 {
            let n = 4 + (trial % 3) as usize;
            let d = 2 + (trial % 2) as usize;
            let phi = random_nonneg_poly(n, d, 6, &mut rng);
            let u = phi.op_u();
            let sup = u.sup_norm().unwrap();
            let bound = (phi.degree() as f64 - 1.0) / n as f64
                * phi.max_abs_coefficient()
                * phi.active_count_max().unwrap() as f64;
            assert!(sup <= bound + 1e-12, "trial {trial}: sup {sup} bound {bound}");
        }
    }

    #[test]
    fn constants_degree_one_recovers_matrix_norm() {
        let mut a = vec![0.0; 16];
        for (k, v) in a.iter_mut().enumerate() {
            *v = ((k * 13) % 7) as f64 / 7.0 + 0.1;
        }
        let phi = MultilinearPoly::linear(4, &a);
        let exact = constants(&phi, ConstantsMode::Exact).unwrap();
        let max_entry = a.iter().cloned().fold(0.0, f64::max);
        assert!((exact.c_d_grad - max_entry).abs() < 1e-12);
        assert!(exact.c_u == 0.0);

        // all-ones degree-1 over n = 4: M = 1, N = 4, bound 8 vs exact 4
        let ones = MultilinearPoly::fixed_point_counter(4);
        let b = constants(&ones, ConstantsMode::Bounded).unwrap();
        assert_eq!(b.m_coef, 1.0);
        assert_eq!(b.n_count, 4.0);
        assert_eq!(b.c_d, 8.0);
        let e = constants(&ones, ConstantsMode::Exact).unwrap();
        assert_eq!(e.c_d, 4.0);
    }

    #[test]
    fn bounded_mode_dominates_exact_mode() {
        let mut rng = stream_rng(6, StreamContext::PermSample, 4);
        for trial in 0..8u64 {
            let phi = random_nonneg_poly(5, 2, 5, &mut rng);
            let e = constants(&phi, ConstantsMode::Exact).unwrap();
            let b = constants(&phi, ConstantsMode::Bounded).unwrap();
            assert!(b.c_d >= e.c_d - 1e-12, "trial {trial}");
            assert!(b.c_d_grad >= e.c_d_grad - 1e-12, "trial {trial}");
            assert!(b.c_u >= e.c_u - 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn signed_polynomials_refused_by_constants() {
        let phi = poly(3, &[(&[(0, 0)], -1.0)]);
        assert_eq!(
            constants(&phi, ConstantsMode::Bounded).unwrap_err(),
            PolyError::SignedCoefficients
        );
        // evaluation still works
        assert_eq!(phi.evaluate(&Permutation::identity(3)), -1.0);
    }

    #[test]
    fn tail_bound_shape() {
        let phi = MultilinearPoly::fixed_point_counter(6);
        let c = constants(&phi, ConstantsMode::Bounded).unwrap();
        assert_eq!(tail_bound(&c, 0.0, TailSide::Upper), 1.0);
        let grid: Vec<f64> = (0..20).map(|k| k as f64 / 2.0).collect();
        let mut prev = f64::INFINITY;
        for &t in &grid {
            let b = tail_bound(&c, t, TailSide::Upper);
            assert!(b <= prev + 1e-15);
            prev = b;
        }
        // degree-1 comparison at A = identity, E[Z] = 1, t = 2
        let b = degree_one_bound(1.0, 1.0, 2.0);
        assert!((b - 2.0 * (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_tail_centres_near_one() {
        let phi = MultilinearPoly::fixed_point_counter(100);
        let mc = monte_carlo_tail(&phi, &[4.0], 20_000, 9);
        // E[fixed points] = 1, sd = 1: centring sample within ~4.5 sigma
        assert!((mc.e_hat - 1.0).abs() < 4.5 / (20_000f64).sqrt());
        let (_, _, p4, _) = mc.tails[0];
        let bound = degree_one_bound(1.0, 1.0, 4.0);
        assert!(p4 <= bound);
    }

    #[test]
    fn single_monomial_tail_matches_counting_oracle() {
        let phi = poly(6, &[(&[(0, 1)], 1.0)]);
        let mc = monte_carlo_tail(&phi, &[0.5], 50_000, 10);
        let exact = 1.0 / 6.0; // P[σ(0) = 1]
        let (_, _, p, ci) = mc.tails[0];
        assert!(ci.0 <= exact && exact <= ci.1, "p = {p}, ci = {ci:?}");
    }

    #[test]
    fn batch_counts_agree_with_direct_estimates() {
        let phi = MultilinearPoly::fixed_point_counter(30);
        let e = phi.exact_mean();
        let cuts = vec![vec![e + 2.0, e + 4.0]];
        let a = batch_tail_counts(&[&phi], &cuts, 30_000, 5, 1);
        let b = batch_tail_counts(&[&phi], &cuts, 30_000, 5, 3);
        assert_eq!(a, b, "thread count must not change counts");
    }

    #[test]
    fn exchange_identity_exhaustive_n4() {
        let mut rng = stream_rng(7, StreamContext::PermSample, 5);
        let phi = random_nonneg_poly(4, 2, 5, &mut rng);
        let mut worst: f64 = 0.0;
        for sigma in Permutation::enumerate(4) {
            for i in 0..4 {
                for j in 0..4 {
                    worst = worst.max(exchange_residual(&phi, &sigma, i, j).abs());
                }
            }
        }
        assert!(worst < 1e-12, "max residual {worst}");
    }

    #[test]
    fn exchange_identity_randomized_degree3() {
        let mut rng = stream_rng(8, StreamContext::PermSample, 6);
        let phi = random_nonneg_poly(5, 3, 7, &mut rng);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let sigma = Permutation::uniform(5, &mut rng);
            let i = rng.gen_range(0..5);
            let j = rng.gen_range(0..5);
            worst = worst.max(exchange_residual(&phi, &sigma, i, j).abs());
        }
        assert!(worst < 1e-10, "max residual {worst}");
    }

    #[test]
    fn conditional_identity_cases() {
        // degree 1: U vanishes and the identity closes exactly
        let lin = MultilinearPoly::fixed_point_counter(4);
        for sigma in Permutation::enumerate(4) {
            assert!(conditional_residual(&lin, &sigma).abs() < 1e-12);
        }
        // the two-state degree-2 polynomial at both permutations
        let phi = poly(2, &[(&[(0, 1), (1, 0)], 1.0)]);
        for sigma in Permutation::enumerate(2) {
            assert!(conditional_residual(&phi, &sigma).abs() < 1e-12);
        }
        // random homogeneous instance
        let mut rng = stream_rng(9, StreamContext::PermSample, 7);
        let phi = random_nonneg_poly(5, 3, 6, &mut rng);
        for _ in 0..20 {
            let sigma = Permutation::uniform(5, &mut rng);
            assert!(conditional_residual(&phi, &sigma).abs() < 1e-12);
            assert!(euler_residual(&phi, &sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_norms_never_grow() {
        let mut rng = stream_rng(10, StreamContext::PermSample, 8);
        for trial in 0..6u64 {
            let n = 4 + (trial % 3) as usize;
            let phi = random_nonneg_poly(n, 1 + (trial % 3) as usize, 6, &mut rng);
            let sup = phi.sup_norm().unwrap();
            for i in 0..n as u16 {
                for j in 0..n as u16 {
                    let d = phi.partial_derivative(i, j);
                    assert!(d.sup_norm().unwrap() <= sup + 1e-12);
                }
            }
        }
    }

    #[test]
    fn poly_file_roundtrip() {
        let mut rng = stream_rng(11, StreamContext::PermSample, 9);
        let phi = random_nonneg_poly(6, 2, 5, &mut rng);
        let text = write_poly(&phi);
        let back = parse_poly(6, &text).unwrap();
        assert_eq!(phi, back);
    }
}
