//! Generic Markov renewal processes on a finite state space with bounded,
//! tabulated holding-time kernels: simulation, law-of-large-numbers
//! diagnostics, shift-coupling of the time coordinate, exact renewal
//! distributions through the auxiliary waiting-time chain, pseudo spectral
//! gaps and the correlation-aware variance bound.

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::stats::{mean, sample_std, wilson_ci, KahanSum};

#[derive(Debug, Error, PartialEq)]
pub enum RenewalError {
    #[error("row {state} has total mass {mass}, outside (1-1e-9, 1]")]
    BadRow { state: usize, mass: f64 },
    #[error("truncated mass hit while sampling from state {0}")]
    TruncationExhausted(usize),
    #[error("no overlap between consecutive holding times (alpha = 0)")]
    ZeroAlpha,
    #[error("measure is not stationary for the kernel (residual {0})")]
    NotStationary(f64),
    #[error("state {state} observed only {count} times, need at least {need}")]
    InsufficientSamples { state: usize, count: usize, need: usize },
}

/// Markov renewal process `(Y_k, T_k)` with holding-time kernels
/// `Q_t(x, y) = P[Y_1 = y, T_1 = t | Y_0 = x]` tabulated for
/// `t ∈ [1, t_max]`. Rows may fall short of full mass by at most `1e-9`
/// (truncation); the shortfall is carried explicitly and treated as an
/// absorbing defect in exact computations.
#[derive(Debug, Clone)]
pub struct MarkovRenewalProcess {
    states: usize,
    t_max: usize,
    /// `q[(x * t_max + (t-1)) * states + y]`
    q: Vec<f64>,
    shortfall: Vec<f64>,
}

impl MarkovRenewalProcess {
    pub fn new(states: usize, t_max: usize, entries: &[(usize, usize, usize, f64)]) -> Result<Self, RenewalError> {
        let mut q = vec![0.0; states * t_max * states];
        for &(x, t, y, p) in entries {
            assert!(t >= 1 && t <= t_max && x < states && y < states && p >= 0.0);
            q[(x * t_max + (t - 1)) * states + y] += p;
        }
        let mut shortfall = vec![0.0; states];
        for x in 0..states {
            let mass: f64 = q[x * t_max * states..(x + 1) * t_max * states].iter().sum();
            if mass > 1.0 + 1e-12 || mass <= 1.0 - 1e-9 {
                return Err(RenewalError::BadRow { state: x, mass });
            }
            shortfall[x] = (1.0 - mass).max(0.0);
        }
        Ok(Self { states, t_max, q, shortfall })
    }

    /// Product-form helper: `Q_t(x,y) = K(x,y) g_x(t)` for a state kernel
    /// `K` (row-major) and per-state gap laws.
    pub fn product_form(k: &[Vec<f64>], gaps: &[Vec<f64>]) -> Result<Self, RenewalError> {
        let states = k.len();
        let t_max = gaps.iter().map(|g| g.len()).max().unwrap();
        let mut entries = Vec::new();
        for x in 0..states {
            for (ti, &g) in gaps[x].iter().enumerate() {
                for y in 0..states {
                    if k[x][y] > 0.0 && g > 0.0 {
                        entries.push((x, ti + 1, y, k[x][y] * g));
                    }
                }
            }
        }
        Self::new(states, t_max, &entries)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    #[inline]
    pub fn q_t(&self, x: usize, t: usize, y: usize) -> f64 {
        if t == 0 || t > self.t_max {
            return 0.0;
        }
        self.q[(x * self.t_max + (t - 1)) * self.states + y]
    }

    pub fn shortfall(&self, x: usize) -> f64 {
        self.shortfall[x]
    }

    /// Embedded state kernel `Q = Σ_t Q_t` (row-major dense).
    pub fn state_kernel(&self) -> Vec<f64> {
        let n = self.states;
        let mut k = vec![0.0; n * n];
        for x in 0..n {
            for t in 1..=self.t_max {
                for y in 0..n {
                    k[x * n + y] += self.q_t(x, t, y);
                }
            }
        }
        k
    }

    /// Stationary distribution of the embedded chain by dense eigensolve
    /// (shortfall renormalised away).
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.states;
        let mut k = self.state_kernel();
        for x in 0..n {
            let s: f64 = k[x * n..(x + 1) * n].iter().sum();
            for v in &mut k[x * n..(x + 1) * n] {
                *v /= s;
            }
        }
        stationary_of_kernel(&k, n)
    }

    /// `E_x[T_1]`.
    pub fn mean_holding(&self, x: usize) -> f64 {
        let mut m = 0.0;
        for t in 1..=self.t_max {
            for y in 0..self.states {
                m += t as f64 * self.q_t(x, t, y);
            }
        }
        m
    }

    /// `E_μ[T_1]` and `Var_μ[T_1]` under the stationary embedded chain.
    pub fn stationary_holding_moments(&self) -> (f64, f64) {
        let mu = self.stationary();
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for x in 0..self.states {
            for t in 1..=self.t_max {
                for y in 0..self.states {
                    let p = mu[x] * self.q_t(x, t, y);
                    m1 += t as f64 * p;
                    m2 += (t * t) as f64 * p;
                }
            }
        }
        (m1, m2 - m1 * m1)
    }

    /// Consecutive-holding-time overlap
    /// `α = min_x Σ_{t,y} Q_t(x,y) ∧ Q_{t+1}(x,y)`.
    pub fn alpha_overlap(&self) -> f64 {
        (0..self.states)
            .map(|x| {
                let mut s = 0.0;
                for t in 1..=self.t_max {
                    for y in 0..self.states {
                        s += self.q_t(x, t, y).min(self.q_t(x, t + 1, y));
                    }
                }
                s
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn sample_step<R: Rng>(&self, x: usize, rng: &mut R) -> Result<(usize, usize), RenewalError> {
        let mut u: f64 = rng.gen();
        for t in 1..=self.t_max {
            for y in 0..self.states {
                u -= self.q_t(x, t, y);
                if u < 0.0 {
                    return Ok((y, t));
                }
            }
        }
        Err(RenewalError::TruncationExhausted(x))
    }
}

/// Left stationary distribution of a dense row-stochastic kernel.
pub fn stationary_of_kernel(k: &[f64], n: usize) -> Vec<f64> {
    // power iteration is enough at these sizes and avoids complex eigenpairs
    let mut mu = vec![1.0 / n as f64; n];
    for _ in 0..20_000 {
        let mut next = vec![0.0; n];
        for x in 0..n {
            for y in 0..n {
                next[y] += mu[x] * k[x * n + y];
            }
        }
        let diff: f64 = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        mu = next;
        if diff < 1e-15 {
            break;
        }
    }
    let s: f64 = mu.iter().sum();
    mu.iter().map(|v| v / s).collect()
}

/// Simulate `k` renewal steps from `(y0, T_0 = 0)`.
pub fn simulate_mrp<R: Rng>(
    mrp: &MarkovRenewalProcess,
    y0: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<(usize, u64)>, RenewalError> {
    let mut out = Vec::with_capacity(k);
    let mut y = y0;
    let mut t = 0u64;
    for _ in 0..k {
        let (ny, dt) = mrp.sample_step(y, rng)?;
        y = ny;
        t += dt as u64;
        out.push((y, t));
    }
    Ok(out)
}

/// Law-of-large-numbers diagnostics: `T_k/k` against `E_μ[T_1]` and
/// `N_t/t` against `1/E_μ[T_1]`.
#[derive(Debug, Clone)]
pub struct LlnReport {
    pub e_mu_t1: f64,
    pub mean_tk_over_k: f64,
    pub z_tk: f64,
    pub mean_nt_over_t: f64,
    pub z_nt: f64,
    pub samples: u64,
}

pub fn lln_check(mrp: &MarkovRenewalProcess, k: usize, samples: u64, seed: u64) -> Result<LlnReport, RenewalError> {
    let mu = mrp.stationary();
    let (e_t1, _) = mrp.stationary_holding_moments();
    let horizon = (k as f64 * e_t1).ceil() as u64;
    let mut tk = Vec::with_capacity(samples as usize);
    let mut nt = Vec::with_capacity(samples as usize);
    for rep in 0..samples {
        let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamContext::Renewal, rep);
        let y0 = sample_from(&mu, &mut rng);
        let path = simulate_mrp(mrp, y0, 2 * k, &mut rng)?;
        tk.push(path[k - 1].1 as f64 / k as f64);
        let n = path.iter().take_while(|&&(_, t)| t <= horizon).count();
        // N_t and T_k inverse consistency is structural: T_{N_t} ≤ t < T_{N_t+1}
        debug_assert!(path[n.saturating_sub(1)].1 <= horizon);
        debug_assert!(n == path.len() || path[n].1 > horizon);
        nt.push(n as f64 / horizon as f64);
    }
    let (m_tk, se_tk) = crate::stats::mean_se(&tk);
    let (m_nt, se_nt) = crate::stats::mean_se(&nt);
    Ok(LlnReport {
        e_mu_t1: e_t1,
        mean_tk_over_k: m_tk,
        z_tk: (m_tk - e_t1) / se_tk,
        mean_nt_over_t: m_nt,
        z_nt: (m_nt - 1.0 / e_t1) / se_nt,
        samples,
    })
}

fn sample_from<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.gen();
    for (i, &w) in p.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    p.len() - 1
}

/// Shift coupling of two copies of the process: the chains first meet in
/// the `Y` coordinate (independent evolution), then evolve jointly with the
/// consecutive-holding-time overlap split evenly over the two shifted
/// branches, so the time lag performs a lazy symmetric walk until it hits
/// zero. Returns the first step index at which `(Y, T)` coincide.
pub fn mineka_couple<R: Rng>(
    mrp: &MarkovRenewalProcess,
    start1: (usize, u64),
    start2: (usize, u64),
    k_max: usize,
    rng: &mut R,
) -> Result<Option<usize>, RenewalError> {
    if mrp.alpha_overlap() <= 0.0 {
        return Err(RenewalError::ZeroAlpha);
    }
    let (mut y1, mut t1) = start1;
    let (mut y2, mut t2) = start2;
    if y1 == y2 && t1 == t2 {
        return Ok(Some(0));
    }
    for k in 1..=k_max {
        if y1 != y2 {
            let (ny1, dt1) = mrp.sample_step(y1, rng)?;
            let (ny2, dt2) = mrp.sample_step(y2, rng)?;
            y1 = ny1;
            t1 += dt1 as u64;
            y2 = ny2;
            t2 += dt2 as u64;
        } else {
            // joint draw: (y, s, s') with the halved-overlap branch law
            let x = y1;
            let mut u: f64 = rng.gen();
            let mut drawn = None;
            'draw: for t in 1..=mrp.t_max + 1 {
                for y in 0..mrp.states {
                    let qt = mrp.q_t(x, t, y);
                    let zeta_prev = 0.5 * mrp.q_t(x, t - 1, y).min(qt);
                    let zeta_cur = 0.5 * qt.min(mrp.q_t(x, t + 1, y));
                    // branch (t-1, t)
                    u -= zeta_prev;
                    if u < 0.0 {
                        drawn = Some((y, t as u64 - 1, t as u64));
                        break 'draw;
                    }
                    // branch (t, t-1)
                    u -= zeta_prev;
                    if u < 0.0 {
                        drawn = Some((y, t as u64, t as u64 - 1));
                        break 'draw;
                    }
                    // diagonal branch
                    u -= qt - zeta_prev - zeta_cur;
                    if u < 0.0 {
                        drawn = Some((y, t as u64, t as u64));
                        break 'draw;
                    }
                }
            }
            let (y, s1, s2) = drawn.ok_or(RenewalError::TruncationExhausted(x))?;
            y1 = y;
            y2 = y;
            t1 += s1;
            t2 += s2;
        }
        if y1 == y2 && t1 == t2 {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Exact renewal probabilities `u_t(ν, y) = P_ν[∃k: Y_k = y, T_k = t]`,
/// computed by evolving the auxiliary chain on states × waiting-time with
/// the truncation shortfall sent to an absorbing defect. The initial law is
/// given as `(state, delay, probability)` triples, delay 0 meaning a
/// renewal at time 0.
pub fn renewal_distribution_exact(
    mrp: &MarkovRenewalProcess,
    initial: &[(usize, usize, f64)],
    t_horizon: usize,
) -> Vec<Vec<f64>> {
    let n = mrp.states;
    let w = mrp.t_max; // waiting times 0..t_max-1 are reachable
    let dead = n * w;
    let mut cur = vec![0.0; n * w + 1];
    for &(y, delay, p) in initial {
        assert!(delay < w, "initial delay exceeds the kernel horizon");
        cur[y * w + delay] += p;
    }
    let mut tables = Vec::with_capacity(t_horizon + 1);
    for _ in 0..=t_horizon {
        tables.push((0..n).map(|y| cur[y * w]).collect::<Vec<f64>>());
        let mut next = vec![0.0; n * w + 1];
        next[dead] = cur[dead];
        for x in 0..n {
            for s in 0..w {
                let mass = cur[x * w + s];
                if mass == 0.0 {
                    continue;
                }
                if s > 0 {
                    next[x * w + s - 1] += mass;
                } else {
                    for t in 1..=mrp.t_max {
                        for y in 0..n {
                            next[y * w + t - 1] += mass * mrp.q_t(x, t, y);
                        }
                    }
                    next[dead] += mass * mrp.shortfall[x];
                }
            }
        }
        cur = next;
    }
    tables
}

/// Spectral gap report for a finite kernel with stationary measure `μ`.
#[derive(Debug, Clone)]
pub struct GapReport {
    /// Absolute spectral gap of the kernel itself.
    pub gamma: f64,
    /// `max_k γ((Q*)^k Q^k)/k`.
    pub gamma_ps: f64,
    /// Maximising `k`.
    pub k_star: usize,
}

/// Pseudo spectral gap of a dense row-stochastic `kernel` with stationary
/// `mu`, scanning `k ≤ k_max` (default `2·|S|` when `k_max = 0`).
pub fn pseudo_spectral_gap(kernel: &[f64], mu: &[f64], k_max: usize) -> Result<GapReport, RenewalError> {
    let n = mu.len();
    assert_eq!(kernel.len(), n * n);
    // stationarity check
    let mut resid: f64 = 0.0;
    for y in 0..n {
        let mut s = 0.0;
        for x in 0..n {
            s += mu[x] * kernel[x * n + y];
        }
        resid = resid.max((s - mu[y]).abs());
    }
    if resid > 1e-9 {
        return Err(RenewalError::NotStationary(resid));
    }
    let k_max = if k_max == 0 { 2 * n } else { k_max };

    let q = DMatrix::from_row_slice(n, n, kernel);
    // adjoint in ℓ²(μ): Q*(x,y) = μ(y) Q(y,x) / μ(x)
    let mut qs = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            qs[(x, y)] = mu[y] * q[(y, x)] / mu[x];
        }
    }

    let gamma = 1.0 - subdominant_modulus(&q, mu);
    let mut gamma_ps: f64 = 0.0;
    let mut k_star = 1;
    let mut qk = DMatrix::identity(n, n);
    let mut qsk = DMatrix::identity(n, n);
    for k in 1..=k_max {
        qk = &qk * &q;
        qsk = &qsk * &qs;
        let m = &qsk * &qk;
        let g = 1.0 - subdominant_modulus(&m, mu);
        if g / k as f64 > gamma_ps {
            gamma_ps = g / k as f64;
            k_star = k;
        }
    }
    Ok(GapReport { gamma, gamma_ps, k_star })
}

/// Largest modulus among non-unit eigenvalues, deflating the stationary
/// eigenpair explicitly: the matrix `M − 𝟙μ` has the remaining spectrum.
fn subdominant_modulus(m: &DMatrix<f64>, mu: &[f64]) -> f64 {
    let n = mu.len();
    let mut deflated = m.clone();
    for x in 0..n {
        for y in 0..n {
            deflated[(x, y)] -= mu[y];
        }
    }
    deflated.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max).min(1.0)
}

/// Empirical check of `Var_μ[T_k] ≤ (6/γ_ps) k Var_μ[T_1]`.
#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub k: usize,
    pub empirical_var: f64,
    pub var_se: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn variance_bound_check(
    mrp: &MarkovRenewalProcess,
    ks: &[usize],
    samples: u64,
    seed: u64,
) -> Result<Vec<VarianceReport>, RenewalError> {
    let mu = mrp.stationary();
    let (_, var_t1) = mrp.stationary_holding_moments();
    let kernel = {
        let n = mrp.states;
        let mut k = mrp.state_kernel();
        for x in 0..n {
            let s: f64 = k[x * n..(x + 1) * n].iter().sum();
            for v in &mut k[x * n..(x + 1) * n] {
                *v /= s;
            }
        }
        k
    };
    let gap = pseudo_spectral_gap(&kernel, &mu, 0)?;
    let kmax = *ks.iter().max().unwrap();
    let mut t_samples: Vec<Vec<f64>> = vec![Vec::with_capacity(samples as usize); ks.len()];
    for rep in 0..samples {
        let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamContext::Renewal, 1 << 32 | rep);
        let y0 = sample_from(&mu, &mut rng);
        let path = simulate_mrp(mrp, y0, kmax, &mut rng)?;
        for (i, &k) in ks.iter().enumerate() {
            t_samples[i].push(path[k - 1].1 as f64);
        }
    }
    Ok(ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let xs = &t_samples[i];
            let m = mean(xs);
            let s2: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
            let m4: f64 =
                xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / xs.len() as f64;
            let var_se = ((m4 - s2 * s2).max(0.0) / xs.len() as f64).sqrt();
            let bound = 6.0 / gap.gamma_ps * k as f64 * var_t1;
            VarianceReport { k, empirical_var: s2, var_se, bound, pass: s2 <= bound + 3.0 * var_se }
        })
        .collect())
}

/// Empirical coalescence tail of [`mineka_couple`] at the given checkpoints.
pub fn mineka_tail(
    mrp: &MarkovRenewalProcess,
    offset: u64,
    checkpoints: &[usize],
    replicas: u64,
    seed: u64,
) -> Result<Vec<(usize, f64, (f64, f64))>, RenewalError> {
    let k_max = *checkpoints.iter().max().unwrap();
    let mut exceed = vec![0u64; checkpoints.len()];
    for rep in 0..replicas {
        let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamContext::Mineka, rep);
        let tau = mineka_couple(mrp, (0, 0), (0, offset), k_max, &mut rng)?;
        for (i, &cp) in checkpoints.iter().enumerate() {
            if tau.map_or(true, |k| k > cp) {
                exceed[i] += 1;
            }
        }
    }
    Ok(checkpoints
        .iter()
        .zip(&exceed)
        .map(|(&cp, &e)| (cp, e as f64 / replicas as f64, wilson_ci(e, replicas, 1.96)))
        .collect())
}

// ---------------------------------------------------------------------------
// Builtin toys
// ---------------------------------------------------------------------------

/// Single state, deterministic holding time 2: periodic, zero overlap.
pub fn toy_deterministic_gap() -> MarkovRenewalProcess {
    MarkovRenewalProcess::new(1, 2, &[(0, 2, 0, 1.0)]).unwrap()
}

/// Single state, geometric(1/2) holding times truncated at 40.
pub fn toy_geometric_gap() -> MarkovRenewalProcess {
    let entries: Vec<(usize, usize, usize, f64)> =
        (1..=40).map(|t| (0, t, 0, 0.5f64.powi(t as i32))).collect();
    MarkovRenewalProcess::new(1, 40, &entries).unwrap()
}

/// Three states with a uniform embedded kernel and state-dependent gap laws;
/// aperiodic with overlap `α = 1/2`.
pub fn toy_three_state() -> MarkovRenewalProcess {
    let third = vec![vec![1.0 / 3.0; 3]; 3];
    let gaps = vec![
        vec![0.5, 0.5],
        vec![0.4, 0.4, 0.2],
        vec![0.25, 0.5, 0.25],
    ];
    MarkovRenewalProcess::product_form(&third, &gaps).unwrap()
}

/// Single state, holding time uniform on {1, 2}: the Mineka test bench.
pub fn toy_uniform_gap() -> MarkovRenewalProcess {
    MarkovRenewalProcess::new(1, 2, &[(0, 1, 0, 0.5), (0, 2, 0, 0.5)]).unwrap()
}
