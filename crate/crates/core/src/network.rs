//! Electrical networks, the permuted two-lift environment and its kernels.
//!
//! An [`ElectricalNetwork`] is a weighted undirected multigraph with strictly
//! positive conductances, multi-edges aggregated into one conductance per
//! unordered pair (a multiplicity count is kept for degree bookkeeping). A
//! [`TwoLiftEnvironment`] places such a network on `[2n]` with two disjoint
//! halves `V1 = [0,n)`, `V2 = [n,2n)`, adds an involutive matching of the
//! halves and two mixing weights `alpha`, `beta`. The environment induces a
//! chain on `[2n]` that at each step first decides whether to jump across
//! the matched pair and then makes a network move; identifying matched pairs
//! projects it onto a reversible chain on `[n]`.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::kernel::{Distribution, KernelError, SparseKernel};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("vertex {0} out of range")]
    VertexOutOfRange(u32),
    #[error("conductance {value} on edge ({x}, {y}) is not positive")]
    BadConductance { x: u32, y: u32, value: f64 },
    #[error("vertex {0} is isolated (zero row sum)")]
    IsolatedVertex(u32),
    #[error("vertices {0} and {1} are on the same side")]
    SameSide(u32, u32),
    #[error("edge ({0}, {1}) crosses the side partition")]
    CrossSideEdge(u32, u32),
    #[error("matching is not an involution exchanging the sides at {0}")]
    BadMatching(u32),
    #[error("vertex count {0} is odd, cannot split into halves")]
    OddVertexCount(usize),
    #[error("{0}")]
    Kernel(#[from] KernelError),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Weighted undirected multigraph with aggregated conductances.
#[derive(Debug, Clone)]
pub struct ElectricalNetwork {
    vertex_count: usize,
    row_ptr: Vec<usize>,
    nbr: Vec<u32>,
    cond: Vec<f64>,
    multiplicity: Vec<u32>,
    row_sum: Vec<f64>,
    /// `Some(n)` marks the two-lift side partition `[0,n) / [n,2n)`.
    side: Option<usize>,
}

impl ElectricalNetwork {
    /// Aggregate an edge list into a network. Edges may repeat (multi-edges);
    /// conductances for the same unordered pair are summed and the pair
    /// multiplicity recorded. Self-loops are allowed.
    pub fn from_edges(
        vertex_count: usize,
        edges: &[(u32, u32, f64)],
        side: Option<usize>,
    ) -> Result<Self, NetworkError> {
        if let Some(n) = side {
            if vertex_count != 2 * n {
                return Err(NetworkError::OddVertexCount(vertex_count));
            }
        }
        let mut agg: std::collections::BTreeMap<(u32, u32), (f64, u32)> = std::collections::BTreeMap::new();
        for &(x, y, c) in edges {
            if x as usize >= vertex_count {
                return Err(NetworkError::VertexOutOfRange(x));
            }
            if y as usize >= vertex_count {
                return Err(NetworkError::VertexOutOfRange(y));
            }
            if !(c > 0.0) || !c.is_finite() {
                return Err(NetworkError::BadConductance { x, y, value: c });
            }
            if let Some(n) = side {
                let n = n as u32;
                if (x < n) != (y < n) {
                    return Err(NetworkError::CrossSideEdge(x, y));
                }
            }
            let key = (x.min(y), x.max(y));
            let e = agg.entry(key).or_insert((0.0, 0));
            e.0 += c;
            e.1 += 1;
        }
        let mut rows: Vec<Vec<(u32, f64, u32)>> = vec![Vec::new(); vertex_count];
        for (&(x, y), &(c, m)) in &agg {
            rows[x as usize].push((y, c, m));
            if x != y {
                rows[y as usize].push((x, c, m));
            }
        }
        let mut row_ptr = Vec::with_capacity(vertex_count + 1);
        let mut nbr = Vec::new();
        let mut cond = Vec::new();
        let mut multiplicity = Vec::new();
        let mut row_sum = Vec::with_capacity(vertex_count);
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(y, _, _)| y);
            let mut s = 0.0;
            for (y, c, m) in row {
                nbr.push(y);
                cond.push(c);
                multiplicity.push(m);
                s += c;
            }
            row_sum.push(s);
            row_ptr.push(nbr.len());
        }
        Ok(Self { vertex_count, row_ptr, nbr, cond, multiplicity, row_sum, side })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// `Some(n)` when the network carries the `[0,n) / [n,2n)` partition.
    pub fn side_partition(&self) -> Option<usize> {
        self.side
    }

    /// Side of a vertex under the partition: 0 for `V1`, 1 for `V2`.
    pub fn side_of(&self, x: u32) -> usize {
        let n = self.side.expect("network has no side partition");
        usize::from(x as usize >= n)
    }

    pub fn neighbors(&self, x: u32) -> impl Iterator<Item = (u32, f64)> + '_ {
        let lo = self.row_ptr[x as usize];
        let hi = self.row_ptr[x as usize + 1];
        self.nbr[lo..hi].iter().copied().zip(self.cond[lo..hi].iter().copied())
    }

    /// Conductance of the (aggregated) pair `(x, y)`.
    pub fn conductance(&self, x: u32, y: u32) -> f64 {
        let lo = self.row_ptr[x as usize];
        let hi = self.row_ptr[x as usize + 1];
        match self.nbr[lo..hi].binary_search(&y) {
            Ok(i) => self.cond[lo + i],
            Err(_) => 0.0,
        }
    }

    /// Row sum `c(x)`.
    pub fn strength(&self, x: u32) -> f64 {
        self.row_sum[x as usize]
    }

    /// Degree counting multi-edge multiplicities.
    pub fn degree(&self, x: u32) -> usize {
        let lo = self.row_ptr[x as usize];
        let hi = self.row_ptr[x as usize + 1];
        self.multiplicity[lo..hi].iter().map(|&m| m as usize).sum()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.vertex_count as u32).map(|x| self.degree(x)).max().unwrap_or(0)
    }

    /// Connected components (edges only; isolated vertices are singletons).
    pub fn components(&self) -> Vec<Vec<u32>> {
        let mut seen = vec![false; self.vertex_count];
        let mut out = Vec::new();
        for start in 0..self.vertex_count as u32 {
            if seen[start as usize] {
                continue;
            }
            let mut comp = vec![start];
            seen[start as usize] = true;
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(x) = queue.pop_front() {
                for (y, _) in self.neighbors(x) {
                    if !seen[y as usize] {
                        seen[y as usize] = true;
                        comp.push(y);
                        queue.push_back(y);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// BFS distances from `from` along network edges, `u32::MAX` if
    /// unreachable. This is the small-range metric of the two-lift.
    pub fn sr_distances(&self, from: u32) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.vertex_count];
        dist[from as usize] = 0;
        let mut queue = std::collections::VecDeque::from([from]);
        while let Some(x) = queue.pop_front() {
            let d = dist[x as usize];
            for (y, _) in self.neighbors(x) {
                if dist[y as usize] == u32::MAX {
                    dist[y as usize] = d + 1;
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    /// Reversible kernel with transitions proportional to conductances,
    /// `P(x,y) = c(x,y)/c(x)`.
    pub fn reversible_kernel(&self) -> Result<SparseKernel, NetworkError> {
        let mut rows = Vec::with_capacity(self.vertex_count);
        for x in 0..self.vertex_count as u32 {
            let cx = self.strength(x);
            if cx <= 0.0 {
                return Err(NetworkError::IsolatedVertex(x));
            }
            rows.push(self.neighbors(x).map(|(y, c)| (y, c / cx)).collect());
        }
        Ok(SparseKernel::from_rows(self.vertex_count, rows)?)
    }

    /// Per-row cumulative transition tables for simulation.
    pub(crate) fn walk_rows(&self) -> WalkRows {
        let mut offsets = Vec::with_capacity(self.vertex_count + 1);
        let mut targets = Vec::with_capacity(self.nbr.len());
        let mut cum = Vec::with_capacity(self.nbr.len());
        offsets.push(0);
        for x in 0..self.vertex_count as u32 {
            let cx = self.strength(x);
            let mut acc = 0.0;
            for (y, c) in self.neighbors(x) {
                acc += c / cx;
                targets.push(y);
                cum.push(acc);
            }
            if let Some(last) = cum.last_mut() {
                if offsets.last() != Some(&targets.len()) {
                    *last = 1.0;
                }
            }
            offsets.push(targets.len());
        }
        WalkRows { offsets, targets, cum }
    }
}

/// Cumulative transition rows for O(row) sampling.
#[derive(Debug, Clone)]
pub(crate) struct WalkRows {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    cum: Vec<f64>,
}

impl WalkRows {
    pub fn sample<R: Rng>(&self, x: u32, rng: &mut R) -> u32 {
        let lo = self.offsets[x as usize];
        let hi = self.offsets[x as usize + 1];
        debug_assert!(hi > lo, "sampling from isolated vertex {x}");
        let u: f64 = rng.gen();
        let row = &self.cum[lo..hi];
        let i = row.partition_point(|&c| c < u);
        self.targets[lo + i.min(row.len() - 1)]
    }
}

/// Uniform matching of the halves: a bijection `V1 → V2` extended to an
/// involution of `[2n]`. Reproducible from the RNG stream.
pub fn sample_matching<R: Rng>(n: usize, rng: &mut R) -> Vec<u32> {
    let mut image: Vec<u32> = (0..n as u32).collect();
    image.shuffle(rng);
    let mut eta = vec![0u32; 2 * n];
    for (i, &s) in image.iter().enumerate() {
        eta[i] = n as u32 + s;
        eta[(n as u32 + s) as usize] = i as u32;
    }
    eta
}

/// Base network, matching and mixing weights; fully determines the chain.
#[derive(Debug, Clone)]
pub struct TwoLiftEnvironment {
    base: ElectricalNetwork,
    matching: Vec<u32>,
    alpha: f64,
    beta: f64,
}

/// Structural findings of [`TwoLiftEnvironment::validate`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Maximum degree over the base network.
    pub degree_bound: usize,
    /// Minimum positive transition probability of the induced chain.
    pub min_transition: f64,
    /// `(rule, location)` pairs; empty iff all hypotheses hold.
    pub violations: Vec<(String, String)>,
}

impl TwoLiftEnvironment {
    pub fn new(
        base: ElectricalNetwork,
        matching: Vec<u32>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self, NetworkError> {
        let n = match base.side_partition() {
            Some(n) => n,
            None => return Err(NetworkError::OddVertexCount(base.vertex_count())),
        };
        if matching.len() != 2 * n {
            return Err(NetworkError::BadMatching(0));
        }
        for x in 0..2 * n as u32 {
            let y = matching[x as usize];
            if y as usize >= 2 * n || matching[y as usize] != x {
                return Err(NetworkError::BadMatching(x));
            }
            if (x < n as u32) == (y < n as u32) {
                return Err(NetworkError::BadMatching(x));
            }
        }
        assert!(alpha > 0.0 && beta > 0.0, "mixing weights must be positive");
        Ok(Self { base, matching, alpha, beta })
    }

    /// Sample the matching uniformly and assemble the environment.
    pub fn sample<R: Rng>(
        base: ElectricalNetwork,
        alpha: f64,
        beta: f64,
        rng: &mut R,
    ) -> Result<Self, NetworkError> {
        let n = base.side_partition().ok_or(NetworkError::OddVertexCount(base.vertex_count()))?;
        let matching = sample_matching(n, rng);
        Self::new(base, matching, alpha, beta)
    }

    pub fn base(&self) -> &ElectricalNetwork {
        &self.base
    }

    pub fn matching(&self) -> &[u32] {
        &self.matching
    }

    pub fn half_size(&self) -> usize {
        self.base.side_partition().unwrap()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn partner(&self, x: u32) -> u32 {
        self.matching[x as usize]
    }

    fn gamma(&self, x: u32) -> f64 {
        if self.base.side_of(x) == 0 {
            self.alpha
        } else {
            self.beta
        }
    }

    /// Retention weight of the matched-pair half-step,
    /// `p(x,u) = γ(x,u)c(x) / (γ(x,u)c(x) + γ(u,x)c(u))`.
    ///
    /// The chain at `x` stays on its side with probability `p(x, partner(x))`
    /// and jumps to the partner with `q = 1 − p`; by construction
    /// `q(x,u) = p(u,x)`, so this one map parameterises both directions.
    pub fn crossing_probability(&self, x: u32, u: u32) -> Result<f64, NetworkError> {
        if self.base.side_of(x) == self.base.side_of(u) {
            return Err(NetworkError::SameSide(x, u));
        }
        let num = self.gamma(x) * self.base.strength(x);
        let den = num + self.gamma(u) * self.base.strength(u);
        Ok(num / den)
    }

    /// `p(x, partner(x))` for every vertex.
    pub fn retention(&self, x: u32) -> f64 {
        self.crossing_probability(x, self.partner(x)).expect("partner is on the opposite side")
    }

    /// Structural validation: component-size hypotheses, isolated vertices,
    /// plus the degree bound and the minimum positive transition of the
    /// induced chain. Returns a report instead of failing so borderline
    /// instances stay runnable.
    pub fn validate(&self) -> ValidationReport {
        let n = self.half_size() as u32;
        let mut violations = Vec::new();
        for comp in self.base.components() {
            let v1 = comp[0] < n;
            if v1 && comp.len() < 3 {
                violations.push((
                    "H3".to_string(),
                    format!("V1 component containing vertex {} has size {}", comp[0], comp.len()),
                ));
            }
            if !v1 && comp.len() < 2 {
                violations.push((
                    "H3".to_string(),
                    format!("V2 component containing vertex {} has size {}", comp[0], comp.len()),
                ));
            }
        }
        let mut min_transition = f64::INFINITY;
        for x in 0..2 * n {
            if self.base.strength(x) <= 0.0 {
                violations.push(("H1".to_string(), format!("vertex {x} is isolated")));
                continue;
            }
            let p = self.retention(x);
            let u = self.partner(x);
            let cx = self.base.strength(x);
            for (_, c) in self.base.neighbors(x) {
                min_transition = min_transition.min(p * c / cx);
            }
            if self.base.strength(u) > 0.0 {
                let q = 1.0 - p;
                let cu = self.base.strength(u);
                for (_, c) in self.base.neighbors(u) {
                    min_transition = min_transition.min(q * c / cu);
                }
            }
        }
        ValidationReport {
            degree_bound: self.base.max_degree(),
            min_transition,
            violations,
        }
    }

    /// Transition kernel of the chain on `[2n]`: with probability
    /// `p(x, η(x))` a network move from `x`, otherwise a network move from
    /// the partner `η(x)`.
    pub fn superposed_kernel(&self) -> Result<SparseKernel, NetworkError> {
        let m = 2 * self.half_size();
        let mut rows = Vec::with_capacity(m);
        for x in 0..m as u32 {
            let cx = self.base.strength(x);
            if cx <= 0.0 {
                return Err(NetworkError::IsolatedVertex(x));
            }
            let u = self.partner(x);
            let cu = self.base.strength(u);
            if cu <= 0.0 {
                return Err(NetworkError::IsolatedVertex(u));
            }
            let p = self.retention(x);
            let q = 1.0 - p;
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(8);
            for (y, c) in self.base.neighbors(x) {
                row.push((y, p * c / cx));
            }
            for (y, c) in self.base.neighbors(u) {
                row.push((y, q * c / cu));
            }
            rows.push(row);
        }
        Ok(SparseKernel::from_rows(m, rows)?)
    }

    /// Conductances of the projected chain on `[n]`:
    /// `c̄(x,y) = α c(x,y) + β c(η(x), η(y))`.
    pub fn quotient_network(&self) -> ElectricalNetwork {
        let n = self.half_size();
        let mut edges = Vec::new();
        for x in 0..n as u32 {
            for (y, c) in self.base.neighbors(x) {
                if y >= x {
                    edges.push((x, y, self.alpha * c));
                }
            }
            let ex = self.partner(x);
            for (ey, c) in self.base.neighbors(ex) {
                let y = self.partner(ey);
                debug_assert!((y as usize) < n);
                if y >= x {
                    edges.push((x, y, self.beta * c));
                }
            }
        }
        ElectricalNetwork::from_edges(n, &edges, None).expect("quotient edges are valid")
    }

    /// Invariant measure of the projected chain, `π(x) ∝ c̄(x)`, together
    /// with its half-split lift to `[2n]` (the projection-compatible
    /// reference measure used in contraction checks).
    pub fn stationary_measure(&self) -> (Distribution, Distribution) {
        let qn = self.quotient_network();
        let n = self.half_size();
        let weights: Vec<f64> = (0..n as u32).map(|x| qn.strength(x)).collect();
        let pi = Distribution::from_weights(weights);
        let mut lift = vec![0.0; 2 * n];
        for x in 0..n {
            lift[x] = pi.as_slice()[x] / 2.0;
            lift[self.partner(x as u32) as usize] = pi.as_slice()[x] / 2.0;
        }
        (pi, Distribution::from_weights(lift))
    }
}

/// Quotient kernel `K̄(x,y) = K(x,y) + K(x, η(y))` on `[n]`, for any kernel
/// on `[2n]` and matching `η`.
pub fn project_quotient(kernel: &SparseKernel, matching: &[u32]) -> Result<SparseKernel, NetworkError> {
    let m = kernel.dim();
    if matching.len() != m || m % 2 != 0 {
        return Err(KernelError::DimensionMismatch { expected: m, got: matching.len() }.into());
    }
    let n = m / 2;
    let mut rows = Vec::with_capacity(n);
    for x in 0..n {
        let (cols, vals) = kernel.row(x);
        let mut row: Vec<(u32, f64)> = Vec::with_capacity(cols.len());
        for (&c, &v) in cols.iter().zip(vals) {
            let rep = if (c as usize) < n { c } else { matching[c as usize] };
            row.push((rep, v));
        }
        rows.push(row);
    }
    Ok(SparseKernel::from_rows(n, rows)?)
}

/// Project a distribution on `[2n]` to `[n]` by summing matched pairs.
pub fn project_distribution(dist: &Distribution, matching: &[u32]) -> Distribution {
    let n = dist.len() / 2;
    let mut out = vec![0.0; n];
    for x in 0..n {
        out[x] = dist.as_slice()[x] + dist.as_slice()[matching[x] as usize];
    }
    Distribution::from_weights(out)
}

// ---------------------------------------------------------------------------
// Builtin bases
// ---------------------------------------------------------------------------

/// Cycle on `V1` plus a perfect matching on `V2` (requires even `n`): the
/// superposition is a cycle with a uniformly permuted matching overlaid.
pub fn base_cycle_plus_matching(n: usize) -> Result<ElectricalNetwork, NetworkError> {
    assert!(n >= 3, "cycle needs at least 3 vertices");
    assert!(n % 2 == 0, "matching half needs even n");
    let mut edges = Vec::with_capacity(n + n / 2);
    for i in 0..n as u32 {
        edges.push((i, (i + 1) % n as u32, 1.0));
    }
    for i in 0..(n / 2) as u32 {
        edges.push((n as u32 + 2 * i, n as u32 + 2 * i + 1, 1.0));
    }
    ElectricalNetwork::from_edges(2 * n, &edges, Some(n))
}

/// Complete graphs on both halves.
pub fn base_complete_halves(n: usize) -> Result<ElectricalNetwork, NetworkError> {
    assert!(n >= 3);
    let mut edges = Vec::new();
    for half in 0..2u32 {
        let off = half * n as u32;
        for i in 0..n as u32 {
            for j in (i + 1)..n as u32 {
                edges.push((off + i, off + j, 1.0));
            }
        }
    }
    ElectricalNetwork::from_edges(2 * n, &edges, Some(n))
}

/// Disjoint triangles on both halves (`n` divisible by 3). `n = 3` is the
/// two-triangle instance used throughout the tests.
pub fn base_triangles(n: usize) -> Result<ElectricalNetwork, NetworkError> {
    assert!(n % 3 == 0 && n >= 3);
    let mut edges = Vec::new();
    for half in 0..2u32 {
        let off = half * n as u32;
        for t in 0..(n / 3) as u32 {
            let a = off + 3 * t;
            edges.push((a, a + 1, 1.0));
            edges.push((a + 1, a + 2, 1.0));
            edges.push((a, a + 2, 1.0));
        }
    }
    ElectricalNetwork::from_edges(2 * n, &edges, Some(n))
}

/// Independent random `k`-regular simple graphs on both halves, via the
/// pairing model with whole-graph rejection of loops and multi-edges.
pub fn base_random_regular_halves<R: Rng>(
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<ElectricalNetwork, NetworkError> {
    assert!(n * k % 2 == 0, "nk must be even");
    assert!(k >= 3 && n > k);
    let mut edges = Vec::new();
    for half in 0..2u32 {
        let off = half * n as u32;
        'retry: loop {
            let mut stubs: Vec<u32> = (0..n as u32).flat_map(|v| std::iter::repeat(v).take(k)).collect();
            stubs.shuffle(rng);
            let mut seen = std::collections::BTreeSet::new();
            let mut half_edges = Vec::with_capacity(n * k / 2);
            for pair in stubs.chunks(2) {
                let (a, b) = (pair[0], pair[1]);
                if a == b || !seen.insert((a.min(b), a.max(b))) {
                    continue 'retry;
                }
                half_edges.push((off + a, off + b, 1.0));
            }
            edges.extend(half_edges);
            break;
        }
    }
    ElectricalNetwork::from_edges(2 * n, &edges, Some(n))
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

/// Parse the line-oriented network format: header `n <int>`, edges
/// `e <x> <y> <c>` (1-based vertices on `[1, 2n]`), optional matching lines
/// `m <x> <y>` with `x` in `[1,n]` and `y` in `[n+1, 2n]`.
pub fn parse_network(text: &str) -> Result<(ElectricalNetwork, Option<Vec<u32>>), NetworkError> {
    let mut n: Option<usize> = None;
    let mut edges: Vec<(u32, u32, f64)> = Vec::new();
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let mut it = s.split_whitespace();
        let tag = it.next().unwrap();
        let err = |msg: &str| NetworkError::Parse { line, msg: msg.to_string() };
        match tag {
            "n" => {
                let v = it.next().ok_or_else(|| err("missing n value"))?;
                n = Some(v.parse().map_err(|_| err("bad n value"))?);
            }
            "e" => {
                let x: u32 = it.next().ok_or_else(|| err("missing x"))?.parse().map_err(|_| err("bad x"))?;
                let y: u32 = it.next().ok_or_else(|| err("missing y"))?.parse().map_err(|_| err("bad y"))?;
                let c: f64 = it.next().ok_or_else(|| err("missing c"))?.parse().map_err(|_| err("bad c"))?;
                if x == 0 || y == 0 {
                    return Err(err("vertices are 1-based"));
                }
                edges.push((x - 1, y - 1, c));
            }
            "m" => {
                let x: u32 = it.next().ok_or_else(|| err("missing x"))?.parse().map_err(|_| err("bad x"))?;
                let y: u32 = it.next().ok_or_else(|| err("missing y"))?.parse().map_err(|_| err("bad y"))?;
                if x == 0 || y == 0 {
                    return Err(err("vertices are 1-based"));
                }
                pairs.push((x - 1, y - 1));
            }
            _ => return Err(err("unknown line tag")),
        }
    }
    let n = n.ok_or(NetworkError::Parse { line: 0, msg: "missing n header".to_string() })?;
    let net = ElectricalNetwork::from_edges(2 * n, &edges, Some(n))?;
    let matching = if pairs.is_empty() {
        None
    } else {
        let mut eta = vec![u32::MAX; 2 * n];
        for (x, y) in pairs {
            if x as usize >= 2 * n || y as usize >= 2 * n {
                return Err(NetworkError::VertexOutOfRange(x.max(y)));
            }
            eta[x as usize] = y;
            eta[y as usize] = x;
        }
        if let Some(x) = eta.iter().position(|&v| v == u32::MAX) {
            return Err(NetworkError::BadMatching(x as u32));
        }
        Some(eta)
    };
    Ok((net, matching))
}

/// Render a network (and optionally a matching) in the line format.
pub fn write_network(net: &ElectricalNetwork, matching: Option<&[u32]>) -> String {
    let n = net.side_partition().expect("writing requires a side partition");
    let mut out = String::new();
    out.push_str(&format!("n {n}\n"));
    for x in 0..net.vertex_count() as u32 {
        for (y, c) in net.neighbors(x) {
            if y >= x {
                out.push_str(&format!("e {} {} {}\n", x + 1, y + 1, c));
            }
        }
    }
    if let Some(eta) = matching {
        for x in 0..n as u32 {
            out.push_str(&format!("m {} {}\n", x + 1, eta[x as usize] + 1));
        }
    }
    out
}
