//! Trajectory simulation on the two-lift chain with half-integer steps,
//! loop-erased traces, path classification and Monte Carlo estimation of
//! trace weights.
//!
//! Time is encoded in integer ticks: even ticks are whole times, odd ticks
//! half times. The transition out of an even tick is the matched-pair move
//! (stay or jump to the partner), the transition out of an odd tick is a
//! network move. A long-range edge is crossed whenever the pair move jumps.

use std::cell::RefCell;

use rand::Rng;
use thiserror::Error;

use crate::network::{TwoLiftEnvironment, WalkRows};
use crate::rng::DetHashMap;
use crate::stats::wilson_ci;

#[derive(Debug, Error, PartialEq)]
pub enum WalkError {
    #[error("trace is not non-backtracking at position {0}")]
    BacktrackingTrace(usize),
    #[error("first trace edge starts at {start}, small-range distance {dist} ≥ R from {origin}")]
    FirstEdgeTooFar { origin: u32, start: u32, dist: u32 },
    #[error("conditioning event for factor {0} never occurred")]
    InfeasiblePath(usize),
}

/// States at half-integer ticks; `states[2t]` is the whole-time position.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<u32>,
    /// Identifier of the environment that produced the trajectory.
    pub env_id: u64,
    /// Replica seed of the simulation stream.
    pub seed: u64,
}

impl Trajectory {
    /// Number of half-steps taken.
    pub fn ticks(&self) -> usize {
        self.states.len() - 1
    }

    /// Position at whole time `t`.
    pub fn at_whole(&self, t: usize) -> u32 {
        self.states[2 * t]
    }

    /// Long-range crossings as `(odd_tick, from, to)`.
    pub fn crossings(&self) -> Vec<(usize, u32, u32)> {
        let mut out = Vec::new();
        for k in (0..self.states.len().saturating_sub(1)).step_by(2) {
            if self.states[k + 1] != self.states[k] {
                out.push((k + 1, self.states[k], self.states[k + 1]));
            }
        }
        out
    }
}

/// Oriented long-range edges left after erasing backtracks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopErasedTrace {
    pub edges: Vec<(u32, u32)>,
}

impl LoopErasedTrace {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Parameters of the path class: deviation radius `R`, backtrack horizon `L`
/// and maximal regeneration gap `M` (in whole steps).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathClassParams {
    pub r: u32,
    pub l: u32,
    pub m: u32,
}

impl PathClassParams {
    /// Default `R = L = M = ⌈3·log2 log2 n⌉`, floored at 2.
    pub fn defaults_for(n: usize) -> Self {
        let v = (3.0 * (n as f64).log2().log2()).ceil().max(2.0) as u32;
        Self { r: v, l: v, m: v }
    }
}

/// Per-rule first violations; membership means no rule fired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathClassReport {
    pub member: bool,
    /// First tick at which the path left the small-range ball of its center.
    pub deviation_at: Option<usize>,
    /// Odd tick of the crossing that completed an `L`-deep backtrack.
    pub backtrack_at: Option<usize>,
    /// Tick ending the first `M`-whole-step window with no regeneration edge.
    pub regen_gap_at: Option<usize>,
}

/// Shared stepping tables for one environment. Construction is `O(n)`.
pub struct Walker<'a> {
    env: &'a TwoLiftEnvironment,
    rows: WalkRows,
    retention: Vec<f64>,
    sr_cache: RefCell<DetHashMap<u32, Box<[u32]>>>,
}

impl<'a> Walker<'a> {
    pub fn new(env: &'a TwoLiftEnvironment) -> Self {
        let m = 2 * env.half_size();
        let retention = (0..m as u32).map(|x| env.retention(x)).collect();
        Self {
            env,
            rows: env.base().walk_rows(),
            retention,
            sr_cache: RefCell::new(DetHashMap::default()),
        }
    }

    pub fn env(&self) -> &TwoLiftEnvironment {
        self.env
    }

    /// Pair half-step out of an even tick.
    #[inline]
    fn pair_step<R: Rng>(&self, x: u32, rng: &mut R) -> u32 {
        if rng.gen::<f64>() < self.retention[x as usize] {
            x
        } else {
            self.env.partner(x)
        }
    }

    /// Network half-step out of an odd tick.
    #[inline]
    fn sr_step<R: Rng>(&self, x: u32, rng: &mut R) -> u32 {
        self.rows.sample(x, rng)
    }

    /// Small-range distance, memoised BFS per source.
    fn sr_distance(&self, from: u32, to: u32) -> u32 {
        if from == to {
            return 0;
        }
        let mut cache = self.sr_cache.borrow_mut();
        let dists = cache
            .entry(from)
            .or_insert_with(|| self.env.base().sr_distances(from).into_boxed_slice());
        dists[to as usize]
    }
}

/// Simulate `ticks` half-steps from `x`. The whole-time marginal is exactly
/// the superposed kernel.
pub fn simulate_trajectory<R: Rng>(
    env: &TwoLiftEnvironment,
    x: u32,
    ticks: usize,
    env_id: u64,
    seed: u64,
    rng: &mut R,
) -> Trajectory {
    let walker = Walker::new(env);
    simulate_with(&walker, x, ticks, env_id, seed, rng)
}

pub fn simulate_with<R: Rng>(
    walker: &Walker<'_>,
    x: u32,
    ticks: usize,
    env_id: u64,
    seed: u64,
    rng: &mut R,
) -> Trajectory {
    let mut states = Vec::with_capacity(ticks + 1);
    states.push(x);
    let mut cur = x;
    for k in 0..ticks {
        cur = if k % 2 == 0 { walker.pair_step(cur, rng) } else { walker.sr_step(cur, rng) };
        states.push(cur);
    }
    Trajectory { states, env_id, seed }
}

/// Erase backtracks from the crossed long-range edges of a trajectory.
pub fn loop_erase(traj: &Trajectory) -> LoopErasedTrace {
    loop_erase_edges(traj.crossings().iter().map(|&(_, a, b)| (a, b)))
}

pub fn loop_erase_edges(edges: impl IntoIterator<Item = (u32, u32)>) -> LoopErasedTrace {
    let mut stack: Vec<(u32, u32)> = Vec::new();
    for e in edges {
        if stack.last() == Some(&(e.1, e.0)) {
            stack.pop();
        } else {
            stack.push(e);
        }
    }
    LoopErasedTrace { edges: stack }
}

/// Membership of a trajectory in the class of paths that stay within
/// small-range radius `R` of their centers, never backtrack over `L`
/// long-range edges, and carry a regeneration edge in every window of `M`
/// whole steps.
pub fn classify_path(
    env: &TwoLiftEnvironment,
    traj: &Trajectory,
    params: PathClassParams,
) -> PathClassReport {
    let walker = Walker::new(env);
    classify_with(&walker, traj, params)
}

pub fn classify_with(
    walker: &Walker<'_>,
    traj: &Trajectory,
    params: PathClassParams,
) -> PathClassReport {
    // deviation: distance to the current center at every tick
    let mut deviation_at = None;
    let mut center = traj.states[0];
    for (k, &s) in traj.states.iter().enumerate() {
        if k > 0 && k % 2 == 1 && s != traj.states[k - 1] {
            center = s;
        }
        if walker.sr_distance(center, s) >= params.r {
            deviation_at = Some(k);
            break;
        }
    }

    // backtracking: a contiguous block of distinct edges immediately
    // followed by its reversal, tracked by the depth of the reversal run
    let crossings = traj.crossings();
    let backtrack_at = detect_backtrack(&crossings, params.l);

    // regeneration edges with horizon L, then the M-gap rule
    let regen = regeneration_edges(traj, params.l);
    let mut regen_ticks: Vec<usize> = crossings
        .iter()
        .filter(|&&(_, a, b)| regen.contains(&ordered(a, b)))
        .map(|&(tick, _, _)| tick)
        .collect();
    regen_ticks.sort_unstable();
    let mut regen_gap_at = None;
    let gap_ticks = 2 * params.m as usize;
    let mut prev = 0usize;
    for &t in regen_ticks.iter().chain(std::iter::once(&traj.ticks())) {
        if t > prev && t - prev > gap_ticks {
            regen_gap_at = Some(prev + gap_ticks);
            break;
        }
        prev = t.max(prev);
    }

    PathClassReport {
        member: deviation_at.is_none() && backtrack_at.is_none() && regen_gap_at.is_none(),
        deviation_at,
        backtrack_at,
        regen_gap_at,
    }
}

fn ordered(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

/// First odd tick at which the crossing sequence completes an `l`-deep
/// backtrack: `l` distinct edges immediately followed by the reversed block.
pub fn detect_backtrack(crossings: &[(usize, u32, u32)], l: u32) -> Option<usize> {
    let l = l as usize;
    if l == 0 {
        return crossings.first().map(|c| c.0);
    }
    let rev_of = |k: usize, m: usize| {
        let f = crossings[m];
        let c = crossings[k];
        (f.1, f.2) == (c.2, c.1)
    };
    let mut run = 0usize;
    for k in 0..crossings.len() {
        if run > 0 && k >= 2 * run + 1 && rev_of(k, k - 2 * run - 1) {
            run += 1;
        } else if k >= 1 && rev_of(k, k - 1) {
            run = 1;
        } else {
            run = 0;
        }
        if run >= l {
            let fwd = &crossings[k + 1 - 2 * l..k + 1 - l];
            let distinct: std::collections::BTreeSet<(u32, u32)> =
                fwd.iter().map(|c| ordered(c.1, c.2)).collect();
            if distinct.len() == l {
                return Some(crossings[k].0);
            }
        }
    }
    None
}

/// Long-range edges of the trajectory that qualify as regeneration edges
/// with horizon `l`: after their first traversal the path piles up `l`
/// fresh loop-erased edges, or ends, before revisiting the endpoint it
/// first came from.
pub fn regeneration_edges(traj: &Trajectory, l: u32) -> std::collections::BTreeSet<(u32, u32)> {
    let crossings = traj.crossings();
    let mut first_crossing: DetHashMap<(u32, u32), usize> = DetHashMap::default();
    for (i, &(_, a, b)) in crossings.iter().enumerate() {
        first_crossing.entry(ordered(a, b)).or_insert(i);
    }
    let mut out = std::collections::BTreeSet::new();
    for (&edge, &i) in first_crossing.iter() {
        let (tick, origin, _) = crossings[i];
        let mut stack: Vec<(u32, u32)> = Vec::new();
        let mut qualified = true; // the path may simply end first
        let mut cross_iter = crossings[i + 1..].iter().peekable();
        let mut k = tick;
        while k < traj.ticks() {
            k += 1;
            if traj.states[k] == origin {
                qualified = false;
                break;
            }
            if let Some(&&(ct, ca, cb)) = cross_iter.peek() {
                if ct == k {
                    cross_iter.next();
                    if stack.last() == Some(&(cb, ca)) {
                        stack.pop();
                    } else {
                        stack.push((ca, cb));
                    }
                    if stack.len() >= l as usize {
                        break;
                    }
                }
            }
        }
        if qualified {
            out.insert(edge);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Trace weights
// ---------------------------------------------------------------------------

/// Radii of the weight definition: deviation radius `r`, level horizon `l`.
#[derive(Debug, Clone, Copy)]
pub struct WeightParams {
    pub r: u32,
    pub l: u32,
}

/// One estimated conditional factor of a trace weight.
#[derive(Debug, Clone)]
pub struct FactorEstimate {
    pub point: f64,
    /// 95% Wilson interval.
    pub ci: (f64, f64),
    pub successes: u64,
    /// Runs satisfying the conditioning event (the denominator).
    pub accepted: u64,
    pub attempts: u64,
}

/// Product estimate of a trace weight with per-factor intervals.
#[derive(Debug, Clone)]
pub struct WeightEstimate {
    pub factors: Vec<FactorEstimate>,
    pub point: f64,
    pub interval: (f64, f64),
}

const RUN_CAP_TICKS: usize = 100_000;

enum RunOutcome {
    /// Reached level `l`; payload is the first trace edge.
    Leveled((u32, u32)),
    Deviated,
    HitExcluded,
    Capped,
}

/// Run from `start` (whole time) until the loop-erased trace reaches level
/// `l`, the path deviates beyond `r`, or it hits `excluded`.
///
/// With `stop_on_deviation` false the run keeps going after a deviation and
/// only the flag is poisoned; the first-edge factor needs this because its
/// event requires the level clock to win outright, with every run counted.
fn weight_run<R: Rng>(
    walker: &Walker<'_>,
    start: u32,
    excluded: Option<u32>,
    params: WeightParams,
    stop_on_deviation: bool,
    rng: &mut R,
) -> (RunOutcome, bool) {
    let mut cur = start;
    let mut center = start;
    let mut deviated = false;
    let mut stack: Vec<(u32, u32)> = Vec::new();
    for k in 0..RUN_CAP_TICKS {
        let next = if k % 2 == 0 { walker.pair_step(cur, rng) } else { walker.sr_step(cur, rng) };
        if k % 2 == 0 && next != cur {
            if stack.last() == Some(&(next, cur)) {
                stack.pop();
            } else {
                stack.push((cur, next));
            }
            center = next;
        }
        cur = next;
        if Some(cur) == excluded {
            return (RunOutcome::HitExcluded, deviated);
        }
        if !deviated && walker.sr_distance(center, cur) >= params.r {
            deviated = true;
            if stop_on_deviation {
                return (RunOutcome::Deviated, true);
            }
        }
        if stack.len() >= params.l as usize {
            return (RunOutcome::Leveled(stack[0]), deviated);
        }
    }
    (RunOutcome::Capped, deviated)
}

/// Monte Carlo estimate of the weight of a non-backtracking trace from `x`:
/// the first-edge factor times one conditional factor per subsequent edge,
/// each resolved by independent runs. Empty traces have weight one.
///
/// The first-edge factor is the unconditional probability that the level
/// clock beats both deviation and the trace pointing elsewhere; conditional
/// factors condition on reaching the level horizon before returning over the
/// previous edge or deviating.
pub fn estimate_weight<R: Rng>(
    env: &TwoLiftEnvironment,
    x: u32,
    trace: &LoopErasedTrace,
    params: WeightParams,
    samples: u64,
    rng: &mut R,
) -> Result<WeightEstimate, WalkError> {
    let walker = Walker::new(env);
    estimate_weight_with(&walker, x, trace, params, samples, rng)
}

pub fn estimate_weight_with<R: Rng>(
    walker: &Walker<'_>,
    x: u32,
    trace: &LoopErasedTrace,
    params: WeightParams,
    samples: u64,
    rng: &mut R,
) -> Result<WeightEstimate, WalkError> {
    for (i, w) in trace.edges.windows(2).enumerate() {
        if w[1] == (w[0].1, w[0].0) {
            return Err(WalkError::BacktrackingTrace(i + 1));
        }
    }
    if trace.is_empty() {
        return Ok(WeightEstimate { factors: Vec::new(), point: 1.0, interval: (1.0, 1.0) });
    }
    let d0 = walker.sr_distance(x, trace.edges[0].0);
    if d0 >= params.r {
        return Err(WalkError::FirstEdgeTooFar { origin: x, start: trace.edges[0].0, dist: d0 });
    }

    let mut factors = Vec::with_capacity(trace.len());
    for (i, &edge) in trace.edges.iter().enumerate() {
        let (start, excluded) = if i == 0 {
            (x, None)
        } else {
            let prev = trace.edges[i - 1];
            (prev.1, Some(prev.0))
        };
        let mut successes = 0u64;
        let mut accepted = 0u64;
        for _ in 0..samples {
            let (outcome, deviated) = weight_run(walker, start, excluded, params, i > 0, rng);
            match outcome {
                RunOutcome::Leveled(first) => {
                    accepted += 1;
                    if !deviated && first == edge {
                        successes += 1;
                    }
                }
                RunOutcome::Deviated | RunOutcome::HitExcluded | RunOutcome::Capped => {
                    if i == 0 {
                        accepted += 1;
                    }
                }
            }
        }
        if accepted == 0 {
            return Err(WalkError::InfeasiblePath(i));
        }
        let point = successes as f64 / accepted as f64;
        let ci = wilson_ci(successes, accepted, 1.96);
        factors.push(FactorEstimate { point, ci, successes, accepted, attempts: samples });
    }
    let point = factors.iter().map(|f| f.point).product();
    let interval =
        (factors.iter().map(|f| f.ci.0).product(), factors.iter().map(|f| f.ci.1).product());
    Ok(WeightEstimate { factors, point, interval })
}

/// Result of [`entropy_witness`].
#[derive(Debug, Clone)]
pub struct WitnessEstimate {
    pub probability: f64,
    /// 95% Wilson interval.
    pub ci: (f64, f64),
    pub samples: u64,
    /// Trajectories whose weight could not be resolved (counted as misses).
    pub infeasible: u64,
}

/// Probability that a `t`-whole-step trajectory from `x` realizes a trace of
/// estimated weight above `theta`.
///
/// Weights of nonempty traces are strictly below one, so the boundary
/// `theta = 1` selects exactly the empty-trace event; empty traces count for
/// every admissible `theta`.
pub fn entropy_witness(
    env: &TwoLiftEnvironment,
    x: u32,
    t_whole: usize,
    theta: f64,
    params: WeightParams,
    outer_samples: u64,
    inner_budget: u64,
    seed: u64,
) -> WitnessEstimate {
    assert!(theta > 0.0 && theta <= 1.0);
    let walker = Walker::new(env);
    let mut hits = 0u64;
    let mut infeasible = 0u64;
    for replica in 0..outer_samples {
        let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamContext::WeightOuter, replica);
        let traj = simulate_with(&walker, x, 2 * t_whole, 0, replica, &mut rng);
        let trace = loop_erase(&traj);
        if trace.is_empty() {
            hits += 1;
            continue;
        }
        let mut inner = crate::rng::stream_rng(seed, crate::rng::StreamContext::WeightInner, replica);
        match estimate_weight_with(&walker, x, &trace, params, inner_budget, &mut inner) {
            Ok(est) if est.point > theta => hits += 1,
            Ok(_) => {}
            Err(_) => infeasible += 1,
        }
    }
    let probability = hits as f64 / outer_samples as f64;
    WitnessEstimate {
        probability,
        ci: wilson_ci(hits, outer_samples, 1.96),
        samples: outer_samples,
        infeasible,
    }
}

/// All oriented long-range first edges whose origin lies within small-range
/// radius `r` of `x`: the candidate support of the first-edge weight.
pub fn candidate_first_edges(env: &TwoLiftEnvironment, x: u32, r: u32) -> Vec<(u32, u32)> {
    let dists = env.base().sr_distances(x);
    (0..2 * env.half_size() as u32)
        .filter(|&y| dists[y as usize] != u32::MAX && dists[y as usize] < r)
        .map(|y| (y, env.partner(y)))
        .collect()
}

/// Exact first-edge weights for `l = 1` by an absorbing-chain solve on the
/// same-side component of `x`. Test oracle; deviation is ignored, so it is
/// valid when `r` exceeds the component diameter.
pub fn exact_first_edge_weights(env: &TwoLiftEnvironment, x: u32) -> Vec<((u32, u32), f64)> {
    use nalgebra::{DMatrix, DVector};
    let comp: Vec<u32> = {
        let d = env.base().sr_distances(x);
        (0..2 * env.half_size() as u32).filter(|&v| d[v as usize] != u32::MAX).collect()
    };
    let index: std::collections::BTreeMap<u32, usize> =
        comp.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let m = comp.len();
    // transient part: stay on side, then a network move
    let mut a = DMatrix::<f64>::identity(m, m);
    for (i, &v) in comp.iter().enumerate() {
        let p = env.retention(v);
        let cv = env.base().strength(v);
        for (w, c) in env.base().neighbors(v) {
            a[(i, index[&w])] -= p * c / cv;
        }
    }
    let lu = a.lu();
    comp.iter()
        .map(|&v| {
            let mut rhs = DVector::<f64>::zeros(m);
            for (i, &u) in comp.iter().enumerate() {
                if u == v {
                    rhs[i] = 1.0 - env.retention(u);
                }
            }
            let h = lu.solve(&rhs).expect("absorbing system is nonsingular");
            ((v, env.partner(v)), h[index[&x]])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{base_triangles, TwoLiftEnvironment};
    use crate::rng::{stream_rng, StreamContext};

    fn two_triangles(seed: u64) -> TwoLiftEnvironment {
        let base = base_triangles(3).unwrap();
        let mut rng = stream_rng(seed, StreamContext::Matching, 0);
        TwoLiftEnvironment::sample(base, 1.0, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn zero_ticks_trajectory_is_start_only() {
        let env = two_triangles(1);
        let mut rng = stream_rng(1, StreamContext::Trajectory, 0);
        let t = simulate_trajectory(&env, 2, 0, 0, 0, &mut rng);
        assert_eq!(t.states, vec![2]);
        assert!(t.crossings().is_empty());
    }

    #[test]
    fn trajectory_deterministic_under_seed() {
        let env = two_triangles(2);
        let a =
            simulate_trajectory(&env, 0, 200, 0, 7, &mut stream_rng(9, StreamContext::Trajectory, 7));
        let b =
            simulate_trajectory(&env, 0, 200, 0, 7, &mut stream_rng(9, StreamContext::Trajectory, 7));
        assert_eq!(a, b);
    }

    #[test]
    fn one_step_law_matches_kernel_row() {
        let env = two_triangles(3);
        let kernel = env.superposed_kernel().unwrap();
        let x = 1u32;
        let samples = 100_000usize;
        let mut counts = vec![0usize; 6];
        let walker = Walker::new(&env);
        for i in 0..samples {
            let mut rng = stream_rng(33, StreamContext::Trajectory, i as u64);
            let t = simulate_with(&walker, x, 2, 0, i as u64, &mut rng);
            counts[t.at_whole(1) as usize] += 1;
        }
        for y in 0..6usize {
            let p = kernel.entry(x as usize, y as u32);
            let se = (samples as f64 * p * (1.0 - p)).sqrt().max(1.0);
            assert!(
                (counts[y] as f64 - samples as f64 * p).abs() < 3.5 * se,
                "state {y}: observed {} expected {}",
                counts[y],
                samples as f64 * p
            );
        }
    }

    #[test]
    fn loop_erase_trivial_cases() {
        let t = Trajectory { states: vec![0, 0, 1, 1, 2], env_id: 0, seed: 0 };
        assert!(loop_erase(&t).is_empty());
        assert!(loop_erase_edges(vec![(0u32, 3u32), (3, 0)]).is_empty());
    }

    #[test]
    fn loop_erase_matches_iterated_cancellation_oracle() {
        // oracle: repeatedly delete adjacent mutually-reversed pairs
        fn oracle(mut edges: Vec<(u32, u32)>) -> Vec<(u32, u32)> {
            loop {
                let mut removed = false;
                let mut i = 0;
                while i + 1 < edges.len() {
                    if edges[i + 1] == (edges[i].1, edges[i].0) {
                        edges.drain(i..i + 2);
                        removed = true;
                    } else {
                        i += 1;
                    }
                }
                if !removed {
                    return edges;
                }
            }
        }
        let env = two_triangles(4);
        let walker = Walker::new(&env);
        for rep in 0..50 {
            let mut rng = stream_rng(44, StreamContext::Trajectory, rep);
            let t = simulate_with(&walker, (rep % 6) as u32, 400, 0, rep, &mut rng);
            let crossings: Vec<(u32, u32)> = t.crossings().iter().map(|&(_, a, b)| (a, b)).collect();
            assert_eq!(loop_erase(&t).edges, oracle(crossings));
        }
    }

    #[test]
    fn loop_erase_idempotent_on_nonbacktracking() {
        let env = two_triangles(5);
        let walker = Walker::new(&env);
        for rep in 0..20 {
            let mut rng = stream_rng(55, StreamContext::Trajectory, rep);
            let t = simulate_with(&walker, 0, 300, 0, rep, &mut rng);
            let trace = loop_erase(&t);
            assert_eq!(loop_erase_edges(trace.edges.clone()).edges, trace.edges);
        }
    }

    #[test]
    fn classification_flags_deviation() {
        // a long path on V1 so the walk can wander far from its center
        let mut edges: Vec<(u32, u32, f64)> = (0..9).map(|i| (i as u32, i as u32 + 1, 1.0)).collect();
        for i in 0..5u32 {
            edges.push((10 + 2 * i, 10 + 2 * i + 1, 1.0));
        }
        let base = crate::network::ElectricalNetwork::from_edges(20, &edges, Some(10)).unwrap();
        let mut rng = stream_rng(6, StreamContext::Matching, 0);
        let env = TwoLiftEnvironment::sample(base, 1.0, 1.0, &mut rng).unwrap();
        // hand-built walk straight down the path, never crossing
        let states: Vec<u32> = vec![0, 0, 1, 1, 2, 2, 3, 3, 4];
        let traj = Trajectory { states, env_id: 0, seed: 0 };
        let report = classify_path(&env, &traj, PathClassParams { r: 3, l: 2, m: 100 });
        assert!(!report.member);
        assert_eq!(report.deviation_at, Some(6));
        assert!(report.backtrack_at.is_none());
    }

    #[test]
    fn classification_agrees_with_rescan_oracle() {
        let mut rng_base = stream_rng(77, StreamContext::Generic, 0);
        let base = crate::network::base_random_regular_halves(64, 3, &mut rng_base).unwrap();
        let env = TwoLiftEnvironment::sample(base, 1.0, 1.0, &mut rng_base).unwrap();
        let walker = Walker::new(&env);
        let params = PathClassParams { r: 3, l: 2, m: 6 };
        let mut members = 0;
        for rep in 0..1000u64 {
            let mut rng = stream_rng(78, StreamContext::Trajectory, rep);
            let traj = simulate_with(&walker, (rep % 128) as u32, 60, 0, rep, &mut rng);
            let report = classify_with(&walker, &traj, params);

            // oracle: full rescan of the deviation rule
            let dev = {
                let mut center = traj.states[0];
                let mut hit = None;
                for (k, &s) in traj.states.iter().enumerate() {
                    if k > 0 && k % 2 == 1 && s != traj.states[k - 1] {
                        center = s;
                    }
                    let d = env.base().sr_distances(center)[s as usize];
                    if d >= params.r {
                        hit = Some(k);
                        break;
                    }
                }
                hit
            };
            assert_eq!(report.deviation_at, dev, "replica {rep}");

            // oracle: direct pattern scan for an L-deep backtrack
            let crossings = traj.crossings();
            let l = params.l as usize;
            let mut bt = None;
            'outer: for i in 0..crossings.len() {
                if i + 1 >= 2 * l {
                    let fwd = &crossings[i + 1 - 2 * l..i + 1 - l];
                    let bwd = &crossings[i + 1 - l..i + 1];
                    let reversed =
                        fwd.iter().rev().zip(bwd).all(|(f, b)| (f.1, f.2) == (b.2, b.1));
                    let distinct = fwd
                        .iter()
                        .map(|c| ordered(c.1, c.2))
                        .collect::<std::collections::BTreeSet<_>>()
                        .len()
                        == l;
                    if reversed && distinct {
                        bt = Some(crossings[i].0);
                        break 'outer;
                    }
                }
            }
            assert_eq!(report.backtrack_at, bt, "replica {rep}");
            if report.member {
                members += 1;
            }
        }
        assert!(members > 0, "classification should accept some paths");
    }

    #[test]
    fn empty_trace_weight_is_one() {
        let env = two_triangles(8);
        let mut rng = stream_rng(8, StreamContext::WeightInner, 0);
        let est = estimate_weight(
            &env,
            0,
            &LoopErasedTrace { edges: vec![] },
            WeightParams { r: 4, l: 1 },
            100,
            &mut rng,
        )
        .unwrap();
        assert_eq!(est.point, 1.0);
    }

    #[test]
    fn single_edge_weight_matches_linear_solve_oracle() {
        let env = two_triangles(9);
        let x = 0u32;
        let exact = exact_first_edge_weights(&env, x);
        let params = WeightParams { r: 5, l: 1 };
        let mut rng = stream_rng(91, StreamContext::WeightInner, 0);
        for &(edge, w) in &exact {
            let est = estimate_weight(
                &env,
                x,
                &LoopErasedTrace { edges: vec![edge] },
                params,
                40_000,
                &mut rng,
            )
            .unwrap();
            assert!(
                est.interval.0 - 0.01 <= w && w <= est.interval.1 + 0.01,
                "edge {edge:?}: exact {w} vs CI {:?}",
                est.interval
            );
        }
        let total: f64 = exact.iter().map(|&(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-10, "first-crossing decomposition must be exhaustive");
    }

    #[test]
    fn first_edge_weights_sum_below_one_with_ci_slack() {
        let mut rng_base = stream_rng(92, StreamContext::Generic, 0);
        let base = crate::network::base_random_regular_halves(16, 3, &mut rng_base).unwrap();
        let env = TwoLiftEnvironment::sample(base, 1.0, 1.0, &mut rng_base).unwrap();
        let x = 5u32;
        let params = WeightParams { r: 3, l: 2 };
        let mut rng = stream_rng(93, StreamContext::WeightInner, 0);
        let mut total = 0.0;
        let mut slack = 0.0;
        for (y, ey) in candidate_first_edges(&env, x, params.r) {
            let est = estimate_weight(
                &env,
                x,
                &LoopErasedTrace { edges: vec![(y, ey)] },
                params,
                4000,
                &mut rng,
            )
            .unwrap();
            total += est.point;
            slack += (est.interval.1 - est.interval.0) / 2.0;
        }
        assert!(total <= 1.0 + 3.0 * slack, "total {total}, slack {slack}");
    }

    #[test]
    fn witness_boundary_theta() {
        let env = two_triangles(10);
        let params = WeightParams { r: 4, l: 1 };
        // t = 0: empty trace, weight one
        let w = entropy_witness(&env, 0, 0, 0.5, params, 200, 64, 5);
        assert_eq!(w.probability, 1.0);
        // theta = 1 selects exactly the empty-trace event
        let w1 = entropy_witness(&env, 0, 6, 1.0, params, 400, 64, 6);
        let mut empties = 0;
        let walker = Walker::new(&env);
        for replica in 0..400u64 {
            let mut rng = stream_rng(6, StreamContext::WeightOuter, replica);
            let t = simulate_with(&walker, 0, 12, 0, replica, &mut rng);
            if loop_erase(&t).is_empty() {
                empties += 1;
            }
        }
        assert_eq!(w1.probability, empties as f64 / 400.0);
        // tiny theta accepts everything
        let w0 = entropy_witness(&env, 0, 6, 1e-9, params, 300, 64, 7);
        assert!(w0.probability > 0.99);
    }
}
