//! Branch-and-cut MILP solver specialized to the two model kinds, plus an
//! exhaustive oracle for certifying small instances.
//!
//! Node relaxations are solved by the dual simplex in [`lp`]; branching
//! fixes edge binaries, cycle inequalities are separated by shortest path
//! and added globally. Potts incumbents are always post-processed through
//! the multicut closure and an L1 refit, which never worsens the objective.

pub mod lp;

use std::collections::BinaryHeap;
use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use crate::error::Error;
use crate::grid::{
    closure, components_of_dormant, induced_multicut, EdgeLabeling, GridGraph, LabelMap,
};
use crate::model::{ImageGray, MilpModel, ModelKind, Sense};
use lp::{DualSimplex, LpOutcome, LpStatus};

/// Termination controls. `gap_threshold` follows the 2% stopping rule;
/// node limits give bit-reproducible runs where wall-clock limits do not.
#[derive(Debug, Clone)]
pub struct SolveLimits {
    pub time_limit: Option<f64>,
    pub gap_threshold: f64,
    pub node_limit: Option<u64>,
    /// Reserved for stochastic tie-breaking; the solver is currently fully
    /// deterministic and records the seed only as run metadata.
    pub seed: u64,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits { time_limit: None, gap_threshold: 0.02, node_limit: None, seed: 0 }
    }
}

impl SolveLimits {
    /// No gap tolerance: run to proven optimality.
    pub fn exact() -> Self {
        SolveLimits { gap_threshold: 0.0, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    GapReached,
    TimeLimit,
    NodeLimit,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolverStats {
    pub nodes: u64,
    pub lp_iterations: u64,
    pub cuts_added: u64,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub x: EdgeLabeling,
    /// Fitted intensities; present for Potts models only.
    pub w: Option<Vec<f64>>,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub status: SolveStatus,
    pub stats: SolverStats,
}

fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if bound >= incumbent {
        0.0
    } else {
        (incumbent - bound) / incumbent.abs().max(1e-12)
    }
}

/// Builds the LP relaxation of a model (binaries relaxed to [0,1]).
fn build_lp(model: &MilpModel) -> DualSimplex {
    let cost: Vec<f64> = model.vars.iter().map(|v| v.objective).collect();
    let lower: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
    let rows: Vec<(Vec<(usize, f64)>, f64, f64, f64)> = model
        .constraints
        .iter()
        .map(|c| {
            let (slo, shi) = match c.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            (c.terms.clone(), c.rhs, slo, shi)
        })
        .collect();
    DualSimplex::new(cost, lower, upper, &rows)
}

/// Solves the LP relaxation with the given binary fixings to proven
/// optimality. Returns the optimum and the values of all variables in model
/// order.
pub fn solve_lp_relaxation(
    model: &MilpModel,
    fixings: &[(usize, bool)],
) -> Result<(f64, Vec<f64>), Error> {
    let mut lp = build_lp(model);
    for &(j, v) in fixings {
        if j >= model.num_binaries {
            return Err(Error::invalid_argument(format!(
                "fixing references variable {j} which is not a binary"
            )));
        }
        let b = if v { 1.0 } else { 0.0 };
        lp.set_bounds(j, b, b);
    }
    let out = lp.solve(u64::MAX)?;
    match out.status {
        LpStatus::Optimal => Ok((out.objective, lp.structural_values())),
        LpStatus::Infeasible => Err(Error::invalid_argument(
            "LP relaxation infeasible under the given fixings".into(),
        )),
        LpStatus::IterLimit => unreachable!("uncapped solve"),
    }
}

/// One violated cycle inequality: x summed over `cycle` without `rhs_edge`
/// must be at least x of `rhs_edge`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleCut {
    pub cycle: Vec<usize>,
    pub rhs_edge: usize,
}

/// Finds cycle inequalities violated by more than 1e-6: for every edge
/// e' = (u,v) with positive value, the shortest u–v path avoiding e' under
/// weights `xfrac` closes a violated cycle whenever its weight is below
/// x_{e'}. At most one cut per edge per call.
pub fn separate_cycle_cuts(g: &GridGraph, xfrac: &[f64]) -> Vec<CycleCut> {
    assert_eq!(xfrac.len(), g.num_edges());
    const EPS: f64 = 1e-6;
    let n = g.num_pixels();
    let mut cuts = Vec::new();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<(u32, u32)> = vec![(u32::MAX, u32::MAX); n]; // (prev node, via edge)

    for forbidden in 0..g.num_edges() {
        let xe = xfrac[forbidden];
        if xe <= EPS {
            continue;
        }
        let (src, dst) = g.edge_endpoints(forbidden);
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        let mut heap: BinaryHeap<std::cmp::Reverse<(u64, u32)>> = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(std::cmp::Reverse((0u64, src as u32)));
        while let Some(std::cmp::Reverse((key, node))) = heap.pop() {
            let node = node as usize;
            let d = f64::from_bits(key);
            if d > dist[node] {
                continue;
            }
            if node == dst || d >= xe - EPS {
                break;
            }
            let (i, j) = g.node_coords(node);
            for (e, nb) in g.incident_edges(i, j) {
                if e == forbidden {
                    continue;
                }
                let nd = d + xfrac[e].max(0.0);
                if nd < dist[nb] {
                    dist[nb] = nd;
                    pred[nb] = (node as u32, e as u32);
                    heap.push(std::cmp::Reverse((nd.to_bits(), nb as u32)));
                }
            }
        }
        if dist[dst] < xe - EPS {
            let mut cycle = vec![forbidden];
            let mut at = dst;
            while at != src {
                let (prev, via) = pred[at];
                cycle.push(via as usize);
                at = prev as usize;
            }
            cuts.push(CycleCut { cycle, rhs_edge: forbidden });
        }
    }
    cuts
}

/// Per-segment L1 refit: each segment takes the lowest median of its member
/// intensities; the objective adds λ times the induced multicut size.
pub fn refit_segments(img: &ImageGray, labels: &LabelMap, lambda: f64) -> (Vec<f64>, f64) {
    let k = labels.num_labels() as usize;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (p, &l) in labels.labels().iter().enumerate() {
        members[l as usize].push(img.pixels()[p]);
    }
    let mut medians = vec![0.0; k];
    let mut data_cost = 0.0;
    for (l, vals) in members.iter_mut().enumerate() {
        vals.sort_by(f64::total_cmp);
        let med = vals[(vals.len() - 1) / 2]; // lowest L1 minimizer
        medians[l] = med;
        data_cost += vals.iter().map(|v| (v - med).abs()).sum::<f64>();
    }
    let g = GridGraph::new(labels.rows(), labels.cols()).expect("valid dims");
    let boundary = induced_multicut(&g, labels).count_active();
    let w = labels.labels().iter().map(|&l| medians[l as usize]).collect();
    (w, data_cost + lambda * boundary as f64)
}

fn multicut_objective(model: &MilpModel, x: &EdgeLabeling) -> f64 {
    x.0.iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .map(|(e, _)| model.vars[e].objective)
        .sum()
}

struct Incumbent {
    x: EdgeLabeling,
    w: Option<Vec<f64>>,
    objective: f64,
}

/// Candidate solution from an edge labeling: closure, then refit (Potts) or
/// direct evaluation (multicut). Closure never raises either objective.
fn evaluate_candidate(model: &MilpModel, img: Option<&ImageGray>, raw: &EdgeLabeling) -> Incumbent {
    let g = model.grid();
    let labels = components_of_dormant(&g, raw);
    let x = induced_multicut(&g, &labels);
    match model.kind {
        ModelKind::Potts => {
            let img = img.expect("Potts models carry an image");
            let (w, obj) = refit_segments(img, &labels, model.lambda);
            Incumbent { x, w: Some(w), objective: obj }
        }
        ModelKind::Multicut => {
            let obj = multicut_objective(model, &x);
            Incumbent { x, w: None, objective: obj }
        }
    }
}

struct HeapNode {
    bound: f64,
    id: u64,
    fixings: Vec<(u32, bool)>,
}

impl PartialEq for HeapNode {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for HeapNode {}
impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapNode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap: order reversed for best-bound-first,
        // ties broken toward the oldest node for determinism.
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

/// Branch-and-cut with best-bound node selection and depth-first plunging.
pub fn branch_and_cut(model: &MilpModel, limits: &SolveLimits) -> Result<MilpSolution, Error> {
    branch_and_cut_traced(model, limits, None)
}

/// Like [`branch_and_cut`] with an optional plain-text trace, one line per
/// node: id, depth, bound, incumbent, cuts.
pub fn branch_and_cut_traced(
    model: &MilpModel,
    limits: &SolveLimits,
    mut trace: Option<&mut dyn Write>,
) -> Result<MilpSolution, Error> {
    let started = Instant::now();
    let deadline = limits.time_limit.map(|s| started + std::time::Duration::from_secs_f64(s));
    let g = model.grid();
    let image = match model.kind {
        ModelKind::Potts => Some(potts_image(model)),
        ModelKind::Multicut => None,
    };
    let nb = model.num_binaries;
    let mut stats = SolverStats::default();

    // trivially solved models (single pixel, no edges)
    if nb == 0 {
        let inc = evaluate_candidate(model, image.as_ref(), &EdgeLabeling::all_dormant(&g));
        return Ok(MilpSolution {
            gap: 0.0,
            bound: inc.objective,
            status: SolveStatus::Optimal,
            stats,
            x: inc.x,
            w: inc.w,
            objective: inc.objective,
        });
    }

    let mut lp = build_lp(model);
    let mut seen_cuts: HashSet<(Vec<usize>, usize)> = HashSet::new();
    let mut incumbent: Option<Incumbent> = None;
    let mut heap: BinaryHeap<HeapNode> = BinaryHeap::new();
    let mut next_id = 0u64;
    let mut applied: Vec<(u32, bool)> = Vec::new();
    let floor = objective_floor(model);

    // root: solve, then separation rounds until clean or 20 rounds
    let root_out = lp_solve_deadline(&mut lp, deadline)?;
    stats.lp_iterations = lp.total_iterations;
    let mut root_obj = root_out.objective;
    if root_out.status == LpStatus::Optimal {
        for _round in 0..20 {
            let values = lp.structural_values();
            let xfrac = &values[..nb];
            consider_candidate(model, image.as_ref(), xfrac, &mut incumbent);
            let mut added = 0;
            for cut in separate_cycle_cuts(&g, xfrac) {
                if add_cut(&mut lp, &mut seen_cuts, &cut) {
                    added += 1;
                }
            }
            stats.cuts_added += added;
            if added == 0 {
                break;
            }
            let out = lp_solve_deadline(&mut lp, deadline)?;
            stats.lp_iterations = lp.total_iterations;
            root_obj = out.objective;
            if out.status != LpStatus::Optimal {
                break;
            }
        }
    }
    let mut global_bound = root_obj.max(floor);
    heap.push(HeapNode { bound: global_bound, id: next_id, fixings: Vec::new() });
    next_id += 1;

    let status;
    'search: loop {
        // the best open-node bound is the global lower bound
        let open_min = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
        if !open_min.is_finite() {
            status = SolveStatus::Optimal;
            break;
        }
        global_bound = open_min.max(floor);
        if let Some(inc) = &incumbent {
            if global_bound >= inc.objective - 1e-9 * inc.objective.abs().max(1.0) {
                status = SolveStatus::Optimal;
                break;
            }
            if relative_gap(inc.objective, global_bound) <= limits.gap_threshold {
                status = SolveStatus::GapReached;
                break;
            }
        }
        if let Some(limit) = limits.node_limit {
            if stats.nodes >= limit {
                status = SolveStatus::NodeLimit;
                break;
            }
        }
        if let Some(d) = deadline {
            if Instant::now() >= d {
                status = SolveStatus::TimeLimit;
                break;
            }
        }

        let node = heap.pop().expect("loop guard");
        if let Some(inc) = &incumbent {
            if node.bound >= inc.objective - 1e-9 {
                continue;
            }
        }

        // process the node, plunging depth-first into one child at a time
        let mut plunge = Some(node.fixings);
        let mut node_bound = node.bound;
        while let Some(fixings) = plunge.take() {
            if let Some(limit) = limits.node_limit {
                if stats.nodes >= limit {
                    continue 'search;
                }
            }
            if let Some(d) = deadline {
                if Instant::now() >= d {
                    continue 'search;
                }
            }
            apply_fixings(&mut lp, &mut applied, &fixings);
            let out = lp_solve_deadline(&mut lp, deadline)?;
            stats.lp_iterations = lp.total_iterations;
            stats.nodes += 1;
            if out.status == LpStatus::Infeasible {
                break; // prune
            }
            let mut lp_obj = out.objective.max(floor);
            if out.status == LpStatus::IterLimit {
                // deadline hit mid-solve; the dual objective is still valid,
                // keep it only as this subtree's bound
                heap.push(HeapNode {
                    bound: node_bound.max(lp_obj),
                    id: next_id,
                    fixings,
                });
                next_id += 1;
                continue 'search;
            }
            node_bound = node_bound.max(lp_obj);

            // periodic separation; cuts are globally valid
            if stats.nodes % 5 == 0 {
                let values = lp.structural_values();
                let mut added = 0;
                for cut in separate_cycle_cuts(&g, &values[..nb]) {
                    if add_cut(&mut lp, &mut seen_cuts, &cut) {
                        added += 1;
                    }
                }
                stats.cuts_added += added;
                if added > 0 {
                    let out = lp_solve_deadline(&mut lp, deadline)?;
                    stats.lp_iterations = lp.total_iterations;
                    if out.status != LpStatus::Optimal {
                        break;
                    }
                    lp_obj = out.objective.max(floor);
                    node_bound = node_bound.max(lp_obj);
                }
            }

            if let Some(inc) = &incumbent {
                if node_bound >= inc.objective - 1e-9 {
                    break; // prune
                }
            }

            let values = lp.structural_values();
            let xfrac = &values[..nb];
            consider_candidate(model, image.as_ref(), xfrac, &mut incumbent);

            if let Some(t) = trace.as_deref_mut() {
                let inc_str = incumbent
                    .as_ref()
                    .map(|i| format!("{:.9}", i.objective))
                    .unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    t,
                    "node {} depth {} bound {:.9} incumbent {} cuts {}",
                    stats.nodes,
                    fixings.len(),
                    node_bound,
                    inc_str,
                    stats.cuts_added
                );
            }

            match most_fractional(xfrac) {
                None => {
                    // integral at this node
                    let xi = EdgeLabeling(xfrac.iter().map(|&v| v > 0.5).collect());
                    if model.kind == ModelKind::Multicut {
                        // lazy feasibility: an integral point must be a true multicut
                        let mut added = 0;
                        for cut in separate_cycle_cuts(&g, xfrac) {
                            if add_cut(&mut lp, &mut seen_cuts, &cut) {
                                added += 1;
                            }
                        }
                        stats.cuts_added += added;
                        if added > 0 {
                            stats.nodes -= 1; // same node, re-solved
                            plunge = Some(fixings);
                            continue;
                        }
                    }
                    let cand = evaluate_candidate(model, image.as_ref(), &xi);
                    replace_if_better(&mut incumbent, cand);
                    break; // subtree solved exactly
                }
                Some(edge) => {
                    let up_first = xfrac[edge] >= 0.5;
                    let mut other = fixings.clone();
                    other.push((edge as u32, !up_first));
                    let mut preferred = fixings;
                    preferred.push((edge as u32, up_first));
                    heap.push(HeapNode { bound: node_bound, id: next_id, fixings: other });
                    next_id += 1;
                    plunge = Some(preferred);
                }
            }
        }
    }

    let inc = incumbent.expect("an incumbent always exists after the root");
    global_bound = global_bound.min(inc.objective);
    let gap = match status {
        SolveStatus::Optimal => {
            global_bound = inc.objective;
            0.0
        }
        _ => relative_gap(inc.objective, global_bound),
    };
    Ok(MilpSolution {
        x: inc.x,
        w: inc.w,
        objective: inc.objective,
        bound: global_bound,
        gap,
        status,
        stats,
    })
}

fn objective_floor(model: &MilpModel) -> f64 {
    match model.kind {
        ModelKind::Potts => 0.0,
        ModelKind::Multicut => model.vars.iter().map(|v| v.objective.min(0.0)).sum(),
    }
}

/// The image is recoverable from the fit-row right-hand sides.
fn potts_image(model: &MilpModel) -> ImageGray {
    let np = model.rows * model.cols;
    let data: Vec<f64> = model.constraints[..np].iter().map(|c| c.rhs).collect();
    ImageGray::new(model.rows, model.cols, data).expect("fit rows hold the image")
}

fn lp_solve_deadline(lp: &mut DualSimplex, deadline: Option<Instant>) -> Result<LpOutcome, Error> {
    const CHUNK: u64 = 4096;
    loop {
        let out = lp.solve(CHUNK)?;
        if out.status != LpStatus::IterLimit {
            return Ok(out);
        }
        if let Some(d) = deadline {
            if Instant::now() >= d {
                return Ok(out);
            }
        }
    }
}

fn apply_fixings(lp: &mut DualSimplex, applied: &mut Vec<(u32, bool)>, wanted: &[(u32, bool)]) {
    // plunging only appends, so skip the common prefix
    let common = applied.iter().zip(wanted).take_while(|(a, b)| a == b).count();
    for &(e, _) in applied[common..].iter() {
        lp.set_bounds(e as usize, 0.0, 1.0);
    }
    for &(e, v) in wanted[common..].iter() {
        let b = if v { 1.0 } else { 0.0 };
        lp.set_bounds(e as usize, b, b);
    }
    applied.truncate(common);
    applied.extend_from_slice(&wanted[common..]);
}

fn add_cut(lp: &mut DualSimplex, seen: &mut HashSet<(Vec<usize>, usize)>, cut: &CycleCut) -> bool {
    let mut key = cut.cycle.clone();
    key.sort_unstable();
    if !seen.insert((key, cut.rhs_edge)) {
        return false;
    }
    let terms: Vec<(usize, f64)> =
        cut.cycle.iter().map(|&e| (e, if e == cut.rhs_edge { -1.0 } else { 1.0 })).collect();
    lp.add_row(&terms, 0.0, f64::NEG_INFINITY, 0.0);
    true
}

fn most_fractional(xfrac: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    let mut best_dist = f64::INFINITY;
    for (e, &v) in xfrac.iter().enumerate() {
        if (v - v.round()).abs() > 1e-7 {
            let dist = (v - 0.5).abs();
            if dist < best_dist - 1e-15 {
                best_dist = dist;
                best = Some(e);
            }
        }
    }
    best
}

fn consider_candidate(
    model: &MilpModel,
    img: Option<&ImageGray>,
    xfrac: &[f64],
    incumbent: &mut Option<Incumbent>,
) {
    let rounded = EdgeLabeling(xfrac.iter().map(|&v| v >= 0.5).collect());
    let cand = evaluate_candidate(model, img, &rounded);
    replace_if_better(incumbent, cand);
}

fn replace_if_better(incumbent: &mut Option<Incumbent>, cand: Incumbent) {
    let better =
        incumbent.as_ref().map(|inc| cand.objective < inc.objective - 1e-12).unwrap_or(true);
    if better {
        *incumbent = Some(cand);
    }
}

/// Exhaustive oracle: enumerates every edge subset (|E| ≤ 20), maps each to
/// its closure, refits, and returns the cheapest segmentation. Every
/// segmentation is reachable and closures never cost more, so the minimum
/// over closures is the true optimum of the Potts model.
pub fn brute_force_oracle(img: &ImageGray, lambda: f64) -> Result<MilpSolution, Error> {
    let g = GridGraph::new(img.rows(), img.cols())?;
    let ne = g.num_edges();
    if ne > 20 {
        return Err(Error::TooLarge(format!(
            "oracle enumerates 2^|E| labelings; |E| = {ne} exceeds 20"
        )));
    }
    let mut best_obj = f64::INFINITY;
    let mut best_labels: Option<LabelMap> = None;
    for mask in 0u64..(1u64 << ne) {
        let x = EdgeLabeling((0..ne).map(|e| mask >> e & 1 == 1).collect());
        let labels = components_of_dormant(&g, &x);
        let (_, obj) = refit_segments(img, &labels, lambda);
        if obj < best_obj {
            best_obj = obj;
            best_labels = Some(labels);
        }
    }
    let labels = best_labels.expect("at least one labeling");
    let (w, obj) = refit_segments(img, &labels, lambda);
    Ok(MilpSolution {
        x: induced_multicut(&g, &labels),
        w: Some(w),
        objective: obj,
        bound: obj,
        gap: 0.0,
        status: SolveStatus::Optimal,
        stats: SolverStats::default(),
    })
}

/// Exhaustive multicut oracle: enumerates valid multicuts only.
pub fn brute_force_multicut(model: &MilpModel) -> Result<MilpSolution, Error> {
    assert_eq!(model.kind, ModelKind::Multicut);
    let g = model.grid();
    let ne = g.num_edges();
    if ne > 20 {
        return Err(Error::TooLarge(format!("|E| = {ne} exceeds 20")));
    }
    let mut best_obj = f64::INFINITY;
    let mut best_x: Option<EdgeLabeling> = None;
    for mask in 0u64..(1u64 << ne) {
        let x = EdgeLabeling((0..ne).map(|e| mask >> e & 1 == 1).collect());
        if closure(&g, &x) != x {
            continue; // not an induced multicut
        }
        let obj = multicut_objective(model, &x);
        if obj < best_obj {
            best_obj = obj;
            best_x = Some(x);
        }
    }
    let x = best_x.expect("the empty multicut is always valid");
    Ok(MilpSolution {
        x,
        w: None,
        objective: best_obj,
        bound: best_obj,
        gap: 0.0,
        status: SolveStatus::Optimal,
        stats: SolverStats::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_multicut_ilp, build_potts_milp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn img_1x2(a: f64, b: f64) -> ImageGray {
        ImageGray::new(1, 2, vec![a, b]).unwrap()
    }

    fn img_2x2_split() -> ImageGray {
        ImageGray::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap()
    }

    fn random_image(m: usize, n: usize, seed: u64) -> ImageGray {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ImageGray::new(m, n, (0..m * n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    /// Piecewise oracle for the 1×2 Potts LP relaxation: given cap c = M·x
    /// on |∇w| the best data cost is max(0, |Δy| − c), so the LP optimum is
    /// the minimum of max(0, |Δy| − M·x) + λ·x over the breakpoints of x.
    fn lp_1x2_oracle(dy: f64, lambda: f64, big_m: f64) -> f64 {
        [0.0, (dy / big_m).min(1.0), 1.0]
            .iter()
            .map(|&x| (dy - big_m * x).max(0.0) + lambda * x)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn lp_relaxation_1x2_matches_piecewise_oracle() {
        for &(lambda, big_m) in &[(10.0, 1.0), (0.4, 1.0), (0.5, 2.0), (1.0, 1.0)] {
            let model = build_potts_milp(&img_1x2(0.0, 1.0), lambda, big_m, false).unwrap();
            let (obj, values) = solve_lp_relaxation(&model, &[]).unwrap();
            let want = lp_1x2_oracle(1.0, lambda, big_m);
            assert!((obj - want).abs() < 1e-7, "λ={lambda} M={big_m}: got {obj} want {want}");
            if lambda > big_m {
                assert!(values[0].abs() < 1e-7, "edge should stay dormant");
            }
        }
        // frozen value for the λ=10 case: the data term wins, x stays at 0
        let model = build_potts_milp(&img_1x2(0.0, 1.0), 10.0, 1.0, false).unwrap();
        let (obj, _) = solve_lp_relaxation(&model, &[]).unwrap();
        assert!((obj - 1.0).abs() < 1e-7);
    }

    #[test]
    fn lp_relaxation_all_fixed_one_is_free_fit() {
        let img = random_image(3, 3, 7);
        let model = build_potts_milp(&img, 0.3, 1.0, true).unwrap();
        let fix: Vec<(usize, bool)> = (0..model.num_binaries).map(|e| (e, true)).collect();
        let (obj, values) = solve_lp_relaxation(&model, &fix).unwrap();
        let lambda_cost = 0.3 * model.num_binaries as f64;
        assert!((obj - lambda_cost).abs() < 1e-7, "w=y fits exactly, got {obj}");
        for (p, &y) in img.pixels().iter().enumerate() {
            assert!((values[model.w_var(p)] - y).abs() < 1e-7);
        }
    }

    #[test]
    fn lp_relaxation_all_fixed_zero_is_best_constant_fit() {
        let img = random_image(3, 4, 11);
        let model = build_potts_milp(&img, 0.05, 1.0, false).unwrap();
        let fix: Vec<(usize, bool)> = (0..model.num_binaries).map(|e| (e, false)).collect();
        let (obj, _) = solve_lp_relaxation(&model, &fix).unwrap();
        let mut vals = img.pixels().to_vec();
        vals.sort_by(f64::total_cmp);
        let med = vals[(vals.len() - 1) / 2];
        let want: f64 = vals.iter().map(|v| (v - med).abs()).sum();
        assert!((obj - want).abs() < 1e-7, "got {obj} want {want}");
    }

    #[test]
    fn separation_examples() {
        let g = GridGraph::new(2, 2).unwrap();
        // unit square with one active edge: violated
        let cuts = separate_cycle_cuts(&g, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(cuts.len(), 1);
        assert_eq!(cuts[0].rhs_edge, 0);
        assert_eq!(cuts[0].cycle.len(), 4);
        // fractional violation: 0.1+0.1+0.1 < 0.6
        let cuts = separate_cycle_cuts(&g, &[0.6, 0.1, 0.1, 0.1]);
        assert!(!cuts.is_empty());
        assert_eq!(cuts[0].rhs_edge, 0);
        // induced multicuts never yield cuts
        let g3 = GridGraph::new(3, 3).unwrap();
        for mask in [0u64, 5, 100, 4000] {
            let x = EdgeLabeling((0..g3.num_edges()).map(|e| mask >> (e % 12) & 1 == 1).collect());
            let mc = closure(&g3, &x);
            let xf: Vec<f64> = mc.0.iter().map(|&b| f64::from(u8::from(b))).collect();
            assert!(separate_cycle_cuts(&g3, &xf).is_empty());
        }
    }

    #[test]
    fn refit_examples() {
        // {0,0,1} → median 0, deviation 1
        let img = ImageGray::new(1, 3, vec![0.0, 0.0, 1.0]).unwrap();
        let labels = LabelMap::from_raw_labels(1, 3, &[0, 0, 0]).unwrap();
        let (w, obj) = refit_segments(&img, &labels, 0.5);
        assert_eq!(w, vec![0.0, 0.0, 0.0]);
        assert!((obj - 1.0).abs() < 1e-12);

        // single-pixel segments: zero deviation, objective = λ|E|
        let img = random_image(2, 2, 1);
        let labels = LabelMap::from_raw_labels(2, 2, &[0, 1, 2, 3]).unwrap();
        let (_, obj) = refit_segments(&img, &labels, 0.25);
        assert!((obj - 0.25 * 4.0).abs() < 1e-12);

        // 2×2, rows as segments
        let labels = LabelMap::from_raw_labels(2, 2, &[0, 0, 1, 1]).unwrap();
        let (w, obj) = refit_segments(&img_2x2_split(), &labels, 0.1);
        assert_eq!(w, vec![0.0, 0.0, 1.0, 1.0]);
        assert!((obj - 0.2).abs() < 1e-12);
    }

    #[test]
    fn oracle_1x2_examples() {
        let sol = brute_force_oracle(&img_1x2(0.0, 1.0), 0.4).unwrap();
        assert!((sol.objective - 0.4).abs() < 1e-12);
        assert_eq!(sol.x.count_active(), 1);
        // splitting still wins at λ=0.6: the best constant fit costs 1.0
        let sol = brute_force_oracle(&img_1x2(0.0, 1.0), 0.6).unwrap();
        assert!((sol.objective - 0.6).abs() < 1e-12);
        assert_eq!(sol.x.count_active(), 1);
        // merging wins once λ exceeds the constant-fit cost
        let sol = brute_force_oracle(&img_1x2(0.0, 1.0), 1.2).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-12);
        assert_eq!(sol.x.count_active(), 0);
        // single pixel
        let one = ImageGray::new(1, 1, vec![0.3]).unwrap();
        let sol = brute_force_oracle(&one, 0.9).unwrap();
        assert_eq!(sol.objective, 0.0);
        // size guard
        let big = ImageGray::constant(5, 5, 0.5).unwrap();
        assert!(matches!(brute_force_oracle(&big, 0.1), Err(Error::TooLarge(_))));
    }

    #[test]
    fn branch_and_cut_2x2_split() {
        let model = build_potts_milp(&img_2x2_split(), 0.1, 1.0, true).unwrap();
        let sol = branch_and_cut(&model, &SolveLimits::exact()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 0.2).abs() < 1e-7, "got {}", sol.objective);
        let g = model.grid();
        assert!(sol.x.0[g.col_edge_id(0, 0)]);
        assert!(sol.x.0[g.col_edge_id(0, 1)]);
        assert!(!sol.x.0[g.row_edge_id(0, 0)]);
        assert!(!sol.x.0[g.row_edge_id(1, 0)]);
        let w = sol.w.unwrap();
        assert!((w[0] - 0.0).abs() < 1e-9 && (w[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn branch_and_cut_constant_image() {
        let img = ImageGray::constant(3, 3, 0.7).unwrap();
        let model = build_potts_milp(&img, 0.2, 1.0, true).unwrap();
        let sol = branch_and_cut(&model, &SolveLimits::exact()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective.abs() < 1e-9);
        assert_eq!(sol.x.count_active(), 0);
    }

    #[test]
    fn branch_and_cut_matches_oracle_on_random_3x3() {
        for seed in 0..12 {
            let img = random_image(3, 3, seed);
            for &lambda in &[0.01, 0.05, 0.2] {
                let model = build_potts_milp(&img, lambda, 1.0, true).unwrap();
                let sol = branch_and_cut(&model, &SolveLimits::exact()).unwrap();
                let oracle = brute_force_oracle(&img, lambda).unwrap();
                assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed} λ={lambda}");
                assert!(
                    (sol.objective - oracle.objective).abs() < 1e-6,
                    "seed {seed} λ={lambda}: bc {} oracle {}",
                    sol.objective,
                    oracle.objective
                );
                assert!(sol.bound <= sol.objective + 1e-9);
            }
        }
    }

    #[test]
    fn branch_and_cut_multicut_examples() {
        // constant image: all coefficients positive, empty multicut wins
        let img = ImageGray::constant(2, 3, 0.5).unwrap();
        let model = build_multicut_ilp(&img, 0.3).unwrap();
        let sol = branch_and_cut(&model, &SolveLimits::exact()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective.abs() < 1e-9);
        assert_eq!(sol.x.count_active(), 0);

        // 1×2 with full contrast: activating the edge pays off
        let model = build_multicut_ilp(&img_1x2(0.0, 1.0), 0.5).unwrap();
        let sol = branch_and_cut(&model, &SolveLimits::exact()).unwrap();
        assert!((sol.objective + 0.5).abs() < 1e-9);
        assert_eq!(sol.x.count_active(), 1);

        // 2×2 split: both column edges active, objective 2(0.2 − 1.0)
        let model = build_multicut_ilp(&img_2x2_split(), 0.2).unwrap();
        let sol = branch_and_cut(&model, &SolveLimits::exact()).unwrap();
        let oracle = brute_force_multicut(&model).unwrap();
        assert!((oracle.objective + 1.6).abs() < 1e-12);
        assert!((sol.objective - oracle.objective).abs() < 1e-7);
        assert_eq!(sol.x.count_active(), 2);
    }

    #[test]
    fn branch_and_cut_multicut_matches_enumeration() {
        for seed in 0..8 {
            let img = random_image(2, 3, 100 + seed);
            for &lambda in &[0.05, 0.2, 0.5] {
                let model = build_multicut_ilp(&img, lambda).unwrap();
                let sol = branch_and_cut(&model, &SolveLimits::exact()).unwrap();
                let oracle = brute_force_multicut(&model).unwrap();
                assert_eq!(sol.status, SolveStatus::Optimal);
                assert!(
                    (sol.objective - oracle.objective).abs() < 1e-6,
                    "seed {seed} λ={lambda}: bc {} oracle {}",
                    sol.objective,
                    oracle.objective
                );
            }
        }
    }

    #[test]
    fn theorem_one_logic_holds_at_optima() {
        for seed in 20..26 {
            let img = random_image(3, 3, seed);
            let model = build_potts_milp(&img, 0.05, 1.0, true).unwrap();
            let sol = branch_and_cut(&model, &SolveLimits::exact()).unwrap();
            let g = model.grid();
            let w = sol.w.unwrap();
            for e in 0..g.num_edges() {
                let (u, v) = g.edge_endpoints(e);
                let grad = (w[v] - w[u]).abs();
                assert_eq!(sol.x.0[e], grad > 1e-7, "edge {e}: grad {grad}");
            }
        }
    }

    #[test]
    fn node_limit_reports_honest_status_and_valid_bound() {
        let img = random_image(4, 4, 99);
        let model = build_potts_milp(&img, 0.05, 1.0, true).unwrap();
        let limits = SolveLimits { node_limit: Some(1), gap_threshold: 0.0, ..Default::default() };
        let sol = branch_and_cut(&model, &limits).unwrap();
        if sol.status != SolveStatus::Optimal {
            assert_eq!(sol.status, SolveStatus::NodeLimit);
        }
        assert!(sol.bound <= sol.objective + 1e-9);
        // the incumbent is always a genuine closed segmentation
        let g = model.grid();
        assert_eq!(closure(&g, &sol.x), sol.x);
    }

    #[test]
    fn trace_log_has_one_line_per_node() {
        let img = random_image(3, 3, 5);
        let model = build_potts_milp(&img, 0.05, 1.0, true).unwrap();
        let mut buf = Vec::new();
        let sol = branch_and_cut_traced(&model, &SolveLimits::exact(), Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(!lines.is_empty());
        assert!(lines.len() as u64 <= sol.stats.nodes + 1);
        for line in lines {
            assert!(line.starts_with("node "), "{line}");
            assert!(line.contains("bound") && line.contains("incumbent") && line.contains("cuts"));
        }
    }
}
