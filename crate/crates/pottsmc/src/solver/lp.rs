//! Bounded-variable dual simplex over a sparse LU factorization.
//!
//! The engine is tailored to branch-and-cut use:
//! * it starts from the all-slack basis, which is dual feasible for every
//!   model we build (costs are nonnegative, or negative-cost binaries start
//!   at their upper bound);
//! * variable bound changes and appended cut rows keep the basis dual
//!   feasible, so node re-solves warm-start from the incumbent basis;
//! * the objective of the current basic solution is a valid lower bound on
//!   the LP optimum at every iteration, so interrupted solves still yield
//!   usable node bounds.
//!
//! The basis inverse is a sparse LU — singleton rows/columns are peeled
//! first (simplex bases are mostly triangular), the remaining bump is
//! factored left-looking with partial pivoting — refreshed with
//! product-form eta updates between refactorizations.

use crate::error::Error;

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const SINGULAR_TOL: f64 = 1e-11;
const ETA_REFRESH: usize = 64;
const STALL_LIMIT: u64 = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Objective of the final basic solution. For `Optimal` this is the LP
    /// optimum; for `IterLimit` it is still a valid lower bound on it.
    pub objective: f64,
    pub iterations: u64,
}

/// LP in computational form: minimize c·v over l ≤ v ≤ u subject to
/// `A v + s = rhs`, one bounded slack per row (row sense lives in the slack
/// bounds: `≤` is s ∈ [0,∞), `≥` is s ∈ (−∞,0], `=` is s ∈ [0,0]).
pub struct DualSimplex {
    nrows: usize,
    nstruct: usize,
    // structural columns of the initial rows, CSC
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
    /// entries of rows appended after construction, per structural column
    extra_cols: Vec<Vec<(u32, f64)>>,
    rhs: Vec<f64>,
    // cost/lower/upper per variable; slacks appended after structurals
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,

    state: Vec<VarState>,
    basis: Vec<usize>, // variable occupying each row slot
    xb: Vec<f64>,      // value of the basic variable per row slot
    dj: Vec<f64>,      // reduced costs
    objective: f64,

    lu: Option<LuFactors>,
    etas: Vec<Eta>,
    needs_refresh: bool,

    pub total_iterations: u64,
}

struct Eta {
    slot: usize,
    diag: f64,
    col: Vec<(u32, f64)>, // B⁻¹ a_entering without the slot entry
}

impl DualSimplex {
    /// `rows`: (sparse terms over structural vars, rhs, slack lower, slack upper).
    pub fn new(
        cost: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        rows: &[(Vec<(usize, f64)>, f64, f64, f64)],
    ) -> Self {
        let nstruct = cost.len();
        assert_eq!(lower.len(), nstruct);
        assert_eq!(upper.len(), nstruct);
        let nrows = rows.len();
        let mut counts = vec![0usize; nstruct];
        for (terms, _, _, _) in rows {
            for &(j, _) in terms {
                counts[j] += 1;
            }
        }
        let mut col_ptr = vec![0usize; nstruct + 1];
        for j in 0..nstruct {
            col_ptr[j + 1] = col_ptr[j] + counts[j];
        }
        let mut row_idx = vec![0u32; col_ptr[nstruct]];
        let mut values = vec![0f64; col_ptr[nstruct]];
        let mut next = col_ptr.clone();
        let mut rhs = Vec::with_capacity(nrows);
        for (r, (terms, b, _, _)) in rows.iter().enumerate() {
            rhs.push(*b);
            for &(j, v) in terms {
                row_idx[next[j]] = r as u32;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        let mut all_cost = cost;
        let mut all_lower = lower;
        let mut all_upper = upper;
        for (_, _, slo, shi) in rows {
            all_cost.push(0.0);
            all_lower.push(*slo);
            all_upper.push(*shi);
        }
        let state = vec![VarState::AtLower; nstruct + nrows];
        let mut solver = DualSimplex {
            nrows,
            nstruct,
            col_ptr,
            row_idx,
            values,
            extra_cols: vec![Vec::new(); nstruct],
            rhs,
            cost: all_cost,
            lower: all_lower,
            upper: all_upper,
            state,
            basis: (nstruct..nstruct + nrows).collect(),
            xb: vec![0.0; nrows],
            dj: Vec::new(),
            objective: 0.0,
            lu: None,
            etas: Vec::new(),
            needs_refresh: true,
            total_iterations: 0,
        };
        for r in 0..nrows {
            solver.state[nstruct + r] = VarState::Basic;
        }
        for j in 0..nstruct {
            solver.state[j] = if solver.cost[j] < 0.0 && solver.upper[j].is_finite() {
                VarState::AtUpper
            } else {
                VarState::AtLower
            };
        }
        solver.dj = solver.cost.clone();
        solver
    }

    pub fn num_rows(&self) -> usize {
        self.nrows
    }

    fn num_vars(&self) -> usize {
        self.nstruct + self.nrows
    }

    fn bound_value(&self, j: usize) -> f64 {
        let v = match self.state[j] {
            VarState::AtUpper => self.upper[j],
            _ => self.lower[j],
        };
        debug_assert!(v.is_finite(), "nonbasic variable {j} rests on an infinite bound");
        v
    }

    /// Current values of all structural variables.
    pub fn structural_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = (0..self.nstruct)
            .map(|j| match self.state[j] {
                VarState::AtUpper => self.upper[j],
                _ => self.lower[j],
            })
            .collect();
        for (slot, &j) in self.basis.iter().enumerate() {
            if j < self.nstruct {
                out[j] = self.xb[slot];
            }
        }
        out
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Changes the bounds of a structural variable. Dual feasibility is
    /// restored on the next refresh (statuses are re-derived from the
    /// recomputed reduced costs).
    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        assert!(j < self.nstruct && lo <= hi);
        self.lower[j] = lo;
        self.upper[j] = hi;
        self.needs_refresh = true;
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    /// Appends a row. Its slack enters the basis, so the current basis
    /// remains dual feasible.
    pub fn add_row(&mut self, terms: &[(usize, f64)], rhs: f64, slack_lo: f64, slack_hi: f64) {
        let r = self.nrows as u32;
        for &(j, v) in terms {
            assert!(j < self.nstruct);
            if v != 0.0 {
                self.extra_cols[j].push((r, v));
            }
        }
        self.nrows += 1;
        self.rhs.push(rhs);
        self.cost.push(0.0);
        self.lower.push(slack_lo);
        self.upper.push(slack_hi);
        self.dj.push(0.0);
        self.state.push(VarState::Basic);
        self.basis.push(self.num_vars() - 1);
        self.xb.push(0.0);
        self.lu = None;
        self.etas.clear();
        self.needs_refresh = true;
    }

    fn for_each_col_entry(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j >= self.nstruct {
            f(j - self.nstruct, 1.0);
            return;
        }
        for k in self.col_ptr[j]..self.col_ptr[j + 1] {
            f(self.row_idx[k] as usize, self.values[k]);
        }
        for &(r, v) in &self.extra_cols[j] {
            f(r as usize, v);
        }
    }

    /// Runs dual simplex until primal feasibility, an infeasibility proof,
    /// or the iteration budget runs out.
    pub fn solve(&mut self, max_iterations: u64) -> Result<LpOutcome, Error> {
        if self.needs_refresh || self.lu.is_none() {
            self.refactorize()?;
        }
        let mut iters = 0u64;
        let mut stall = 0u64;
        let mut last_obj = self.objective;
        loop {
            let bland = stall > STALL_LIMIT;
            let (slot, below) = match self.choose_leaving(bland) {
                None => {
                    self.objective = self.full_objective();
                    return Ok(LpOutcome {
                        status: LpStatus::Optimal,
                        objective: self.objective,
                        iterations: iters,
                    });
                }
                Some(x) => x,
            };
            if iters >= max_iterations {
                self.objective = self.full_objective();
                return Ok(LpOutcome {
                    status: LpStatus::IterLimit,
                    objective: self.objective,
                    iterations: iters,
                });
            }
            if !self.pivot(slot, below, bland)? {
                return Ok(LpOutcome {
                    status: LpStatus::Infeasible,
                    objective: f64::INFINITY,
                    iterations: iters,
                });
            }
            iters += 1;
            self.total_iterations += 1;
            if self.objective > last_obj + 1e-12 * (1.0 + last_obj.abs()) {
                last_obj = self.objective;
                stall = 0;
            } else {
                stall += 1;
            }
            if self.etas.len() >= ETA_REFRESH {
                self.refactorize()?;
            }
        }
    }

    fn choose_leaving(&self, bland: bool) -> Option<(usize, bool)> {
        let mut best: Option<(usize, bool)> = None;
        let mut best_viol = 0.0f64;
        let mut best_var = usize::MAX;
        for slot in 0..self.nrows {
            let j = self.basis[slot];
            let v = self.xb[slot];
            let (viol, below) = if v < self.lower[j] - PRIMAL_TOL {
                (self.lower[j] - v, true)
            } else if v > self.upper[j] + PRIMAL_TOL {
                (v - self.upper[j], false)
            } else {
                continue;
            };
            if bland {
                if j < best_var {
                    best_var = j;
                    best = Some((slot, below));
                }
            } else if viol > best_viol {
                best_viol = viol;
                best = Some((slot, below));
            }
        }
        best
    }

    /// One dual simplex pivot on the given leaving row. Returns Ok(false)
    /// when the row proves primal infeasibility.
    fn pivot(&mut self, slot: usize, below: bool, bland: bool) -> Result<bool, Error> {
        let leaving = self.basis[slot];
        let dir = if below { -1.0 } else { 1.0 };

        // pivot row alpha over nonbasic columns
        let rho = self.btran_unit(slot);
        let mut alpha: Vec<(usize, f64)> = Vec::with_capacity(64);
        for j in 0..self.num_vars() {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let mut dot = 0.0;
            self.for_each_col_entry(j, |r, v| dot += v * rho[r]);
            if dot.abs() > PIVOT_TOL {
                alpha.push((j, dot));
            }
        }

        // dual ratio test, two passes: min ratio, then largest pivot among ties
        let eligible = |state: VarState, abar: f64, fixed: bool| -> bool {
            !fixed
                && match state {
                    VarState::AtLower => abar > PIVOT_TOL,
                    VarState::AtUpper => abar < -PIVOT_TOL,
                    VarState::Basic => false,
                }
        };
        let mut theta = f64::INFINITY;
        for &(j, a) in &alpha {
            let abar = dir * a;
            if eligible(self.state[j], abar, self.lower[j] == self.upper[j]) {
                let num = match self.state[j] {
                    VarState::AtLower => self.dj[j].max(0.0),
                    _ => (-self.dj[j]).max(0.0),
                };
                theta = theta.min(num / abar.abs());
            }
        }
        if !theta.is_finite() {
            return Ok(false);
        }
        let mut entering = usize::MAX;
        let mut best_piv = 0.0f64;
        let mut alpha_q = 0.0f64;
        for &(j, a) in &alpha {
            let abar = dir * a;
            if eligible(self.state[j], abar, self.lower[j] == self.upper[j]) {
                let num = match self.state[j] {
                    VarState::AtLower => self.dj[j].max(0.0),
                    _ => (-self.dj[j]).max(0.0),
                };
                if num / abar.abs() <= theta + 1e-10 {
                    let better = if bland {
                        entering == usize::MAX || j < entering
                    } else {
                        abar.abs() > best_piv
                    };
                    if better {
                        entering = j;
                        best_piv = abar.abs();
                        alpha_q = a;
                    }
                }
            }
        }
        if entering == usize::MAX {
            return Ok(false);
        }

        // entering column through the current basis inverse
        let beta = self.ftran_col(entering);
        let beta_r = beta[slot];
        if (beta_r - alpha_q).abs() > 1e-6 * (1.0 + alpha_q.abs()) {
            // factors drifted: rebuild everything and retry the pivot
            self.refactorize()?;
            return self.pivot(slot, below, bland);
        }
        if beta_r.abs() <= PIVOT_TOL {
            return Err(Error::invalid_argument(
                "numerically singular pivot in dual simplex".into(),
            ));
        }

        let target = if below { self.lower[leaving] } else { self.upper[leaving] };
        let t = (self.xb[slot] - target) / beta_r;
        let enter_from = self.bound_value(entering);
        for (i, b) in beta.iter().enumerate() {
            if i != slot && *b != 0.0 {
                self.xb[i] -= t * b;
            }
        }
        self.xb[slot] = enter_from + t;

        let d_q = self.dj[entering];
        let theta_d = d_q / alpha_q;
        if theta_d != 0.0 {
            for &(j, a) in &alpha {
                if j != entering {
                    self.dj[j] -= theta_d * a;
                }
            }
        }
        self.dj[entering] = 0.0;
        self.dj[leaving] = -theta_d;
        self.objective += t * d_q;

        self.state[leaving] = if below { VarState::AtLower } else { VarState::AtUpper };
        self.state[entering] = VarState::Basic;
        self.basis[slot] = entering;

        let mut col: Vec<(u32, f64)> = Vec::with_capacity(16);
        for (i, b) in beta.iter().enumerate() {
            if i != slot && b.abs() > 1e-14 {
                col.push((i as u32, *b));
            }
        }
        self.etas.push(Eta { slot, diag: beta_r, col });
        Ok(true)
    }

    /// Rebuilds the factorization; refreshes reduced costs, nonbasic
    /// statuses, primal values, and the objective from scratch.
    pub fn refactorize(&mut self) -> Result<(), Error> {
        let cols: Vec<Vec<(u32, f64)>> = self
            .basis
            .iter()
            .map(|&j| {
                let mut col = Vec::new();
                self.for_each_col_entry(j, |r, v| col.push((r as u32, v)));
                col
            })
            .collect();
        self.lu = Some(LuFactors::factorize(self.nrows, &cols)?);
        self.etas.clear();

        // reduced costs from scratch
        let mut y = vec![0.0; self.nrows];
        for (slot, &j) in self.basis.iter().enumerate() {
            y[slot] = self.cost[j];
        }
        self.lu.as_ref().unwrap().btran(&mut y);
        for j in 0..self.num_vars() {
            if self.state[j] == VarState::Basic {
                self.dj[j] = 0.0;
            } else {
                let mut dot = 0.0;
                self.for_each_col_entry(j, |r, v| dot += v * y[r]);
                self.dj[j] = self.cost[j] - dot;
            }
        }
        // nonbasic statuses must match the sign of the reduced cost
        for j in 0..self.num_vars() {
            match self.state[j] {
                VarState::Basic => {}
                _ if self.lower[j] == self.upper[j] => self.state[j] = VarState::AtLower,
                VarState::AtLower if self.dj[j] < -DUAL_TOL => {
                    debug_assert!(self.upper[j].is_finite());
                    self.state[j] = VarState::AtUpper;
                }
                VarState::AtUpper if self.dj[j] > DUAL_TOL => {
                    debug_assert!(self.lower[j].is_finite());
                    self.state[j] = VarState::AtLower;
                }
                VarState::AtUpper if !self.upper[j].is_finite() => {
                    self.state[j] = VarState::AtLower;
                }
                _ => {}
            }
        }

        // primal values: xb = B⁻¹ (rhs − A_N x_N)
        let mut b = self.rhs.clone();
        for j in 0..self.num_vars() {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let xj = self.bound_value(j);
            if xj != 0.0 {
                self.for_each_col_entry(j, |r, v| b[r] -= v * xj);
            }
        }
        self.lu.as_ref().unwrap().ftran(&mut b);
        self.xb = b;
        self.objective = self.full_objective();
        self.needs_refresh = false;
        Ok(())
    }

    fn full_objective(&self) -> f64 {
        let mut z = 0.0;
        for j in 0..self.num_vars() {
            if self.state[j] != VarState::Basic && self.cost[j] != 0.0 {
                z += self.cost[j] * self.bound_value(j);
            }
        }
        for (slot, &j) in self.basis.iter().enumerate() {
            z += self.cost[j] * self.xb[slot];
        }
        z
    }

    fn ftran_col(&self, j: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.nrows];
        self.for_each_col_entry(j, |r, v| x[r] = v);
        self.lu.as_ref().expect("factorized").ftran(&mut x);
        for eta in &self.etas {
            let t = x[eta.slot] / eta.diag;
            if t != 0.0 {
                for &(i, v) in &eta.col {
                    x[i as usize] -= v * t;
                }
            }
            x[eta.slot] = t;
        }
        x
    }

    fn btran_unit(&self, slot: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        y[slot] = 1.0;
        for eta in self.etas.iter().rev() {
            let mut s = y[eta.slot];
            for &(i, v) in &eta.col {
                s -= v * y[i as usize];
            }
            y[eta.slot] = s / eta.diag;
        }
        self.lu.as_ref().expect("factorized").btran(&mut y);
        y
    }

    /// Maximum primal residual |A v + s − rhs| over all rows, for tests.
    #[cfg(test)]
    fn primal_residual(&self) -> f64 {
        let mut lhs = vec![0.0; self.nrows];
        for j in 0..self.num_vars() {
            let xj = if self.state[j] == VarState::Basic {
                let slot = self.basis.iter().position(|&b| b == j).unwrap();
                self.xb[slot]
            } else {
                self.bound_value(j)
            };
            if xj != 0.0 {
                self.for_each_col_entry(j, |r, v| lhs[r] += v * xj);
            }
        }
        lhs.iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Sparse LU of a basis matrix, stored as an elimination sequence: forward
/// row operations (L) plus pivot rows over later pivot slots (U).
struct LuFactors {
    n: usize,
    pivot_row: Vec<u32>,
    pivot_slot: Vec<u32>,
    pivot_val: Vec<f64>,
    l_ops: Vec<Vec<(u32, f64)>>,
    u_rows: Vec<Vec<(u32, f64)>>,
    slot_step: Vec<u32>,
}

impl LuFactors {
    fn factorize(n: usize, cols: &[Vec<(u32, f64)>]) -> Result<Self, Error> {
        let mut cols_of_row: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (c, col) in cols.iter().enumerate() {
            for &(r, v) in col {
                if v != 0.0 {
                    cols_of_row[r as usize].push(c as u32);
                }
            }
        }
        let mut row_count: Vec<usize> = cols_of_row.iter().map(|c| c.len()).collect();
        let mut col_count: Vec<usize> = cols.iter().map(|e| e.len()).collect();
        let mut row_active = vec![true; n];
        let mut col_active = vec![true; n];

        let mut pivot_row = Vec::with_capacity(n);
        let mut pivot_slot = Vec::with_capacity(n);
        let mut pivot_val = Vec::with_capacity(n);
        let mut l_ops: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
        let mut u_rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);

        let lookup = |c: usize, r: u32| -> f64 {
            cols[c].iter().find(|&&(rr, _)| rr == r).map(|&(_, v)| v).unwrap_or(0.0)
        };

        let mut row_singles: Vec<u32> =
            (0..n as u32).filter(|&r| row_count[r as usize] == 1).collect();
        let mut col_singles: Vec<u32> =
            (0..n as u32).filter(|&c| col_count[c as usize] == 1).collect();

        // Peeling: singleton pivots generate no fill, and simplex bases are
        // near-triangular, so this usually consumes everything.
        loop {
            if let Some(r32) = row_singles.pop() {
                let r = r32 as usize;
                if !row_active[r] || row_count[r] != 1 {
                    continue;
                }
                let c = *cols_of_row[r]
                    .iter()
                    .find(|&&c| col_active[c as usize])
                    .expect("active count is one") as usize;
                let pv = lookup(c, r32);
                if pv.abs() < SINGULAR_TOL {
                    return Err(Error::invalid_argument("singular basis (row singleton)".into()));
                }
                let mut ops = Vec::new();
                for &(rr, v) in &cols[c] {
                    let rr_us = rr as usize;
                    if rr_us != r && row_active[rr_us] && v != 0.0 {
                        ops.push((rr, v / pv));
                        row_count[rr_us] -= 1;
                        if row_count[rr_us] == 1 {
                            row_singles.push(rr);
                        }
                    }
                }
                row_active[r] = false;
                col_active[c] = false;
                pivot_row.push(r32);
                pivot_slot.push(c as u32);
                pivot_val.push(pv);
                l_ops.push(ops);
                u_rows.push(Vec::new());
                continue;
            }
            if let Some(c32) = col_singles.pop() {
                let c = c32 as usize;
                if !col_active[c] || col_count[c] != 1 {
                    continue;
                }
                let (r32, pv) = *cols[c]
                    .iter()
                    .find(|&&(r, _)| row_active[r as usize])
                    .expect("active count is one");
                if pv.abs() < SINGULAR_TOL {
                    return Err(Error::invalid_argument("singular basis (column singleton)".into()));
                }
                let r = r32 as usize;
                let mut urow = Vec::new();
                for &cc in &cols_of_row[r] {
                    let cc_us = cc as usize;
                    if cc_us != c && col_active[cc_us] {
                        let v = lookup(cc_us, r32);
                        if v != 0.0 {
                            urow.push((cc, v));
                            col_count[cc_us] -= 1;
                            if col_count[cc_us] == 1 {
                                col_singles.push(cc);
                            }
                        }
                    }
                }
                row_active[r] = false;
                col_active[c] = false;
                pivot_row.push(r32);
                pivot_slot.push(c32);
                pivot_val.push(pv);
                l_ops.push(Vec::new());
                u_rows.push(urow);
                continue;
            }
            break;
        }

        // Bump: left-looking LU with partial pivoting on the rest.
        let bump_cols: Vec<usize> = (0..n).filter(|&c| col_active[c]).collect();
        let bump_rows: Vec<usize> = (0..n).filter(|&r| row_active[r]).collect();
        if bump_cols.len() != bump_rows.len() {
            return Err(Error::invalid_argument("structurally singular basis".into()));
        }
        let b = bump_cols.len();
        if b > 0 {
            let mut local_of_row = vec![u32::MAX; n];
            for (lr, &r) in bump_rows.iter().enumerate() {
                local_of_row[r] = lr as u32;
            }
            let mut order = bump_cols;
            order.sort_by_key(|&c| (col_count[c], c));

            let mut lcols: Vec<Vec<(u32, f64)>> = Vec::with_capacity(b);
            let mut pivot_of_local: Vec<i64> = vec![-1; b];
            let mut step_row: Vec<u32> = Vec::with_capacity(b);
            let mut diag: Vec<f64> = Vec::with_capacity(b);
            let mut work = vec![0.0f64; b];
            let mut visited = vec![false; b];
            let mut stack: Vec<(u32, usize)> = Vec::new();
            let base = pivot_row.len();
            // reserve the op-sequence entries up front; u_rows are scattered
            for _ in 0..b {
                l_ops.push(Vec::new());
                u_rows.push(Vec::new());
            }

            for (step, &c) in order.iter().enumerate() {
                let mut pattern: Vec<u32> = Vec::new();
                for &(r, v) in &cols[c] {
                    let lr = local_of_row[r as usize];
                    if lr != u32::MAX {
                        work[lr as usize] = v;
                        pattern.push(lr);
                    }
                }
                // reach of the column through finished L columns, topologically
                let mut topo: Vec<u32> = Vec::new();
                for &start in &pattern {
                    if visited[start as usize] {
                        continue;
                    }
                    visited[start as usize] = true;
                    stack.push((start, 0));
                    while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                        let k = pivot_of_local[node as usize];
                        let children: &[(u32, f64)] = if k >= 0 { &lcols[k as usize] } else { &[] };
                        if *next < children.len() {
                            let child = children[*next].0;
                            *next += 1;
                            if !visited[child as usize] {
                                visited[child as usize] = true;
                                stack.push((child, 0));
                            }
                        } else {
                            topo.push(node);
                            stack.pop();
                        }
                    }
                }
                for &node in topo.iter().rev() {
                    let k = pivot_of_local[node as usize];
                    if k >= 0 {
                        let xv = work[node as usize];
                        if xv != 0.0 {
                            for &(lr, lv) in &lcols[k as usize] {
                                work[lr as usize] -= lv * xv;
                            }
                        }
                    }
                }
                let mut piv_local = u32::MAX;
                let mut piv_abs = 0.0f64;
                for &node in &topo {
                    if pivot_of_local[node as usize] < 0 {
                        let a = work[node as usize].abs();
                        if a > piv_abs {
                            piv_abs = a;
                            piv_local = node;
                        }
                    }
                }
                if piv_abs < SINGULAR_TOL {
                    return Err(Error::invalid_argument("singular basis (bump)".into()));
                }
                let pv = work[piv_local as usize];
                let mut lcol = Vec::new();
                for &node in &topo {
                    let x = work[node as usize];
                    visited[node as usize] = false;
                    work[node as usize] = 0.0;
                    if x == 0.0 || node == piv_local {
                        continue;
                    }
                    let k = pivot_of_local[node as usize];
                    if k >= 0 {
                        // U entry: row = earlier step k, column = this slot
                        u_rows[base + k as usize].push((c as u32, x));
                    } else {
                        lcol.push((node, x / pv));
                    }
                }
                pivot_of_local[piv_local as usize] = step as i64;
                step_row.push(piv_local);
                diag.push(pv);
                l_ops[base + step] = lcol
                    .iter()
                    .map(|&(node, m)| (bump_rows[node as usize] as u32, m))
                    .collect();
                lcols.push(lcol);
            }
            for step in 0..b {
                pivot_row.push(bump_rows[step_row[step] as usize] as u32);
                pivot_slot.push(order[step] as u32);
                pivot_val.push(diag[step]);
            }
        }

        let mut slot_step = vec![0u32; n];
        for (k, &c) in pivot_slot.iter().enumerate() {
            slot_step[c as usize] = k as u32;
        }
        Ok(LuFactors { n, pivot_row, pivot_slot, pivot_val, l_ops, u_rows, slot_step })
    }

    /// Solves B x = b in place; input indexed by row, output by basis slot.
    fn ftran(&self, x: &mut [f64]) {
        for k in 0..self.n {
            let xr = x[self.pivot_row[k] as usize];
            if xr != 0.0 {
                for &(i, m) in &self.l_ops[k] {
                    x[i as usize] -= m * xr;
                }
            }
        }
        let mut sol = vec![0.0f64; self.n];
        for k in (0..self.n).rev() {
            let mut s = x[self.pivot_row[k] as usize];
            for &(c, u) in &self.u_rows[k] {
                s -= u * sol[self.slot_step[c as usize] as usize];
            }
            sol[k] = s / self.pivot_val[k];
        }
        for k in 0..self.n {
            x[self.pivot_slot[k] as usize] = sol[k];
        }
    }

    /// Solves Bᵀ y = c in place; input indexed by basis slot, output by row.
    fn btran(&self, y: &mut [f64]) {
        let mut z = vec![0.0f64; self.n];
        for k in 0..self.n {
            let zk = y[self.pivot_slot[k] as usize] / self.pivot_val[k];
            z[k] = zk;
            if zk != 0.0 {
                for &(c, u) in &self.u_rows[k] {
                    y[c as usize] -= u * zk;
                }
            }
        }
        for k in 0..self.n {
            y[self.pivot_row[k] as usize] = z[k];
        }
        for k in (0..self.n).rev() {
            let mut s = y[self.pivot_row[k] as usize];
            for &(i, m) in &self.l_ops[k] {
                s -= m * y[i as usize];
            }
            y[self.pivot_row[k] as usize] = s;
        }
    }
}
