//! Dense two-phase simplex for the small linear programs in this crate.
//!
//! Problems are stated as `minimize c·x` subject to linear rows and `x >= 0`.
//! Pivoting uses Dantzig's rule and falls back to Bland's rule after a run of
//! degenerate pivots, so results are deterministic for a given input.

/// Row relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible { phase_one_value: f64 },
    Unbounded,
}

/// Feasibility tolerance used to accept a phase-one optimum.
pub const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        LinearProgram { n_vars, objective: vec![0.0; n_vars], rows: Vec::new() }
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.rows.push(Row { coeffs, relation, rhs });
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    m: usize,
    /// Columns: structural, slack/surplus, artificial, then rhs.
    width: usize,
    n_struct: usize,
    n_art_start: usize,
    a: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let m = lp.rows.len();
        let n_slack = lp.rows.iter().filter(|r| r.relation != Relation::Eq).count();
        let n_art = lp
            .rows
            .iter()
            .filter(|r| {
                let flip = r.rhs < 0.0;
                match r.relation {
                    Relation::Eq => true,
                    Relation::Le => flip,
                    Relation::Ge => !flip,
                }
            })
            .count();
        let n_struct = lp.n_vars;
        let n_art_start = n_struct + n_slack;
        let width = n_art_start + n_art + 1;
        let mut a = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut slack = n_struct;
        let mut art = n_art_start;
        for (i, row) in lp.rows.iter().enumerate() {
            let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            let r = &mut a[i * width..(i + 1) * width];
            for &(j, v) in &row.coeffs {
                r[j] += sign * v;
            }
            r[width - 1] = sign * row.rhs;
            let rel = match (row.relation, sign < 0.0) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (rel, _) => rel,
            };
            match rel {
                Relation::Le => {
                    r[slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    r[slack] = -1.0;
                    slack += 1;
                    r[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    r[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Tableau { m, width, n_struct, n_art_start, a, basis }
    }

    fn rhs(&self, i: usize) -> f64 {
        self.a[i * self.width + self.width - 1]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let pv = self.a[row * w + col];
        for j in 0..w {
            self.a[row * w + j] /= pv;
        }
        let pivot_row: Vec<f64> = self.a[row * w..(row + 1) * w].to_vec();
        for i in 0..self.m {
            if i == row {
                continue;
            }
            let f = self.a[i * w + col];
            if f != 0.0 {
                let r = &mut self.a[i * w..(i + 1) * w];
                for j in 0..w {
                    r[j] -= f * pivot_row[j];
                }
                r[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Minimizes `cost` over the columns `< allowed`. Returns false if unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> bool {
        let w = self.width;
        let mut degenerate_run = 0usize;
        let max_iter = 50 * (self.m + w) + 1000;
        for _ in 0..max_iter {
            // Reduced costs c_j - c_B B^-1 A_j.
            let mut reduced = cost[..allowed].to_vec();
            for i in 0..self.m {
                let cb = cost[self.basis[i]];
                if cb != 0.0 {
                    let r = &self.a[i * w..i * w + allowed];
                    for j in 0..allowed {
                        reduced[j] -= cb * r[j];
                    }
                }
            }
            let bland = degenerate_run > 50;
            let mut enter = None;
            let mut best = -COST_TOL;
            for (j, &rc) in reduced.iter().enumerate() {
                if self.basis.contains(&j) {
                    continue;
                }
                if rc < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(col) = enter else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let v = self.a[i * w + col];
                if v > PIVOT_TOL {
                    let ratio = self.rhs(i) / v;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((row, ratio)) = leave else { return false };
            degenerate_run = if ratio.abs() < 1e-14 { degenerate_run + 1 } else { 0 };
            self.pivot(row, col);
        }
        true
    }

    fn run(mut self, lp: &LinearProgram) -> LpOutcome {
        let w = self.width;
        let n_cols = w - 1;
        if self.n_art_start < n_cols {
            let mut cost = vec![0.0; n_cols];
            for c in cost.iter_mut().skip(self.n_art_start) {
                *c = 1.0;
            }
            self.optimize(&cost, n_cols);
            let infeas: f64 = (0..self.m)
                .filter(|&i| self.basis[i] >= self.n_art_start)
                .map(|i| self.rhs(i))
                .sum();
            let scale = 1.0 + lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
            if infeas > FEAS_TOL * scale {
                return LpOutcome::Infeasible { phase_one_value: infeas };
            }
            // Drive artificials out of the basis where possible.
            for i in 0..self.m {
                if self.basis[i] >= self.n_art_start {
                    if let Some(j) = (0..self.n_art_start).find(|&j| self.a[i * w + j].abs() > 1e-9) {
                        self.pivot(i, j);
                    }
                }
            }
        }
        let mut cost = vec![0.0; n_cols];
        cost[..self.n_struct].copy_from_slice(&lp.objective);
        if !self.optimize(&cost, self.n_art_start) {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![0.0; self.n_struct];
        for i in 0..self.m {
            let b = self.basis[i];
            if b < self.n_struct {
                x[b] = self.rhs(i).max(0.0);
            }
        }
        let value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        LpOutcome::Optimal { x, value }
    }
}
