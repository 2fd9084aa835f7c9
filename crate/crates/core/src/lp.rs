//! Dense two-phase primal simplex for small linear programs.
//!
//! Used for LP relaxations in [`crate::allocator`] and for exact flow
//! sub-problems. Problems are `min c'x` subject to linear rows and finite
//! lower bounds on every variable; upper bounds become explicit rows.

use std::fmt;

/// Feasibility and optimality tolerance of the relaxation.
pub const LP_TOLERANCE: f64 = 1e-7;
const PIVOT_TOLERANCE: f64 = 1e-9;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub vars: Vec<Variable>,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn add_var(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
            integer: false,
        });
        self.objective.push(cost);
        self.vars.len() - 1
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) {
        self.rows.push(Row {
            name: name.into(),
            coeffs,
            sense,
            rhs,
        });
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLimit(pub usize);

/// Solves `lp` to optimality. Deterministic: the same input always yields
/// the same basis sequence.
pub fn solve(lp: &LinearProgram, max_iterations: usize) -> Result<LpOutcome, IterationLimit> {
    let n = lp.vars.len();
    // Column index in the reduced problem, or None for fixed variables.
    let mut col_of = vec![None; n];
    let mut active = Vec::new();
    for (j, v) in lp.vars.iter().enumerate() {
        debug_assert!(v.lower.is_finite(), "lower bounds must be finite");
        if v.upper < v.lower - LP_TOLERANCE {
            return Ok(LpOutcome::Infeasible);
        }
        if v.upper - v.lower > LP_TOLERANCE {
            col_of[j] = Some(active.len());
            active.push(j);
        }
    }

    // Rows over shifted variables x' = x - lower.
    let mut rows: Vec<(Vec<(usize, f64)>, Sense, f64)> = Vec::with_capacity(lp.rows.len());
    for row in &lp.rows {
        let mut rhs = row.rhs;
        let mut coeffs = Vec::with_capacity(row.coeffs.len());
        for &(j, a) in &row.coeffs {
            rhs -= a * lp.vars[j].lower;
            if let Some(c) = col_of[j] {
                coeffs.push((c, a));
            }
        }
        if coeffs.is_empty() {
            let ok = match row.sense {
                Sense::Le => rhs >= -LP_TOLERANCE,
                Sense::Ge => rhs <= LP_TOLERANCE,
                Sense::Eq => rhs.abs() <= LP_TOLERANCE,
            };
            if !ok {
                return Ok(LpOutcome::Infeasible);
            }
            continue;
        }
        rows.push((coeffs, row.sense, rhs));
    }
    for (c, &j) in active.iter().enumerate() {
        let v = &lp.vars[j];
        if v.upper.is_finite() {
            rows.push((vec![(c, 1.0)], Sense::Le, v.upper - v.lower));
        }
    }

    let costs: Vec<f64> = active.iter().map(|&j| lp.objective[j]).collect();
    let constant: f64 = lp
        .vars
        .iter()
        .zip(&lp.objective)
        .map(|(v, c)| c * v.lower)
        .sum();

    let mut tableau = Tableau::new(active.len(), &rows);
    let outcome = tableau.run(&costs, max_iterations)?;
    Ok(match outcome {
        Phase::Infeasible => LpOutcome::Infeasible,
        Phase::Unbounded => LpOutcome::Unbounded,
        Phase::Optimal => {
            let shifted = tableau.primal(active.len());
            let mut x: Vec<f64> = lp.vars.iter().map(|v| v.lower).collect();
            for (c, &j) in active.iter().enumerate() {
                x[j] += shifted[c];
            }
            let objective = costs.iter().zip(&shifted).map(|(c, v)| c * v).sum::<f64>() + constant;
            LpOutcome::Optimal { x, objective }
        }
    })
}

enum Phase {
    Optimal,
    Infeasible,
    Unbounded,
}

struct Tableau {
    m: usize,
    width: usize,
    // m rows of `width` entries; last entry is the right-hand side.
    data: Vec<f64>,
    basis: Vec<usize>,
    first_artificial: usize,
    iterations: usize,
}

impl Tableau {
    fn new(structural: usize, rows: &[(Vec<(usize, f64)>, Sense, f64)]) -> Self {
        let m = rows.len();
        let slacks = rows.iter().filter(|r| r.1 != Sense::Eq).count();
        let artificials = rows.iter().filter(|r| r.1 != Sense::Le || r.2 < 0.0).count();
        let first_artificial = structural + slacks;
        let cols = first_artificial + artificials;
        let width = cols + 1;
        let mut data = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut next_slack = structural;
        let mut next_art = first_artificial;
        for (i, (coeffs, sense, rhs)) in rows.iter().enumerate() {
            let flip = if *rhs < 0.0 { -1.0 } else { 1.0 };
            let row = &mut data[i * width..(i + 1) * width];
            for &(c, a) in coeffs {
                row[c] += flip * a;
            }
            row[cols] = flip * rhs;
            let slack_sign = match sense {
                Sense::Le => Some(1.0),
                Sense::Ge => Some(-1.0),
                Sense::Eq => None,
            };
            if let Some(s) = slack_sign {
                row[next_slack] = flip * s;
                if flip * s > 0.0 {
                    basis[i] = next_slack;
                }
                next_slack += 1;
            }
            if !(*sense == Sense::Le && flip > 0.0) {
                row[next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
        }
        Tableau {
            m,
            width,
            data,
            basis,
            first_artificial,
            iterations: 0,
        }
    }

    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.width + self.width - 1]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    /// Reduced-cost row for `costs` (over all columns) given the basis.
    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        let mut d = costs.to_vec();
        d.push(0.0);
        for i in 0..self.m {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                let row = &self.data[i * self.width..(i + 1) * self.width];
                for (dj, a) in d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    fn pivot(&mut self, r: usize, c: usize, d: &mut [f64]) {
        let w = self.width;
        let p = self.data[r * w + c];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.data[i * w + c];
            if f != 0.0 {
                let row = &mut self.data[i * w..(i + 1) * w];
                for (v, pr) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                row[c] = 0.0;
            }
        }
        let f = d[c];
        if f != 0.0 {
            for (v, pr) in d.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            d[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Primal simplex on reduced costs `d`; columns `>= allowed` never enter.
    fn optimize(
        &mut self,
        d: &mut [f64],
        allowed: usize,
        max_iterations: usize,
    ) -> Result<bool, IterationLimit> {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iterations {
                return Err(IterationLimit(self.iterations));
            }
            let bland = degenerate >= DEGENERATE_SWITCH;
            let entering = if bland {
                (0..allowed).find(|&j| d[j] < -LP_TOLERANCE)
            } else {
                let mut best = None;
                let mut best_val = -LP_TOLERANCE;
                for (j, &dj) in d.iter().enumerate().take(allowed) {
                    if dj < best_val {
                        best_val = dj;
                        best = Some(j);
                    }
                }
                best
            };
            let Some(c) = entering else {
                return Ok(true);
            };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, c);
                if a > PIVOT_TOLERANCE {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((r, best)) => {
                            ratio < best - 1e-12
                                || (ratio <= best + 1e-12 && self.basis[i] < self.basis[r])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(false);
            };
            degenerate = if ratio <= 1e-12 { degenerate + 1 } else { 0 };
            self.pivot(r, c, d);
            self.iterations += 1;
        }
    }

    fn run(&mut self, costs: &[f64], max_iterations: usize) -> Result<Phase, IterationLimit> {
        let cols = self.width - 1;
        if self.first_artificial < cols {
            let mut phase1 = vec![0.0; cols];
            for c in phase1.iter_mut().skip(self.first_artificial) {
                *c = 1.0;
            }
            let mut d = self.reduced_costs(&phase1);
            self.optimize(&mut d, cols, max_iterations)?;
            let infeasibility = -d[cols];
            if infeasibility > LP_TOLERANCE {
                return Ok(Phase::Infeasible);
            }
            self.drive_out_artificials();
        }

        let mut full = costs.to_vec();
        full.resize(cols, 0.0);
        let mut d = self.reduced_costs(&full);
        if self.optimize(&mut d, self.first_artificial, max_iterations)? {
            Ok(Phase::Optimal)
        } else {
            Ok(Phase::Unbounded)
        }
    }

    fn drive_out_artificials(&mut self) {
        let mut dummy = vec![0.0; self.width];
        let mut i = 0;
        while i < self.m {
            if self.basis[i] >= self.first_artificial {
                let col = (0..self.first_artificial).find(|&j| self.at(i, j).abs() > 1e-7);
                match col {
                    Some(c) => self.pivot(i, c, &mut dummy),
                    None => {
                        // Redundant row: remove it.
                        let w = self.width;
                        self.data.drain(i * w..(i + 1) * w);
                        self.basis.remove(i);
                        self.m -= 1;
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    fn primal(&self, structural: usize) -> Vec<f64> {
        let mut x = vec![0.0; structural];
        for i in 0..self.m {
            if self.basis[i] < structural {
                x[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(outcome: LpOutcome) -> (Vec<f64>, f64) {
        match outcome {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y  s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6), 36
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", -3.0, 0.0, f64::INFINITY);
        let y = lp.add_var("y", -5.0, 0.0, f64::INFINITY);
        lp.add_row("a", vec![(x, 1.0)], Sense::Le, 4.0);
        lp.add_row("b", vec![(y, 2.0)], Sense::Le, 12.0);
        lp.add_row("c", vec![(x, 3.0), (y, 2.0)], Sense::Le, 18.0);
        let (sol, obj) = optimal(solve(&lp, 1000).unwrap());
        assert!((obj + 36.0).abs() < 1e-9);
        assert!((sol[0] - 2.0).abs() < 1e-9 && (sol[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + 2y  s.t. x + y = 3, x >= 1, y >= 0.5, x <= 2
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 1.0, 0.0, 2.0);
        let y = lp.add_var("y", 2.0, 0.0, f64::INFINITY);
        lp.add_row("sum", vec![(x, 1.0), (y, 1.0)], Sense::Eq, 3.0);
        lp.add_row("xmin", vec![(x, 1.0)], Sense::Ge, 1.0);
        lp.add_row("ymin", vec![(y, 1.0)], Sense::Ge, 0.5);
        let (sol, obj) = optimal(solve(&lp, 1000).unwrap());
        assert!((sol[0] - 2.0).abs() < 1e-9);
        assert!((obj - 4.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 1.0, 0.0, 1.0);
        lp.add_row("r", vec![(x, 1.0)], Sense::Ge, 2.0);
        assert_eq!(solve(&lp, 100).unwrap(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", -1.0, 0.0, f64::INFINITY);
        let y = lp.add_var("y", 0.0, 0.0, f64::INFINITY);
        lp.add_row("r", vec![(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
        assert_eq!(solve(&lp, 100).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn fixed_and_shifted_variables() {
        // x fixed at 1, y in [2, 5]; min -y s.t. x + y <= 4.5
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 3.0, 1.0, 1.0);
        let y = lp.add_var("y", -1.0, 2.0, 5.0);
        lp.add_row("r", vec![(x, 1.0), (y, 1.0)], Sense::Le, 4.5);
        let (sol, obj) = optimal(solve(&lp, 100).unwrap());
        assert_eq!(sol[0], 1.0);
        assert!((sol[1] - 3.5).abs() < 1e-9);
        assert!((obj - (3.0 - 3.5)).abs() < 1e-9);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 1.0, 0.0, f64::INFINITY);
        let y = lp.add_var("y", 1.0, 0.0, f64::INFINITY);
        lp.add_row("a", vec![(x, 1.0), (y, 1.0)], Sense::Eq, 2.0);
        lp.add_row("b", vec![(x, 2.0), (y, 2.0)], Sense::Eq, 4.0);
        let (_, obj) = optimal(solve(&lp, 100).unwrap());
        assert!((obj - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's example, which cycles under the plain Dantzig rule.
        let mut lp = LinearProgram::default();
        let x: Vec<usize> = [-0.75, 150.0, -0.02, 6.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| lp.add_var(format!("x{i}"), c, 0.0, f64::INFINITY))
            .collect();
        lp.add_row("r1", vec![(x[0], 0.25), (x[1], -60.0), (x[2], -0.04), (x[3], 9.0)], Sense::Le, 0.0);
        lp.add_row("r2", vec![(x[0], 0.5), (x[1], -90.0), (x[2], -0.02), (x[3], 3.0)], Sense::Le, 0.0);
        lp.add_row("r3", vec![(x[2], 1.0)], Sense::Le, 1.0);
        let (_, obj) = optimal(solve(&lp, 10_000).unwrap());
        assert!((obj + 0.05).abs() < 1e-9);
    }
}
