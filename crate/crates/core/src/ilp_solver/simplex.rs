//! Two-phase bounded-variable primal simplex with an explicit dense basis inverse.
//!
//! Solves `min c'x  s.t.  A x (<= | =) b,  0 <= x <= u`. Every row receives a
//! slack column (bounded `[0, inf)` for `<=`, `[0, 0]` for `=`); rows whose
//! slack cannot start feasibly get an artificial column for phase one.
//! Pricing is Dantzig's rule, switching to Bland's rule after a run of
//! degenerate pivots so that cycling cannot occur.

use super::Relation;

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;
const REFACTOR_PERIOD: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

/// A dense-in-rows, sparse-in-columns linear program.
/// Sparse row `(terms, relation, rhs)` with terms as `(column, coefficient)`.
pub type SparseRow = (Vec<(usize, f64)>, Relation, f64);

#[derive(Debug, Clone, Default)]
pub struct LpModel {
    pub costs: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<SparseRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum At {
    Lower,
    Upper,
    Basic,
}

struct Tableau {
    m: usize,
    columns: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    b: Vec<f64>,
    /// Column index of the basic variable in each row.
    basis: Vec<usize>,
    state: Vec<At>,
    x: Vec<f64>,
    /// Row-major `m x m` inverse of the basis matrix.
    binv: Vec<f64>,
    pivots_since_refactor: usize,
}

impl Tableau {
    fn value_of_nonbasic(&self, j: usize) -> f64 {
        match self.state[j] {
            At::Lower => self.lower[j],
            At::Upper => self.upper[j],
            At::Basic => self.x[j],
        }
    }

    /// `B^-1 a_j`
    fn ftran(&self, j: usize, out: &mut [f64]) {
        out.fill(0.0);
        let m = self.m;
        for &(k, a) in &self.columns[j] {
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.binv[i * m + k] * a;
            }
        }
    }

    /// Duals `y' = c_B' B^-1`.
    fn duals(&self, costs: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        let m = self.m;
        for i in 0..m {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, &r) in y.iter_mut().zip(row) {
                    *yk += cb * r;
                }
            }
        }
    }

    fn reduced_cost(&self, costs: &[f64], y: &[f64], j: usize) -> f64 {
        costs[j] - self.columns[j].iter().map(|&(k, a)| y[k] * a).sum::<f64>()
    }

    /// Rebuilds `B^-1` by Gauss-Jordan elimination and recomputes basic values.
    fn refactor(&mut self) -> bool {
        let m = self.m;
        let mut mat = vec![0.0; m * m];
        for (i, &j) in self.basis.iter().enumerate() {
            for &(k, a) in &self.columns[j] {
                mat[k * m + i] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let mut piv = col;
            let mut best = mat[col * m + col].abs();
            for r in col + 1..m {
                let v = mat[r * m + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-12 {
                return false;
            }
            if piv != col {
                for c in 0..m {
                    mat.swap(piv * m + c, col * m + c);
                    inv.swap(piv * m + c, col * m + c);
                }
            }
            let d = mat[col * m + col];
            for c in 0..m {
                mat[col * m + c] /= d;
                inv[col * m + c] /= d;
            }
            for r in 0..m {
                if r != col {
                    let f = mat[r * m + col];
                    if f != 0.0 {
                        for c in 0..m {
                            mat[r * m + c] -= f * mat[col * m + c];
                            inv[r * m + c] -= f * inv[col * m + c];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        self.recompute_basic_values();
        self.pivots_since_refactor = 0;
        true
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut rhs = self.b.clone();
        for j in 0..self.columns.len() {
            if self.state[j] != At::Basic {
                let v = self.value_of_nonbasic(j);
                if v != 0.0 {
                    for &(k, a) in &self.columns[j] {
                        rhs[k] -= a * v;
                    }
                }
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let v: f64 = row.iter().zip(&rhs).map(|(a, b)| a * b).sum();
            self.x[self.basis[i]] = v;
        }
    }

    /// Runs primal simplex iterations for `costs`. Returns `false` if unbounded.
    fn optimize(&mut self, costs: &[f64]) -> bool {
        let m = self.m;
        let n = self.columns.len();
        let mut y = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut degenerate = 0usize;

        loop {
            if self.pivots_since_refactor >= REFACTOR_PERIOD && !self.refactor() {
                // Singular basis from accumulated error; keep the product form.
                self.pivots_since_refactor = 0;
            }
            self.duals(costs, &mut y);
            let bland = degenerate >= DEGENERATE_RUN;

            // Pricing.
            let mut entering = None;
            let mut best = 0.0;
            for j in 0..n {
                let dir = match self.state[j] {
                    At::Basic => continue,
                    At::Lower if self.upper[j] > self.lower[j] => 1.0,
                    At::Upper if self.upper[j] > self.lower[j] => -1.0,
                    _ => continue,
                };
                let d = self.reduced_cost(costs, &y, j);
                let gain = -d * dir;
                if gain > OPT_TOL {
                    if bland {
                        entering = Some((j, dir));
                        break;
                    }
                    if gain > best {
                        best = gain;
                        entering = Some((j, dir));
                    }
                }
            }
            let Some((q, dir)) = entering else {
                return true;
            };

            // Ratio test.
            self.ftran(q, &mut alpha);
            let mut row_choice: Option<(usize, At, f64, f64)> = None;
            for (r, &a) in alpha.iter().enumerate() {
                let delta = -dir * a;
                let jb = self.basis[r];
                let (limit, bound) = if delta < -PIVOT_TOL {
                    ((self.x[jb] - self.lower[jb]).max(0.0) / -delta, At::Lower)
                } else if delta > PIVOT_TOL && self.upper[jb].is_finite() {
                    ((self.upper[jb] - self.x[jb]).max(0.0) / delta, At::Upper)
                } else {
                    continue;
                };
                let take = match row_choice {
                    None => true,
                    Some((lr, _, best_limit, best_alpha)) => {
                        if limit < best_limit - 1e-12 {
                            true
                        } else if limit <= best_limit + 1e-12 {
                            if bland {
                                jb < self.basis[lr]
                            } else {
                                a.abs() > best_alpha
                            }
                        } else {
                            false
                        }
                    }
                };
                if take {
                    row_choice = Some((r, bound, limit, a.abs()));
                }
            }
            let flip = self.upper[q] - self.lower[q];
            let (theta, leave) = match row_choice {
                Some((r, bound, limit, _)) if limit < flip => (limit, Some((r, bound))),
                _ => (flip, None),
            };
            if theta.is_infinite() {
                return false;
            }
            degenerate = if theta <= 1e-12 { degenerate + 1 } else { 0 };

            // Update primal values.
            let step = dir * theta;
            if step != 0.0 {
                for (r, &a) in alpha.iter().enumerate() {
                    let jb = self.basis[r];
                    self.x[jb] -= step * a;
                }
            }
            match leave {
                None => {
                    // Bound flip of the entering variable.
                    self.state[q] = if dir > 0.0 { At::Upper } else { At::Lower };
                    self.x[q] = self.value_of_nonbasic(q);
                }
                Some((r, bound)) => {
                    let out = self.basis[r];
                    self.x[q] = self.value_of_nonbasic(q) + step;
                    self.state[q] = At::Basic;
                    self.state[out] = bound;
                    self.x[out] = self.value_of_nonbasic(out);
                    self.basis[r] = q;
                    self.pivot_inverse(r, &alpha);
                }
            }
        }
    }

    fn pivot_inverse(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let pivot = alpha[r];
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for v in prow.iter_mut() {
            *v /= pivot;
        }
        for (i, row) in before.chunks_mut(m).enumerate() {
            let f = alpha[i];
            if f != 0.0 {
                for (v, &p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
            }
        }
        for (i, row) in after.chunks_mut(m).enumerate() {
            let f = alpha[r + 1 + i];
            if f != 0.0 {
                for (v, &p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
            }
        }
        self.pivots_since_refactor += 1;
    }
}

/// Solves the linear program.
pub fn solve(model: &LpModel) -> LpOutcome {
    let n = model.costs.len();
    let m = model.rows.len();

    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, (coefs, _, _)) in model.rows.iter().enumerate() {
        for &(j, a) in coefs {
            if a != 0.0 {
                columns[j].push((i, a));
            }
        }
    }
    let mut lower = vec![0.0; n];
    let mut upper = model.upper.clone();
    let b: Vec<f64> = model.rows.iter().map(|r| r.2).collect();

    // Slack columns.
    let slack0 = n;
    for (i, (_, rel, _)) in model.rows.iter().enumerate() {
        columns.push(vec![(i, 1.0)]);
        lower.push(0.0);
        upper.push(match rel {
            Relation::Le => f64::INFINITY,
            Relation::Eq => 0.0,
        });
    }
    // Starting basis: slacks where feasible, artificials elsewhere.
    let mut basis = Vec::with_capacity(m);
    let mut artificials = Vec::new();
    for (i, &bi) in b.iter().enumerate() {
        let s = slack0 + i;
        if bi >= -FEAS_TOL && bi <= upper[s] + FEAS_TOL {
            basis.push(s);
        } else {
            let sign = if bi >= 0.0 { 1.0 } else { -1.0 };
            let a = columns.len();
            columns.push(vec![(i, sign)]);
            lower.push(0.0);
            upper.push(f64::INFINITY);
            basis.push(a);
            artificials.push(a);
        }
    }
    let total = columns.len();
    let mut state = vec![At::Lower; total];
    let mut x = vec![0.0; total];
    let mut binv = vec![0.0; m * m];
    for (i, &j) in basis.iter().enumerate() {
        state[j] = At::Basic;
        // columns of the starting basis are +-unit vectors
        let sign = columns[j][0].1;
        binv[i * m + i] = 1.0 / sign;
        x[j] = b[i] / sign;
    }

    let mut t = Tableau {
        m,
        columns,
        lower,
        upper,
        b,
        basis,
        state,
        x,
        binv,
        pivots_since_refactor: 0,
    };

    if !artificials.is_empty() {
        let mut phase1 = vec![0.0; total];
        for &a in &artificials {
            phase1[a] = 1.0;
        }
        if !t.optimize(&phase1) {
            return LpOutcome::Infeasible;
        }
        t.refactor();
        let infeasibility: f64 = artificials.iter().map(|&a| t.x[a]).sum();
        if infeasibility > FEAS_TOL * (1.0 + m as f64) {
            return LpOutcome::Infeasible;
        }
        for &a in &artificials {
            t.upper[a] = 0.0;
            if t.state[a] != At::Basic {
                t.state[a] = At::Lower;
            }
            t.x[a] = 0.0;
        }
    }

    let mut phase2 = vec![0.0; total];
    phase2[..n].copy_from_slice(&model.costs);
    if !t.optimize(&phase2) {
        return LpOutcome::Unbounded;
    }
    if t.pivots_since_refactor > 0 {
        t.refactor();
    }

    let x: Vec<f64> = (0..n)
        .map(|j| {
            let v = t.x[j].clamp(0.0, model.upper[j]);
            if v.abs() < FEAS_TOL {
                0.0
            } else if (v - model.upper[j]).abs() < FEAS_TOL {
                model.upper[j]
            } else {
                v
            }
        })
        .collect();
    let objective = x.iter().zip(&model.costs).map(|(v, c)| v * c).sum();
    LpOutcome::Optimal { x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(costs: &[f64], rows: Vec<SparseRow>) -> LpModel {
        LpModel {
            costs: costs.to_vec(),
            upper: vec![1.0; costs.len()],
            rows,
        }
    }

    fn optimum(out: LpOutcome) -> (Vec<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn box_only() {
        let (x, obj) = optimum(solve(&model(&[-1.0, 2.0], vec![])));
        assert_eq!(x, vec![1.0, 0.0]);
        assert_eq!(obj, -1.0);
    }

    #[test]
    fn packing_row() {
        let rows = vec![(vec![(0, 1.0), (1, 1.0)], Relation::Le, 1.0)];
        let (x, obj) = optimum(solve(&model(&[-1.0, -1.0], rows)));
        assert!((obj + 1.0).abs() < 1e-12);
        assert!((x[0] + x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_needs_phase_one() {
        // x0 + x1 = 1.5, min x0 + 2 x1 -> x0 = 1, x1 = 0.5
        let rows = vec![(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.5)];
        let (x, obj) = optimum(solve(&model(&[1.0, 2.0], rows)));
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 0.5).abs() < 1e-9);
        assert!((obj - 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_system() {
        let rows = vec![
            (vec![(0, 1.0)], Relation::Eq, 1.0),
            (vec![(0, 1.0)], Relation::Eq, 0.0),
        ];
        assert_eq!(solve(&model(&[0.0], rows)), LpOutcome::Infeasible);
        let rows = vec![(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 3.0)];
        assert_eq!(solve(&model(&[0.0, 0.0], rows)), LpOutcome::Infeasible);
    }

    #[test]
    fn negative_rhs_le() {
        // -x0 <= -1 forces x0 = 1
        let rows = vec![(vec![(0, -1.0)], Relation::Le, -1.0)];
        let (x, _) = optimum(solve(&model(&[5.0], rows)));
        assert_eq!(x, vec![1.0]);
    }

    #[test]
    fn fractional_vertex() {
        // classic odd cycle: x0+x1<=1, x1+x2<=1, x0+x2<=1, max sum -> 1.5
        let rows = vec![
            (vec![(0, 1.0), (1, 1.0)], Relation::Le, 1.0),
            (vec![(1, 1.0), (2, 1.0)], Relation::Le, 1.0),
            (vec![(0, 1.0), (2, 1.0)], Relation::Le, 1.0),
        ];
        let (x, obj) = optimum(solve(&model(&[-1.0, -1.0, -1.0], rows)));
        assert!((obj + 1.5).abs() < 1e-9);
        assert!(x.iter().all(|v| (v - 0.5).abs() < 1e-9));
    }
}
