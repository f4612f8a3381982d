//! Exact 0-1 integer linear programming.
//!
//! `solve_ilp` splits the problem into the connected components of its
//! variable/row incidence graph and runs best-first branch-and-bound on the
//! LP relaxation of each component, branching on the most fractional variable.

pub mod simplex;
pub mod text;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use self::simplex::{LpModel, LpOutcome};

/// Values within this distance of an integer are treated as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Row feasibility tolerance for checking 0/1 assignments.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Largest problem accepted by [`brute_force_ilp`].
pub const BRUTE_FORCE_MAX_VARS: usize = 25;
/// Open-node count above which the search switches from best-first to depth-first.
pub const NODE_BUDGET: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Le,
    Eq,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Le => "le",
            Relation::Eq => "eq",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// `(variable index, coefficient)` pairs.
    pub coefs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, assignment: &[bool]) -> f64 {
        self.coefs
            .iter()
            .filter(|(j, _)| assignment[*j])
            .map(|(_, a)| a)
            .sum()
    }

    pub fn is_satisfied(&self, assignment: &[bool]) -> bool {
        let lhs = self.activity(assignment);
        match self.relation {
            Relation::Le => lhs <= self.rhs + FEASIBILITY_TOL,
            Relation::Eq => (lhs - self.rhs).abs() <= FEASIBILITY_TOL,
        }
    }
}

/// `min c'a` over `a in {0,1}^m` subject to the rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IlpProblem {
    pub costs: Vec<f64>,
    pub rows: Vec<Row>,
}

impl IlpProblem {
    pub fn var_count(&self) -> usize {
        self.costs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.costs.len();
        if let Some(c) = self.costs.iter().find(|c| !c.is_finite()) {
            return Err(Error::Data(format!("non-finite cost {c}")));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::Data(format!("row {r} has a non-finite rhs")));
            }
            for &(j, a) in &row.coefs {
                if j >= m {
                    return Err(Error::Data(format!(
                        "row {r} references variable {j}, but only {m} exist"
                    )));
                }
                if !a.is_finite() {
                    return Err(Error::Data(format!("row {r} has a non-finite coefficient")));
                }
            }
        }
        Ok(())
    }

    pub fn is_feasible(&self, assignment: &[bool]) -> bool {
        assignment.len() == self.costs.len() && self.rows.iter().all(|r| r.is_satisfied(assignment))
    }

    /// Objective of a 0/1 vector, summed in index order.
    pub fn objective(&self, assignment: &[bool]) -> f64 {
        self.costs
            .iter()
            .zip(assignment)
            .filter(|(_, &a)| a)
            .map(|(c, _)| c)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlpSolution {
    pub assignment: Vec<bool>,
    pub objective: f64,
    /// Branch-and-bound nodes created by branching (the root is not counted).
    pub node_count: usize,
    pub status: Status,
}

impl IlpSolution {
    fn infeasible(m: usize, node_count: usize) -> Self {
        Self {
            assignment: vec![false; m],
            objective: f64::INFINITY,
            node_count,
            status: Status::Infeasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRelaxation {
    pub values: Vec<f64>,
    pub bound: f64,
}

impl LpRelaxation {
    pub fn is_integral(&self) -> bool {
        self.values
            .iter()
            .all(|v| (v - v.round()).abs() <= INTEGRALITY_TOL)
    }
}

/// A subproblem over a subset of the original variables.
#[derive(Debug, Clone)]
struct Component {
    vars: Vec<usize>,
    costs: Vec<f64>,
    /// Rows rewritten to local variable indices.
    rows: Vec<Row>,
}

/// Splits the problem into connected components of the incidence graph.
/// Variables that occur in no row are returned separately.
fn decompose(p: &IlpProblem) -> (Vec<Component>, Vec<usize>) {
    let m = p.var_count();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut in_row = vec![false; m];
    for row in &p.rows {
        let mut first = None;
        for &(j, _) in &row.coefs {
            in_row[j] = true;
            match first {
                None => first = Some(j),
                Some(f) => {
                    let (a, b) = (find(&mut parent, f), find(&mut parent, j));
                    if a != b {
                        // Union toward the smaller root keeps component order stable.
                        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                        parent[hi] = lo;
                    }
                }
            }
        }
    }

    let mut comp_of_root = vec![usize::MAX; m];
    let mut local = vec![usize::MAX; m];
    let mut comps: Vec<Component> = Vec::new();
    let mut free = Vec::new();
    for j in 0..m {
        if !in_row[j] {
            free.push(j);
            continue;
        }
        let r = find(&mut parent, j);
        if comp_of_root[r] == usize::MAX {
            comp_of_root[r] = comps.len();
            comps.push(Component {
                vars: Vec::new(),
                costs: Vec::new(),
                rows: Vec::new(),
            });
        }
        let c = &mut comps[comp_of_root[r]];
        local[j] = c.vars.len();
        c.vars.push(j);
        c.costs.push(p.costs[j]);
    }
    let mut empty_rows = Vec::new();
    for row in &p.rows {
        match row.coefs.first() {
            Some(&(j, _)) => {
                let c = comp_of_root[find(&mut parent, j)];
                comps[c].rows.push(Row {
                    coefs: row.coefs.iter().map(|&(j, a)| (local[j], a)).collect(),
                    relation: row.relation,
                    rhs: row.rhs,
                });
            }
            None => empty_rows.push(row.clone()),
        }
    }
    // Rows without variables still constrain feasibility; attach them to a
    // synthetic empty component.
    if !empty_rows.is_empty() {
        comps.push(Component {
            vars: Vec::new(),
            costs: Vec::new(),
            rows: empty_rows,
        });
    }
    (comps, free)
}

/// Builds the LP of a component with some variables fixed, substituting the
/// fixed values into the right-hand sides.
///
/// Returns `None` when a row without free variables is violated.
fn restricted_lp(comp: &Component, fixed: &[Option<bool>]) -> Option<(LpModel, Vec<usize>)> {
    let n = comp.costs.len();
    let mut col = vec![usize::MAX; n];
    let mut free_vars = Vec::new();
    for j in 0..n {
        if fixed[j].is_none() {
            col[j] = free_vars.len();
            free_vars.push(j);
        }
    }
    let mut rows = Vec::with_capacity(comp.rows.len());
    for row in &comp.rows {
        let mut rhs = row.rhs;
        let mut coefs = Vec::with_capacity(row.coefs.len());
        for &(j, a) in &row.coefs {
            match fixed[j] {
                Some(true) => rhs -= a,
                Some(false) => {}
                None => coefs.push((col[j], a)),
            }
        }
        if coefs.is_empty() {
            let ok = match row.relation {
                Relation::Le => 0.0 <= rhs + FEASIBILITY_TOL,
                Relation::Eq => rhs.abs() <= FEASIBILITY_TOL,
            };
            if !ok {
                return None;
            }
            continue;
        }
        rows.push((coefs, row.relation, rhs));
    }
    let model = LpModel {
        costs: free_vars.iter().map(|&j| comp.costs[j]).collect(),
        upper: vec![1.0; free_vars.len()],
        rows,
    };
    Some((model, free_vars))
}

/// LP relaxation value of a component under fixings, expanded to all local variables.
fn solve_node(comp: &Component, fixed: &[Option<bool>]) -> Option<(Vec<f64>, f64)> {
    let (model, free_vars) = restricted_lp(comp, fixed)?;
    let (x, _) = match simplex::solve(&model) {
        LpOutcome::Optimal { x, objective } => (x, objective),
        LpOutcome::Infeasible | LpOutcome::Unbounded => return None,
    };
    let mut values: Vec<f64> = fixed
        .iter()
        .map(|f| match f {
            Some(true) => 1.0,
            _ => 0.0,
        })
        .collect();
    for (k, &j) in free_vars.iter().enumerate() {
        values[j] = x[k];
    }
    let bound = values.iter().zip(&comp.costs).map(|(v, c)| v * c).sum();
    Some((values, bound))
}

/// LP relaxation of the whole problem with `0 <= a <= 1`.
pub fn lp_relax(p: &IlpProblem) -> Result<LpRelaxation> {
    p.validate()?;
    let (comps, free) = decompose(p);
    let mut values = vec![0.0; p.var_count()];
    for &j in &free {
        if p.costs[j] < 0.0 {
            values[j] = 1.0;
        }
    }
    for comp in &comps {
        let fixed = vec![None; comp.vars.len()];
        let (x, _) = solve_node(comp, &fixed).ok_or(Error::Infeasible)?;
        for (k, &j) in comp.vars.iter().enumerate() {
            values[j] = x[k];
        }
    }
    let bound = values.iter().zip(&p.costs).map(|(v, c)| v * c).sum();
    Ok(LpRelaxation { values, bound })
}

struct Node {
    fixed: Vec<Option<bool>>,
    bound: f64,
    values: Vec<f64>,
    seq: usize,
}

fn lex_less(a: &[bool], b: &[bool]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return !*x;
        }
    }
    false
}

/// Best assignment of a component (if feasible) and the nodes it took.
type ComponentResult = (Option<(Vec<bool>, f64)>, usize);

fn solve_component(comp: &Component) -> ComponentResult {
    let n = comp.vars.len();
    let objective = |a: &[bool]| -> f64 {
        comp.costs
            .iter()
            .zip(a)
            .filter(|(_, &x)| x)
            .map(|(c, _)| c)
            .sum()
    };
    let feasible = |a: &[bool]| comp.rows.iter().all(|r| r.is_satisfied(a));

    let root_fixed = vec![None; n];
    let Some((values, bound)) = solve_node(comp, &root_fixed) else {
        return (None, 0);
    };
    let mut open = vec![Node {
        fixed: root_fixed,
        bound,
        values,
        seq: 0,
    }];
    let mut seq = 1usize;
    let mut created = 0usize;
    let mut best: Option<(Vec<bool>, f64)> = None;

    while !open.is_empty() {
        let pick = if open.len() > NODE_BUDGET {
            open.len() - 1
        } else {
            let mut k = 0;
            for (i, node) in open.iter().enumerate() {
                let cur = &open[k];
                if node.bound < cur.bound || (node.bound == cur.bound && node.seq < cur.seq) {
                    k = i;
                }
            }
            k
        };
        let node = open.swap_remove(pick);
        if let Some((_, incumbent)) = &best {
            if node.bound >= incumbent - prune_tol(*incumbent) {
                continue;
            }
        }

        // Most fractional variable, smallest index on ties.
        let mut branch = None;
        let mut best_frac = INTEGRALITY_TOL;
        for (j, &v) in node.values.iter().enumerate() {
            let frac = (v - v.round()).abs();
            if frac > best_frac + 1e-12 {
                best_frac = frac;
                branch = Some(j);
            }
        }

        match branch {
            None => {
                let a: Vec<bool> = node.values.iter().map(|&v| v > 0.5).collect();
                if !feasible(&a) {
                    // Rounding drift; branch on the first free variable instead.
                    if let Some(j) = node.fixed.iter().position(Option::is_none) {
                        push_children(comp, &node, j, &mut open, &mut seq, &mut created);
                    }
                    continue;
                }
                let obj = objective(&a);
                let replace = match &best {
                    None => true,
                    Some((ba, bo)) => {
                        obj < bo - prune_tol(*bo)
                            || ((obj - bo).abs() <= prune_tol(*bo) && lex_less(&a, ba))
                    }
                };
                if replace {
                    best = Some((a, obj));
                }
            }
            Some(j) => push_children(comp, &node, j, &mut open, &mut seq, &mut created),
        }
    }
    (best, created)
}

fn prune_tol(incumbent: f64) -> f64 {
    1e-9 * (1.0 + incumbent.abs())
}

fn push_children(
    comp: &Component,
    node: &Node,
    j: usize,
    open: &mut Vec<Node>,
    seq: &mut usize,
    created: &mut usize,
) {
    for value in [false, true] {
        let mut fixed = node.fixed.clone();
        fixed[j] = Some(value);
        *created += 1;
        if let Some((values, bound)) = solve_node(comp, &fixed) {
            open.push(Node {
                fixed,
                bound: bound.max(node.bound),
                values,
                seq: *seq,
            });
            *seq += 1;
        }
    }
}

/// Globally optimal 0/1 solution.
pub fn solve_ilp(p: &IlpProblem) -> Result<IlpSolution> {
    p.validate()?;
    let m = p.var_count();
    let (comps, free) = decompose(p);
    let results: Vec<ComponentResult> = comps.par_iter().map(solve_component).collect();

    let mut assignment = vec![false; m];
    for &j in &free {
        assignment[j] = p.costs[j] < 0.0;
    }
    let mut node_count = 0;
    for (comp, (result, nodes)) in comps.iter().zip(results) {
        node_count += nodes;
        match result {
            Some((a, _)) => {
                for (k, &j) in comp.vars.iter().enumerate() {
                    assignment[j] = a[k];
                }
            }
            None => return Ok(IlpSolution::infeasible(m, node_count)),
        }
    }
    let objective = p.objective(&assignment);
    Ok(IlpSolution {
        assignment,
        objective,
        node_count,
        status: Status::Optimal,
    })
}

/// Exhaustive search over all `2^m` assignments, ties broken toward the
/// lexicographically smallest vector.
pub fn brute_force_ilp(p: &IlpProblem) -> Result<IlpSolution> {
    p.validate()?;
    let m = p.var_count();
    if m > BRUTE_FORCE_MAX_VARS {
        return Err(Error::Data(format!(
            "brute force limited to {BRUTE_FORCE_MAX_VARS} variables, got {m}"
        )));
    }
    let mut best: Option<(Vec<bool>, f64)> = None;
    let mut a = vec![false; m];
    // Enumerate in lexicographic order: variable 0 is the most significant bit.
    for mask in 0u64..(1u64 << m) {
        for (j, slot) in a.iter_mut().enumerate() {
            *slot = (mask >> (m - 1 - j)) & 1 == 1;
        }
        if !p.is_feasible(&a) {
            continue;
        }
        let obj = p.objective(&a);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((a.clone(), obj));
        }
    }
    Ok(match best {
        Some((assignment, objective)) => IlpSolution {
            assignment,
            objective,
            node_count: 0,
            status: Status::Optimal,
        },
        None => IlpSolution::infeasible(m, 0),
    })
}
