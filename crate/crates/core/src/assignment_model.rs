//! Assignment variables between hypotheses of adjacent slices, their costs,
//! and the consistency constraints that turn MAP inference into a 0-1 ILP.
//!
//! Costs, for hypotheses `C` with mean pixel position `m(C)`:
//!
//! ```text
//! continuation i -> j    : tl*(L(i) + L(j))     + tp *|m(i) - m(j)|^2  + ts *|i (-) j|^2
//! split        i -> j,k  : tl*(L(i) + L(j u k)) + tbp*|m(i) - m(jk)|^2 + tbs*|i (-) jk|^2
//! merge        i,j -> k  : tl*(L(i u j) + L(k)) + tbp*|m(ij) - m(k)|^2 + tbs*|ij (-) k|^2
//! appear / disappear i   : tl*L(i) + te*|i|^2
//! ```
//!
//! where `(-)` is the mean-corrected symmetric difference and `L` the
//! likelihood term of a pixel set, always evaluated within a single slice.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::component_forest::{
    centroid, complete_paths, sorted_intersect, ComponentForest, Hypothesis, HypothesisId,
};
use crate::error::{Error, Result};
use crate::ilp_solver::text::{format_problem, VarLabel};
use crate::ilp_solver::{IlpProblem, Relation, Row};
use crate::image_model::{Dims, ImageStack, ProbabilityStack, NEIGHBORS_8};
use crate::segmentation::{smoothness_weight, SliceData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentKind {
    Continuation,
    Split,
    Merge,
    Appear,
    Disappear,
}

impl AssignmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AssignmentKind::Continuation => "continuation",
            AssignmentKind::Split => "split",
            AssignmentKind::Merge => "merge",
            AssignmentKind::Appear => "appear",
            AssignmentKind::Disappear => "disappear",
        }
    }
}

/// One binary assignment variable. An empty `sources` (or `targets`) list
/// stands for the end node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentVariable {
    pub index: usize,
    pub kind: AssignmentKind,
    pub sources: Vec<HypothesisId>,
    pub targets: Vec<HypothesisId>,
    pub cost: f64,
}

impl AssignmentVariable {
    fn endpoint_label(ids: &[HypothesisId]) -> String {
        if ids.is_empty() {
            "E".to_string()
        } else {
            ids.iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(",")
        }
    }

    pub fn label(&self) -> VarLabel {
        VarLabel {
            kind: self.kind.as_str().to_string(),
            sources: Self::endpoint_label(&self.sources),
            targets: Self::endpoint_label(&self.targets),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub theta_l: f64,
    pub theta_p: f64,
    pub theta_s: f64,
    pub theta_bp: f64,
    pub theta_bs: f64,
    pub theta_e: f64,
    /// Maximum centroid distance between linked hypotheses, in pixels.
    pub d_max: f64,
    /// Zero the size term of appearances in the first slice and
    /// disappearances in the last one.
    pub free_boundary: bool,
}

impl Default for CostParams {
    /// Values tuned on the synthetic suite.
    fn default() -> Self {
        Self {
            theta_l: 1.0,
            theta_p: 0.5,
            theta_s: 0.01,
            theta_bp: 0.5,
            theta_bs: 0.01,
            theta_e: 0.001,
            d_max: 6.0,
            free_boundary: false,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let thetas = [
            ("theta_l", self.theta_l),
            ("theta_p", self.theta_p),
            ("theta_s", self.theta_s),
            ("theta_bp", self.theta_bp),
            ("theta_bs", self.theta_bs),
            ("theta_e", self.theta_e),
        ];
        for (name, v) in thetas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0")));
            }
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(Error::Config("d_max must be > 0".into()));
        }
        Ok(())
    }
}

/// Gray levels and probabilities of the whole stack.
#[derive(Debug, Clone, Copy)]
pub struct StackData<'a> {
    pub image: &'a ImageStack,
    pub probs: &'a ProbabilityStack,
    pub sigma: f64,
}

impl<'a> StackData<'a> {
    pub fn new(image: &'a ImageStack, probs: &'a ProbabilityStack, sigma: f64) -> Result<Self> {
        if image.dims() != probs.dims() || image.depth() != probs.depth() {
            return Err(Error::Dimension(
                "image and probability stacks differ in shape".into(),
            ));
        }
        Ok(Self {
            image,
            probs,
            sigma,
        })
    }

    pub fn slice(&self, z: usize) -> SliceData<'a> {
        SliceData {
            dims: self.image.dims(),
            intensity: self.image.slice(z),
            prob: self.probs.slice(z),
        }
    }
}

/// Log-odds of background over foreground summed over the pixel set, plus the
/// pairwise weights across its 8-connected boundary.
pub fn likelihood_term(pixels: &[u32], slice: SliceData<'_>, sigma: f64) -> f64 {
    let dims = slice.dims;
    let inside = |q: usize| pixels.binary_search(&(q as u32)).is_ok();
    let mut data = 0.0;
    let mut boundary = 0.0;
    for &p in pixels {
        let p = p as usize;
        let prob = slice.prob[p];
        data += (1.0 - prob).ln() - prob.ln();
        for &(dx, dy) in &NEIGHBORS_8 {
            if let Some(q) = dims.offset(p, dx, dy) {
                if !inside(q) {
                    boundary += smoothness_weight(dims, slice.intensity, p, q, sigma)
                        .expect("offset pixels are neighbors");
                }
            }
        }
    }
    data + boundary
}

/// `|a Δ (b + t)|` where `t` rounds the centroid difference `m(a) - m(b)` to
/// whole pixels.
pub fn set_difference_mean_corrected(dims: Dims, a: &[u32], b: &[u32]) -> usize {
    let ca = centroid(dims, a);
    let cb = centroid(dims, b);
    let tx = (ca[0] - cb[0]).round() as i64;
    let ty = (ca[1] - cb[1]).round() as i64;
    // Keys ordered like row-major indices, valid for translated coordinates too.
    let key = |x: i64, y: i64| (y << 32) + x;
    let ka: Vec<i64> = a
        .iter()
        .map(|&p| {
            let (x, y) = dims.coords(p as usize);
            key(x as i64, y as i64)
        })
        .collect();
    let kb: Vec<i64> = b
        .iter()
        .map(|&p| {
            let (x, y) = dims.coords(p as usize);
            key(x as i64 + tx, y as i64 + ty)
        })
        .collect();
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < ka.len() && j < kb.len() {
        match ka[i].cmp(&kb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    a.len() + b.len() - 2 * common
}

fn union_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            i += 1;
            j += 1;
        }
    }
    out
}

fn distance_sq(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Evaluates assignment costs for one forest, caching the likelihood term of
/// every hypothesis.
pub struct CostModel<'a> {
    forest: &'a ComponentForest,
    data: StackData<'a>,
    params: &'a CostParams,
    likelihood: Vec<f64>,
}

impl<'a> CostModel<'a> {
    pub fn new(
        forest: &'a ComponentForest,
        data: StackData<'a>,
        params: &'a CostParams,
    ) -> Result<Self> {
        params.validate()?;
        if forest.dims() != data.image.dims() || forest.depth() != data.image.depth() {
            return Err(Error::Dimension("forest and stack differ in shape".into()));
        }
        let likelihood = forest
            .hypotheses()
            .par_iter()
            .map(|h| likelihood_term(&h.pixels, data.slice(h.slice), data.sigma))
            .collect();
        Ok(Self {
            forest,
            data,
            params,
            likelihood,
        })
    }

    pub fn likelihood(&self, id: HypothesisId) -> f64 {
        self.likelihood[id.index()]
    }

    fn hyp(&self, id: HypothesisId) -> &Hypothesis {
        self.forest.hypothesis(id)
    }

    fn check_pair(&self, a: HypothesisId, b: HypothesisId) -> Result<()> {
        let (ha, hb) = (self.hyp(a), self.hyp(b));
        if hb.slice != ha.slice + 1 {
            return Err(Error::Data(format!(
                "{a} (slice {}) and {b} (slice {}) are not in consecutive slices",
                ha.slice, hb.slice
            )));
        }
        if distance_sq(ha.centroid, hb.centroid) > self.params.d_max * self.params.d_max {
            return Err(Error::Data(format!(
                "{a} and {b} are farther apart than d_max"
            )));
        }
        Ok(())
    }

    fn check_siblings(&self, j: HypothesisId, k: HypothesisId) -> Result<()> {
        let (hj, hk) = (self.hyp(j), self.hyp(k));
        if j == k || hj.slice != hk.slice || sorted_intersect(&hj.pixels, &hk.pixels) {
            return Err(Error::Data(format!(
                "{j} and {k} must be distinct, disjoint and in the same slice"
            )));
        }
        Ok(())
    }

    pub fn continuation_cost(&self, i: HypothesisId, j: HypothesisId) -> Result<f64> {
        self.check_pair(i, j)?;
        let p = self.params;
        let (hi, hj) = (self.hyp(i), self.hyp(j));
        let shape =
            set_difference_mean_corrected(self.forest.dims(), &hi.pixels, &hj.pixels) as f64;
        Ok(p.theta_l * (self.likelihood(i) + self.likelihood(j))
            + p.theta_p * distance_sq(hi.centroid, hj.centroid)
            + p.theta_s * shape * shape)
    }

    /// Cost of a single hypothesis linked to the union of two disjoint
    /// hypotheses in one neighboring slice.
    fn branch_cost(&self, single: HypothesisId, pair: (HypothesisId, HypothesisId)) -> f64 {
        let p = self.params;
        let dims = self.forest.dims();
        let hs = self.hyp(single);
        let (hj, hk) = (self.hyp(pair.0), self.hyp(pair.1));
        let union = union_sorted(&hj.pixels, &hk.pixels);
        let union_l = likelihood_term(&union, self.data.slice(hj.slice), self.data.sigma);
        let shape = set_difference_mean_corrected(dims, &hs.pixels, &union) as f64;
        p.theta_l * (self.likelihood(single) + union_l)
            + p.theta_bp * distance_sq(hs.centroid, centroid(dims, &union))
            + p.theta_bs * shape * shape
    }

    /// `i` in slice z splitting into `j` and `k` in slice z + 1.
    pub fn split_cost(&self, i: HypothesisId, j: HypothesisId, k: HypothesisId) -> Result<f64> {
        self.check_pair(i, j)?;
        self.check_pair(i, k)?;
        self.check_siblings(j, k)?;
        Ok(self.branch_cost(i, (j, k)))
    }

    /// `i` and `j` in slice z merging into `k` in slice z + 1.
    pub fn merge_cost(&self, i: HypothesisId, j: HypothesisId, k: HypothesisId) -> Result<f64> {
        self.check_pair(i, k)?;
        self.check_pair(j, k)?;
        self.check_siblings(i, j)?;
        Ok(self.branch_cost(k, (i, j)))
    }

    /// Appearance / disappearance cost without boundary handling.
    pub fn end_cost(&self, i: HypothesisId) -> f64 {
        let area = self.hyp(i).area() as f64;
        self.params.theta_l * self.likelihood(i) + self.params.theta_e * area * area
    }

    fn boundary_end_cost(&self, i: HypothesisId, at_boundary: bool) -> f64 {
        if at_boundary && self.params.free_boundary {
            self.params.theta_l * self.likelihood(i)
        } else {
            self.end_cost(i)
        }
    }

    pub fn appear_cost(&self, i: HypothesisId) -> f64 {
        self.boundary_end_cost(i, self.hyp(i).slice == 0)
    }

    pub fn disappear_cost(&self, i: HypothesisId) -> f64 {
        self.boundary_end_cost(i, self.hyp(i).slice + 1 == self.forest.depth())
    }
}

fn within(a: &Hypothesis, b: &Hypothesis, limit: f64) -> bool {
    distance_sq(a.centroid, b.centroid) <= limit * limit
}

/// Variables between slice `z` and `z + 1` (continuations, splits, merges),
/// with placeholder indices.
fn enumerate_pair(model: &CostModel<'_>, z: usize) -> Vec<AssignmentVariable> {
    let forest = model.forest;
    let d_max = model.params.d_max;
    let here = forest.slice(z);
    let next = forest.slice(z + 1);
    let mut out = Vec::new();
    let var =
        |kind, sources: Vec<HypothesisId>, targets: Vec<HypothesisId>, cost| AssignmentVariable {
            index: usize::MAX,
            kind,
            sources,
            targets,
            cost,
        };
    let disjoint = |a: HypothesisId, b: HypothesisId| {
        !sorted_intersect(&forest.hypothesis(a).pixels, &forest.hypothesis(b).pixels)
    };

    for &i in here {
        let hi = forest.hypothesis(i);
        let near: Vec<HypothesisId> = next
            .iter()
            .copied()
            .filter(|&j| within(hi, forest.hypothesis(j), d_max))
            .collect();
        for &j in &near {
            let cost = model.continuation_cost(i, j).expect("gated pair");
            out.push(var(AssignmentKind::Continuation, vec![i], vec![j], cost));
        }
        for (a, &j) in near.iter().enumerate() {
            for &k in &near[a + 1..] {
                if disjoint(j, k) && within(forest.hypothesis(j), forest.hypothesis(k), 2.0 * d_max)
                {
                    let cost = model.split_cost(i, j, k).expect("gated triple");
                    out.push(var(AssignmentKind::Split, vec![i], vec![j, k], cost));
                }
            }
        }
    }
    for &k in next {
        let hk = forest.hypothesis(k);
        let near: Vec<HypothesisId> = here
            .iter()
            .copied()
            .filter(|&i| within(forest.hypothesis(i), hk, d_max))
            .collect();
        for (a, &i) in near.iter().enumerate() {
            for &j in &near[a + 1..] {
                if disjoint(i, j) && within(forest.hypothesis(i), forest.hypothesis(j), 2.0 * d_max)
                {
                    let cost = model.merge_cost(i, j, k).expect("gated triple");
                    out.push(var(AssignmentKind::Merge, vec![i, j], vec![k], cost));
                }
            }
        }
    }
    out
}

/// All assignment variables of the forest, ordered by slice: first the
/// appear/disappear pair of every hypothesis of slice z (by id), then the
/// continuations and splits leaving slice z, then the merges into slice z + 1.
pub fn enumerate_assignments(model: &CostModel<'_>) -> Vec<AssignmentVariable> {
    let forest = model.forest;
    let depth = forest.depth();
    let blocks: Vec<Vec<AssignmentVariable>> = (0..depth)
        .into_par_iter()
        .map(|z| {
            let mut block = Vec::new();
            for &i in forest.slice(z) {
                block.push(AssignmentVariable {
                    index: usize::MAX,
                    kind: AssignmentKind::Appear,
                    sources: vec![],
                    targets: vec![i],
                    cost: model.appear_cost(i),
                });
                block.push(AssignmentVariable {
                    index: usize::MAX,
                    kind: AssignmentKind::Disappear,
                    sources: vec![i],
                    targets: vec![],
                    cost: model.disappear_cost(i),
                });
            }
            if z + 1 < depth {
                block.extend(enumerate_pair(model, z));
            }
            block
        })
        .collect();
    let mut vars: Vec<AssignmentVariable> = blocks.into_iter().flatten().collect();
    for (index, v) in vars.iter_mut().enumerate() {
        v.index = index;
    }
    vars
}

/// `sum(vars) <= 1` over the incoming variables of every hypothesis on one
/// root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRow {
    pub path: Vec<HypothesisId>,
    pub vars: Vec<usize>,
}

/// `sum(incoming) - sum(outgoing) = 0` for one hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRow {
    pub hypothesis: HypothesisId,
    pub incoming: Vec<usize>,
    pub outgoing: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSystem {
    pub path_rows: Vec<PathRow>,
    pub flow_rows: Vec<FlowRow>,
    pub variable_count: usize,
    pub hypothesis_count: usize,
}

pub fn build_constraints(
    forest: &ComponentForest,
    vars: &[AssignmentVariable],
) -> Result<ConstraintSystem> {
    let n = forest.len();
    let mut incoming = vec![Vec::new(); n];
    let mut outgoing = vec![Vec::new(); n];
    for (pos, v) in vars.iter().enumerate() {
        if v.index != pos {
            return Err(Error::Invariant(format!(
                "variable at position {pos} carries index {}",
                v.index
            )));
        }
        for h in &v.targets {
            let slot = incoming.get_mut(h.index()).ok_or_else(|| {
                Error::Data(format!("variable {pos} references unknown hypothesis {h}"))
            })?;
            slot.push(pos);
        }
        for h in &v.sources {
            let slot = outgoing.get_mut(h.index()).ok_or_else(|| {
                Error::Data(format!("variable {pos} references unknown hypothesis {h}"))
            })?;
            slot.push(pos);
        }
    }

    let path_rows = complete_paths(forest)
        .into_iter()
        .map(|path| {
            let vars: BTreeSet<usize> = path
                .iter()
                .flat_map(|h| incoming[h.index()].iter().copied())
                .collect();
            PathRow {
                path,
                vars: vars.into_iter().collect(),
            }
        })
        .collect();
    let flow_rows = forest
        .hypotheses()
        .iter()
        .map(|h| FlowRow {
            hypothesis: h.id,
            incoming: incoming[h.id.index()].clone(),
            outgoing: outgoing[h.id.index()].clone(),
        })
        .collect();
    Ok(ConstraintSystem {
        path_rows,
        flow_rows,
        variable_count: vars.len(),
        hypothesis_count: n,
    })
}

impl ConstraintSystem {
    /// The 0-1 program: path rows first, then flow rows, in construction order.
    pub fn to_problem(&self, vars: &[AssignmentVariable]) -> IlpProblem {
        let mut rows = Vec::with_capacity(self.path_rows.len() + self.flow_rows.len());
        for r in &self.path_rows {
            rows.push(Row {
                coefs: r.vars.iter().map(|&v| (v, 1.0)).collect(),
                relation: Relation::Le,
                rhs: 1.0,
            });
        }
        for r in &self.flow_rows {
            let mut coefs: Vec<(usize, f64)> = r.incoming.iter().map(|&v| (v, 1.0)).collect();
            coefs.extend(r.outgoing.iter().map(|&v| (v, -1.0)));
            rows.push(Row {
                coefs,
                relation: Relation::Eq,
                rhs: 0.0,
            });
        }
        IlpProblem {
            costs: vars.iter().map(|v| v.cost).collect(),
            rows,
        }
    }

    /// Checks a 0/1 vector against every row.
    pub fn is_satisfied(&self, assignment: &[bool]) -> bool {
        let count = |idx: &[usize]| idx.iter().filter(|&&v| assignment[v]).count();
        self.path_rows.iter().all(|r| count(&r.vars) <= 1)
            && self
                .flow_rows
                .iter()
                .all(|r| count(&r.incoming) == count(&r.outgoing))
    }
}

/// Byte-stable text dump of the full program, readable by the standalone solver.
pub fn export_text(vars: &[AssignmentVariable], system: &ConstraintSystem) -> String {
    let labels: Vec<VarLabel> = vars.iter().map(AssignmentVariable::label).collect();
    format_problem(&system.to_problem(vars), Some(&labels))
}
