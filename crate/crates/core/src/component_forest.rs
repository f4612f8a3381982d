//! Segmentation hypotheses and the per-slice component trees that nest them.
//!
//! Hypotheses are the 8-connected foreground components of the segmentations
//! produced by a decreasing prior sweep. Since the foreground only grows along
//! the sweep, every component at one level is contained in exactly one
//! component at the next level; that containment is the parent link.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_model::{Dims, Segmentation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HypothesisId(pub u32);

impl HypothesisId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for HypothesisId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "h{}", self.0)
    }
}

/// A connected set of pixels in one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub id: HypothesisId,
    pub slice: usize,
    /// Row-major pixel indices, sorted ascending.
    pub pixels: Vec<u32>,
    /// Prior weight at which the component first appears (the largest one).
    pub level: f64,
    /// Mean pixel position `(x, y)`.
    pub centroid: [f64; 2],
}

impl Hypothesis {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn overlaps(&self, other: &Hypothesis) -> bool {
        self.slice == other.slice && sorted_intersect(&self.pixels, &other.pixels)
    }
}

pub fn centroid(dims: Dims, pixels: &[u32]) -> [f64; 2] {
    let (mut sx, mut sy) = (0.0, 0.0);
    for &p in pixels {
        let (x, y) = dims.coords(p as usize);
        sx += x as f64;
        sy += y as f64;
    }
    let n = pixels.len().max(1) as f64;
    [sx / n, sy / n]
}

pub(crate) fn sorted_intersect(a: &[u32], b: &[u32]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Maximal 8-connected foreground components, ordered by their first pixel
/// in row-major order; each component's pixels are sorted.
pub fn connected_components(seg: &Segmentation) -> Vec<Vec<u32>> {
    let dims = seg.dims;
    let mut seen = vec![false; dims.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..dims.len() {
        if !seg.labels[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            pixels.push(p as u32);
            for q in dims.neighbors(p) {
                if seg.labels[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        pixels.sort_unstable();
        out.push(pixels);
    }
    out
}

/// Hypotheses of one or more slices with their component-tree links.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentForest {
    dims: Dims,
    hypotheses: Vec<Hypothesis>,
    parent: Vec<Option<HypothesisId>>,
    children: Vec<Vec<HypothesisId>>,
    /// Hypothesis ids per slice, ascending.
    slices: Vec<Vec<HypothesisId>>,
}

impl ComponentForest {
    pub fn empty(dims: Dims, depth: usize) -> Self {
        Self {
            dims,
            hypotheses: Vec::new(),
            parent: Vec::new(),
            children: Vec::new(),
            slices: vec![Vec::new(); depth],
        }
    }

    /// Assembles a forest from hypotheses whose ids equal their position and
    /// parent links given per hypothesis.
    fn from_parts(
        dims: Dims,
        depth: usize,
        hypotheses: Vec<Hypothesis>,
        parent: Vec<Option<HypothesisId>>,
    ) -> Self {
        let mut children = vec![Vec::new(); hypotheses.len()];
        let mut slices = vec![Vec::new(); depth];
        for (i, h) in hypotheses.iter().enumerate() {
            debug_assert_eq!(h.id.index(), i);
            slices[h.slice].push(h.id);
            if let Some(p) = parent[i] {
                children[p.index()].push(h.id);
            }
        }
        Self {
            dims,
            hypotheses,
            parent,
            children,
            slices,
        }
    }

    /// Concatenates single-slice forests into one stack forest, renumbering ids.
    /// The i-th input becomes slice i.
    pub fn stack(dims: Dims, per_slice: Vec<ComponentForest>) -> Self {
        let depth = per_slice.len();
        let mut hypotheses = Vec::new();
        let mut parent = Vec::new();
        for (z, forest) in per_slice.into_iter().enumerate() {
            let offset = hypotheses.len() as u32;
            for (h, p) in forest.hypotheses.into_iter().zip(forest.parent) {
                hypotheses.push(Hypothesis {
                    id: HypothesisId(h.id.0 + offset),
                    slice: z,
                    ..h
                });
                parent.push(p.map(|p| HypothesisId(p.0 + offset)));
            }
        }
        Self::from_parts(dims, depth, hypotheses, parent)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn get(&self, id: HypothesisId) -> Option<&Hypothesis> {
        self.hypotheses.get(id.index())
    }

    pub fn hypothesis(&self, id: HypothesisId) -> &Hypothesis {
        &self.hypotheses[id.index()]
    }

    pub fn parent(&self, id: HypothesisId) -> Option<HypothesisId> {
        self.parent[id.index()]
    }

    pub fn children(&self, id: HypothesisId) -> &[HypothesisId] {
        &self.children[id.index()]
    }

    pub fn slice(&self, z: usize) -> &[HypothesisId] {
        &self.slices[z]
    }

    pub fn roots(&self) -> impl Iterator<Item = HypothesisId> + '_ {
        self.hypotheses
            .iter()
            .filter(|h| self.parent[h.id.index()].is_none())
            .map(|h| h.id)
    }

    pub fn leaves(&self) -> impl Iterator<Item = HypothesisId> + '_ {
        self.hypotheses
            .iter()
            .filter(|h| self.children[h.id.index()].is_empty())
            .map(|h| h.id)
    }

    /// True if `ancestor` lies strictly above `node` in its tree.
    pub fn is_ancestor(&self, ancestor: HypothesisId, node: HypothesisId) -> bool {
        let mut cur = self.parent(node);
        while let Some(p) = cur {
            if p == ancestor {
                return true;
            }
            cur = self.parent(p);
        }
        false
    }

    /// Maximum number of nodes on any root-to-leaf chain.
    pub fn max_depth(&self) -> usize {
        complete_paths(self).iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Checks the structural invariants: strict containment along parent links,
    /// overlap iff ancestry, connected non-empty pixel sets.
    pub fn validate(&self) -> Result<()> {
        for h in &self.hypotheses {
            if h.pixels.is_empty() {
                return Err(Error::Invariant(format!("{} has no pixels", h.id)));
            }
            if h.pixels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Invariant(format!("{} pixels not sorted", h.id)));
            }
            if let Some(p) = self.parent(h.id) {
                let parent = self.hypothesis(p);
                if parent.slice != h.slice
                    || parent.area() <= h.area()
                    || !is_sorted_subset(&h.pixels, &parent.pixels)
                {
                    return Err(Error::Invariant(format!(
                        "parent {p} does not strictly contain {}",
                        h.id
                    )));
                }
            }
        }
        for ids in &self.slices {
            for (a, &i) in ids.iter().enumerate() {
                for &j in &ids[a + 1..] {
                    let overlap = self.hypothesis(i).overlaps(self.hypothesis(j));
                    let related = self.is_ancestor(i, j) || self.is_ancestor(j, i);
                    if overlap != related {
                        return Err(Error::Invariant(format!(
                            "{i} and {j}: overlap={overlap} but ancestry={related}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Debug view of every node, suitable for JSON export.
    pub fn export_nodes(&self) -> Vec<ForestNode> {
        self.hypotheses
            .iter()
            .map(|h| ForestNode {
                id: h.id,
                slice: h.slice,
                level: h.level,
                area: h.area(),
                centroid: h.centroid,
                parent: self.parent(h.id),
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.export_nodes()).expect("forest nodes serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestNode {
    pub id: HypothesisId,
    pub slice: usize,
    pub level: f64,
    pub area: usize,
    pub centroid: [f64; 2],
    pub parent: Option<HypothesisId>,
}

fn is_sorted_subset(small: &[u32], large: &[u32]) -> bool {
    let mut j = 0;
    for &p in small {
        while j < large.len() && large[j] < p {
            j += 1;
        }
        if j == large.len() || large[j] != p {
            return false;
        }
    }
    true
}

/// Builds the component tree of one slice from its prior sweep (largest prior
/// first). Components with identical pixel sets at consecutive levels become
/// one node carrying the level of first appearance.
pub fn build_forest(sweep: &[Segmentation], slice: usize) -> Result<ComponentForest> {
    let Some(first) = sweep.first() else {
        return Err(Error::Data("empty segmentation sweep".into()));
    };
    let dims = first.dims;
    for (k, w) in sweep.windows(2).enumerate() {
        if w[1].dims != dims {
            return Err(Error::Dimension(format!(
                "sweep level {} differs in size",
                k + 1
            )));
        }
        if !w[0].is_subset_of(&w[1]) {
            return Err(Error::Data(format!(
                "segmentations at levels {k} and {} are not nested",
                k + 1
            )));
        }
    }

    let mut hypotheses: Vec<Hypothesis> = Vec::new();
    let mut parent: Vec<Option<HypothesisId>> = Vec::new();
    // Node id of every component of the previous level.
    let mut prev_nodes: Vec<HypothesisId> = Vec::new();
    let mut prev_components: Vec<Vec<u32>> = Vec::new();

    for seg in sweep {
        let components = connected_components(seg);
        let mut owner = vec![u32::MAX; dims.len()];
        for (c, pixels) in components.iter().enumerate() {
            for &p in pixels {
                owner[p as usize] = c as u32;
            }
        }
        // children[c] = previous-level components inside component c
        let mut contained: Vec<Vec<usize>> = vec![Vec::new(); components.len()];
        for (pc, pixels) in prev_components.iter().enumerate() {
            let c = owner[pixels[0] as usize];
            debug_assert_ne!(c, u32::MAX);
            contained[c as usize].push(pc);
        }

        let mut nodes = Vec::with_capacity(components.len());
        for (c, pixels) in components.iter().enumerate() {
            let inner = &contained[c];
            let node = if inner.len() == 1 && prev_components[inner[0]].len() == pixels.len() {
                prev_nodes[inner[0]]
            } else {
                let id = HypothesisId(hypotheses.len() as u32);
                for &pc in inner {
                    parent[prev_nodes[pc].index()] = Some(id);
                }
                hypotheses.push(Hypothesis {
                    id,
                    slice,
                    centroid: centroid(dims, pixels),
                    pixels: pixels.clone(),
                    level: seg.lambda_n,
                });
                parent.push(None);
                id
            };
            nodes.push(node);
        }
        prev_nodes = nodes;
        prev_components = components;
    }

    Ok(ComponentForest::from_parts(
        dims,
        slice + 1,
        hypotheses,
        parent,
    ))
}

/// Relative area change of a node between its parent and its largest child.
/// Roots use their own area in place of the parent's, leaves in place of the
/// largest child's.
pub fn growth_rate(forest: &ComponentForest, id: HypothesisId) -> f64 {
    let area = forest.hypothesis(id).area() as f64;
    let above = forest
        .parent(id)
        .map_or(area, |p| forest.hypothesis(p).area() as f64);
    let below = forest
        .children(id)
        .iter()
        .map(|&c| forest.hypothesis(c).area())
        .max()
        .map_or(area, |a| a as f64);
    (above - below) / area
}

/// Removes nodes whose growth rate exceeds `tau`, reconnecting children to the
/// nearest retained ancestor. Every root-to-leaf chain keeps at least one node
/// (its most stable one, preferring the deepest on ties).
pub fn filter_stable(forest: &ComponentForest, tau: f64) -> Result<ComponentForest> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config("stability threshold tau must be > 0".into()));
    }
    let n = forest.len();
    let rates: Vec<f64> = (0..n)
        .map(|i| growth_rate(forest, HypothesisId(i as u32)))
        .collect();
    let mut keep: Vec<bool> = rates.iter().map(|&g| g <= tau).collect();
    for path in complete_paths(forest) {
        if path.iter().any(|id| keep[id.index()]) {
            continue;
        }
        let best = path
            .iter()
            .rev()
            .copied()
            .min_by(|a, b| rates[a.index()].total_cmp(&rates[b.index()]))
            .expect("paths are non-empty");
        keep[best.index()] = true;
    }

    let mut new_id = vec![None; n];
    let mut hypotheses = Vec::new();
    for h in &forest.hypotheses {
        if keep[h.id.index()] {
            let id = HypothesisId(hypotheses.len() as u32);
            new_id[h.id.index()] = Some(id);
            hypotheses.push(Hypothesis { id, ..h.clone() });
        }
    }
    let mut parent = Vec::with_capacity(hypotheses.len());
    for h in &forest.hypotheses {
        if !keep[h.id.index()] {
            continue;
        }
        let mut cur = forest.parent(h.id);
        while let Some(p) = cur {
            if keep[p.index()] {
                break;
            }
            cur = forest.parent(p);
        }
        parent.push(cur.map(|p| new_id[p.index()].expect("kept")));
    }
    let filtered = ComponentForest::from_parts(forest.dims, forest.depth(), hypotheses, parent);
    Ok(filtered)
}

/// Every root-to-leaf chain, ordered by leaf id; each chain runs root first.
pub fn complete_paths(forest: &ComponentForest) -> Vec<Vec<HypothesisId>> {
    forest
        .leaves()
        .map(|leaf| {
            let mut path = vec![leaf];
            let mut cur = forest.parent(leaf);
            while let Some(p) = cur {
                path.push(p);
                cur = forest.parent(p);
            }
            path.reverse();
            path
        })
        .collect()
}
