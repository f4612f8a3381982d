//! Independent reference implementations shared by the integration suites.
//!
//! Nothing here calls into the code under test beyond plain data types, so a
//! bug in the library cannot hide behind an identical bug in its oracle.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sliceforest::assignment_model::AssignmentKind;
use sliceforest::evaluation::{AcceptedLink, Endpoint, Reconstruction};
use sliceforest::ilp_solver::{IlpProblem, Relation, Row};
use sliceforest::image_model::{Dims, LabelMap, SegmentationParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random single-slice segmentation instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dims: Dims,
    pub intensity: Vec<f64>,
    pub prob: Vec<f64>,
    pub params: SegmentationParams,
}

pub fn random_instance(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Instance {
    let dims = Dims::new(width, height);
    let n = dims.len();
    let intensity = (0..n).map(|_| rng.random::<f64>()).collect();
    let prob = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
    let params = SegmentationParams {
        lambda_d: rng.random_range(0.1..2.0),
        lambda_s: rng.random_range(0.0..2.0),
        sigma: rng.random_range(0.05..1.0),
        lambda_n_list: vec![rng.random_range(-2.0..2.0)],
    };
    Instance {
        dims,
        intensity,
        prob,
        params,
    }
}

/// Energy terms written directly from their definition: log-likelihood,
/// contrast-sensitive Potts sum over unordered 8-neighbor pairs, and the
/// foreground pixel count.
pub fn reference_terms(inst: &Instance, labels: &[bool]) -> (f64, f64, f64) {
    let (w, h) = (inst.dims.width as i64, inst.dims.height as i64);
    let at = |x: i64, y: i64| (y * w + x) as usize;
    let mut data = 0.0;
    let mut pairs = 0.0;
    let mut fg = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = at(x, y);
            let p = inst.prob[i];
            data += if labels[i] { p.ln() } else { (1.0 - p).ln() };
            if labels[i] {
                fg += 1.0;
            }
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = at(nx, ny);
                    // Each unordered pair is visited twice; count it from the smaller index.
                    if j < i || labels[i] == labels[j] {
                        continue;
                    }
                    let g = inst.intensity[i] - inst.intensity[j];
                    let dist = ((dx * dx + dy * dy) as f64).sqrt();
                    pairs += (-g * g / (2.0 * inst.params.sigma * inst.params.sigma)).exp() / dist;
                }
            }
        }
    }
    (data, pairs, fg)
}

fn combine(inst: &Instance, (data, pairs, fg): (f64, f64, f64), lambda_n: f64) -> f64 {
    -inst.params.lambda_d * data + inst.params.lambda_s * pairs + lambda_n * fg
}

pub fn reference_energy(inst: &Instance, labels: &[bool], lambda_n: f64) -> f64 {
    combine(inst, reference_terms(inst, labels), lambda_n)
}

/// Minimum energy over all `2^n` labelings, for each prior weight.
pub fn brute_force_energies(inst: &Instance, lambdas: &[f64]) -> Vec<f64> {
    let n = inst.dims.len();
    assert!(n <= 20, "brute force over {n} pixels");
    let mut labels = vec![false; n];
    let mut best = vec![f64::INFINITY; lambdas.len()];
    for mask in 0u32..(1u32 << n) {
        for (k, l) in labels.iter_mut().enumerate() {
            *l = mask >> k & 1 == 1;
        }
        let terms = reference_terms(inst, &labels);
        for (b, &l) in best.iter_mut().zip(lambdas) {
            *b = b.min(combine(inst, terms, l));
        }
    }
    best
}

/// 8-connected components by recursive-free depth-first flood fill, returned
/// as a set of sorted pixel lists.
pub fn flood_fill_components(dims: Dims, labels: &[bool]) -> BTreeSet<Vec<u32>> {
    let (w, h) = (dims.width as i64, dims.height as i64);
    let mut comp = vec![usize::MAX; labels.len()];
    let mut out = Vec::<Vec<u32>>::new();
    for start in 0..labels.len() {
        if !labels[start] || comp[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        out.push(Vec::new());
        let mut stack = vec![start];
        comp[start] = id;
        while let Some(p) = stack.pop() {
            out[id].push(p as u32);
            let (x, y) = ((p as i64) % w, (p as i64) / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let q = (ny * w + nx) as usize;
                    if labels[q] && comp[q] == usize::MAX {
                        comp[q] = id;
                        stack.push(q);
                    }
                }
            }
        }
    }
    out.into_iter()
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect()
}

/// Exhaustive 0/1 minimizer, written without reference to the library's
/// own enumerator. Returns `None` when no assignment is feasible.
pub fn reference_ilp(p: &IlpProblem) -> Option<(Vec<bool>, f64)> {
    let m = p.costs.len();
    assert!(m <= 24);
    let mut best: Option<(Vec<bool>, f64)> = None;
    for mask in 0u32..(1u32 << m) {
        let a: Vec<bool> = (0..m).map(|j| mask >> j & 1 == 1).collect();
        let ok = p.rows.iter().all(|r| {
            let lhs: f64 = r.coefs.iter().filter(|(j, _)| a[*j]).map(|(_, c)| c).sum();
            match r.relation {
                Relation::Le => lhs <= r.rhs + 1e-9,
                Relation::Eq => (lhs - r.rhs).abs() <= 1e-9,
            }
        });
        if !ok {
            continue;
        }
        let obj: f64 = (0..m).filter(|&j| a[j]).map(|j| p.costs[j]).sum();
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((a, obj));
        }
    }
    best
}

/// A random 0/1 program shaped like the assignment model: "at most one" rows
/// over random subsets, balance rows between two disjoint subsets, and
/// occasionally a general row with mixed coefficients.
pub fn random_ilp(rng: &mut ChaCha8Rng, m: usize) -> IlpProblem {
    let costs = (0..m).map(|_| rng.random_range(-10.0..10.0)).collect();
    let mut rows = Vec::new();
    let pick = |rng: &mut ChaCha8Rng, k: usize| -> Vec<usize> {
        let mut s = BTreeSet::new();
        while s.len() < k.min(m) {
            s.insert(rng.random_range(0..m));
        }
        s.into_iter().collect()
    };
    for _ in 0..rng.random_range(1..=m.max(1)) {
        let k = rng.random_range(1..=4);
        let vars = pick(rng, k);
        rows.push(Row {
            coefs: vars.into_iter().map(|j| (j, 1.0)).collect(),
            relation: Relation::Le,
            rhs: 1.0,
        });
    }
    for _ in 0..rng.random_range(0..=m / 2) {
        let k = rng.random_range(2..=5);
        let vars = pick(rng, k);
        let cut = rng.random_range(1..vars.len().max(2));
        let coefs = vars
            .iter()
            .enumerate()
            .map(|(k, &j)| (j, if k < cut { 1.0 } else { -1.0 }))
            .collect();
        rows.push(Row {
            coefs,
            relation: Relation::Eq,
            rhs: 0.0,
        });
    }
    if rng.random_bool(0.3) {
        let k = rng.random_range(1..=4);
        let vars = pick(rng, k);
        let coefs = vars
            .into_iter()
            .map(|j| (j, rng.random_range(-3..=3) as f64))
            .collect();
        let relation = if rng.random_bool(0.5) {
            Relation::Le
        } else {
            Relation::Eq
        };
        rows.push(Row {
            coefs,
            relation,
            rhs: rng.random_range(-1..=2) as f64,
        });
    }
    IlpProblem { costs, rows }
}

/// Restricts a problem to the variables in `keep` (renumbered in order),
/// dropping terms on other variables and rows that become empty.
pub fn restrict(p: &IlpProblem, keep: &[usize]) -> IlpProblem {
    let mut map = vec![usize::MAX; p.costs.len()];
    for (k, &j) in keep.iter().enumerate() {
        map[j] = k;
    }
    let rows = p
        .rows
        .iter()
        .filter_map(|r| {
            let coefs: Vec<(usize, f64)> = r
                .coefs
                .iter()
                .filter(|(j, _)| map[*j] != usize::MAX)
                .map(|&(j, c)| (map[j], c))
                .collect();
            (!coefs.is_empty()).then_some(Row {
                coefs,
                relation: r.relation,
                rhs: r.rhs,
            })
        })
        .collect();
    IlpProblem {
        costs: keep.iter().map(|&j| p.costs[j]).collect(),
        rows,
    }
}

/// A random stack labeling made of axis-aligned rectangles, plus continuation
/// links between random pairs of segments in adjacent slices (no duplicates).
pub fn random_reconstruction(rng: &mut ChaCha8Rng, dims: Dims, depth: usize) -> Reconstruction {
    let mut labels = Vec::with_capacity(depth);
    let mut present: Vec<Vec<u32>> = Vec::with_capacity(depth);
    for _ in 0..depth {
        let mut map = LabelMap::empty(dims);
        for label in 1..=rng.random_range(1..=5u32) {
            let x0 = rng.random_range(0..dims.width);
            let y0 = rng.random_range(0..dims.height);
            let x1 = (x0 + rng.random_range(1..=6)).min(dims.width);
            let y1 = (y0 + rng.random_range(1..=6)).min(dims.height);
            for y in y0..y1 {
                for x in x0..x1 {
                    map.ids[y * dims.width + x] = label;
                }
            }
        }
        let ids: BTreeSet<u32> = map.ids.iter().copied().filter(|&l| l != 0).collect();
        present.push(ids.into_iter().collect());
        labels.push(map);
    }
    let mut pairs = BTreeSet::new();
    for z in 0..depth.saturating_sub(1) {
        for &a in &present[z] {
            for &b in &present[z + 1] {
                if rng.random_bool(0.4) {
                    pairs.insert((z, a, b));
                }
            }
        }
    }
    let end = |slice, label| Endpoint {
        hypothesis: None,
        slice,
        label,
    };
    let links = pairs
        .into_iter()
        .map(|(z, a, b)| AcceptedLink {
            kind: AssignmentKind::Continuation,
            sources: vec![end(z, a)],
            targets: vec![end(z + 1, b)],
            cost: 0.0,
        })
        .collect();
    Reconstruction {
        selected: vec![Vec::new(); depth],
        links,
        labels,
        objective: 0.0,
    }
}
