//! Exact per-slice binary segmentation by s/t minimum cut, swept over the
//! foreground prior weight to obtain a nested family of segmentations.
//!
//! The energy of a labeling `y` is
//!
//! ```text
//! E(y) = -lambda_d * sum_i ln p(x_i | y_i)
//!        + lambda_s * sum_{i~j, y_i != y_j} exp(-g_ij^2 / (2 sigma^2)) / |i - j|
//!        + lambda_n * sum_i y_i
//! ```
//!
//! over 8-connected neighbor pairs, where `g_ij` is the gray-level difference.

pub mod maxflow;

use crate::error::{Error, Result};
use crate::image_model::{Dims, Segmentation, SegmentationParams, FORWARD_NEIGHBORS_8};

use self::maxflow::FlowGraph;

/// Borrowed view of one slice: gray levels and foreground probabilities.
#[derive(Debug, Clone, Copy)]
pub struct SliceData<'a> {
    pub dims: Dims,
    pub intensity: &'a [f64],
    pub prob: &'a [f64],
}

impl<'a> SliceData<'a> {
    pub fn new(dims: Dims, intensity: &'a [f64], prob: &'a [f64]) -> Result<Self> {
        if intensity.len() != dims.len() || prob.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "slice data has {} gray values and {} probabilities for {}x{} pixels",
                intensity.len(),
                prob.len(),
                dims.width,
                dims.height
            )));
        }
        Ok(Self {
            dims,
            intensity,
            prob,
        })
    }
}

/// Log-likelihood of a pixel under label `foreground`.
#[inline]
pub fn unary(p: f64, foreground: bool) -> f64 {
    if foreground {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

#[inline]
fn contrast_weight(g: f64, distance: f64, sigma: f64) -> f64 {
    (-(g * g) / (2.0 * sigma * sigma)).exp() / distance
}

/// Pairwise weight between 8-neighbors `i` and `j`, paid when their labels differ.
pub fn smoothness_weight(
    dims: Dims,
    intensity: &[f64],
    i: usize,
    j: usize,
    sigma: f64,
) -> Result<f64> {
    let (xi, yi) = dims.coords(i);
    let (xj, yj) = dims.coords(j);
    let dx = xi.abs_diff(xj);
    let dy = yi.abs_diff(yj);
    if i >= dims.len() || j >= dims.len() || dx > 1 || dy > 1 || (dx == 0 && dy == 0) {
        return Err(Error::Data(format!(
            "pixels {i} and {j} are not 8-connected neighbors"
        )));
    }
    let distance = if dx + dy == 2 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    };
    Ok(contrast_weight(
        intensity[i] - intensity[j],
        distance,
        sigma,
    ))
}

/// Pairwise weights for every unordered neighbor pair, keyed by the forward offsets.
#[derive(Debug, Clone)]
pub(crate) struct PairWeights {
    weights: Vec<[f64; 4]>,
}

impl PairWeights {
    pub(crate) fn new(dims: Dims, intensity: &[f64], sigma: f64) -> Self {
        let weights = (0..dims.len())
            .map(|i| {
                let mut w = [0.0; 4];
                for (k, &(dx, dy)) in FORWARD_NEIGHBORS_8.iter().enumerate() {
                    if let Some(j) = dims.offset(i, dx, dy) {
                        let distance = if dx != 0 && dy != 0 {
                            std::f64::consts::SQRT_2
                        } else {
                            1.0
                        };
                        w[k] = contrast_weight(intensity[i] - intensity[j], distance, sigma);
                    }
                }
                w
            })
            .collect();
        Self { weights }
    }

    /// Calls `f(i, j, weight)` once per unordered in-bounds neighbor pair.
    pub(crate) fn for_each_pair(&self, dims: Dims, mut f: impl FnMut(usize, usize, f64)) {
        for i in 0..dims.len() {
            for (k, &(dx, dy)) in FORWARD_NEIGHBORS_8.iter().enumerate() {
                if let Some(j) = dims.offset(i, dx, dy) {
                    f(i, j, self.weights[i][k]);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    /// `sum_i ln p(x_i | y_i)`
    pub data_term: f64,
    /// Sum of pairwise weights over neighbor pairs with different labels.
    pub smoothness_term: f64,
    /// Number of foreground pixels.
    pub prior_term: f64,
    pub total: f64,
}

/// Evaluates the segmentation energy of a labeling.
pub fn energy(
    seg: &Segmentation,
    slice: SliceData<'_>,
    params: &SegmentationParams,
    lambda_n: f64,
) -> Result<EnergyBreakdown> {
    if seg.dims != slice.dims || seg.labels.len() != slice.dims.len() {
        return Err(Error::Dimension(
            "segmentation and slice differ in size".into(),
        ));
    }
    let data_term: f64 = seg
        .labels
        .iter()
        .zip(slice.prob)
        .map(|(&y, &p)| unary(p, y))
        .sum();
    let prior_term = seg.foreground_count() as f64;
    let mut smoothness_term = 0.0;
    let weights = PairWeights::new(slice.dims, slice.intensity, params.sigma);
    weights.for_each_pair(slice.dims, |i, j, w| {
        if seg.labels[i] != seg.labels[j] {
            smoothness_term += w;
        }
    });
    let total =
        -params.lambda_d * data_term + params.lambda_s * smoothness_term + lambda_n * prior_term;
    Ok(EnergyBreakdown {
        data_term,
        smoothness_term,
        prior_term,
        total,
    })
}

/// Minimizes the energy with every pixel in `forced` fixed to foreground.
///
/// Forced pixels are contracted into the source, so the flow network only
/// contains the free pixels. The returned labeling is the inclusion-minimal
/// minimizer (ties go to background).
fn min_cut_with_forced(
    slice: SliceData<'_>,
    weights: &PairWeights,
    params: &SegmentationParams,
    lambda_n: f64,
    forced: Option<&[bool]>,
) -> Segmentation {
    let dims = slice.dims;
    let n = dims.len();
    let is_forced = |i: usize| forced.is_some_and(|f| f[i]);

    // Node numbering over free pixels in row-major order.
    let mut node = vec![usize::MAX; n];
    let mut free = 0usize;
    for (i, slot) in node.iter_mut().enumerate() {
        if !is_forced(i) {
            *slot = free;
            free += 1;
        }
    }
    let source = free;
    let sink = free + 1;

    // Cost of labeling each free pixel foreground / background.
    let mut fg_cost = vec![0.0; free];
    let mut bg_cost = vec![0.0; free];
    for i in 0..n {
        if node[i] != usize::MAX {
            let p = slice.prob[i];
            fg_cost[node[i]] = -params.lambda_d * p.ln() + lambda_n;
            bg_cost[node[i]] = -params.lambda_d * (1.0 - p).ln();
        }
    }

    let mut graph = FlowGraph::with_capacity(free + 2, free * 5);
    if params.lambda_s > 0.0 {
        weights.for_each_pair(dims, |i, j, w| {
            let cap = params.lambda_s * w;
            match (node[i] != usize::MAX, node[j] != usize::MAX) {
                (true, true) => graph.add_edge(node[i], node[j], cap, cap),
                // A free pixel next to a forced foreground pixel pays the pair
                // weight exactly when it is background.
                (true, false) => bg_cost[node[i]] += cap,
                (false, true) => bg_cost[node[j]] += cap,
                (false, false) => {}
            }
        });
    }
    // Source side = foreground. Cutting s->v means v is background; cutting v->t
    // means v is foreground. Only the difference of the two costs matters.
    for v in 0..free {
        let diff = fg_cost[v] - bg_cost[v];
        if diff > 0.0 {
            graph.add_edge(v, sink, diff, 0.0);
        } else if diff < 0.0 {
            graph.add_edge(source, v, -diff, 0.0);
        }
    }
    graph.max_flow(source, sink);
    let side = graph.source_side(source);

    let labels = (0..n)
        .map(|i| node[i] == usize::MAX || side[node[i]])
        .collect();
    Segmentation {
        dims,
        labels,
        lambda_n,
    }
}

/// Exact energy minimizer for one foreground prior weight.
pub fn min_cut_segment(
    slice: SliceData<'_>,
    params: &SegmentationParams,
    lambda_n: f64,
) -> Segmentation {
    let weights = PairWeights::new(slice.dims, slice.intensity, params.sigma);
    min_cut_with_forced(slice, &weights, params, lambda_n, None)
}

fn check_sweep_order(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::Config("lambda_n list is empty".into()));
    }
    if lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config(
            "lambda_n values must be given in decreasing order".into(),
        ));
    }
    Ok(())
}

/// One segmentation per `lambda_n` value, warm-started: the foreground found
/// for a larger value is contracted into the source for the next one, so the
/// foreground sets form an inclusion chain by construction.
///
/// Equal consecutive values are accepted and yield identical segmentations.
pub fn parametric_sweep(
    slice: SliceData<'_>,
    params: &SegmentationParams,
) -> Result<Vec<Segmentation>> {
    check_sweep_order(&params.lambda_n_list)?;
    let weights = PairWeights::new(slice.dims, slice.intensity, params.sigma);
    let mut out: Vec<Segmentation> = Vec::with_capacity(params.lambda_n_list.len());
    for &lambda_n in &params.lambda_n_list {
        let seg = match out.last() {
            Some(prev) if prev.lambda_n == lambda_n => Segmentation {
                lambda_n,
                ..prev.clone()
            },
            Some(prev) => {
                min_cut_with_forced(slice, &weights, params, lambda_n, Some(&prev.labels))
            }
            None => min_cut_with_forced(slice, &weights, params, lambda_n, None),
        };
        out.push(seg);
    }
    Ok(out)
}

/// Same as [`parametric_sweep`] but solves every level from scratch.
pub fn parametric_sweep_cold(
    slice: SliceData<'_>,
    params: &SegmentationParams,
) -> Result<Vec<Segmentation>> {
    check_sweep_order(&params.lambda_n_list)?;
    let weights = PairWeights::new(slice.dims, slice.intensity, params.sigma);
    Ok(params
        .lambda_n_list
        .iter()
        .map(|&l| min_cut_with_forced(slice, &weights, params, l, None))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(lambda_d: f64, lambda_s: f64, sigma: f64) -> SegmentationParams {
        SegmentationParams {
            lambda_d,
            lambda_s,
            sigma,
            lambda_n_list: vec![0.0],
        }
    }

    #[test]
    fn unary_values() {
        assert_abs_diff_eq!(unary(0.5, true), -std::f64::consts::LN_2, epsilon = 1e-15);
        for p in [0.1, 0.3, 0.77] {
            assert_abs_diff_eq!(unary(p, true), unary(1.0 - p, false), epsilon = 1e-15);
        }
        let v = unary(1e-6, true);
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, -13.815_510_557_964_274, epsilon = 1e-12);
    }

    #[test]
    fn smoothness_weight_cases() {
        let dims = Dims::new(2, 2);
        let flat = [0.4; 4];
        assert_eq!(smoothness_weight(dims, &flat, 0, 1, 0.3).unwrap(), 1.0);
        assert_abs_diff_eq!(
            smoothness_weight(dims, &flat, 0, 3, 0.3).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        let step = [0.0, 0.25, 0.0, 0.0];
        assert_abs_diff_eq!(
            smoothness_weight(dims, &step, 0, 1, 0.25).unwrap(),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
        assert!(smoothness_weight(Dims::new(3, 1), &[0.0; 3], 0, 2, 0.3).is_err());
        assert!(smoothness_weight(dims, &flat, 1, 1, 0.3).is_err());
        // horizontally adjacent indices that wrap across rows are not neighbors
        assert!(smoothness_weight(Dims::new(2, 2), &flat, 1, 2, 0.3).is_ok()); // diagonal
        assert!(smoothness_weight(Dims::new(3, 2), &[0.0; 6], 2, 3, 0.3).is_err());
    }

    #[test]
    fn single_pixel_energy() {
        let dims = Dims::new(1, 1);
        let seg = Segmentation {
            dims,
            labels: vec![true],
            lambda_n: 0.5,
        };
        let slice = SliceData::new(dims, &[0.0], &[0.8]).unwrap();
        let e = energy(&seg, slice, &params(1.0, 1.0, 0.1), 0.5).unwrap();
        assert_abs_diff_eq!(e.total, -(0.8f64).ln() + 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(e.total, 0.723_143_551_314_209_7, epsilon = 1e-12);
    }

    #[test]
    fn uniform_labelings_have_no_smoothness() {
        let dims = Dims::new(3, 3);
        let intensity: Vec<f64> = (0..9).map(|i| i as f64 / 9.0).collect();
        let prob = vec![0.6; 9];
        let slice = SliceData::new(dims, &intensity, &prob).unwrap();
        let p = params(1.0, 2.0, 0.2);
        let bg = Segmentation::background(dims, 0.0);
        let e = energy(&bg, slice, &p, 0.3).unwrap();
        assert_eq!(e.prior_term, 0.0);
        assert_eq!(e.smoothness_term, 0.0);
        let fg = Segmentation {
            labels: vec![true; 9],
            ..bg
        };
        assert_eq!(energy(&fg, slice, &p, 0.3).unwrap().smoothness_term, 0.0);
    }

    #[test]
    fn data_term_dominates_without_coupling() {
        let dims = Dims::new(3, 3);
        let prob = vec![0.9; 9];
        let intensity = vec![0.5; 9];
        let slice = SliceData::new(dims, &intensity, &prob).unwrap();
        let seg = min_cut_segment(slice, &params(1.0, 0.0, 0.1), 0.0);
        assert!(seg.labels.iter().all(|&l| l));
        // ln 9 ~ 2.1972 is the break-even prior weight
        let seg = min_cut_segment(slice, &params(1.0, 0.0, 0.1), 2.2);
        assert!(seg.labels.iter().all(|&l| !l));
        let seg = min_cut_segment(slice, &params(1.0, 0.0, 0.1), 2.19);
        assert!(seg.labels.iter().all(|&l| l));
    }

    #[test]
    fn exact_tie_goes_to_background() {
        let dims = Dims::new(1, 1);
        let slice = SliceData::new(dims, &[0.0], &[0.5]).unwrap();
        let seg = min_cut_segment(slice, &params(1.0, 0.0, 0.1), 0.0);
        assert_eq!(seg.labels, vec![false]);
    }

    #[test]
    fn repeated_lambda_gives_identical_segmentations() {
        let dims = Dims::new(4, 4);
        let intensity: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64 / 16.0).collect();
        let prob: Vec<f64> = (0..16)
            .map(|i| 0.05 + ((i * 5) % 16) as f64 / 17.0)
            .collect();
        let slice = SliceData::new(dims, &intensity, &prob).unwrap();
        let p = SegmentationParams {
            lambda_n_list: vec![0.3, 0.3, 0.3],
            ..params(1.0, 0.5, 0.2)
        };
        let segs = parametric_sweep(slice, &p).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[0].labels, segs[1].labels);
        assert_eq!(segs[1].labels, segs[2].labels);
    }

    #[test]
    fn sweep_rejects_bad_lists() {
        let dims = Dims::new(1, 1);
        let slice = SliceData::new(dims, &[0.0], &[0.5]).unwrap();
        let mut p = params(1.0, 0.0, 0.1);
        p.lambda_n_list.clear();
        assert!(parametric_sweep(slice, &p).is_err());
        p.lambda_n_list = vec![0.0, 1.0];
        assert!(parametric_sweep(slice, &p).is_err());
    }

    #[test]
    fn thirty_four_levels() {
        let dims = Dims::new(5, 5);
        let prob: Vec<f64> = (0..25).map(|i| (i as f64 + 0.5) / 25.0).collect();
        let intensity = vec![0.0; 25];
        let slice = SliceData::new(dims, &intensity, &prob).unwrap();
        let p = SegmentationParams {
            lambda_n_list: (0..34).map(|k| 3.0 - 6.0 * k as f64 / 33.0).collect(),
            ..params(1.0, 0.3, 0.1)
        };
        let segs = parametric_sweep(slice, &p).unwrap();
        assert_eq!(segs.len(), 34);
        for w in segs.windows(2) {
            assert!(w[0].is_subset_of(&w[1]));
        }
    }
}
