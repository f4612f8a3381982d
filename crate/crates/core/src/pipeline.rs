//! End-to-end driver: ingestion, per-slice sweeps and forests, assignment
//! enumeration, the joint ILP, decoding and evaluation.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment_model::{
    build_constraints, enumerate_assignments, AssignmentKind, AssignmentVariable, ConstraintSystem,
    CostModel, CostParams, StackData,
};
use crate::component_forest::{build_forest, filter_stable, ComponentForest, HypothesisId};
use crate::error::{Error, Result};
use crate::evaluation::{
    edit_distance, AcceptedLink, EditDistanceReport, Endpoint, GroundTruth, Reconstruction,
};
use crate::ilp_solver::{solve_ilp, IlpProblem, IlpSolution, Status};
use crate::image_model::{
    load_stack, load_stack_with_fallback, write_labels, ImageStack, LabelMap, Polarity,
    ProbabilityStack, SegmentationParams,
};
use crate::segmentation::parametric_sweep;
use crate::synthetic_data::{generate, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    pub image_dir: Option<PathBuf>,
    /// Probability maps; derived from gray values with `polarity` when absent.
    pub prob_dir: Option<PathBuf>,
    pub polarity: Polarity,
    pub gt_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub sigma: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_samples: usize,
    /// Explicit decreasing list; overrides the interval when set.
    pub lambda_values: Option<Vec<f64>>,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            lambda_d: 1.0,
            lambda_s: 0.5,
            sigma: 0.2,
            lambda_min: -1.0,
            lambda_max: 2.5,
            lambda_samples: 34,
            lambda_values: None,
        }
    }
}

impl SegmentationConfig {
    /// `lambda_values`, or `lambda_samples` equidistant values from
    /// `lambda_max` down to `lambda_min`.
    pub fn lambda_list(&self) -> Result<Vec<f64>> {
        if let Some(v) = &self.lambda_values {
            return Ok(v.clone());
        }
        if !(self.lambda_min.is_finite() && self.lambda_max.is_finite())
            || self.lambda_min >= self.lambda_max
        {
            return Err(Error::Config(
                "segmentation: need finite lambda_min < lambda_max".into(),
            ));
        }
        if self.lambda_samples < 2 {
            return Err(Error::Config(
                "segmentation: lambda_samples must be at least 2 (use lambda_values for one level)"
                    .into(),
            ));
        }
        let n = self.lambda_samples;
        let step = (self.lambda_max - self.lambda_min) / (n - 1) as f64;
        Ok((0..n)
            .map(|k| {
                if k == n - 1 {
                    self.lambda_min
                } else {
                    self.lambda_max - step * k as f64
                }
            })
            .collect())
    }

    pub fn params(&self) -> Result<SegmentationParams> {
        let params = SegmentationParams {
            lambda_d: self.lambda_d,
            lambda_s: self.lambda_s,
            sigma: self.sigma,
            lambda_n_list: self.lambda_list()?,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    /// Maximum growth rate of a kept hypothesis; `inf` disables the filter.
    #[serde(with = "threshold")]
    pub tau: f64,
}

/// JSON has no literal for infinity, so an unbounded threshold is written as
/// the string `"inf"` and read back from either form.
mod threshold {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *value == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*value)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if matches!(t.as_str(), "inf" | "+inf" | "infinity") => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {t:?}"
            ))),
        }
    }
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { tau: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub segmentation: SegmentationConfig,
    pub forest: ForestConfig,
    pub costs: CostParams,
    /// Generate the input instead of reading it (used when `input.image_dir`
    /// is not set).
    pub synthetic: Option<SyntheticSpec>,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
}

impl PipelineConfig {
    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [
            &mut config.input.image_dir,
            &mut config.input.prob_dir,
            &mut config.input.gt_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.segmentation.params()?;
        self.costs.validate()?;
        if self.forest.tau.is_nan() || self.forest.tau <= 0.0 {
            return Err(Error::Config("forest: tau must be > 0".into()));
        }
        if let Some(spec) = &self.synthetic {
            spec.validate()?;
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.input.image_dir.is_none() && self.synthetic.is_none() {
            return Err(Error::Config(
                "either input.image_dir or a [synthetic] section is required".into(),
            ));
        }
        Ok(())
    }

    /// The configuration with every default spelled out.
    pub fn effective(&self) -> Result<Self> {
        let mut eff = self.clone();
        eff.segmentation.lambda_values = Some(self.segmentation.lambda_list()?);
        Ok(eff)
    }

    /// Runs `f` on a pool with the configured thread count.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.threads {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Invariant(format!("cannot start thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// Input stacks plus optional ground truth.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub image: ImageStack,
    pub probs: ProbabilityStack,
    pub gt: Option<GroundTruth>,
}

/// Reads or generates the input named by the configuration.
pub fn load_inputs(config: &PipelineConfig) -> Result<Inputs> {
    let gt_from_dir = |dims_check: &ImageStack| -> Result<Option<GroundTruth>> {
        let Some(dir) = &config.input.gt_dir else {
            return Ok(None);
        };
        let gt = GroundTruth::load(dir).map_err(|e| e.in_stage("ground truth"))?;
        if gt.dims() != dims_check.dims() || gt.depth() != dims_check.depth() {
            return Err(Error::Dimension(
                "ground truth does not match the image stack".into(),
            ));
        }
        Ok(Some(gt))
    };
    if let Some(image_dir) = &config.input.image_dir {
        let (image, probs) = match &config.input.prob_dir {
            Some(prob_dir) => load_stack(image_dir, prob_dir),
            None => load_stack_with_fallback(image_dir, config.input.polarity),
        }
        .map_err(|e| e.in_stage("input"))?;
        let gt = gt_from_dir(&image)?;
        return Ok(Inputs { image, probs, gt });
    }
    let spec = config
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("no input configured".into()))?;
    let stack = generate(spec).map_err(|e| e.in_stage("synthetic"))?;
    let gt = match gt_from_dir(&stack.image)? {
        Some(gt) => Some(gt),
        None => Some(stack.gt),
    };
    Ok(Inputs {
        image: stack.image,
        probs: stack.probs,
        gt,
    })
}

/// Everything the ILP is built from.
#[derive(Debug, Clone)]
pub struct Model {
    pub forest: ComponentForest,
    pub variables: Vec<AssignmentVariable>,
    pub constraints: ConstraintSystem,
    pub problem: IlpProblem,
}

/// Sweeps, forests, assignment variables and constraints for a stack.
pub fn build_model(
    config: &PipelineConfig,
    image: &ImageStack,
    probs: &ProbabilityStack,
) -> Result<Model> {
    let params = config.segmentation.params()?;
    let data = StackData::new(image, probs, params.sigma)?;
    let forests = (0..image.depth())
        .into_par_iter()
        .map(|z| {
            {
                let sweep = parametric_sweep(data.slice(z), &params)?;
                let forest = build_forest(&sweep, z)?;
                filter_stable(&forest, config.forest.tau)
            }
            .map_err(|e| e.in_stage(format!("slice {z}: segmentation")))
        })
        .collect::<Result<Vec<_>>>()?;
    let forest = ComponentForest::stack(image.dims(), forests);
    forest.validate().map_err(|e| e.in_stage("forest"))?;

    let model = CostModel::new(&forest, data, &config.costs).map_err(|e| e.in_stage("costs"))?;
    let variables = enumerate_assignments(&model);
    let constraints =
        build_constraints(&forest, &variables).map_err(|e| e.in_stage("constraints"))?;
    let problem = constraints.to_problem(&variables);
    Ok(Model {
        forest,
        variables,
        constraints,
        problem,
    })
}

/// Size and effort figures of one run; identical across thread counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub slices: usize,
    pub hypotheses: usize,
    pub variables: usize,
    pub constraints: usize,
    pub selected: usize,
    pub accepted: usize,
    pub ilp_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reconstruction: Reconstruction,
    pub report: Option<EditDistanceReport>,
    pub stats: RunStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub objective: f64,
    pub stats: RunStats,
    pub edit_distance: Option<EditDistanceReport>,
}

impl RunOutput {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            objective: self.reconstruction.objective,
            stats: self.stats.clone(),
            edit_distance: self.report.clone(),
        }
    }
}

fn invariant(msg: String) -> Error {
    Error::Invariant(msg).in_stage("decode")
}

/// Turns an ILP solution into label maps and accepted links, checking every
/// consistency property on the way.
pub fn decode(model: &Model, solution: &IlpSolution) -> Result<Reconstruction> {
    let forest = &model.forest;
    let vars = &model.variables;
    if solution.status != Status::Optimal || solution.assignment.len() != vars.len() {
        return Err(invariant("solver returned no usable assignment".into()));
    }
    let a = &solution.assignment;
    if !model.problem.is_feasible(a) || !model.constraints.is_satisfied(a) {
        return Err(invariant(
            "assignment violates the constraint system".into(),
        ));
    }
    let recomputed: f64 = vars.iter().filter(|v| a[v.index]).map(|v| v.cost).sum();
    if (recomputed - solution.objective).abs() > 1e-9 * (1.0 + recomputed.abs()) {
        return Err(invariant(format!(
            "objective {} differs from recomputed {recomputed}",
            solution.objective
        )));
    }

    let n = forest.len();
    let mut incoming: Vec<Option<usize>> = vec![None; n];
    let mut out_count = vec![0usize; n];
    let mut referenced = vec![false; n];
    for v in vars.iter().filter(|v| a[v.index]) {
        for h in &v.targets {
            if incoming[h.index()].replace(v.index).is_some() {
                return Err(invariant(format!("{h} has two incoming assignments")));
            }
            referenced[h.index()] = true;
        }
        for h in &v.sources {
            out_count[h.index()] += 1;
            referenced[h.index()] = true;
        }
    }
    for h in 0..n {
        let has_in = incoming[h].is_some();
        if referenced[h] && (!has_in || out_count[h] != 1) {
            return Err(invariant(format!(
                "h{h} is referenced but lacks exactly one incoming and one outgoing assignment"
            )));
        }
    }

    let dims = forest.dims();
    let mut selected: Vec<Vec<HypothesisId>> = Vec::with_capacity(forest.depth());
    let mut labels: Vec<LabelMap> = Vec::with_capacity(forest.depth());
    let mut label_of = vec![0u32; n];
    let mut next_label = 1u32;
    for z in 0..forest.depth() {
        let mut map = LabelMap::empty(dims);
        let chosen: Vec<HypothesisId> = forest
            .slice(z)
            .iter()
            .copied()
            .filter(|h| incoming[h.index()].is_some())
            .collect();
        for &h in &chosen {
            let v = &vars[incoming[h.index()].expect("chosen")];
            let label = match v.kind {
                AssignmentKind::Continuation => label_of[v.sources[0].index()],
                _ => {
                    let l = next_label;
                    next_label += 1;
                    l
                }
            };
            label_of[h.index()] = label;
            for &p in &forest.hypothesis(h).pixels {
                if map.ids[p as usize] != 0 {
                    return Err(invariant(format!(
                        "selected hypotheses overlap in slice {z}"
                    )));
                }
                map.ids[p as usize] = label;
            }
        }
        selected.push(chosen);
        labels.push(map);
    }

    let endpoint = |h: &HypothesisId| Endpoint {
        hypothesis: Some(*h),
        slice: forest.hypothesis(*h).slice,
        label: label_of[h.index()],
    };
    let links = vars
        .iter()
        .filter(|v| a[v.index])
        .map(|v| AcceptedLink {
            kind: v.kind,
            sources: v.sources.iter().map(endpoint).collect(),
            targets: v.targets.iter().map(endpoint).collect(),
            cost: v.cost,
        })
        .collect();
    Ok(Reconstruction {
        selected,
        links,
        labels,
        objective: solution.objective,
    })
}

/// Runs the pipeline on given stacks; `gt` adds an edit-distance report.
pub fn run_on(
    config: &PipelineConfig,
    image: &ImageStack,
    probs: &ProbabilityStack,
    gt: Option<&GroundTruth>,
) -> Result<RunOutput> {
    let model = build_model(config, image, probs)?;
    let solution = solve_ilp(&model.problem).map_err(|e| e.in_stage("ilp"))?;
    let reconstruction = decode(&model, &solution)?;
    let report = gt
        .map(|gt| edit_distance(&reconstruction, gt))
        .transpose()
        .map_err(|e| e.in_stage("evaluation"))?;
    let stats = RunStats {
        slices: image.depth(),
        hypotheses: model.forest.len(),
        variables: model.variables.len(),
        constraints: model.problem.rows.len(),
        selected: reconstruction.selected.iter().map(Vec::len).sum(),
        accepted: reconstruction.links.len(),
        ilp_nodes: solution.node_count,
    };
    Ok(RunOutput {
        reconstruction,
        report,
        stats,
    })
}

/// Loads (or generates) the input and runs the pipeline on the configured pool.
pub fn run(config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    config.install(|| {
        let inputs = load_inputs(config)?;
        run_on(config, &inputs.image, &inputs.probs, inputs.gt.as_ref())
    })?
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invariant(format!("serialization failed: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `labels/`, `links.json`, `metrics.json` and `effective_config.json`.
pub fn write_outputs(dir: &Path, config: &PipelineConfig, output: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_labels(&output.reconstruction.labels, &dir.join("labels"))?;
    write_json(&dir.join("links.json"), &output.reconstruction.link_graph())?;
    write_json(&dir.join("metrics.json"), &output.metrics())?;
    write_json(&dir.join("effective_config.json"), &config.effective()?)
}

/// Re-runs the pipeline once per `lambda_n` value with a single-level forest.
pub fn sweep_single_lambda(
    config: &PipelineConfig,
    inputs: &Inputs,
    lambdas: &[f64],
) -> Result<Vec<(f64, EditDistanceReport)>> {
    let gt = inputs
        .gt
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs ground truth".into()))?;
    lambdas
        .iter()
        .map(|&lambda| {
            let mut single = config.clone();
            single.segmentation.lambda_values = Some(vec![lambda]);
            let out = run_on(&single, &inputs.image, &inputs.probs, Some(gt))
                .map_err(|e| e.in_stage(format!("lambda_n = {lambda}")))?;
            Ok((lambda, out.report.expect("ground truth given")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub depth: usize,
    pub hypotheses: usize,
    pub variables: usize,
    pub solve_seconds: f64,
}

/// Times the ILP solve on synthetic stacks of each depth.
///
/// Every depth is generated for the same family of `seeds` consecutive seeds
/// starting at the configured one. For each stack the solve is repeated
/// `repeats` times and the median kept; a row reports the sums over the
/// family, so one unusually crowded stack does not dominate the trend.
pub fn bench_scaling(
    config: &PipelineConfig,
    depths: &[usize],
    repeats: usize,
    seeds: usize,
) -> Result<Vec<ScalingRow>> {
    let base = config
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("bench needs a [synthetic] section".into()))?;
    if depths.is_empty() || depths.contains(&0) {
        return Err(Error::Config(
            "bench depths must be non-empty and >= 1".into(),
        ));
    }
    if repeats == 0 {
        return Err(Error::Config("bench repeats must be at least 1".into()));
    }
    if seeds == 0 {
        return Err(Error::Config("bench needs at least one seed".into()));
    }
    let seen: BTreeSet<usize> = depths.iter().copied().collect();
    if seen.len() != depths.len() {
        return Err(Error::Config("bench depths must be distinct".into()));
    }
    depths
        .iter()
        .map(|&depth| {
            let mut row = ScalingRow {
                depth,
                hypotheses: 0,
                variables: 0,
                solve_seconds: 0.0,
            };
            for k in 0..seeds as u64 {
                let spec = SyntheticSpec {
                    depth,
                    seed: base.seed.wrapping_add(k),
                    ..base.clone()
                };
                let stack = generate(&spec)?;
                let model = build_model(config, &stack.image, &stack.probs)?;
                let mut times = Vec::with_capacity(repeats);
                let mut solution = None;
                for _ in 0..repeats {
                    let start = Instant::now();
                    let s = solve_ilp(&model.problem)?;
                    times.push(start.elapsed().as_secs_f64());
                    solution = Some(s);
                }
                decode(&model, &solution.expect("repeats >= 1"))?;
                times.sort_by(f64::total_cmp);
                row.hypotheses += model.forest.len();
                row.variables += model.variables.len();
                row.solve_seconds += times[times.len() / 2];
            }
            Ok(row)
        })
        .collect()
}
