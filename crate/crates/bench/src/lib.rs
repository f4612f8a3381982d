//! Fixed inputs for the solver benchmarks.

use sliceforest::ilp_solver::IlpProblem;
use sliceforest::image_model::{Dims, SegmentationParams};
use sliceforest::pipeline::{build_model, PipelineConfig};
use sliceforest::synthetic_data::{generate, SyntheticSpec};

/// One synthetic slice: gray values and probabilities.
pub struct SliceFixture {
    pub dims: Dims,
    pub intensity: Vec<f64>,
    pub prob: Vec<f64>,
    pub params: SegmentationParams,
}

pub fn bench_config(depth: usize) -> PipelineConfig {
    let mut config = PipelineConfig::default();
    config.forest.tau = f64::INFINITY;
    config.segmentation.lambda_min = 0.0;
    config.segmentation.lambda_samples = 12;
    config.synthetic = Some(SyntheticSpec {
        width: 128,
        height: 128,
        depth,
        n_processes: 40,
        bias: 0.0,
        appear_prob: 0.1,
        disappear_prob: 0.1,
        ..SyntheticSpec::default()
    });
    config
}

pub fn slice_fixture(size: usize, levels: usize) -> SliceFixture {
    let spec = SyntheticSpec {
        width: size,
        height: size,
        depth: 1,
        n_processes: (size * size / 400).max(1),
        ..SyntheticSpec::default()
    };
    let stack = generate(&spec).expect("fixture spec is valid");
    let mut config = PipelineConfig::default();
    config.segmentation.lambda_samples = levels;
    SliceFixture {
        dims: spec.dims(),
        intensity: stack.image.slice(0).to_vec(),
        prob: stack.probs.slice(0).to_vec(),
        params: config
            .segmentation
            .params()
            .expect("default parameters are valid"),
    }
}

/// The full 0-1 program of a synthetic stack.
pub fn program(depth: usize) -> IlpProblem {
    let config = bench_config(depth);
    let stack = generate(config.synthetic.as_ref().unwrap()).expect("fixture spec is valid");
    build_model(&config, &stack.image, &stack.probs)
        .expect("fixture model builds")
        .problem
}
