mod common;

use std::collections::BTreeSet;
use std::path::Path;

use sliceforest::assignment_model::AssignmentKind;
use sliceforest::evaluation::{edit_distance, GroundTruth, Reconstruction};
use sliceforest::ilp_solver::solve_ilp;
use sliceforest::image_model::load_stack;
use sliceforest::pipeline::{
    build_model, decode, load_inputs, run, run_on, write_outputs, PipelineConfig,
};
use sliceforest::synthetic_data::{generate, SyntheticSpec};

fn suite_config() -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    let mut config = PipelineConfig::load(&path).unwrap();
    let spec = config.synthetic.clone().unwrap();
    config.synthetic = Some(SyntheticSpec {
        depth: 4,
        width: 48,
        height: 48,
        n_processes: 8,
        ..spec
    });
    config
}

#[test]
fn generator_is_deterministic_per_seed() {
    let spec = SyntheticSpec {
        depth: 4,
        ..SyntheticSpec::default()
    };
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a.image, b.image);
    assert_eq!(a.probs, b.probs);
    assert_eq!(a.gt.labels, b.gt.labels);
    let c = generate(&SyntheticSpec { seed: 2, ..spec }).unwrap();
    assert_ne!(a.image, c.image);
}

#[test]
fn ground_truth_scores_zero_against_itself() {
    let stack = generate(&suite_config().synthetic.unwrap()).unwrap();
    let as_result = Reconstruction {
        selected: Vec::new(),
        links: Vec::new(),
        labels: stack.gt.labels.clone(),
        objective: 0.0,
    };
    let report = edit_distance(&as_result, &stack.gt).unwrap();
    // Same segments, but every reference link is missing from the result.
    assert_eq!(
        report.intra_merge + report.intra_split + report.inter_merge,
        0
    );
    assert_eq!(report.inter_split, stack.gt.links.len());
}

#[test]
fn decoded_solution_is_consistent_with_the_model() {
    let config = suite_config();
    let inputs = load_inputs(&config).unwrap();
    let model = build_model(&config, &inputs.image, &inputs.probs).unwrap();
    let solution = solve_ilp(&model.problem).unwrap();
    assert!(model.constraints.is_satisfied(&solution.assignment));
    let rec = decode(&model, &solution).unwrap();

    // Selected hypotheses are pairwise disjoint and exactly the labeled pixels.
    for (z, ids) in rec.selected.iter().enumerate() {
        let mut covered = BTreeSet::new();
        for &h in ids {
            for &p in &model.forest.hypothesis(h).pixels {
                assert!(covered.insert(p), "pixel {p} selected twice in slice {z}");
            }
        }
        let labeled: BTreeSet<u32> = rec.labels[z]
            .ids
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, _)| i as u32)
            .collect();
        assert_eq!(covered, labeled);
    }

    // Accepted links are exactly the active variables, with their costs.
    let active: Vec<_> = model
        .variables
        .iter()
        .filter(|v| solution.assignment[v.index])
        .collect();
    assert_eq!(rec.links.len(), active.len());
    let total: f64 = rec.links.iter().map(|l| l.cost).sum();
    assert!((total - rec.objective).abs() <= 1e-9 * (1.0 + total.abs()));

    // A continuation keeps its label across the slice boundary.
    for link in &rec.links {
        if link.kind == AssignmentKind::Continuation {
            assert_eq!(link.sources[0].label, link.targets[0].label);
        }
    }
}

#[test]
fn outputs_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let config = suite_config();
    let out = run(&config).unwrap();
    write_outputs(dir.path(), &config, &out).unwrap();

    let back = Reconstruction::load(dir.path()).unwrap();
    assert_eq!(back.labels, out.reconstruction.labels);
    assert_eq!(back.links, out.reconstruction.links);

    let gt = GroundTruth::from_reconstruction(&out.reconstruction).unwrap();
    let report = edit_distance(&back, &gt).unwrap();
    assert_eq!(report.total, 0);

    let text = std::fs::read_to_string(dir.path().join("effective_config.json")).unwrap();
    let effective: PipelineConfig = serde_json::from_str(&text).unwrap();
    effective.validate().unwrap();
    assert_eq!(
        effective.segmentation.lambda_list().unwrap(),
        config.segmentation.lambda_list().unwrap()
    );
    assert_eq!(effective.forest.tau, f64::INFINITY);
}

#[test]
fn synthetic_stack_written_to_disk_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = suite_config();
    let stack = generate(config.synthetic.as_ref().unwrap()).unwrap();
    stack.write(dir.path()).unwrap();

    let (image, probs) = load_stack(&dir.path().join("images"), &dir.path().join("probs")).unwrap();
    assert_eq!(image.depth(), stack.image.depth());
    let gt = GroundTruth::load(&dir.path().join("gt")).unwrap();
    assert_eq!(gt.links, stack.gt.links);

    let mut from_disk = config.clone();
    from_disk.synthetic = None;
    from_disk.input.image_dir = Some(dir.path().join("images"));
    from_disk.input.prob_dir = Some(dir.path().join("probs"));
    from_disk.input.gt_dir = Some(dir.path().join("gt"));
    let a = run(&from_disk).unwrap();
    let b = run_on(&config, &image, &probs, Some(&gt)).unwrap();
    assert_eq!(a.reconstruction.labels, b.reconstruction.labels);
    assert_eq!(a.report, b.report);
}
