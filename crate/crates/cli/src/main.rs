use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sliceforest::assignment_model::export_text;
use sliceforest::evaluation::{edit_distance, GroundTruth, Reconstruction};
use sliceforest::ilp_solver::solve_ilp;
use sliceforest::ilp_solver::text::parse_problem;
use sliceforest::pipeline::{
    bench_scaling, build_model, load_inputs, run, run_on, sweep_single_lambda, write_outputs,
    PipelineConfig,
};
use sliceforest::synthetic_data::{generate, SyntheticSpec};
use sliceforest::ErrorKind;

/// Joint segmentation and inter-slice linking of anisotropic image stacks.
#[derive(Debug, Parser)]
#[command(name = "sliceforest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Ground-truth directory (label images plus optional links.json);
    /// overrides `input.gt_dir`.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Worker threads; overrides `threads` in the configuration.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment and link a stack, writing labels/, links.json, metrics.json
    /// and effective_config.json.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the 0-1 program in text form to this file.
        #[arg(long)]
        export_ilp: Option<PathBuf>,
    },
    /// Compare the multi-hypothesis run against one run per single prior level.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Where to write sweep.json; printed to stdout only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the ILP solve on synthetic stacks of increasing depth.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
        depths: Vec<usize>,
        /// Solves per depth; the median time is reported.
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Consecutive seeds per depth, starting at the configured one; times
        /// are summed over them.
        #[arg(long, default_value_t = 4)]
        seeds: usize,
        /// Where to write bench.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a 0-1 program stored in the text format.
    Solve {
        file: PathBuf,
        /// Where to write the solution as JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generate a synthetic stack with ground truth.
    Synth {
        /// Configuration whose [synthetic] section is used; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a result directory (labels/ and links.json) against ground truth.
    Eval {
        result: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Where to write the report; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(gt) = &common.gt {
        config.input.gt_dir = Some(gt.clone());
    }
    if common.threads.is_some() {
        config.threads = common.threads;
    }
    config.validate()?;
    Ok(config)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    lambda_n: Option<f64>,
    normalized: f64,
    total: usize,
}

#[derive(Serialize)]
struct SolveOutput {
    status: sliceforest::ilp_solver::Status,
    objective: f64,
    node_count: usize,
    /// Indices of variables set to one.
    active: Vec<usize>,
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            common,
            out,
            export_ilp,
        } => {
            let config = load_config(&common)?;
            if let Some(path) = export_ilp {
                let text = config.install(|| -> sliceforest::Result<String> {
                    let inputs = load_inputs(&config)?;
                    let model = build_model(&config, &inputs.image, &inputs.probs)?;
                    Ok(export_text(&model.variables, &model.constraints))
                })??;
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            let output = run(&config)?;
            write_outputs(&out, &config, &output)?;
            let m = output.metrics();
            eprintln!(
                "{} slices, {} hypotheses, {} variables, {} links accepted, objective {:.6}",
                m.stats.slices,
                m.stats.hypotheses,
                m.stats.variables,
                m.stats.accepted,
                m.objective
            );
            if let Some(r) = &m.edit_distance {
                eprintln!(
                    "edit distance {} (normalized {:.4} over {} neurons)",
                    r.total, r.normalized, r.neuron_count
                );
            }
        }
        Command::Sweep { common, out } => {
            let config = load_config(&common)?;
            let rows = config.install(|| -> sliceforest::Result<Vec<SweepRow>> {
                let inputs = load_inputs(&config)?;
                let multi = run_on(&config, &inputs.image, &inputs.probs, inputs.gt.as_ref())?;
                let Some(report) = multi.report else {
                    return Err(sliceforest::Error::Config(
                        "sweep needs ground truth (--gt, input.gt_dir or [synthetic])".into(),
                    ));
                };
                let mut rows = vec![SweepRow {
                    lambda_n: None,
                    normalized: report.normalized,
                    total: report.total,
                }];
                let lambdas = config.segmentation.lambda_list()?;
                for (l, r) in sweep_single_lambda(&config, &inputs, &lambdas)? {
                    rows.push(SweepRow {
                        lambda_n: Some(l),
                        normalized: r.normalized,
                        total: r.total,
                    });
                }
                Ok(rows)
            })??;
            for row in &rows {
                let level = row
                    .lambda_n
                    .map_or_else(|| "multi".to_string(), |l| format!("{l:.4}"));
                eprintln!("{level:>10}  {:>4}  {:.4}", row.total, row.normalized);
            }
            emit(&rows, out.map(|p| p.join("sweep.json")).as_deref())?;
        }
        Command::Bench {
            common,
            depths,
            repeats,
            seeds,
            out,
        } => {
            let config = load_config(&common)?;
            let rows = config.install(|| bench_scaling(&config, &depths, repeats, seeds))??;
            println!("depth\thypotheses\tvariables\tsolve_seconds");
            for r in &rows {
                println!(
                    "{}\t{}\t{}\t{:.6}",
                    r.depth, r.hypotheses, r.variables, r.solve_seconds
                );
            }
            if let Some(path) = out {
                emit(&rows, Some(&path.join("bench.json")))?;
            }
        }
        Command::Solve { file, out, threads } => {
            let text = fs::read_to_string(&file).map_err(|e| sliceforest::Error::Io {
                path: file.clone(),
                source: e,
            })?;
            let (problem, _) = parse_problem(&text)?;
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                if n == 0 {
                    return Err(
                        sliceforest::Error::Config("threads must be at least 1".into()).into(),
                    );
                }
                pool = pool.num_threads(n);
            }
            let solution = pool.build()?.install(|| solve_ilp(&problem))?;
            let active = solution
                .assignment
                .iter()
                .enumerate()
                .filter(|(_, &a)| a)
                .map(|(j, _)| j)
                .collect();
            emit(
                &SolveOutput {
                    status: solution.status,
                    objective: solution.objective,
                    node_count: solution.node_count,
                    active,
                },
                out.as_deref(),
            )?;
        }
        Command::Synth { config, seed, out } => {
            let mut spec = match &config {
                Some(path) => PipelineConfig::load(path)
                    .with_context(|| format!("loading {}", path.display()))?
                    .synthetic
                    .ok_or_else(|| {
                        sliceforest::Error::Config(format!(
                            "{} has no [synthetic] section",
                            path.display()
                        ))
                    })?,
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let stack = generate(&spec)?;
            stack.write(&out)?;
            eprintln!(
                "wrote {} slices to {} ({} splits, {} merges, {} appearances, {} disappearances)",
                spec.depth,
                out.display(),
                stack.events.splits,
                stack.events.merges,
                stack.events.appearances,
                stack.events.disappearances
            );
        }
        Command::Eval { result, gt, out } => {
            let rec = Reconstruction::load(&result)?;
            let gt = GroundTruth::load(&gt)?;
            let report = edit_distance(&rec, &gt)?;
            emit(&report, out.as_deref())?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sliceforest::Error>() {
            return match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Internal => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    4
}

/// Joins the error chain, skipping causes whose text an outer message
/// already includes.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
