//! Command-line front end: solve a scene, synthesize one, or evaluate a
//! solution against ground truth.
//!
//! Exit codes are the machine contract: 0 for a certified solve, 2 for an
//! uncertified one, 1 for any error. Everything on stdout is for humans;
//! the JSON artifacts in the output directory are for scripts.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Result, SbaError};
use crate::pipeline::{
    self, compute_metrics, compute_metrics_poses, Metrics, PipelineConfig, PipelineOutput,
};
use crate::report::{
    export_ply, parse_estimate, run_report, solution_to_json, write_trace, ConfigEcho,
};
use crate::viewgraph::{lift_with_gt_depths, parse_bal, synth_scene, GroundTruth, ViewGraph};

#[derive(Parser)]
#[command(
    name = "sba",
    about = "Certifiable scaled bundle adjustment solver",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scene and write the reconstruction, report and PLY export.
    Solve(SolveArgs),
    /// Generate a synthetic scene plus its ground truth.
    Synth(SynthArgs),
    /// Compute trajectory metrics for a solution against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Scene file: native view-graph JSON, or BAL text with --depth-from-gt.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for solution.json, solution.ply and report.json.
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth JSON for metrics (implied by BAL input).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Lift BAL 2D keypoints using depths from the file's ground truth.
    #[arg(long)]
    depth_from_gt: bool,
    /// Run the two-view median filter before solving.
    #[arg(long)]
    filter: bool,
    /// Drop the worst 10% residual edges after a first solve and re-solve.
    #[arg(long)]
    xm2: bool,
    /// Scale-regularization weight.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Staircase rank cap.
    #[arg(long, default_value_t = 10)]
    max_rank: usize,
    /// Relative gradient tolerance for the trust-region solver.
    #[arg(long, default_value_t = 1e-8)]
    grad_tol: f64,
    /// Also write trace.jsonl with one solver event per line.
    #[arg(long)]
    trace: bool,
    /// Print the full certificate breakdown on stdout.
    #[arg(long)]
    verbose_certificate: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    landmarks: usize,
    #[arg(long, default_value_t = 0.5)]
    visibility: f64,
    /// Multiplicative depth-noise level ε (scale factor (1+ε)^x, x ~ U(−1,1)).
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for scene.json and gt.json.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Solution (or transformed ground-truth) JSON.
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth JSON.
    #[arg(long)]
    gt: PathBuf,
    /// Metrics JSON output path.
    #[arg(long)]
    output: PathBuf,
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("{e}");
            return 1;
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return 0;
        }
    };
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Synth(args) => cmd_synth(&args).map(|()| 0),
        Command::Eval(args) => cmd_eval(&args).map(|()| 0),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

/// Native JSON starts with `{`; anything else is treated as BAL text.
fn load_scene(args: &SolveArgs) -> Result<(ViewGraph, Option<GroundTruth>)> {
    let text = fs::read_to_string(&args.input)?;
    let is_json = text.trim_start().starts_with('{');
    if is_json {
        let graph = ViewGraph::from_json(&text)?;
        let gt = match &args.gt {
            Some(path) => Some(GroundTruth::from_json(&fs::read_to_string(path)?)?),
            None => None,
        };
        return Ok((graph, gt));
    }
    if !args.depth_from_gt {
        return Err(SbaError::InvalidParameter(
            "BAL input carries no depths; pass --depth-from-gt to lift from its ground truth"
                .into(),
        ));
    }
    let (graph2d, gt) = parse_bal(BufReader::new(text.as_bytes()))?;
    let (graph, gt, dropped) = lift_with_gt_depths(&graph2d, &gt)?;
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} behind-camera observations");
    }
    Ok((graph, Some(gt)))
}

fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let parse_started = Instant::now();
    let (graph, gt) = load_scene(args)?;
    let parse_seconds = parse_started.elapsed().as_secs_f64();

    let config = PipelineConfig {
        enable_filter: args.filter,
        enable_xm2: args.xm2,
        lambda_reg: args.lambda,
        max_rank: args.max_rank,
        gradient_tolerance: args.grad_tol,
        seed: args.seed,
        ..PipelineConfig::default()
    };
    let out = pipeline::solve(&graph, &config)?;

    let metrics: Option<Metrics> = match &gt {
        Some(gt) => compute_metrics(&out.solution, gt).ok(),
        None => None,
    };

    fs::create_dir_all(&args.output)?;
    let echo = ConfigEcho {
        input: args.input.display().to_string(),
        depth_from_gt: args.depth_from_gt,
        filter: args.filter,
        xm2: args.xm2,
        lambda: args.lambda,
        seed: args.seed,
        max_rank: args.max_rank,
        grad_tol: args.grad_tol,
    };
    let report = run_report(&out, &echo, metrics.as_ref(), parse_seconds);
    write_file(
        &args.output.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("report serialization"),
    )?;
    write_file(
        &args.output.join("solution.json"),
        &serde_json::to_string_pretty(&solution_to_json(&out.solution))
            .expect("solution serialization"),
    )?;
    let mut ply = Vec::new();
    export_ply(&out.solution, &mut ply)?;
    fs::write(args.output.join("solution.ply"), ply)?;
    if args.trace {
        let mut buf = Vec::new();
        write_trace(&out, &mut buf)?;
        fs::write(args.output.join("trace.jsonl"), buf)?;
    }

    print_summary(&out, metrics.as_ref());
    if args.verbose_certificate {
        print_certificate(&out);
    }
    Ok(if out.certified { 0 } else { 2 })
}

fn print_summary(out: &PipelineOutput, metrics: Option<&Metrics>) {
    let cert = &out.solution.certificate;
    println!(
        "{} frames, {} landmarks, {} edges (filtered {}, dropped {})",
        out.graph.num_frames,
        out.graph.num_landmarks,
        out.graph.edges.len(),
        out.edges_filtered,
        out.edges_dropped
    );
    println!(
        "objective {:.6e}  eta {:.3e}  min_eig {:.3e}  {}",
        out.solution.objective,
        cert.eta,
        cert.min_eigenvalue,
        if out.certified { "certified" } else { "UNCERTIFIED" }
    );
    println!(
        "ranks {:?}  flips {}  solve {:.3}s",
        out.rank_trajectory, out.flip_count, out.solver_seconds
    );
    if let Some(m) = metrics {
        println!(
            "ATE-T {:.4}  ATE-R {:.4}°  RPE-T {:.4}  RPE-R {:.4}°",
            m.ate_t, m.ate_r_deg, m.rpe_t, m.rpe_r_deg
        );
    }
}

fn print_certificate(out: &PipelineOutput) {
    let cert = &out.solution.certificate;
    println!("certificate:");
    println!("  rho_hat        {:.12e}", cert.rho_hat);
    println!("  rho_dual       {:.12e}", cert.rho_dual);
    println!("  trace_x        {:.12e}", cert.trace_x);
    println!("  min_eigenvalue {:.12e}", cert.min_eigenvalue);
    println!("  kkt_residual   {:.12e}", cert.kkt_residual);
    println!("  eta            {:.12e}", cert.eta);
    println!("  eta_rigorous   {:.12e}", cert.eta_rigorous);
    println!("  dual variables {}", cert.y.len());
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let (graph, gt) =
        synth_scene(args.frames, args.landmarks, args.visibility, args.eps, args.seed)?;
    fs::create_dir_all(&args.output)?;
    write_file(&args.output.join("scene.json"), &graph.to_json())?;
    write_file(&args.output.join("gt.json"), &gt.to_json())?;
    println!(
        "wrote {} frames, {} landmarks, {} edges to {}",
        graph.num_frames,
        graph.num_landmarks,
        graph.edges.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let est = parse_estimate(&fs::read_to_string(&args.input)?)?;
    let gt_est = parse_estimate(&fs::read_to_string(&args.gt)?)?;
    if est.rotations.len() != gt_est.rotations.len() {
        return Err(SbaError::InvalidParameter(format!(
            "frame count mismatch: {} vs {}",
            est.rotations.len(),
            gt_est.rotations.len()
        )));
    }
    let gt = GroundTruth {
        rotations: gt_est.rotations,
        translations: gt_est.translations,
        scales: gt_est.scales,
        points: gt_est.points,
    };
    let metrics = compute_metrics_poses(&est.rotations, &est.translations, &gt)?;
    write_file(
        &args.output,
        &serde_json::to_string_pretty(&metrics.to_json()).expect("metrics serialization"),
    )?;
    println!(
        "ATE-T {:.6e}  ATE-R {:.6e}°  RPE-T {:.6e}  RPE-R {:.6e}°",
        metrics.ate_t, metrics.ate_r_deg, metrics.rpe_t, metrics.rpe_r_deg
    );
    Ok(())
}
