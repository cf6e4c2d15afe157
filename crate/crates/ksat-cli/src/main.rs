//! `ksat` command-line harness. Exit codes follow SAT-competition
//! conventions: 10 = satisfying assignment found (verified), 20 = proven
//! unsatisfiable or solver gave up, 0 = informational subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ksat::bp::Beta;
use ksat::cavity::{
    complexity_curve, locate_transitions, pd_rs, EnsembleParams, TransitionConfig,
};
use ksat::decimate::{
    bp_guided_decimation, dpll, walksat, DecimationConfig, DpllResult, WalksatConfig,
};
use ksat::instance::{
    energy, gen_planted, gen_uniform, read_dimacs, write_dimacs, CnfInstance, SpinConfig,
};
use ksat::sk::{
    cluster_and_score, overlap_matrix, sample_pure_states, AnnealSchedule, SampleConfig, SkSystem,
};
use ksat::sp::{sid, SidConfig};

const EXIT_SAT: u8 = 10;
const EXIT_UNSAT_OR_FAIL: u8 = 20;

#[derive(Parser)]
#[command(name = "ksat", version, about = "Random K-SAT statistical-physics laboratory")]
struct Cli {
    /// Worker threads for seed/grid parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random instance and write it as DIMACS.
    Gen(GenArgs),
    /// Solve a DIMACS instance.
    Solve(SolveArgs),
    /// Success-probability sweep over an alpha grid.
    Scan(ScanArgs),
    /// Ensemble population dynamics (RS, 1RSB, transition location).
    Pd(PdArgs),
    /// Sherrington-Kirkpatrick overlap / ultrametricity experiment.
    Sk(SkArgs),
}

#[derive(Args, Serialize)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    /// Clause count; mutually exclusive with --alpha.
    #[arg(long, conflicts_with = "alpha")]
    m: Option<usize>,
    /// Clause density; m = ceil(alpha * n).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value_t = GenModel::Uniform)]
    model: GenModel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum GenModel {
    Uniform,
    Planted,
}

#[derive(Args, Serialize)]
struct SolveArgs {
    input: PathBuf,
    #[arg(long, value_enum)]
    algo: Algo,
    /// Inverse temperature for BP ("inf" for zero temperature).
    #[arg(long, default_value = "inf")]
    beta: String,
    /// Parisi parameter for SID.
    #[arg(long, default_value_t = 0.0)]
    m: f64,
    #[arg(long, default_value_t = 0.2)]
    damping: f64,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the solution (one spin per line) here on success.
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Write the per-step decimation trace CSV here (bp-dec only).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq)]
enum Algo {
    BpDec,
    Sid,
    Dpll,
    Walksat,
}

#[derive(Args, Serialize)]
struct ScanArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',', required = true)]
    alpha_grid: Vec<f64>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, value_enum)]
    algo: Algo,
    #[arg(long, default_value_t = 0.0)]
    m: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PdArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    alpha_grid: Vec<f64>,
    /// Parisi parameters; descending grids warm-start. Omit for an RS run.
    #[arg(long, value_delimiter = ',')]
    m_grid: Option<Vec<f64>>,
    /// Locate alpha_d / alpha_c / alpha_s by bisection over the alpha grid.
    #[arg(long, conflicts_with = "m_grid")]
    transitions: bool,
    #[arg(long, default_value_t = 10_000)]
    pool: usize,
    #[arg(long, default_value_t = 200)]
    sweeps: usize,
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SkArgs {
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, default_value_t = 1.2)]
    t_start: f64,
    #[arg(long, default_value_t = 0.12)]
    t_end: f64,
    /// Anneal sweeps.
    #[arg(long, default_value_t = 400)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes <prefix>.overlap.csv, .dendrogram.csv, .score.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: &'static str,
    params: serde_json::Value,
    seed: u64,
    artifact_version: &'static str,
    timestamp_unix: u64,
    outputs: Vec<String>,
    notes: Vec<&'static str>,
}

fn write_manifest(
    base: &Path,
    subcommand: &'static str,
    params: serde_json::Value,
    seed: u64,
    outputs: &[&Path],
    notes: Vec<&'static str>,
) -> std::io::Result<()> {
    let manifest = RunManifest {
        subcommand,
        params,
        seed,
        artifact_version: env!("CARGO_PKG_VERSION"),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        notes,
    };
    let path = base.with_extension("manifest.json");
    fs::write(path, serde_json::to_string_pretty(&manifest).unwrap())
}

fn clause_count(n: usize, m: Option<usize>, alpha: Option<f64>) -> Result<usize, String> {
    match (m, alpha) {
        (Some(m), None) => Ok(m),
        (None, Some(a)) if a >= 0.0 => Ok((a * n as f64).ceil() as usize),
        (None, Some(_)) => Err("alpha must be non-negative".into()),
        (None, None) => Err("one of --m or --alpha is required".into()),
        (Some(_), Some(_)) => unreachable!("clap conflict"),
    }
}

fn parse_beta(s: &str) -> Result<Beta, String> {
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
        return Ok(Beta::Infinity);
    }
    let v: f64 = s.parse().map_err(|_| format!("bad --beta value '{s}'"))?;
    if v > 0.0 {
        Ok(Beta::Finite(v))
    } else {
        Err("--beta must be positive or 'inf'".into())
    }
}

fn write_solution(path: &Path, s: &SpinConfig) -> std::io::Result<()> {
    let mut out = String::with_capacity(2 * s.spins.len());
    for &sp in &s.spins {
        out.push_str(if sp > 0 { "1\n" } else { "-1\n" });
    }
    fs::write(path, out)
}

fn run_gen(args: &GenArgs) -> Result<u8, String> {
    let m = clause_count(args.n, args.m, args.alpha)?;
    let params = serde_json::to_value(args).unwrap();
    let mut outputs: Vec<PathBuf> = vec![args.out.clone()];
    match args.model {
        GenModel::Uniform => {
            let inst = gen_uniform(args.n, m, args.k, args.seed).map_err(|e| e.to_string())?;
            write_dimacs(&inst, &args.out).map_err(|e| e.to_string())?;
        }
        GenModel::Planted => {
            let (inst, sigma) =
                gen_planted(args.n, m, args.k, args.seed).map_err(|e| e.to_string())?;
            write_dimacs(&inst, &args.out).map_err(|e| e.to_string())?;
            let sidecar = args.out.with_extension("planted");
            write_solution(&sidecar, &sigma).map_err(|e| e.to_string())?;
            outputs.push(sidecar);
        }
    }
    let refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_manifest(&args.out, "gen", params, args.seed, &refs, vec!["m = ceil(alpha * n)"])
        .map_err(|e| e.to_string())?;
    Ok(0)
}

/// Runs one solver attempt; returns the verified solution if any, plus an
/// optional trace CSV and a step-count statistic.
fn attempt(
    inst: &CnfInstance,
    algo: Algo,
    beta: Beta,
    m: f64,
    damping: f64,
    tol: Option<f64>,
    seed: u64,
) -> (Option<SpinConfig>, Option<String>, f64) {
    match algo {
        Algo::Dpll => match dpll(inst, seed) {
            DpllResult::Sat(s) => (Some(s), None, 0.0),
            DpllResult::Unsat => (None, None, 0.0),
        },
        Algo::Walksat => {
            let out = walksat(inst, &WalksatConfig { seed, ..WalksatConfig::default() });
            (out.solution, None, out.flips as f64)
        }
        Algo::BpDec => {
            let mut cfg = DecimationConfig { beta, seed, ..DecimationConfig::default() };
            cfg.bp.damping = damping;
            if let Some(t) = tol {
                cfg.bp.tol = t;
            }
            let trace = bp_guided_decimation(inst, &cfg);
            let steps = trace.steps.len() as f64;
            let csv = trace.to_csv();
            let sol = match trace.outcome {
                ksat::decimate::DecimationOutcome::Solution(s) => Some(s),
                _ => None,
            };
            (sol, Some(csv), steps)
        }
        Algo::Sid => {
            let mut cfg = SidConfig { m, seed, ..SidConfig::default() };
            if let Some(t) = tol {
                cfg.sp.tol = t;
            }
            let out = sid(inst, &cfg);
            (out.solution, None, out.fixed_by_sp as f64)
        }
    }
}

fn run_solve(args: &SolveArgs) -> Result<u8, String> {
    let inst = read_dimacs(&args.input).map_err(|e| e.to_string())?;
    let beta = parse_beta(&args.beta)?;
    let (sol, trace, _) =
        attempt(&inst, args.algo, beta, args.m, args.damping, args.tol, args.seed);
    if let (Some(path), Some(csv)) = (&args.trace, &trace) {
        fs::write(path, csv).map_err(|e| e.to_string())?;
    }
    let params = serde_json::to_value(args).unwrap();
    write_manifest(&args.input, "solve", params, args.seed, &[], vec![])
        .map_err(|e| e.to_string())?;
    match sol {
        Some(s) => {
            if energy(&inst, &s) != 0 {
                return Err("internal error: unverified solution".into());
            }
            if let Some(path) = &args.solution {
                write_solution(path, &s).map_err(|e| e.to_string())?;
            }
            println!("s SATISFIABLE");
            Ok(EXIT_SAT)
        }
        None => {
            println!(
                "s {}",
                if args.algo == Algo::Dpll { "UNSATISFIABLE" } else { "UNKNOWN" }
            );
            Ok(EXIT_UNSAT_OR_FAIL)
        }
    }
}

fn run_scan(args: &ScanArgs) -> Result<u8, String> {
    if args.alpha_grid.is_empty() {
        return Err("empty --alpha-grid".into());
    }
    let mut csv = String::from("alpha,n,success_rate,stderr,mean_steps\n");
    for &alpha in &args.alpha_grid {
        let m = (alpha * args.n as f64).ceil() as usize;
        let seeds: Vec<u64> = (0..args.seeds).collect();
        let runs = ksat::par::map(&seeds, |&s| {
            let inst_seed = args.seed.wrapping_add(s).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let inst = gen_uniform(args.n, m, args.k, inst_seed).expect("gen");
            let (sol, _, steps) =
                attempt(&inst, args.algo, Beta::Infinity, args.m, 0.2, None, inst_seed ^ 0xa5a5);
            (sol.is_some(), steps)
        });
        let succ = runs.iter().filter(|(ok, _)| *ok).count() as f64;
        let p = succ / runs.len() as f64;
        let stderr = (p * (1.0 - p) / runs.len() as f64).sqrt();
        let mean_steps = runs.iter().map(|(_, st)| st).sum::<f64>() / runs.len() as f64;
        csv.push_str(&format!(
            "{:.4},{},{:.4},{:.4},{:.1}\n",
            alpha, args.n, p, stderr, mean_steps
        ));
    }
    fs::write(&args.out, &csv).map_err(|e| e.to_string())?;
    let params = serde_json::to_value(args).unwrap();
    write_manifest(&args.out, "scan", params, args.seed, &[&args.out], vec![])
        .map_err(|e| e.to_string())?;
    Ok(0)
}

fn run_pd(args: &PdArgs) -> Result<u8, String> {
    if let Some(grid) = &args.m_grid {
        if grid.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
            return Err("m values must lie in [0, 1]".into());
        }
    }
    let base = EnsembleParams {
        k: args.k,
        alpha: 0.0,
        pool: args.pool,
        sweeps: args.sweeps,
        samples: args.samples,
        seed: args.seed,
        beta: Beta::Infinity,
    };
    let csv = if args.transitions {
        let cfg = TransitionConfig {
            alpha_grid: args.alpha_grid.clone(),
            params: base,
            bisection_steps: 6,
        };
        let t = locate_transitions(&cfg);
        let mut s = String::from("transition,alpha,uncertainty\n");
        for (name, est) in
            [("alpha_d", t.alpha_d), ("alpha_c", t.alpha_c), ("alpha_s", t.alpha_s)]
        {
            match est {
                Some(e) => s.push_str(&format!("{name},{:.4},{:.4}\n", e.alpha, e.uncertainty)),
                None => s.push_str(&format!("{name},,\n")),
            }
        }
        s
    } else if let Some(m_grid) = &args.m_grid {
        let mut grid = m_grid.clone();
        grid.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut s = String::from("alpha,m,phi,omega,sigma,fd_error,trivial\n");
        for &alpha in &args.alpha_grid {
            let params = EnsembleParams { alpha, ..base.clone() };
            for row in complexity_curve(&params, &grid) {
                s.push_str(&format!(
                    "{:.4},{:.4},{:.8},{:.8},{:.8},{:.3e},{}\n",
                    alpha, row.m, row.phi, row.omega, row.sigma, row.fd_error, row.trivial
                ));
            }
        }
        s
    } else {
        let mut s = String::from("alpha,omega,q_rs,magnetization\n");
        for &alpha in &args.alpha_grid {
            let out = pd_rs(&EnsembleParams { alpha, ..base.clone() });
            s.push_str(&format!(
                "{:.4},{:.6},{:.6},{:.6}\n",
                alpha, out.omega, out.q_rs, out.magnetization
            ));
        }
        s
    };
    fs::write(&args.out, &csv).map_err(|e| e.to_string())?;
    let params = serde_json::to_value(args).unwrap();
    write_manifest(&args.out, "pd", params, args.seed, &[&args.out], vec![])
        .map_err(|e| e.to_string())?;
    Ok(0)
}

fn run_sk(args: &SkArgs) -> Result<u8, String> {
    if !(args.t_start > args.t_end && args.t_end > 0.0) {
        return Err("schedule requires t_start > t_end > 0".into());
    }
    let sys = SkSystem::new(args.n, args.seed);
    let cfg = SampleConfig {
        schedule: AnnealSchedule { t_start: args.t_start, t_end: args.t_end, sweeps: args.steps },
        s_count: args.samples,
        repeats: args.repeats,
        resample_sweeps: 20,
        seed: args.seed ^ 0x5bd1_e995,
    };
    let states = sample_pure_states(&sys, &cfg);
    let mat = overlap_matrix(&states);
    let out = cluster_and_score(&mat);

    let overlap_path = args.out.with_extension("overlap.csv");
    let dendro_path = args.out.with_extension("dendrogram.csv");
    let score_path = args.out.with_extension("score.csv");
    fs::write(&overlap_path, mat.to_csv()).map_err(|e| e.to_string())?;
    fs::write(&dendro_path, out.dendrogram.to_csv()).map_err(|e| e.to_string())?;
    fs::write(
        &score_path,
        format!(
            "n,samples,repeats,t_end,q_ea,ultrametricity_score\n{},{},{},{:.4},{:.6},{:.6}\n",
            args.n,
            args.samples,
            args.repeats,
            args.t_end,
            mat.q_ea(),
            out.ultrametricity_score
        ),
    )
    .map_err(|e| e.to_string())?;
    let params = serde_json::to_value(args).unwrap();
    write_manifest(
        &args.out,
        "sk",
        params,
        args.seed,
        &[&overlap_path, &dendro_path, &score_path],
        vec!["in-basin resampling is a short re-anneal from the stored low-T configuration"],
    )
    .map_err(|e| e.to_string())?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    }
    let result = match &cli.cmd {
        Cmd::Gen(a) => run_gen(a),
        Cmd::Solve(a) => run_solve(a),
        Cmd::Scan(a) => run_scan(a),
        Cmd::Pd(a) => run_pd(a),
        Cmd::Sk(a) => run_sk(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
