//! `simplesdp` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 primal infeasible,
//! 3 unbounded, 4 numerical breakdown, 5 certificate construction failed,
//! 64 usage error, 65 malformed input file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use simplesdp::bm::{bm_multistart, gap_to_dual, BmConfig, MultistartRow};
use simplesdp::certifier::{certify, table_header, table_row, SimplicityReport};
use simplesdp::instances::{
    maxcut, orthogonal_cut, parse_gset, product_sdp, sbm, simple_from_psd, z2_sync, Graph, Instance,
};
use simplesdp::mc::{
    dual_multiplicity_demo, golfing_certificate, lifted_dual_from_y, mc_generate, mc_generate_batched, mc_lift,
    spectrum_csv, GolfingChecks, McProblem, MultiplicityReport,
};
use simplesdp::rng::SeededRng;
use simplesdp::solver::{solve, RelativeKkt, SolverConfig};
use simplesdp::{SdpError, SolverSolution, SymMatrix};

const SCHEMA: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "simplesdp", version, about = "Simple SDPs: generators, solver, certifier, BM and matrix completion")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Solve an instance file.
    Solve {
        instance: PathBuf,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a solution: ranks, conditioning and simplicity flags.
    Certify {
        instance: PathBuf,
        solution: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-start Burer–Monteiro on an instance file.
    Bm {
        instance: PathBuf,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 10)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dual multiplicity on a lifted matrix-completion problem.
    McDemo {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        /// sampling rate; defaults to 3 r log(n) / n
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Golfing-scheme dual certificate over one or more trials.
    McCert {
        #[arg(long, default_value_t = 60)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 4.0)]
        c0: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(subcommand)]
    family: Family,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Family {
    /// Random PSD matrix turned into the SDP it uniquely solves.
    SimpleFromPsd {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        #[arg(long, default_value_t = 1e-10)]
        eps: f64,
    },
    /// MaxCut relaxation of a Gset file or a random graph.
    #[command(group = clap::ArgGroup::new("source").required(true).args(["gset", "random"]))]
    Maxcut {
        #[arg(long)]
        gset: Option<PathBuf>,
        /// number of vertices of an Erdős–Rényi graph
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long)]
        signed: bool,
    },
    /// Orthogonal cut with a Gaussian cost.
    Ocut {
        #[arg(long)]
        blocks: usize,
        #[arg(long)]
        d: usize,
    },
    /// Product of elliptopes over a random partition, Gaussian cost.
    Product {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        groups: usize,
    },
    /// Z2 synchronization.
    Z2sync {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        gamma: f64,
    },
    /// Two-community stochastic block model.
    Sbm {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        /// write the rescaled program instead
        #[arg(long)]
        rescaled: bool,
    },
    /// Lifted matrix-completion SDP.
    Mc {
        #[arg(long)]
        n: usize,
        /// column count; defaults to n
        #[arg(long)]
        n2: Option<usize>,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        #[arg(long)]
        p: f64,
        /// sample Ω as golfing batches
        #[arg(long)]
        batched: bool,
        #[arg(long, default_value_t = 4.0)]
        c0: f64,
    },
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: u32,
    kind: &'a str,
    created_unix: u64,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct InstanceBody<'a> {
    instance: &'a Instance,
    mc: Option<&'a McProblem>,
}

#[derive(Deserialize)]
struct InstanceFile {
    schema: u32,
    instance: Instance,
}

#[derive(Serialize)]
struct SolutionBody<'a> {
    label: &'a str,
    converged: bool,
    relative_kkt: RelativeKkt,
    solution: &'a SolverSolution,
}

#[derive(Deserialize)]
struct SolutionFile {
    schema: u32,
    solution: SolverSolution,
}

#[derive(Serialize)]
struct CertifyBody<'a> {
    report: &'a SimplicityReport,
}

#[derive(Serialize)]
struct BmBody {
    label: String,
    r: usize,
    starts: usize,
    seed: u64,
    p_star: Option<f64>,
    witness_tol: Option<f64>,
    results: Vec<MultistartRow>,
    failure_witnesses: Vec<usize>,
    all_sosp: bool,
}

#[derive(Serialize)]
struct McDemoBody<'a> {
    n: usize,
    rank: usize,
    p: f64,
    seed: u64,
    report: &'a MultiplicityReport,
}

#[derive(Serialize)]
struct McTrial {
    seed: u64,
    error: Option<String>,
    k0: Option<usize>,
    t0: Option<usize>,
    q_batch: Option<f64>,
    checks: Option<GolfingChecks>,
    lambda_gap: Option<f64>,
    checks_pass: bool,
    strictly_complementary: bool,
}

#[derive(Serialize)]
struct McCertBody {
    n: usize,
    rank: usize,
    p: f64,
    c0: f64,
    seed: u64,
    trials: Vec<McTrial>,
    pass_rate: f64,
    lambda_bound_when_pass: bool,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn emit<T: Serialize>(kind: &str, body: T, out: Option<&Path>) -> anyhow::Result<()> {
    let env = Envelope {
        schema: SCHEMA,
        kind,
        created_unix: now_unix(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            log::info!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn check_schema(schema: u32, path: &Path) -> anyhow::Result<()> {
    if schema != SCHEMA {
        bail!(SdpError::Parse {
            line: 0,
            msg: format!("{}: unsupported schema {schema}", path.display())
        });
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        anyhow!(SdpError::Parse {
            line: e.line(),
            msg: format!("{}: {e}", path.display())
        })
    })
}

fn load_instance(path: &Path) -> anyhow::Result<Instance> {
    let f: InstanceFile = read_json(path)?;
    check_schema(f.schema, path)?;
    Ok(f.instance)
}

fn load_solution(path: &Path) -> anyhow::Result<SolverSolution> {
    let f: SolutionFile = read_json(path)?;
    check_schema(f.schema, path)?;
    Ok(f.solution)
}

fn positive(name: &str, v: usize) -> anyhow::Result<()> {
    if v == 0 {
        return Err(usage(format!("--{name} must be positive")));
    }
    Ok(())
}

fn gen(args: GenArgs) -> anyhow::Result<()> {
    let seed = args.seed;
    let mut mc = None;
    let inst = match args.family {
        Family::SimpleFromPsd { n, rank, eps } => {
            positive("n", n)?;
            if rank > n {
                return Err(usage("--rank must not exceed --n"));
            }
            let g = SeededRng::new(seed).normal_matrix(n, rank);
            let mut inst = simple_from_psd(&SymMatrix::gram_rows(&g), eps)?;
            inst.seed = Some(seed);
            inst
        }
        Family::Maxcut {
            gset,
            random,
            density,
            signed,
        } => match (gset, random) {
            (Some(path), _) => {
                let mut inst = maxcut(&parse_gset(&path)?)?;
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                inst.sdp = inst.sdp.with_label(stem);
                inst
            }
            (None, Some(n)) => {
                let mut inst = maxcut(&Graph::random(n, density, signed, seed)?)?;
                inst.seed = Some(seed);
                inst
            }
            (None, None) => return Err(usage("maxcut needs --gset or --random")),
        },
        Family::Ocut { blocks, d } => {
            positive("blocks", blocks)?;
            positive("d", d)?;
            let c = SeededRng::new(seed).gaussian_symmetric(blocks * d);
            let mut inst = orthogonal_cut(blocks, d, &c)?;
            inst.seed = Some(seed);
            inst
        }
        Family::Product { n, groups } => {
            positive("groups", groups)?;
            if groups > n {
                return Err(usage("--groups must not exceed --n"));
            }
            let mut order: Vec<usize> = (0..n).collect();
            SeededRng::derived(seed, 0).shuffle(&mut order);
            let mut partition = vec![Vec::new(); groups];
            for (k, i) in order.into_iter().enumerate() {
                partition[k % groups].push(i);
            }
            for part in &mut partition {
                part.sort_unstable();
            }
            let c = SeededRng::derived(seed, 1).gaussian_symmetric(n);
            let mut inst = product_sdp(&partition, &c)?;
            inst.seed = Some(seed);
            inst
        }
        Family::Z2sync { n, gamma } => z2_sync(n, gamma, seed)?,
        Family::Sbm { n, p, q, rescaled } => {
            let pair = sbm(n, p, q, seed)?;
            if rescaled {
                pair.rescaled
            } else {
                pair.sbm
            }
        }
        Family::Mc {
            n,
            n2,
            rank,
            p,
            batched,
            c0,
        } => {
            let n2 = n2.unwrap_or(n);
            let prob = if batched {
                mc_generate_batched(n, n2, rank, p, c0, seed)?
            } else {
                mc_generate(n, n2, rank, p, seed)?
            };
            let inst = mc_lift(&prob)?;
            mc = Some(prob);
            inst
        }
    };
    log::info!("generated {} (n = {}, m = {})", inst.sdp.label(), inst.sdp.n(), inst.sdp.m());
    emit(
        "instance",
        InstanceBody {
            instance: &inst,
            mc: mc.as_ref(),
        },
        args.out.as_deref(),
    )
}

fn cmd_solve(path: &Path, tol: f64, out: Option<&Path>) -> anyhow::Result<()> {
    if !(tol > 0.0) {
        return Err(usage("--tol must be positive"));
    }
    let inst = load_instance(path)?;
    let cfg = SolverConfig::default().with_tol(tol);
    let sol = solve(&inst.sdp, &cfg)?;
    let kkt = RelativeKkt::of(&inst.sdp, &sol);
    log::info!(
        "{}: p = {:.10e}, d = {:.10e}, {} iterations, kkt {:.2e}",
        inst.sdp.label(),
        sol.primal_obj,
        sol.dual_obj,
        sol.iterations,
        kkt.max()
    );
    if !sol.converged() {
        log::warn!("solver stopped at the iteration limit");
    }
    emit(
        "solution",
        SolutionBody {
            label: inst.sdp.label(),
            converged: sol.converged(),
            relative_kkt: kkt,
            solution: &sol,
        },
        out,
    )
}

fn cmd_certify(inst_path: &Path, sol_path: &Path, eps: f64, out: Option<&Path>) -> anyhow::Result<()> {
    let inst = load_instance(inst_path)?;
    let sol = load_solution(sol_path)?.refreshed(&inst.sdp)?;
    let report = certify(&inst.sdp, &sol, eps)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let table = format!("{}\n{}\n", table_header(), table_row(&report.label, &report));
    if out.is_some() {
        print!("{table}");
    } else {
        eprint!("{table}");
    }
    emit("certificate", CertifyBody { report: &report }, out)
}

fn cmd_bm(path: &Path, r: usize, starts: usize, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    positive("r", r)?;
    positive("starts", starts)?;
    let inst = load_instance(path)?;
    let sdp = &inst.sdp;
    let mut results = bm_multistart(sdp, r, starts, seed, &BmConfig::default())?;
    let (p_star, witness_tol) = match solve(sdp, &SolverConfig::default()) {
        Ok(sol) => {
            for res in &mut results {
                res.gap_to_dual = gap_to_dual(sdp, &res.f, &sol.y).ok();
            }
            (Some(sol.primal_obj), Some(1e-4 * (1.0 + sol.primal_obj.abs())))
        }
        Err(e) => {
            log::warn!("no reference dual, gaps left empty: {e}");
            (None, None)
        }
    };
    let failure_witnesses = results
        .iter()
        .enumerate()
        .filter(|(_, res)| res.sosp && matches!((res.gap_to_dual, witness_tol), (Some(g), Some(t)) if g > t))
        .map(|(k, _)| k)
        .collect::<Vec<_>>();
    for &k in &failure_witnesses {
        log::warn!("start {k}: second-order critical point with a positive gap");
    }
    emit(
        "bm",
        BmBody {
            label: sdp.label().to_string(),
            r,
            starts,
            seed,
            p_star,
            witness_tol,
            all_sosp: results.iter().all(|res| res.sosp),
            results: results.iter().map(MultistartRow::from).collect(),
            failure_witnesses,
        },
        out,
    )
}

fn default_rate(n: usize, rank: usize) -> f64 {
    (3.0 * rank as f64 * (n as f64).ln() / n as f64).min(1.0)
}

fn cmd_mc_demo(n: usize, rank: usize, p: Option<f64>, seed: u64, out_dir: &Path) -> anyhow::Result<()> {
    let p = p.unwrap_or_else(|| default_rate(n, rank));
    let prob = mc_generate(n, n, rank, p, seed)?;
    log::info!("|Ω| = {}, μ = {:.3}", prob.omega.len(), prob.mu);
    let report = dual_multiplicity_demo(&prob, &SolverConfig::default(), seed)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("spectrum_identity.csv"), spectrum_csv(&report.spectrum_identity))?;
    fs::write(out_dir.join("spectrum_random.csv"), spectrum_csv(&report.spectrum_random))?;
    log::info!("distance between dual slacks {:.4e}, multiple = {}", report.distance, report.multiple);
    emit(
        "mc-demo",
        McDemoBody {
            n,
            rank,
            p,
            seed,
            report: &report,
        },
        Some(&out_dir.join("mc_demo.json")),
    )
}

fn golf_trial(n: usize, rank: usize, p: f64, c0: f64, seed: u64) -> McTrial {
    let mut trial = McTrial {
        seed,
        error: None,
        k0: None,
        t0: None,
        q_batch: None,
        checks: None,
        lambda_gap: None,
        checks_pass: false,
        strictly_complementary: false,
    };
    let run = || -> simplesdp::Result<_> {
        let prob = mc_generate_batched(n, n, rank, p, c0, seed)?;
        let g = golfing_certificate(&prob, c0, seed)?;
        let dual = lifted_dual_from_y(&g.problem, &g.y)?;
        Ok((g, dual))
    };
    match run() {
        Ok((g, dual)) => {
            let c = &g.checks;
            trial.checks_pass = c.p_omega_residual == 0.0 && c.tangent_residual <= 1e-6 && c.perp_bound_holds;
            trial.k0 = Some(g.state.k0);
            trial.t0 = Some(g.state.t0);
            trial.q_batch = Some(g.state.q_batch);
            trial.checks = Some(g.checks);
            trial.lambda_gap = Some(dual.report.lambda_gap);
            trial.strictly_complementary = dual.report.strictly_complementary;
        }
        Err(e) => trial.error = Some(e.to_string()),
    }
    trial
}

#[allow(clippy::too_many_arguments)]
fn cmd_mc_cert(
    n: usize,
    rank: usize,
    p: f64,
    c0: f64,
    seed: u64,
    trials: usize,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    positive("trials", trials)?;
    if !(0.0 < p && p <= 1.0) {
        return Err(usage("--p must lie in (0, 1]"));
    }
    let results: Vec<McTrial> = (0..trials as u64)
        .into_par_iter()
        .map(|i| golf_trial(n, rank, p, c0, seed.wrapping_add(i)))
        .collect();
    let passed = results.iter().filter(|t| t.checks_pass).count();
    let lambda_bound_when_pass = results
        .iter()
        .filter(|t| t.checks_pass)
        .all(|t| t.lambda_gap.is_some_and(|l| l >= 3.0 / 8.0 - 1e-6));
    log::info!("golfing checks passed on {passed}/{trials} trials");
    emit(
        "mc-cert",
        McCertBody {
            n,
            rank,
            p,
            c0,
            seed,
            pass_rate: passed as f64 / trials as f64,
            lambda_bound_when_pass,
            trials: results,
        },
        out,
    )
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Command::Gen(args) => gen(args),
        Command::Solve { instance, tol, out } => cmd_solve(&instance, tol, out.as_deref()),
        Command::Certify {
            instance,
            solution,
            eps,
            out,
        } => cmd_certify(&instance, &solution, eps, out.as_deref()),
        Command::Bm {
            instance,
            r,
            starts,
            seed,
            out,
        } => cmd_bm(&instance, r, starts, seed, out.as_deref()),
        Command::McDemo {
            n,
            rank,
            p,
            seed,
            out_dir,
        } => cmd_mc_demo(n, rank, p, seed, &out_dir),
        Command::McCert {
            n,
            rank,
            p,
            c0,
            seed,
            trials,
            out,
        } => cmd_mc_cert(n, rank, p, c0, seed, trials, out.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 64;
    }
    match err.downcast_ref::<SdpError>() {
        Some(SdpError::Infeasible(_)) => 2,
        Some(SdpError::Unbounded(_)) => 3,
        Some(SdpError::NumericalBreakdown(_)) => 4,
        Some(SdpError::CertificateFailure(_)) => 5,
        Some(SdpError::InvalidInput(_)) => 64,
        Some(SdpError::Parse { .. } | SdpError::DimensionMismatch { .. }) => 65,
        Some(SdpError::Io(_)) | None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
