use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use topoms::at::{run_at, threshold_edges, AtConfig};
use topoms::error::{Error, Result};
use topoms::pgm::{load_pgm, save_cell_pgm, save_mask_pgm, save_pgm, SaveMode};
use topoms::topo::{run, TopoConfig};
use topoms::{oracle, synthetic};

#[derive(Parser)]
#[command(name = "topoms", version, about = "Mumford-Shah segmentation by topological ball insertion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment an image by greedy ball insertion.
    Topo(TopoArgs),
    /// Run the Ambrosio-Tortorelli baseline.
    At(AtArgs),
    /// Run the oracle suite on built-in synthetic images.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct TopoArgs {
    /// Input image (PGM, P2 or P5, maxval 255).
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    alpha: f64,
    #[arg(long, default_value_t = 200.0)]
    beta: f64,
    /// Ball radius, in units where the longer image side is 1.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Conductivity inside balls [default: min(0.01, epsilon)].
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Minimum distance between centers of one batch [default: epsilon].
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    cg_tol: f64,
}

#[derive(Args)]
struct AtArgs {
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    alpha: f64,
    #[arg(long, default_value_t = 200.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.05)]
    eps_at: f64,
    /// Cells where v falls below this value are reported as edges.
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    /// Alternating sweeps.
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    cg_tol: f64,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value = "validate-out")]
    out: PathBuf,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn prepare_out(dir: &Path, config: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })?;
    write_file(&dir.join("config.txt"), config)
}

fn topo(args: TopoArgs) -> Result<()> {
    let grid = load_pgm(&args.input)?;
    let mut cfg = TopoConfig::new(args.alpha, args.beta, args.epsilon);
    if let Some(k) = args.kappa {
        cfg.kappa = k;
    }
    if let Some(s) = args.separation {
        cfg.separation = s;
    }
    cfg.batch_size = args.batch_size;
    cfg.max_iters = args.max_iters;
    cfg.cg_tol = args.cg_tol;
    cfg.validate(&grid)?;

    let config = format!(
        "method=topo\ninput={}\nwidth={}\nheight={}\nalpha={}\nbeta={}\nepsilon={}\nkappa={}\n\
         batch_size={}\nseparation={}\nmax_iters={}\ncg_tol={}\n",
        args.input.display(),
        grid.nx() + 1,
        grid.ny() + 1,
        cfg.alpha,
        cfg.beta,
        cfg.epsilon,
        cfg.kappa,
        cfg.batch_size,
        cfg.separation,
        cfg.max_iters,
        cfg.cg_tol
    );
    prepare_out(&args.out, &config)?;

    let res = match run(&grid, &cfg) {
        Ok(r) => r,
        Err(Error::Solver {
            stage,
            report,
            partial_trace: Some(trace),
        }) => {
            write_file(&args.out.join("trace.csv"), trace.to_csv())?;
            return Err(Error::Solver {
                stage,
                report,
                partial_trace: Some(trace),
            });
        }
        Err(e) => return Err(e),
    };
    save_pgm(&res.u, args.out.join("u.pgm"), SaveMode::Clamp)?;
    save_cell_pgm(&res.v, args.out.join("v.pgm"), SaveMode::Clamp)?;
    write_file(&args.out.join("edges.csv"), res.cover.to_csv())?;
    write_file(&args.out.join("trace.csv"), res.trace.to_csv())?;
    let last = res.trace.records.last().map(|r| r.energy.total).unwrap_or(0.0);
    println!(
        "stopped by {} after {} iterations: {} balls, J = {last}",
        res.stopped_by,
        res.trace.records.len() - 1,
        res.cover.ball_count()
    );
    Ok(())
}

fn at(args: AtArgs) -> Result<()> {
    let grid = load_pgm(&args.input)?;
    let mut cfg = AtConfig::new(args.alpha, args.beta, args.eps_at);
    cfg.threshold = args.threshold;
    cfg.outer_iters = args.max_iters;
    cfg.cg_tol = args.cg_tol;
    cfg.validate()?;

    let config = format!(
        "method=at\ninput={}\nwidth={}\nheight={}\nalpha={}\nbeta={}\neps_at={}\nthreshold={}\n\
         outer_iters={}\ncg_tol={}\nfloor={}\n",
        args.input.display(),
        grid.nx() + 1,
        grid.ny() + 1,
        cfg.alpha,
        cfg.beta,
        cfg.eps_at,
        cfg.threshold,
        cfg.outer_iters,
        cfg.cg_tol,
        cfg.floor
    );
    prepare_out(&args.out, &config)?;

    let res = run_at(&grid, &cfg)?;
    let edges = threshold_edges(&res.v, &grid, cfg.threshold)?;
    save_pgm(&res.u, args.out.join("u.pgm"), SaveMode::Clamp)?;
    save_pgm(&res.v, args.out.join("v.pgm"), SaveMode::Clamp)?;
    save_mask_pgm(&edges, args.out.join("edges.pgm"))?;
    write_file(&args.out.join("trace.csv"), res.trace.to_csv())?;
    let total = res.trace.sweeps.last().map(|s| s.after_v.total).unwrap_or(0.0);
    println!(
        "{} sweeps: min v = {:.4}, {} edge cells, energy = {total}",
        cfg.outer_iters,
        res.v.min(),
        edges.values().iter().filter(|&&m| m == 1.0).count()
    );
    Ok(())
}

struct Report {
    text: String,
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        let tag = if ok { "PASS" } else { "FAIL" };
        let line = format!("{tag} {name}: {detail}");
        println!("{line}");
        let _ = writeln!(self.text, "{line}");
        if !ok {
            self.failed += 1;
        }
    }
}

/// Returns whether every check passed.
fn validate(args: ValidateArgs) -> Result<bool> {
    let probe = oracle::reference_probe()?;
    let config = format!(
        "method=validate\nconvergence_levels=32,64,128\nconvergence_alpha=1\nprobe_cells={}\n\
         probe_alpha={}\nprobe_point={},{}\nprobe_epsilons={:?}\nprobe_kappa={}\ncg_tol={}\n",
        oracle::PROBE_CELLS,
        probe.cfg.alpha,
        probe.point.x,
        probe.point.y,
        probe.epsilons,
        probe.cfg.kappa,
        probe.cfg.cg_tol
    );
    prepare_out(&args.out, &config)?;
    let mut report = Report {
        text: String::new(),
        failed: 0,
    };

    let study = oracle::manufactured_convergence(&[32, 64, 128], 1.0)?;
    write_file(&args.out.join("convergence.csv"), oracle::convergence_csv(&study))?;
    let ratios = oracle::convergence_ratios(&study);
    report.check(
        "fem convergence",
        ratios.iter().all(|r| (3.5..=4.5).contains(r)),
        format!("error ratios {ratios:.3?}"),
    );

    let p = oracle::expansion_probe(&probe.grid, probe.point, &probe.epsilons, &probe.cfg)?;
    write_file(&args.out.join("probe.csv"), p.to_csv())?;
    let last = p.rel_errors.last().copied().unwrap_or(f64::INFINITY);
    report.check(
        "expansion error",
        !p.degenerate && p.strictly_decreasing() && last < 0.5,
        format!("relative errors {:.4?}", p.rel_errors),
    );
    let order_ok = p.exact.iter().zip(&p.predicted).all(|(&e, &q)| {
        let r = e / q;
        e < 0.0 && (0.5..=2.0).contains(&r)
    });
    report.check(
        "expansion sign and order",
        order_ok,
        format!("exact {:?} predicted {:?}", p.exact, p.predicted),
    );

    let flat = synthetic::constant(32, 32, 0.4)?;
    let res = run(&flat, &TopoConfig::new(20.0, 200.0, 0.1))?;
    let still = res.u.values().iter().all(|x| (x - 0.4).abs() < 1e-9);
    report.check(
        "stop on constant image",
        res.trace.records.len() == 1 && res.cover.ball_count() == 0 && still,
        format!("{} iterations, {} balls", res.trace.records.len() - 1, res.cover.ball_count()),
    );

    let step = synthetic::step(48, 48)?;
    let mut cfg = TopoConfig::new(1e-3, 1e-4, 0.0625);
    cfg.kappa = 0.01;
    cfg.batch_size = 1;
    cfg.max_iters = 40;
    let res = run(&step, &cfg)?;
    let near = res
        .trace
        .selected_centers()
        .all(|c| (c.x - 0.5).abs() <= cfg.epsilon + step.h());
    report.check(
        "descent on step image",
        oracle::descent_audit(&res.trace) && res.cover.ball_count() > 0 && near,
        format!("{} balls, stopped by {}", res.cover.ball_count(), res.stopped_by),
    );

    let mut at_cfg = AtConfig::new(0.01, 0.02, 0.05);
    at_cfg.outer_iters = 10;
    let at_res = run_at(&step, &at_cfg)?;
    report.check(
        "alternating descent",
        at_res.trace.is_monotone(),
        format!("{} sweeps", at_cfg.outer_iters),
    );

    write_file(&args.out.join("summary.txt"), &report.text)?;
    Ok(report.failed == 0)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("TOPOMS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("TOPOMS_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Solver { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Topo(a) => topo(a).map(|()| true),
        Command::At(a) => at(a).map(|()| true),
        Command::Validate(a) => validate(a),
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
