use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pnp_consensus::certificates::{CertifyOptions, Verdict};
use pnp_consensus::metrics::{default_horizons, disagreement, estimate_io_gain};
use pnp_consensus::scenario::{ScenarioError, ScenarioFile, BUNDLED_EXAMPLE};
use pnp_consensus::sim::{run, NoiseConfig, TrajectoryRecord};

/// Overrides the default output directory (the current directory).
const OUT_DIR_ENV: &str = "PNP_CONSENSUS_OUT_DIR";

const EXIT_INTERNAL: u8 = 1;
const EXIT_NOT_CERTIFIED: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "pnp-consensus",
    version,
    about = "Plug-and-play consensus certificates and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the local interface conditions for the scenario's plug step.
    Certify(CertifyArgs),
    /// Simulate the scenario and write trajectory CSV plus metadata JSON.
    Simulate(SimulateArgs),
    /// Estimate consensus gains from a trajectory CSV.
    Report(ReportArgs),
    /// Write the bundled two-network scenario.
    Example(ExampleArgs),
}

#[derive(Args)]
struct CertifyArgs {
    scenario: PathBuf,
    /// Decide from the smallest eigenvalue only.
    #[arg(long)]
    oracle_only: bool,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Print the text table (default when --json is absent).
    #[arg(long)]
    table: bool,
    /// Accept boundary nodes without neighbours in their own network.
    #[arg(long)]
    allow_isolated_side: bool,
}

#[derive(Args)]
struct SimulateArgs {
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run several seeds in parallel, e.g. `1,2,5` or `1..8` (end exclusive).
    #[arg(long, conflicts_with = "seed")]
    sweep: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    trajectory: PathBuf,
    scenario: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ExampleArgs {
    /// Destination file; `-` writes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn internal(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: e.to_string(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match &e {
            ScenarioError::Certificate(c) if c.is_degenerate() => EXIT_DEGENERATE,
            _ => EXIT_INTERNAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Certify(a) => certify(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
        Command::Example(a) => example(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn out_dir(flag: Option<PathBuf>, file: &ScenarioFile) -> PathBuf {
    flag.or_else(|| file.output.as_ref().and_then(|o| o.dir.clone()).map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

fn certify(a: CertifyArgs) -> Result<u8, Failure> {
    let file = ScenarioFile::load(&a.scenario)?;
    let resolved = file.resolve()?;
    let opts = CertifyOptions {
        oracle_only: a.oracle_only,
        allow_isolated_side: a.allow_isolated_side,
        ..CertifyOptions::default()
    };
    let out = resolved.certify(&opts)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&out).map_err(Failure::internal)?);
    }
    if a.table || !a.json {
        println!("node   declared nu   sweep nu      used nu");
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        for r in &out.node_indices {
            println!(
                "{:>4}   {:>11}   {:>8}   {:>10.4}",
                r.id,
                opt(r.declared_nu),
                opt(r.sweep_nu),
                r.nu_used
            );
        }
        print!("{}", out.certificate.to_table());
    }
    for (i, j) in &out.certificate.failing_edges {
        eprintln!("condition fails on edge ({i},{j})");
    }
    Ok(match out.certificate.verdict {
        Verdict::Certified => 0,
        Verdict::GershgorinFailedOraclePd | Verdict::NotPd => EXIT_NOT_CERTIFIED,
    })
}

fn parse_sweep(spec: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::internal(format!("cannot parse seed sweep {spec:?}"));
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if hi <= lo {
            return Err(bad());
        }
        return Ok((lo..hi).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn simulate(a: SimulateArgs) -> Result<u8, Failure> {
    let file = ScenarioFile::load(&a.scenario)?;
    let base = file.resolve()?.simulation()?;
    let dir = out_dir(a.out_dir, &file);
    fs::create_dir_all(&dir).map_err(Failure::internal)?;
    let name = stem(&a.scenario);
    let noise_for = |seed: Option<u64>| {
        let mut n: NoiseConfig = *base.noise();
        if let Some(s) = seed {
            n.seed = s;
        }
        if let Some(x) = a.noise_scale {
            n.scale = x;
        }
        n
    };
    let seeds: Vec<Option<u64>> = match &a.sweep {
        Some(spec) => parse_sweep(spec)?.into_iter().map(Some).collect(),
        None => vec![a.seed],
    };
    let results: Vec<Result<PathBuf, Failure>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let scenario = base.clone().with_noise(noise_for(seed));
                let dir = &dir;
                let name = &name;
                scope.spawn(move || -> Result<PathBuf, Failure> {
                    let rec = run(&scenario).map_err(Failure::internal)?;
                    let tag = format!("{name}_seed{}", scenario.noise().seed);
                    let csv_path = dir.join(format!("{tag}.csv"));
                    let csv_file = fs::File::create(&csv_path).map_err(Failure::internal)?;
                    rec.write_csv(std::io::BufWriter::new(csv_file))
                        .map_err(Failure::internal)?;
                    let meta = serde_json::to_string_pretty(&scenario.metadata()).map_err(Failure::internal)?;
                    fs::write(dir.join(format!("{tag}.meta.json")), meta).map_err(Failure::internal)?;
                    Ok(csv_path)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Failure::internal("simulation thread panicked")))
            })
            .collect()
    });
    for r in results {
        println!("{}", r?.display());
    }
    Ok(0)
}

fn report(a: ReportArgs) -> Result<u8, Failure> {
    let file = ScenarioFile::load(&a.scenario)?;
    let graph = file.resolve()?.final_graph()?;
    let input = fs::File::open(&a.trajectory).map_err(Failure::internal)?;
    let traj = TrajectoryRecord::read_csv(std::io::BufReader::new(input)).map_err(Failure::internal)?;
    let t_end = *traj
        .times
        .last()
        .ok_or_else(|| Failure::internal("trajectory has no samples"))?;
    let est = estimate_io_gain(&traj, &graph, &default_horizons(t_end)).map_err(Failure::internal)?;
    let dis = disagreement(&traj, &graph).map_err(Failure::internal)?;

    let dir = out_dir(a.out_dir, &file);
    fs::create_dir_all(&dir).map_err(Failure::internal)?;
    let name = stem(&a.trajectory);
    let est_path = dir.join(format!("{name}.estimate.json"));
    fs::write(
        &est_path,
        serde_json::to_string_pretty(&est).map_err(Failure::internal)?,
    )
    .map_err(Failure::internal)?;
    let dis_path = dir.join(format!("{name}.disagreement.csv"));
    let mut out = std::io::BufWriter::new(fs::File::create(&dis_path).map_err(Failure::internal)?);
    writeln!(out, "# t disagreement").map_err(Failure::internal)?;
    for (t, d) in traj.times.iter().zip(&dis) {
        writeln!(out, "{t} {d}").map_err(Failure::internal)?;
    }
    out.flush().map_err(Failure::internal)?;

    println!("horizon      |D'Y|_T      |D'W|_T");
    for s in &est.samples {
        println!(
            "{:>8.3}  {:>11.5}  {:>11.5}",
            s.horizon, s.disagreement_norm, s.noise_norm
        );
    }
    println!(
        "rho_hat = {:.6}, sigma_hat = {:.6}, satisfied = {}",
        est.rho_hat, est.sigma_hat, est.satisfied
    );
    println!("{}", est_path.display());
    println!("{}", dis_path.display());
    Ok(0)
}

fn example(a: ExampleArgs) -> Result<u8, Failure> {
    match a.out {
        Some(p) if p.as_os_str() == "-" => {
            print!("{BUNDLED_EXAMPLE}");
        }
        out => {
            let path = out.unwrap_or_else(|| {
                std::env::var_os(OUT_DIR_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("."))
                    .join("paper_example.json")
            });
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(Failure::internal)?;
            }
            fs::write(&path, BUNDLED_EXAMPLE).map_err(Failure::internal)?;
            println!("{}", path.display());
        }
    }
    Ok(0)
}
