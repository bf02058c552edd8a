//! `pacgrad`: train, certify, sweep, verify and generate data.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 runtime error.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use pacgrad::certifier::experiments::{self, SweepRow};
use pacgrad::certifier::{self, Extras};
use pacgrad::concentration_lab::{self, SuiteOptions};
use pacgrad::config::RunConfig;
use pacgrad::datasets::{self, Dataset};
use pacgrad::optimizers::LogSummary;
use pacgrad::plot::LineChart;
use pacgrad::scalar_bounds::{CatoniParams, TheoremId};
use pacgrad::Error;

#[derive(Parser)]
#[command(name = "pacgrad", version, about = "Gradient methods with data-dependent PAC-Bayesian certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file; writes trajectory.csv and summary.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a run summary (summary.json or the directory holding it).
    Certify {
        trajectory: PathBuf,
        /// take theorem, η, δ and extras from this config
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        theorem: Option<TheoremId>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        /// KL value for the bare data-dependent bound
        #[arg(long)]
        kl: Option<f64>,
        /// global Lipschitz constant (CLD)
        #[arg(long)]
        lipschitz: Option<f64>,
        /// gradient-norm bound L0 (sub-Gaussian SGLD form)
        #[arg(long)]
        l0: Option<f64>,
        /// lattice parameter p (rounded GD)
        #[arg(long)]
        rgd_p: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config over several values of one axis and several seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// comma-separated axis values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// number of seeds per value
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// first seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// also write an SVG chart of the bound and the logged sum
        #[arg(long)]
        svg: bool,
    },
    /// Run the lemma verification suite.
    Verify {
        /// `all` or one verifier name
        #[arg(default_value = "all")]
        selector: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// write every report as JSON into this directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// deliberately use a wrong constant; the suite must fail
        #[arg(long)]
        inject_bug: bool,
        /// 1/25 of the default trial counts
        #[arg(long)]
        quick: bool,
    },
    /// Generate datasets and fixtures.
    Datagen {
        #[command(subcommand)]
        kind: Datagen,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    M,
    Portion,
    Eta,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::M => "m",
            Axis::Portion => "portion",
            Axis::Eta => "eta",
        }
    }
}

#[derive(Subcommand)]
enum Datagen {
    /// Gaussian blobs as CSV (`label,x1,...`).
    Blobs {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// A tiny IDX image/label pair (3 images of 2×2 pixels).
    IdxFixture {
        #[arg(long)]
        out: PathBuf,
    },
    /// Copy of a CSV dataset with a portion of labels replaced at random.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        portion: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Verification,
    Err(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Err(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Err(e.into())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, out),
        Command::Certify { trajectory, config, theorem, eta, delta, kl, lipschitz, l0, rgd_p, out } => {
            let extras = Extras { kl, lipschitz, l0, rgd_p };
            certify(&trajectory, config.as_deref(), theorem, eta, delta, extras, out)
        }
        Command::Sweep { config, axis, values, seeds, seed, out, svg } => {
            sweep(&config, axis, &values, seed, seeds, out, svg)
        }
        Command::Verify { selector, seed, out, inject_bug, quick } => verify(&selector, seed, out, inject_bug, quick),
        Command::Datagen { kind } => datagen(kind),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Run { source, .. } | Error::Step { source, .. } if matches!(**source, Error::Config { .. }) => 2,
        _ => 3,
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn out_dir(flag: Option<PathBuf>, cfg: Option<&RunConfig>) -> PathBuf {
    flag.or_else(|| cfg.and_then(|c| c.out_dir.clone())).unwrap_or_else(|| PathBuf::from("."))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let cfg = RunConfig::load(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CliResult {
    let cfg = load_config(config, seed)?;
    let dir = out_dir(out, Some(&cfg));
    let (log, _) = experiments::execute(&cfg)?;
    let mut csv = Vec::new();
    log.write_csv(&mut csv)?;
    let summary = serde_json::to_vec_pretty(&log.summary()).map_err(Error::from)?;
    write_file(&dir.join("trajectory.csv"), &csv)?;
    write_file(&dir.join("summary.json"), &summary)?;
    write_file(&dir.join("config.json"), cfg.to_json()?.as_bytes())?;
    println!("config digest      {}", cfg.digest());
    println!("trajectory digest  {}", hex_digest(&csv));
    println!("summary digest     {}", hex_digest(&summary));
    println!(
        "final risks        train S {:.6}, train I {:.6}{}",
        log.final_risks.train_s,
        log.final_risks.train_i,
        log.final_risks.test.map_or(String::new(), |t| format!(", test {t:.6}"))
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn certify(
    trajectory: &Path,
    config: Option<&Path>,
    theorem: Option<TheoremId>,
    eta: Option<f64>,
    delta: Option<f64>,
    extras: Extras,
    out: Option<PathBuf>,
) -> CliResult {
    let path = if trajectory.is_dir() { trajectory.join("summary.json") } else { trajectory.to_path_buf() };
    let summary: LogSummary = serde_json::from_reader(BufReader::new(fs::File::open(&path)?)).map_err(Error::from)?;
    let cfg = config.map(|c| load_config(c, None)).transpose()?;
    let theorem = theorem.or_else(|| cfg.as_ref().map(RunConfig::theorem)).unwrap_or_else(|| default_theorem(&summary));
    let eta = eta.or_else(|| cfg.as_ref().map(|c| c.certify.eta)).unwrap_or(1.0);
    let delta = delta.or_else(|| cfg.as_ref().map(|c| c.certify.delta)).unwrap_or(0.1);
    let mut merged = cfg.as_ref().map(|c| c.certify.extras).unwrap_or_default();
    merged.kl = extras.kl.or(merged.kl);
    merged.lipschitz = extras.lipschitz.or(merged.lipschitz);
    merged.l0 = extras.l0.or(merged.l0);
    merged.rgd_p = extras.rgd_p.or(merged.rgd_p);
    let params = CatoniParams::new(eta, summary.meta.n, summary.meta.m, delta)
        .map_err(|e| Error::Config { path: "certify".into(), msg: e.to_string() })?;
    let report = certifier::certify(&summary, theorem, &params, &merged)?;
    let dir = out.unwrap_or_else(|| path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
    write_file(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    print!("{}", report.summary_table());
    println!("wrote {}", dir.join("report.json").display());
    Ok(())
}

fn default_theorem(summary: &LogSummary) -> TheoremId {
    use pacgrad::optimizers::Algorithm::*;
    match summary.meta.algorithm {
        Fgd | Gd => TheoremId::Fgd,
        Fsgd | Sgd => TheoremId::Fsgd,
        Rgd => TheoremId::Rgd,
        Gld => TheoremId::Gld,
        Sgld => TheoremId::Sgld,
        Cld => TheoremId::Cld,
    }
}

fn sweep(
    config: &Path,
    axis: Axis,
    values: &[f64],
    first_seed: u64,
    seeds: u64,
    out: Option<PathBuf>,
    svg: bool,
) -> CliResult {
    let cfg = load_config(config, None)?;
    let dir = out_dir(out, Some(&cfg));
    let seeds: Vec<u64> = (first_seed..first_seed + seeds).collect();
    let rows: Vec<SweepRow> = match axis {
        Axis::M => {
            if let Some(v) = values.iter().find(|v| v.fract() != 0.0 || **v < 0.0) {
                return Err(Error::Config {
                    path: "values".into(),
                    msg: format!("m must be a non-negative integer, got {v}"),
                }
                .into());
            }
            let ms: Vec<usize> = values.iter().map(|&v| v as usize).collect();
            experiments::sweep_m_collect(&cfg, &ms, &seeds)?
        }
        Axis::Portion => experiments::random_label_collect(&cfg, values, &seeds)?,
        Axis::Eta => experiments::sweep_eta(&cfg, values, &seeds)?,
    };
    let name = axis.name();
    let mut csv = Vec::new();
    experiments::write_sweep_csv(name, &rows, &mut csv)?;
    write_file(&dir.join(format!("sweep_{name}.csv")), &csv)?;
    let mut stdout = BufWriter::new(std::io::stdout());
    stdout.write_all(&csv)?;
    for row in &rows {
        for f in &row.failures {
            writeln!(stdout, "# {name} = {}: run failed for seed {f}", row.value)?;
        }
    }
    stdout.flush()?;
    if svg {
        let pts = |f: &dyn Fn(&SweepRow) -> f64| rows.iter().map(|r| (r.value, f(r))).collect::<Vec<_>>();
        let mut chart = LineChart::new(&format!("bound vs {name}"), name, "value")
            .with_series("bound total", pts(&|r| r.total_mean))
            .with_series("train risk on I", pts(&|r| r.train_i_mean));
        if rows.iter().all(|r| r.test_mean.is_some()) {
            chart = chart.with_series("test risk", pts(&|r| r.test_mean.unwrap_or(f64::NAN)));
        }
        write_file(&dir.join(format!("sweep_{name}.svg")), chart.to_svg().as_bytes())?;
        let sum_chart = LineChart::new(&format!("cumulative gradient difference vs {name}"), name, "sum")
            .with_series("mean", pts(&|r| r.sum_mean));
        write_file(&dir.join(format!("sweep_{name}_sum.svg")), sum_chart.to_svg().as_bytes())?;
    }
    eprintln!("wrote {}", dir.join(format!("sweep_{name}.csv")).display());
    Ok(())
}

fn verify(selector: &str, seed: u64, out: Option<PathBuf>, inject_bug: bool, quick: bool) -> CliResult {
    let mut opts = SuiteOptions { seed, inject_bug, ..SuiteOptions::default() };
    if quick {
        opts.tail_trials /= 25;
        opts.replicas /= 25;
    }
    let reports = concentration_lab::run_suite(selector, &opts)?;
    for r in &reports {
        println!("{}", r.summary_line());
    }
    if let Some(dir) = out {
        for (i, r) in reports.iter().enumerate() {
            write_file(&dir.join(format!("{:02}_{}.json", i, r.lemma_id)), r.to_json()?.as_bytes())?;
        }
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} of {} checks passed", reports.len() - failed, reports.len());
    if failed > 0 {
        Err(Failure::Verification)
    } else {
        Ok(())
    }
}

fn datagen(kind: Datagen) -> CliResult {
    match kind {
        Datagen::Blobs { n, dim, classes, separation, seed, out } => {
            let ds = datasets::synth_blobs(n, dim, classes, separation, seed)?;
            write_csv(&ds, &out)?;
        }
        Datagen::IdxFixture { out } => {
            let pixels: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
            let (img, lab) = datasets::encode_idx(&pixels, 2, 2, &[0, 1, 2])?;
            write_file(&out.join("fixture-images-idx3-ubyte"), &img)?;
            write_file(&out.join("fixture-labels-idx1-ubyte"), &lab)?;
            println!("images {}", hex_digest(&img));
            println!("labels {}", hex_digest(&lab));
        }
        Datagen::Corrupt { input, portion, seed, classes, out } => {
            let ds = Dataset::read_csv(BufReader::new(fs::File::open(&input)?), classes)?;
            let (noisy, rows) = datasets::corrupt_labels(&ds, portion, seed)?;
            write_csv(&noisy, &out)?;
            println!("replaced labels of {} rows", rows.len());
        }
    }
    Ok(())
}

fn write_csv(ds: &Dataset, out: &Path) -> Result<(), Error> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    write_file(out, &buf)?;
    println!("wrote {} rows to {} ({})", ds.len(), out.display(), hex_digest(&buf));
    Ok(())
}
