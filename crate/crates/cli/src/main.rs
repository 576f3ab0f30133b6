use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ivlab::config::RunConfig;
use ivlab::creditvix::{implied_vol, load_chain};
use ivlab::data::generate_synthetic;
use ivlab::metrics::LossKind;
use ivlab::pipeline::{self, MANIFEST};
use ivlab::plot::plot_dir;
use ivlab::report::report_dir;
use ivlab::select::select_top_k;
use ivlab::{Error, Result};

/// Output directory override; the `--out` flag takes precedence.
const ENV_OUT: &str = "IVLAB_OUT";
/// Worker thread count override; the `--threads` flag takes precedence.
const ENV_THREADS: &str = "IVLAB_THREADS";

#[derive(Parser)]
#[command(name = "ivlab", version, about = "Walk-forward implied volatility forecasting experiments")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; replaces the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; replaces the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel tasks.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic panel (target plus asset closes and volumes) as CSV.
    Generate {
        #[arg(long, default_value_t = 1000)]
        days: usize,
        #[arg(long, default_value_t = 4)]
        series: usize,
    },
    /// Write the engineered feature matrix for the configured data.
    Features,
    /// Rank features on the selection rows and write importance.csv.
    Select,
    /// Full experiment: records, report and manifest.
    Run,
    /// Rebuild report.csv and report.txt from a records directory.
    Report { dir: Option<PathBuf> },
    /// Write SVG figures and CSV sidecars for every record file.
    Plot { dir: Option<PathBuf> },
    /// Credit VIX from an option chain file.
    Vix { chain: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(ENV_THREADS) {
            Ok(v) => Some(
                v.parse()
                    .map_err(|_| Error::argument(format!("{ENV_THREADS} must be a positive integer, got `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::argument("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::argument(e.to_string()))?;
    }
    Ok(())
}

fn out_dir(cli: &Cli) -> Option<PathBuf> {
    cli.out.clone().or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::argument("this subcommand needs --config <path>"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = out_dir(cli) {
        cfg.output = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Directory argument, else --out / environment, else the current directory.
fn target_dir(cli: &Cli, dir: &Option<PathBuf>) -> PathBuf {
    dir.clone().or_else(|| out_dir(cli)).unwrap_or_else(|| PathBuf::from("."))
}

fn dispatch(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Generate { days, series } => {
            let frame = generate_synthetic(cli.seed.unwrap_or(0), *days, *series)?;
            let path = out_dir(&cli).unwrap_or_default().join("synthetic.csv");
            frame.write_csv(create(&path)?)?;
            println!("wrote {} ({} rows)", path.display(), frame.len());
        }
        Command::Features => {
            let cfg = load_config(&cli)?;
            let prepared = pipeline::prepare(&cfg, &pipeline::load_frame(&cfg)?)?;
            let path = cfg.output.join("features.csv");
            prepared.matrix.write_csv(create(&path)?)?;
            println!("wrote {} ({} rows, {} features)", path.display(), prepared.matrix.len(), prepared.matrix.width());
            for d in &prepared.dropped {
                eprintln!("warning: dropped zero-variance feature {d}");
            }
        }
        Command::Select => {
            let cfg = load_config(&cli)?;
            let report = pipeline::select(&cfg)?;
            let path = cfg.output.join("importance.csv");
            report.write_csv(create(&path)?)?;
            let top = select_top_k(&report, cfg.selection.top_k.min(report.features.len()))?;
            println!("wrote {}", path.display());
            for (i, f) in top.iter().enumerate() {
                println!("{:>3}  {f}", i + 1);
            }
        }
        Command::Run => {
            let cfg = load_config(&cli)?;
            let summary = pipeline::run(&cfg)?;
            println!(
                "wrote {} record files, report and {MANIFEST} to {}",
                summary.record_files.len(),
                summary.output.display()
            );
        }
        Command::Report { dir } => {
            let dir = target_dir(&cli, dir);
            let manifest = dir.join(MANIFEST);
            let (loss, h) = if manifest.exists() {
                let m = RunConfig::load(&manifest)?;
                (m.dm.loss, m.dm.horizon)
            } else {
                (LossKind::Squared, 1)
            };
            let expected = pipeline::expected_records(&dir)?;
            let report = report_dir(&dir, &expected, loss, h)?;
            print!("{}", report.to_text());
        }
        Command::Plot { dir } => {
            let summary = plot_dir(&target_dir(&cli, dir))?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} files", summary.files.len());
        }
        Command::Vix { chain } => {
            let inputs = load_chain(chain)?;
            let terms = inputs.terms()?;
            let vol = implied_vol(&inputs)?;
            println!("price_term  {}", terms.price_term);
            println!("correction  {}", terms.correction);
            println!("variance    {}", terms.variance());
            println!("vol         {vol}");
            println!("vol_pct     {}", 100.0 * vol);
        }
    }
    Ok(())
}
