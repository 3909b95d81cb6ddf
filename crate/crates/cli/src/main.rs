use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use saec::calibration::{
    calibrate_policy, CalibrationError, CalibrationRecord, OperatingTargets, RoutingPolicy,
};
use saec::codec::{lossy_cycle, mean_abs_diff, QualityFactor};
use saec::complexity::{csv_row, score_paths, ComplexityWeights, CSV_HEADER};
use saec::imgproc::{load_grayscale, save_pgm};
use saec::quantkernel::{dequantize, quantize, Codebook, Matrix, DEFAULT_GROUP_SIZE};
use saec::scheduler::{route, EdgeConfidence};
use saec::simharness::{
    heldout_records, is_image_file, load_dataset, run_experiment, score_dataset, synth,
    ExperimentConfig, HarnessError, Mode, Role,
};

const EXIT_INPUT: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_CONFIG: u8 = 4;

/// A failure with its process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn input(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_INPUT,
            err: err.into(),
        }
    }

    fn config(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_CONFIG,
            err: err.into(),
        }
    }
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        let code = match e {
            CalibrationError::DegenerateLabels => EXIT_DEGENERATE,
            CalibrationError::InvalidPolicy(_) | CalibrationError::PolicyFile { .. } => EXIT_CONFIG,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            err: e.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

static QUIET: AtomicBool = AtomicBool::new(false);

macro_rules! note {
    ($($t:tt)*) => {
        if !QUIET.load(Ordering::Relaxed) {
            eprintln!($($t)*);
        }
    };
}

#[derive(Parser)]
#[command(
    name = "saec",
    version,
    about = "Scene-aware edge/cloud inspection routing"
)]
struct Cli {
    /// Suppress progress notes on standard error.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScoringArgs {
    /// Feature weights `w1,w2,w3,w4,w5`.
    #[arg(long, default_value = "0.30,0.25,0.20,0.15,0.10")]
    weights: ComplexityWeights,
    /// JPEG quality used for the residual feature.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..=100))]
    quality: u32,
}

impl ScoringArgs {
    fn quality(&self) -> QualityFactor {
        QualityFactor::new(self.quality).expect("range checked by clap")
    }
}

#[derive(Subcommand)]
enum Command {
    /// Score images (files or directories, searched recursively) and print CSV.
    Score {
        /// Image files or directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        scoring: ScoringArgs,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a routing policy on a held-out split.
    ///
    /// Logits come from a CSV (`path,edge_l0,edge_l1,cloud_l0,cloud_l1`, paths
    /// relative to the held-out root) or from the stubs of an experiment config.
    Calibrate {
        /// Held-out dataset root with `good/` and `defect/` (or `val/...`).
        #[arg(long)]
        heldout: PathBuf,
        /// Logit CSV for the held-out samples.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        logits: Option<PathBuf>,
        /// Experiment config whose stubs, cost model and seed produce the logits.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Target cloud fraction.
        #[arg(long)]
        rho: f64,
        /// Extra cloud fraction that edge rejections may add beyond rho.
        #[arg(long, default_value_t = 0.2)]
        max_overflow: f64,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        scoring: ScoringArgs,
        /// Policy file to write.
        #[arg(long, default_value = "policy.json")]
        out: PathBuf,
    },
    /// Route samples from a CSV of `path,s_c,edge_l0,edge_l1` under a policy.
    Route {
        /// Policy file written by `calibrate`.
        #[arg(long)]
        policy: PathBuf,
        /// CSV of samples to route.
        records: PathBuf,
    },
    /// Run an experiment config and write report.json, trace.csv and defects.jsonl.
    Simulate {
        /// Experiment config (JSON).
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's mode: hybrid, edge_only or cloud_only.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Overrides the config's policy file.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Quantize a CSV matrix to NF4 and report per-group errors.
    Quant {
        /// Matrix as CSV of floats, one row per line.
        matrix: PathBuf,
        /// Values per quantization group, in row-major order.
        #[arg(long, default_value_t = DEFAULT_GROUP_SIZE)]
        group_size: usize,
        /// Serialized tensor path; defaults to the input with a `.saecq` extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one compression cycle on an image and save the result as PGM.
    Codec {
        /// Image to compress.
        input: PathBuf,
        /// Where to save the decoded image.
        output: PathBuf,
        /// JPEG quality, 1 to 100.
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..=100))]
        quality: u32,
    },
    /// Write a synthetic `val/{good,defect}` dataset of PGM images.
    Synth {
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
        /// Images per class.
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        /// Image side length in pixels.
        #[arg(long, default_value_t = 192)]
        side: usize,
        /// Seed for the image generator.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    QUIET.store(cli.quiet, Ordering::Relaxed);
    let result = match cli.command {
        Command::Score {
            inputs,
            scoring,
            out,
        } => cmd_score(&inputs, &scoring, out.as_deref()),
        Command::Calibrate {
            heldout,
            logits,
            config,
            rho,
            max_overflow,
            seed,
            scoring,
            out,
        } => cmd_calibrate(CalibrateArgs {
            heldout,
            logits,
            config,
            rho,
            max_overflow,
            seed,
            scoring,
            out,
        }),
        Command::Route { policy, records } => cmd_route(&policy, &records),
        Command::Simulate {
            config,
            seed,
            mode,
            policy,
            out,
        } => cmd_simulate(&config, seed, mode, policy.as_deref(), &out),
        Command::Quant {
            matrix,
            group_size,
            out,
        } => cmd_quant(&matrix, group_size, out),
        Command::Codec {
            input,
            output,
            quality,
        } => cmd_codec(&input, &output, quality),
        Command::Synth {
            out,
            per_class,
            side,
            seed,
        } => synth::write_dataset(&out, per_class, side, seed)
            .map(|()| note!("wrote {} images under {}", 2 * per_class, out.display()))
            .map_err(Failure::input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = walkdir::WalkDir::new(input)
                .sort_by_file_name()
                .into_iter()
                .filter_map(Result::ok)
                .map(|e| e.into_path())
                .filter(|p| is_image_file(p))
                .collect();
            files.append(&mut found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(Failure::input(anyhow!("no images found")));
    }
    Ok(files)
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p)
                .with_context(|| format!("creating {}", p.display()))
                .map_err(Failure::input)?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_score(inputs: &[PathBuf], scoring: &ScoringArgs, out: Option<&Path>) -> Outcome {
    let files = collect_images(inputs)?;
    let scores = score_paths(&files, &scoring.weights, scoring.quality());
    let mut w = writer(out)?;
    let io_err = |e: io::Error| Failure::input(e);
    writeln!(w, "{CSV_HEADER}").map_err(io_err)?;
    let mut failed = 0;
    for (path, score) in files.iter().zip(scores) {
        match score {
            Ok(s) => writeln!(w, "{}", csv_row(&path.display().to_string(), &s)).map_err(io_err)?,
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    w.flush().map_err(io_err)?;
    if failed > 0 {
        return Err(Failure::input(anyhow!(
            "{failed} of {} inputs failed",
            files.len()
        )));
    }
    Ok(())
}

struct CalibrateArgs {
    heldout: PathBuf,
    logits: Option<PathBuf>,
    config: Option<PathBuf>,
    rho: f64,
    max_overflow: f64,
    seed: Option<u64>,
    scoring: ScoringArgs,
    out: PathBuf,
}

type LogitRow = ((f64, f64), (f64, f64));

fn read_logits(path: &Path) -> Result<HashMap<String, LogitRow>, Failure> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::input)?;
    let mut map = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(Failure::input)?;
        let num = |k: usize| -> Result<f64, Failure> {
            rec.get(k)
                .ok_or_else(|| anyhow!("line {}: expected 5 columns", i + 2))
                .and_then(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| anyhow!("line {}: {e}", i + 2))
                })
                .map_err(Failure::input)
        };
        let key = rec.get(0).unwrap_or_default().trim().to_string();
        map.insert(key, ((num(1)?, num(2)?), (num(3)?, num(4)?)));
    }
    Ok(map)
}

fn cmd_calibrate(a: CalibrateArgs) -> Outcome {
    let dataset = load_dataset(&a.heldout).map_err(Failure::input)?;
    let (weights, q) = (a.scoring.weights, a.scoring.quality());
    let records: Vec<CalibrationRecord> = if let Some(path) = &a.logits {
        let scored = score_dataset(&dataset, &weights, q).map_err(Failure::input)?;
        let logits = read_logits(path)?;
        // keys may or may not carry the `val/` prefix
        scored
            .iter()
            .map(|s| {
                let short = s.sample.key.strip_prefix("val/").unwrap_or(&s.sample.key);
                let (edge, cloud) = logits
                    .get(&s.sample.key)
                    .or_else(|| logits.get(short))
                    .ok_or_else(|| Failure::input(anyhow!("no logits for {}", s.sample.key)))?;
                Ok(CalibrationRecord {
                    s_c: s.s_c,
                    edge_logits: *edge,
                    cloud_logits: *cloud,
                    label: s.sample.truth,
                })
            })
            .collect::<Result<_, Failure>>()?
    } else {
        let path = a
            .config
            .as_ref()
            .expect("clap requires --logits or --config");
        let cfg = ExperimentConfig::load(path).map_err(Failure::config)?;
        let seed = a.seed.unwrap_or(cfg.seed);
        let scored = score_dataset(&dataset, &cfg.weights, cfg.quality).map_err(Failure::input)?;
        heldout_records(
            &scored,
            &cfg.edge.into_spec(Role::Edge, seed),
            &cfg.cloud.into_spec(Role::Cloud, seed),
            &cfg.cost,
        )
    };
    let policy = calibrate_policy(
        &records,
        a.rho,
        &OperatingTargets {
            max_overflow: a.max_overflow,
        },
    )?;
    policy.save(&a.out)?;
    println!(
        "tau_S = {:.6}  T_edge = {:.6}  T_cloud = {:.6}  -> {}",
        policy.tau_s_complexity,
        policy.temperature_edge,
        policy.temperature_cloud,
        a.out.display()
    );
    Ok(())
}

fn cmd_route(policy: &Path, records: &Path) -> Outcome {
    let policy = RoutingPolicy::load(policy)?;
    let mut rdr = csv::Reader::from_path(records)
        .with_context(|| format!("reading {}", records.display()))
        .map_err(Failure::input)?;
    let mut out = io::stdout().lock();
    let io_err = |e: io::Error| Failure::input(e);
    writeln!(out, "path,site,reason").map_err(io_err)?;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(Failure::input)?;
        let field = |k: usize| -> Result<f64, Failure> {
            rec.get(k)
                .ok_or_else(|| anyhow!("line {}: expected 4 columns", i + 2))
                .and_then(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| anyhow!("line {}: {e}", i + 2))
                })
                .map_err(Failure::input)
        };
        let s_c = field(1)?;
        let conf = EdgeConfidence::from_logits((field(2)?, field(3)?), policy.temperature_edge);
        let (site, reason) = route(s_c, Some(&conf), &policy).map_err(Failure::input)?;
        writeln!(out, "{},{},{}", &rec[0], site.as_str(), reason.as_str()).map_err(io_err)?;
    }
    Ok(())
}

fn cmd_simulate(
    config: &Path,
    seed: Option<u64>,
    mode: Option<Mode>,
    policy: Option<&Path>,
    out: &Path,
) -> Outcome {
    let mut cfg = ExperimentConfig::load(config).map_err(|e| match e {
        HarnessError::Io { .. } => Failure::input(e),
        other => Failure::config(other),
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(p) = policy {
        cfg.policy = p.to_path_buf();
    }
    let exp = cfg.experiment().map_err(Failure::config)?;
    let dataset = load_dataset(&cfg.dataset).map_err(Failure::input)?;
    let started = std::time::Instant::now();
    let outcome = run_experiment(&dataset, &exp).map_err(Failure::input)?;
    outcome.write_to(out).map_err(Failure::input)?;
    let r = &outcome.report;
    println!(
        "mode={} n={} accuracy={:.4} cloud_fraction={:.4} total_time_s={:.3} energy_mwh={:.3} energy_per_correct_mwh={}",
        serde_json::to_value(exp.mode).expect("mode serializes").as_str().unwrap_or("?"),
        r.counts.n,
        r.accuracy,
        r.cloud_fraction,
        r.total_time_s,
        r.total_energy_mwh,
        r.energy_per_correct_mwh.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    note!(
        "wall clock {:.2} s; outputs in {}",
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn read_matrix(path: &Path) -> Result<Matrix, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::input)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(Failure::input)?;
        let row = rec
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| anyhow!("line {}: {v:?}: {e}", i + 1))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(Failure::input)?;
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(Failure::input)
}

fn cmd_quant(matrix: &Path, group_size: usize, out: Option<PathBuf>) -> Outcome {
    let w = read_matrix(matrix)?;
    let qt = quantize(&w, group_size, &Codebook::nf4()).map_err(Failure::input)?;
    let deq = dequantize(&qt);
    let mut stdout = io::stdout().lock();
    let io_err = |e: io::Error| Failure::input(e);
    writeln!(stdout, "group,mu,sigma,max_abs_err,rms_err").map_err(io_err)?;
    let (mut sq_total, mut max_total) = (0.0, 0.0f64);
    let pairs = w
        .as_slice()
        .chunks(group_size)
        .zip(deq.as_slice().chunks(group_size));
    for (i, (g, (orig, back))) in qt.groups().iter().zip(pairs).enumerate() {
        let errs: Vec<f64> = orig.iter().zip(back).map(|(a, b)| (a - b).abs()).collect();
        let max = errs.iter().cloned().fold(0.0, f64::max);
        let sq: f64 = errs.iter().map(|e| e * e).sum();
        sq_total += sq;
        max_total = max_total.max(max);
        let rms = (sq / errs.len() as f64).sqrt();
        writeln!(stdout, "{i},{},{},{max},{rms}", g.mu, g.sigma).map_err(io_err)?;
    }
    let n = w.as_slice().len() as f64;
    writeln!(stdout, "all,,,{max_total},{}", (sq_total / n).sqrt()).map_err(io_err)?;
    let out = out.unwrap_or_else(|| matrix.with_extension("saecq"));
    fs::write(&out, qt.to_bytes())
        .with_context(|| format!("writing {}", out.display()))
        .map_err(Failure::input)?;
    note!("wrote {}", out.display());
    Ok(())
}

fn cmd_codec(input: &Path, output: &Path, quality: u32) -> Outcome {
    let img = load_grayscale(input).map_err(Failure::input)?;
    let q = QualityFactor::new(quality).expect("range checked by clap");
    let cycled = lossy_cycle(&img, q);
    save_pgm(&cycled, output).map_err(Failure::input)?;
    println!(
        "q={quality} mean_abs_diff={:.6} r_j={:.6}",
        mean_abs_diff(&img, &cycled),
        mean_abs_diff(&img, &cycled) / 255.0
    );
    Ok(())
}
