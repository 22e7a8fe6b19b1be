use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use distill_core::config::Config;
use distill_core::csv::Csv;
use distill_core::data::{dfrg, export, load_dataset, SyntheticSet};
use distill_core::diagnostics::{self, ScoreMetric};
use distill_core::harness::{self, Manifest};
use distill_core::objectives::{distill, streams};
use distill_core::{Error, Rng};

#[derive(Parser)]
#[command(name = "distill", version, about = "Dataset distillation with flip-concatenated synthetic images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Dm,
    Dc,
}

impl From<MetricArg> for ScoreMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Dm => ScoreMetric::Dm,
            MetricArg::Dc => ScoreMetric::Dc,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Distil the configured dataset into a synthetic set.
    Distill {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain fresh networks on a synthetic set and report test accuracy.
    Eval {
        #[arg(long)]
        syn: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Per-seed accuracies; defaults to `<syn>.eval.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also evaluate the same number of random real images per class.
        #[arg(long)]
        baseline: bool,
    },
    /// Unequalness score of a synthetic set or of real subsets.
    Score {
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        syn: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Supplies the network architecture and defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        theta_samples: Option<usize>,
        #[arg(long, value_enum, default_value = "dm")]
        metric: MetricArg,
        /// Real subset sizes, with --dataset.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
        sizes: Vec<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic set as an image grid, one row per class.
    ExportGrid {
        #[arg(long)]
        syn: PathBuf,
        /// `.pgm` or `.png`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        gap: usize,
    },
    /// Symmetry audit of a real dataset: score against subset size, class
    /// attention histograms and pixel symmetry.
    Audit {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "audit")]
        out_dir: PathBuf,
        /// Training images per class for the attention classifier.
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
        sizes: Vec<usize>,
        #[arg(long)]
        theta_samples: Option<usize>,
    },
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn load_config(path: Option<&Path>) -> Result<Config, Error> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn write_csv(csv: &Csv, path: &Path, manifest: &mut Manifest) -> Result<(), Error> {
    csv.save(path)?;
    manifest.record(path)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Distill { config, out } => {
            let cfg = Config::load(&config)?;
            let ds = harness::load_configured(&cfg)?;
            let outcome = distill(&cfg, &ds.train)?;
            let mut manifest = Manifest::new("distill", &cfg);
            dfrg::save(&outcome.syn, &out)?;
            manifest.record(&out)?;
            write_csv(&harness::loss_csv(&outcome.log), &sibling(&out, ".loss.csv"), &mut manifest)?;
            if !outcome.trace.is_empty() {
                write_csv(&diagnostics::score_trace_csv(&outcome.trace), &sibling(&out, ".trace.csv"), &mut manifest)?;
            }
            manifest.save(&sibling(&out, ".manifest.json"))?;
            println!(
                "distilled {} classes x {} ipc in {} iterations, final loss {}",
                outcome.syn.classes,
                outcome.syn.ipc,
                outcome.log.len(),
                outcome.final_loss(cfg.distill.loss_window)
            );
        }
        Command::Eval {
            syn,
            config,
            seeds,
            csv,
            baseline,
        } => {
            let cfg = Config::load(&config)?;
            let set = dfrg::load(&syn)?;
            let ds = harness::load_configured(&cfg)?;
            let seed_list = harness::eval_seeds(&cfg, seeds);
            let summary = harness::evaluate_synthetic(&cfg, &set, &ds.test, &seed_list)?;
            let mut manifest = Manifest::new("eval", &cfg);
            manifest.eval_seeds = seed_list.clone();
            let csv_path = csv.unwrap_or_else(|| sibling(&syn, ".eval.csv"));
            write_csv(&summary.to_csv(), &csv_path, &mut manifest)?;
            println!("synthetic: {:.2} ± {:.2} %", 100.0 * summary.mean(), 100.0 * summary.std());
            if baseline {
                let base = harness::baseline_random_real(&cfg, &ds.train, set.ipc, &ds.test, &seed_list)?;
                write_csv(&base.to_csv(), &sibling(&csv_path, ".baseline.csv"), &mut manifest)?;
                println!("random real: {:.2} ± {:.2} %", 100.0 * base.mean(), 100.0 * base.std());
            }
            manifest.save(&sibling(&csv_path, ".manifest.json"))?;
        }
        Command::Score {
            syn,
            dataset,
            data_dir,
            config,
            theta_samples,
            metric,
            sizes,
            csv,
        } => {
            let cfg = load_config(config.as_deref())?;
            let thetas = theta_samples.unwrap_or(cfg.score.theta_samples);
            let rng = Rng::new(cfg.seed).fork(streams::SCORE);
            let mut manifest = Manifest::new("score", &cfg);
            let (table, csv_path) = if let Some(path) = syn {
                let set = dfrg::load(&path)?;
                let arch = cfg.architecture(set.channels, set.height, set.width, set.classes)?;
                let score = diagnostics::synthetic_score(&arch, &set, metric.into(), thetas, &rng)?;
                println!("score: {score}");
                let mut t = Csv::new(&["theta_samples", "score"]);
                t.row(&[&thetas, &score]);
                (t, csv.unwrap_or_else(|| sibling(&path, ".score.csv")))
            } else {
                let name = dataset.expect("clap requires --syn or --dataset");
                let dir = data_dir.unwrap_or_else(|| cfg.data.dir.clone());
                let ds = load_dataset(&name, &dir)?;
                let b = &ds.train.images;
                let arch = cfg.architecture(b.channels, b.height, b.width, b.classes)?;
                let series = diagnostics::score_series(&arch, b, &sizes, metric.into(), thetas, &rng)?;
                let mut t = Csv::new(&["n", "score"]);
                for (n, s) in sizes.iter().zip(&series) {
                    println!("n={n} score={s}");
                    t.row(&[n, s]);
                }
                (t, csv.unwrap_or_else(|| PathBuf::from(format!("{name}.score.csv"))))
            };
            write_csv(&table, &csv_path, &mut manifest)?;
            manifest.save(&sibling(&csv_path, ".manifest.json"))?;
        }
        Command::ExportGrid { syn, out, gap } => {
            let set: SyntheticSet = dfrg::load(&syn)?;
            export::synthetic_grid(&set, gap).save(&out)?;
            println!("wrote {} tiles to {}", set.classes * set.ipc, out.display());
        }
        Command::Audit {
            dataset,
            data_dir,
            config,
            out_dir,
            per_class,
            epochs,
            sizes,
            theta_samples,
        } => audit(&dataset, data_dir, config.as_deref(), &out_dir, per_class, epochs, &sizes, theta_samples)?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn audit(
    name: &str,
    data_dir: Option<PathBuf>,
    config: Option<&Path>,
    out_dir: &Path,
    per_class: usize,
    epochs: usize,
    sizes: &[usize],
    theta_samples: Option<usize>,
) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let dir = data_dir.unwrap_or_else(|| cfg.data.dir.clone());
    let ds = load_dataset(name, &dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let mut manifest = Manifest::new("audit", &cfg);
    let master = Rng::new(cfg.seed);
    let b = &ds.train.images;
    let arch = cfg.architecture(b.channels, b.height, b.width, b.classes)?;
    let thetas = theta_samples.unwrap_or(cfg.score.theta_samples);

    let mut series = Csv::new(&["n", "metric", "score"]);
    for metric in [ScoreMetric::Dm, ScoreMetric::Dc] {
        let label = if metric == ScoreMetric::Dm { "dm" } else { "dc" };
        let scores = diagnostics::score_series(&arch, b, sizes, metric, thetas, &master.fork(streams::SCORE))?;
        for (n, s) in sizes.iter().zip(&scores) {
            series.row(&[n, &label, s]);
        }
    }
    write_csv(&series, &out_dir.join("score_series.csv"), &mut manifest)?;

    // Attention needs a trained head; flips are left out of its training so
    // they cannot symmetrize the maps.
    let subset = ds.train.take_per_class(per_class).images;
    let rc = distill_core::config::RetrainConfig {
        epochs,
        ..cfg.retrain.clone()
    };
    let params = harness::train_network(arch, &subset, &rc, epochs / 2, &[], &master.fork(streams::EVAL))?;
    let mut attention = Csv::new(&["class", "row", "col", "count"]);
    let mut summary = Csv::new(&[
        "class",
        "images",
        "left_fraction",
        "asymmetry",
        "pixel_symmetry",
        "flip_feature_distance",
    ]);
    for (c, pool) in ds.train.by_class.iter().enumerate() {
        let idx: Vec<usize> = pool.iter().take(per_class).copied().collect();
        let class_set = ds.train.images.subset(&idx);
        let hist = diagnostics::attention_symmetry(&params, &class_set)?;
        for (k, count) in hist.counts.iter().enumerate() {
            attention.row(&[&c, &(k / hist.width), &(k % hist.width), count]);
        }
        let heat: Vec<f64> = hist.counts.iter().map(|&v| v as f64).collect();
        let pgm = out_dir.join(format!("attention_class{c}.pgm"));
        export::heat_map(&heat, hist.height, hist.width).save(&pgm)?;
        manifest.record(&pgm)?;
        summary.row(&[
            &c,
            &hist.images,
            &hist.left_fraction(),
            &hist.asymmetry(),
            &diagnostics::pixel_symmetry(&class_set),
            &diagnostics::flip_feature_distance(&params, &class_set)?,
        ]);
    }
    write_csv(&attention, &out_dir.join("attention.csv"), &mut manifest)?;
    write_csv(&summary, &out_dir.join("symmetry.csv"), &mut manifest)?;
    manifest.save(&out_dir.join("manifest.json"))?;
    println!("audit of {name} written to {}", out_dir.display());
    Ok(())
}

fn error_kind(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => ("config", 2),
        Error::Format(_) => ("format", 3),
        Error::Io { .. } => ("io", 4),
        Error::NonFinite { .. } => ("non_finite", 5),
        Error::Shape { .. } | Error::NonScalarRoot(_) => ("internal", 1),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = error_kind(&e);
            eprintln!("error kind={kind} message={:?}", e.to_string());
            ExitCode::from(code)
        }
    }
}
