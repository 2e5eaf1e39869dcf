//! The `ret` command-line tool.

pub mod config;
pub mod experiments;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use experiments::{make_xor, xor_experiment, XorReport, XorSettings};

use crate::dataset::{load_csv, load_features_csv, split_train_test, Dataset};
use crate::error::{Error, Result};
use crate::eval::{curve_csv, evaluate, histogram_csv};
use crate::fsa::{fsa_multi_sparsity, fsa_on_leaves, FsaParams};
use crate::pool::{compile_design, generate_pool, TreePool};
use crate::tree::doc::{load_model, load_pool, model_to_string, save_pool};
use crate::tree::CompactEnsemble;
use crate::tune::{cv_select, leaderboard_csv};

#[derive(Debug, Parser)]
#[command(name = "ret", version, about = "Compact tree ensembles selected from boosted tree pools")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct DataArgs {
    /// Training CSV, overriding `data.train`.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Label column name or index, overriding `data.label`.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow a tree pool and save it.
    Pool(DataArgs),
    /// Select trees from a saved pool and refit their leaf weights.
    Select {
        #[arg(long)]
        pool: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Pool generation followed by selection.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        /// Also save the intermediate pool here.
        #[arg(long)]
        pool_out: Option<PathBuf>,
    },
    /// Score a CSV with a saved model; writes a single `score` column.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
    /// Metrics of a saved model on a labeled CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
    /// Cross-validated grid search and refit.
    Tune(DataArgs),
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Repeated XOR comparison of a one-tree compact ensemble with boosting.
    Xor {
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Train/test loss against tree count for both pipelines.
    Curves {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Depth distribution of the selected trees of a multi-depth pool.
    DepthHist(DataArgs),
}

/// Parses arguments, runs, and maps errors to exit codes 2 (config),
/// 3 (data) and 4 (numerical).
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error class={} code={}: {msg}", class.as_str(), class.exit_code());
            if let Some(src) = std::error::Error::source(&e) {
                eprintln!("  caused by: {src}");
            }
            ExitCode::from(class.exit_code() as u8)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::param("threads", "must be >= 1"));
        }
        // A global pool may already exist when embedded; that is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.clone();
    match cli.command {
        Command::Pool(data) => {
            apply_data_args(&mut cfg, &data);
            cfg.validate()?;
            let train = load_train(&cfg)?;
            let pool = build_pool(&cfg, &train, "pool")?;
            save_pool(&pool, out_or(&out, "pool.ret.json"))
        }
        Command::Select { pool, data, k } => {
            apply_data_args(&mut cfg, &data);
            if let Some(k) = k {
                cfg.fsa.k = k;
            }
            let pool = load_pool(&pool)?;
            // Validate against the loaded pool before touching the data.
            cfg.fsa_params().validate(pool.len())?;
            let train = load_train(&cfg)?;
            pool.check_dimension(train.n_features())?;
            select_and_save(&cfg, &pool, &train, "select", &out)
        }
        Command::Train { data, k, pool_out } => {
            apply_data_args(&mut cfg, &data);
            if let Some(k) = k {
                cfg.fsa.k = k;
            }
            cfg.validate()?;
            let train = load_train(&cfg)?;
            let pool = build_pool(&cfg, &train, "train")?;
            if let Some(p) = pool_out {
                save_pool(&pool, p)?;
            }
            select_and_save(&cfg, &pool, &train, "train", &out)
        }
        Command::Predict { model, data, label } => {
            let model = load_model(&model)?;
            let label = label.unwrap_or_else(|| cfg.data.label.clone());
            let (x, names) = load_features_csv(&data, Some(&label))?;
            let scores = model.predict_rows(&x, names.len())?;
            let mut text = String::from("score\n");
            for s in scores {
                text.push_str(&format!("{s}\n"));
            }
            emit(&out, &text)
        }
        Command::Evaluate { model, data, label } => {
            let model = load_model(&model)?;
            if let Some(l) = label {
                cfg.data.label = l;
            }
            let (ds, _) = load_csv(&data, &cfg.data.label_column(), cfg.data.task, cfg.data.missing)?;
            let report = evaluate(&model, &ds)?;
            emit(&out, &format!("{}\n", serde_json::to_string_pretty(&report).expect("serializable")))
        }
        Command::Tune(data) => {
            apply_data_args(&mut cfg, &data);
            cfg.validate()?;
            let grid = cfg.grid();
            grid.validate(cfg.tune.pipeline)?;
            let train = load_train(&cfg)?;
            let mut res = cv_select(&train, &grid, cfg.tune.pipeline, cfg.tune.folds, cfg.seed)?;
            res.model.meta.config = Some(artifact_config(&cfg, "tune"));
            res.model.meta.seed = Some(cfg.seed);
            let dir = out_or(&out, "tune_out");
            create_dir(&dir)?;
            write_file(&dir.join("model.ret.json"), &model_to_string(&res.model))?;
            write_file(&dir.join("leaderboard.csv"), &leaderboard_csv(&res.leaderboard))?;
            let best = serde_json::json!({
                "best": res.best,
                "cv_loss": res.best_loss,
                "config": artifact_config(&cfg, "tune"),
            });
            write_file(&dir.join("best.json"), &format!("{}\n", serde_json::to_string_pretty(&best).unwrap()))
        }
        Command::Experiment(exp) => run_experiment(cfg, exp, &out),
    }
}

fn run_experiment(mut cfg: RunConfig, exp: Experiment, out: &Option<PathBuf>) -> Result<()> {
    match exp {
        Experiment::Xor { runs } => {
            let (pool_trees, depth) = match cfg.pool {
                crate::pool::PoolStrategy::Scsd { trees, depth } => (trees, depth),
                _ => return Err(Error::Config("the XOR experiment uses a single-chain (scsd) pool".into())),
            };
            let s = XorSettings {
                runs: runs.unwrap_or(cfg.experiment.runs),
                rows: cfg.experiment.xor_rows,
                pool_trees,
                depth,
                k: cfg.experiment.xor_k,
                fsa: FsaParams { k: cfg.experiment.xor_k, ..cfg.fsa_params() },
                boost: cfg.boost_config(),
                gb_learning_rates: cfg.experiment.gb_learning_rates.clone(),
                gb_max_rounds: cfg.experiment.gb_max_rounds,
                seed: cfg.seed,
            };
            let start = std::time::Instant::now();
            let report = xor_experiment(&s)?;
            eprintln!(
                "xor: runs={} ret(k={}) train_auc={:.4} test_auc={:.4} gb_rounds_to_match={} (learning rate {}) in {:.1}s",
                report.runs,
                report.ret_k,
                report.ret_train_auc,
                report.ret_test_auc,
                report.gb_rounds_to_match.map_or("none".to_string(), |r| r.to_string()),
                report.gb_learning_rate.map_or("-".to_string(), |r| r.to_string()),
                start.elapsed().as_secs_f64()
            );
            let mut v = serde_json::to_value(&report).expect("serializable");
            v["config"] = artifact_config(&cfg, "experiment xor");
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&v).unwrap()))
        }
        Experiment::Curves { data, test } => {
            apply_data_args(&mut cfg, &data);
            if test.is_some() {
                cfg.data.test = test;
            }
            cfg.validate()?;
            let (train, test) = load_train_test(&cfg)?;
            let levels = curve_levels(&cfg)?;
            let report = experiments::loss_curves(
                &train,
                &test,
                &cfg.pool,
                &cfg.boost_config(),
                &cfg.fsa_params(),
                &levels,
                cfg.seed,
            )?;
            let dir = out_or(out, "curves_out");
            create_dir(&dir)?;
            write_file(&dir.join("ret_curve.csv"), &curve_csv(&report.ret))?;
            write_file(&dir.join("gb_curve.csv"), &curve_csv(&report.gb))?;
            let mut v = serde_json::to_value(&report).expect("serializable");
            v["config"] = artifact_config(&cfg, "experiment curves");
            write_file(&dir.join("curves.json"), &format!("{}\n", serde_json::to_string_pretty(&v).unwrap()))
        }
        Experiment::DepthHist(data) => {
            apply_data_args(&mut cfg, &data);
            cfg.validate()?;
            let train = match &cfg.data.train {
                Some(_) => load_train(&cfg)?,
                None => make_xor(cfg.experiment.xor_rows, cfg.seed)?,
            };
            let levels = match &cfg.fsa.levels {
                Some(l) => l.levels()?,
                None => vec![cfg.fsa.k],
            };
            let hists = experiments::depth_histograms(
                &train,
                &cfg.pool,
                &cfg.boost_config(),
                &cfg.fsa_params(),
                &levels,
                cfg.seed,
            )?;
            let dir = out_or(out, "depth_hist_out");
            create_dir(&dir)?;
            for (k, h) in &hists {
                write_file(&dir.join(format!("depth_hist_k{k}.csv")), &histogram_csv(h))?;
            }
            let v = serde_json::json!({
                "histograms": hists,
                "config": artifact_config(&cfg, "experiment depth-hist"),
            });
            write_file(&dir.join("depth_hist.json"), &format!("{}\n", serde_json::to_string_pretty(&v).unwrap()))
        }
    }
}

fn curve_levels(cfg: &RunConfig) -> Result<Vec<usize>> {
    match &cfg.fsa.levels {
        Some(l) => l.levels(),
        None => crate::tune::exponential_grid(cfg.pool.total_trees().min(100), cfg.experiment.curve_levels),
    }
}

fn apply_data_args(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(t) = &data.train {
        cfg.data.train = Some(t.clone());
    }
    if let Some(l) = &data.label {
        cfg.data.label = l.clone();
    }
}

fn load_train(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("no training data: set data.train or pass --train".into()))?;
    let (ds, report) = load_csv(path, &cfg.data.label_column(), cfg.data.task, cfg.data.missing)?;
    if report.rows_dropped > 0 {
        eprintln!(
            "note: dropped {} of {} rows with missing values from {}",
            report.rows_dropped,
            report.rows_read,
            path.display()
        );
    }
    Ok(ds)
}

/// Train and test sets: an explicit test file, else a seeded split of the
/// training file, else (without any data) two XOR samples.
fn load_train_test(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    if cfg.data.train.is_none() {
        let n = cfg.experiment.xor_rows;
        return Ok((
            make_xor(n, crate::rng::derive_seed(cfg.seed, 0))?,
            make_xor(n, crate::rng::derive_seed(cfg.seed, 1))?,
        ));
    }
    let train = load_train(cfg)?;
    match &cfg.data.test {
        Some(p) => {
            let (test, _) = load_csv(p, &cfg.data.label_column(), cfg.data.task, cfg.data.missing)?;
            if test.n_features() != train.n_features() {
                return Err(Error::DimensionMismatch("train and test files have different columns".into()));
            }
            Ok((train, test))
        }
        None => split_train_test(&train, cfg.data.test_fraction, cfg.data.split_seed.unwrap_or(cfg.seed)),
    }
}

fn artifact_config(cfg: &RunConfig, command: &str) -> serde_json::Value {
    serde_json::json!({ "command": command, "run": cfg.to_json() })
}

fn build_pool(cfg: &RunConfig, train: &Dataset, command: &str) -> Result<TreePool> {
    let mut pool = generate_pool(train, &cfg.pool, &cfg.boost_config(), cfg.seed)?;
    pool.config = Some(artifact_config(cfg, command));
    Ok(pool)
}

fn select_and_save(cfg: &RunConfig, pool: &TreePool, train: &Dataset, command: &str, out: &Option<PathBuf>) -> Result<()> {
    let loss = cfg.loss_kind();
    let design = compile_design(pool, train)?;
    let params: FsaParams = cfg.fsa_params();
    let tag = |mut m: CompactEnsemble| {
        m.meta.config = Some(artifact_config(cfg, command));
        m.meta.seed = Some(cfg.seed);
        m
    };
    match &cfg.fsa.levels {
        None => {
            let sel = fsa_on_leaves(pool, &design, train, loss, &params)?;
            write_file(&out_or(out, "model.ret.json"), &model_to_string(&tag(sel.ensemble)))
        }
        Some(levels) => {
            let mut desc = levels.levels()?;
            desc.reverse();
            let multi = fsa_multi_sparsity(pool, &design, train, loss, &params, &desc)?;
            let dir = out_or(out, "models_out");
            create_dir(&dir)?;
            for m in multi.models {
                write_file(&dir.join(format!("model_k{}.ret.json", m.k)), &model_to_string(&tag(m.ensemble)))?;
            }
            Ok(())
        }
    }
}

fn out_or(out: &Option<PathBuf>, default: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes to `out` or, without one, to stdout.
fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}
