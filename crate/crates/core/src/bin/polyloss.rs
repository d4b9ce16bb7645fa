//! `polyloss` command-line front end.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage/config/I-O error,
//! 3 numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polyloss::config::{ModelFile, RunConfig};
use polyloss::data::{generate_synthetic, load_any, save_features, Split, SyntheticSpec};
use polyloss::gradcheck::{self, GradCheckOptions};
use polyloss::sweep::{best_cell, run_sweep, write_csv};
use polyloss::train::{evaluate_split, train_with};
use polyloss::{Error, LossKind};

#[derive(Parser)]
#[command(name = "polyloss", version, about = "Polynomial pair-weighting losses for cross-modal matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired feature set (XMF1).
    GenData(GenDataArgs),
    /// Train a dual encoder and write the model plus a JSON-lines log.
    Train(TrainArgs),
    /// Report Recall@K of a trained model on one split.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    GradCheck(GradCheckArgs),
    /// Grid-search b1 x b2 with b0 fixed.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 32)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    latent_dim: usize,
    #[arg(long, default_value_t = 64)]
    d1: usize,
    #[arg(long, default_value_t = 48)]
    d2: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("`{t}` is not a valid number")))
        .collect()
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    match parse_list::<f64>(s)?.as_slice() {
        &[lo, hi] => Ok((lo, hi)),
        _ => Err("expected two comma-separated values".into()),
    }
}

fn parse_kind(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Flags shared by `train` and `sweep`; each overrides the config file.
#[derive(Args, Default)]
struct RunArgs {
    /// JSON file with RunConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    loss: Option<LossKind>,
    /// Positive coefficients a_0..a_P, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    a: Option<Vec<f64>>,
    /// Negative coefficients b_0..b_Q, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    b: Option<Vec<f64>>,
    /// Triplet margin.
    #[arg(long)]
    margin: Option<f64>,
    /// Informative-pair mining margin.
    #[arg(long)]
    mining_margin: Option<f64>,
    /// Use every negative instead of the mined ones.
    #[arg(long)]
    no_mining: bool,
    /// Interval checked by the coefficient validator, e.g. `0.25,1`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    sim_domain: Option<(f64, f64)>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    lr_decay_epoch: Option<usize>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Feature file (XMF1, or CSV by extension). Defaults to the synthetic spec.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { cfg.$target = v; })*
            };
        }
        set!(
            loss => loss, a => a, b => b, margin => triplet_margin,
            mining_margin => mining_margin, sim_domain => sim_domain,
            embed_dim => embed_dim, lr => lr, beta1 => beta1, beta2 => beta2, eps => eps,
            lr_decay_factor => lr_decay_factor, epochs => epochs,
            batch_size => batch_size, seed => seed, out => out_dir,
        );
        if self.hidden_dim.is_some() {
            cfg.hidden_dim = self.hidden_dim;
        }
        if self.lr_decay_epoch.is_some() {
            cfg.lr_decay_epoch = self.lr_decay_epoch;
        }
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        if self.no_mining {
            cfg.mining = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    ks: Vec<usize>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, value_parser = parse_kind, default_value = "max_poly")]
    loss: LossKind,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    a: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    b: Option<Vec<f64>>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    mining_margin: Option<f64>,
    #[arg(long)]
    no_mining: bool,
    /// Corrupt the analytic gradients; the check must then fail.
    #[arg(long, hide = true)]
    inject_bug: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.2,-0.3,-0.4")]
    b1_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1.5,1.7,1.8,1.9")]
    b2_grid: Vec<f64>,
    /// CSV destination; defaults to `<out>/sweep.csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report types serialize")
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<u8, Error> {
    let spec = SyntheticSpec {
        num_classes: args.classes,
        pairs_per_class: args.per_class,
        latent_dim: args.latent_dim,
        d1: args.d1,
        d2: args.d2,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let set = generate_synthetic(&spec)?;
    save_features(&set, &args.out)?;
    let (tr, va, te) = set.split_counts();
    println!(
        "wrote {}: N={} d1={} d2={} train/val/test={}/{}/{}",
        args.out.display(),
        set.len(),
        set.visual_dim(),
        set.text_dim(),
        tr,
        va,
        te
    );
    Ok(0)
}

fn cmd_train(args: &TrainArgs) -> Result<u8, Error> {
    let cfg = args.run.resolve()?;
    let data = cfg.dataset()?;
    create_dir(&cfg.out_dir)?;
    let spec = cfg.loss_spec();
    let train_cfg = cfg.train_config();

    let mut log = String::new();
    let outcome = train_with(&data, &spec, &train_cfg, |rec| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  R@1 i2t {:.1}  t2i {:.1}",
            rec.epoch, rec.mean_loss, rec.r1_i2t, rec.r1_t2i
        );
        log.push_str(&to_json(rec));
        log.push('\n');
    })?;

    write_file(&cfg.out_dir.join("train_log.jsonl"), log.as_bytes())?;
    let resolved = serde_json::to_string_pretty(&cfg).expect("config serializes");
    write_file(&cfg.out_dir.join("config.json"), resolved.as_bytes())?;
    ModelFile {
        loss: spec,
        train: train_cfg,
        params: outcome.params.clone(),
    }
    .save(cfg.out_dir.join("model.json"))?;

    let report = evaluate_split(&outcome.params, &data, Split::Val, &polyloss::eval::DEFAULT_KS)?;
    println!("{}", to_json(&report));
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<u8, Error> {
    let split: Split = args.split.parse()?;
    let model = ModelFile::load(&args.model)?;
    let data = load_any(&args.data)?;
    let n = data.indices(split).len();
    if let Some(&k) = args.ks.iter().find(|&&k| k < 1 || k > n) {
        return Err(Error::InvalidCutoff { k, n });
    }
    let report = evaluate_split(&model.params, &data, split, &args.ks)?;
    println!("{}", to_json(&report));
    Ok(0)
}

fn cmd_grad_check(args: &GradCheckArgs) -> Result<u8, Error> {
    let mut opts = GradCheckOptions::for_kind(args.loss, args.trials, args.seed);
    let spec = &mut opts.spec;
    if let Some(a) = &args.a {
        spec.coefficients.pos = a.clone();
    }
    if let Some(b) = &args.b {
        spec.coefficients.neg = b.clone();
    }
    if let Some(m) = args.margin {
        spec.triplet_margin = m;
    }
    if let Some(m) = args.mining_margin {
        spec.coefficients.mining_margin = m;
    }
    if args.no_mining {
        spec.mining_enabled = false;
    }
    spec.validate()?;
    opts.inject_bug = args.inject_bug;

    let report = gradcheck::run(&opts)?;
    for c in &report.components {
        println!(
            "{:<14} trials {:>4}  max rel err {:.3e}  tol {:.0e}  {}",
            c.component,
            c.trials,
            c.max_rel_err,
            c.tolerance,
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    println!("{}", to_json(&report));
    Ok(if report.passed() { 0 } else { 1 })
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8, Error> {
    let cfg = args.run.resolve()?;
    let data = cfg.dataset()?;
    create_dir(&cfg.out_dir)?;
    let rows = run_sweep(
        &data,
        &cfg.loss_spec(),
        &cfg.train_config(),
        &args.b1_grid,
        &args.b2_grid,
    )?;
    let path = args
        .csv
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("sweep.csv"));
    let file = fs::File::create(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    write_csv(&rows, std::io::BufWriter::new(file))?;
    let mut stdout = std::io::stdout().lock();
    match best_cell(&rows) {
        Some(best) => writeln!(
            stdout,
            "best cell: b1={} b2={} R@1 i2t {:.2} t2i {:.2} ({} rows in {})",
            best.b1,
            best.b2,
            best.r1_i2t.unwrap_or(f64::NAN),
            best.r1_t2i.unwrap_or(f64::NAN),
            rows.len(),
            path.display()
        ),
        None => writeln!(stdout, "no valid cells ({} rows in {})", rows.len(), path.display()),
    }
    .ok();
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
