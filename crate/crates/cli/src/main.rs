use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use meanfield::activation::{grid, limit_check, NoiseParam};
use meanfield::dataset;
use meanfield::experiment::{
    compare_runs, emit_outputs, train_run, Checkpoint, DatasetKind, RunConfig,
};
use meanfield::hessian::write_spectrum_csv;
use meanfield::{verify, ActivationKind};

/// Mean-field activation laboratory: train small classifiers and inspect
/// their loss-surface curvature.
#[derive(Parser)]
#[command(name = "meanfield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset as CSV (features..., label).
    GenData(GenDataArgs),
    /// Train one configuration and write its outputs.
    Train(RunArgs),
    /// Train several activations over several seeds and summarize.
    Compare(CompareArgs),
    /// Recompute the Hessian spectrum of a saved checkpoint.
    Spectrum(SpectrumArgs),
    /// Tabulate the ReLU and linear limits of Swish.
    Limits(LimitsArgs),
    /// Run the numerical self-checks.
    Verify,
}

#[derive(Args)]
struct GenDataArgs {
    /// linear, nonlinear or digits
    #[arg(long, default_value = "nonlinear")]
    dataset: DatasetKind,
    /// Number of examples (synthetic sets only)
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    margin: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value = "data/digits.csv")]
    data_path: PathBuf,
    #[arg(long, default_value_t = 0)]
    class_a: u8,
    #[arg(long, default_value_t = 1)]
    class_b: u8,
    /// Output file; stdout when omitted
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value file; keys mirror the run configuration fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit
    #[arg(long)]
    dry_run: bool,
    /// Any configuration key as `--<key> <value>`
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY VALUE"
    )]
    overrides: Vec<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated activations
    #[arg(long, default_value = "swish,relu,sigmoid", value_delimiter = ',')]
    activations: Vec<ActivationKind>,
    /// Seeds as a list (0,3,7) or a half-open range (0..10)
    #[arg(long, default_value = "0..10")]
    seeds: String,
    /// Loss level used for the epochs-to-threshold statistic
    #[arg(long, default_value_t = 0.1)]
    loss_threshold: f64,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SpectrumArgs {
    /// checkpoint.json written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Relative zero tolerance; defaults to the checkpoint's config
    #[arg(long)]
    zero_tol_rel: Option<f64>,
    /// Also write the eigenvalues as CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LimitsArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    beta: Vec<f64>,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    h_min: f64,
    #[arg(long, default_value_t = 10.0)]
    h_max: f64,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
}

/// Bad command-line input; exits with status 1 like other validation failures.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        e.is::<Usage>()
            || e.downcast_ref::<meanfield::Error>()
                .is_some_and(|e| e.is_validation())
    });
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData(args) => gen_data(args)?,
        Command::Train(args) => train(args)?,
        Command::Compare(args) => compare(args)?,
        Command::Spectrum(args) => spectrum(args)?,
        Command::Limits(args) => limits(args)?,
        Command::Verify => return run_verify(),
    }
    Ok(ExitCode::SUCCESS)
}

fn flag_matches(arg: &str, name: &str) -> Option<Option<String>> {
    let body = arg.strip_prefix("--")?;
    let (key, value) = match body.split_once('=') {
        Some((k, v)) => (k, Some(v.to_string())),
        None => (body, None),
    };
    (key.replace('_', "-") == name).then_some(value)
}

/// Removes `--name value` (or `--name=value`) from `args`, last one wins.
///
/// Clap stops recognising a subcommand's own flags once the trailing
/// override list has started, so they are recovered here.
fn take_value(args: &mut Vec<String>, name: &str) -> Result<Option<String>> {
    let mut found = None;
    let mut i = 0;
    while i < args.len() {
        match flag_matches(&args[i], name) {
            Some(Some(v)) => {
                args.remove(i);
                found = Some(v);
            }
            Some(None) => {
                if i + 1 >= args.len() {
                    bail!(usage(format!("--{name} needs a value")));
                }
                found = Some(args.remove(i + 1));
                args.remove(i);
            }
            None => i += 1,
        }
    }
    Ok(found)
}

fn take_switch(args: &mut Vec<String>, name: &str) -> bool {
    let before = args.len();
    args.retain(|a| flag_matches(a, name) != Some(None));
    args.len() != before
}

impl RunArgs {
    fn recover_flags(&mut self) -> Result<()> {
        if let Some(path) = take_value(&mut self.overrides, "config")? {
            self.config = Some(PathBuf::from(path));
        }
        self.dry_run |= take_switch(&mut self.overrides, "dry-run");
        Ok(())
    }
}

impl CompareArgs {
    fn recover_flags(&mut self) -> Result<()> {
        self.run.recover_flags()?;
        if let Some(v) = take_value(&mut self.run.overrides, "activations")? {
            self.activations = v
                .split(',')
                .map(|a| a.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e: meanfield::Error| usage(e.to_string()))?;
        }
        if let Some(v) = take_value(&mut self.run.overrides, "seeds")? {
            self.seeds = v;
        }
        if let Some(v) = take_value(&mut self.run.overrides, "loss-threshold")? {
            self.loss_threshold = v
                .parse()
                .map_err(|_| usage(format!("invalid --loss-threshold {v:?}")))?;
        }
        Ok(())
    }
}

/// Turns `--key value` / `--key=value` pairs into config-file lines.
fn overrides_to_text(args: &[String]) -> Result<String> {
    let mut text = String::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            bail!(usage(format!(
                "unexpected argument {arg:?}; overrides take the form --<key> <value>"
            )));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| usage(format!("--{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        let key = key.replace('-', "_");
        if !RunConfig::KEYS.contains(&key.as_str()) {
            bail!(usage(format!(
                "unknown key {key:?}; valid keys: {}",
                RunConfig::KEYS.join(", ")
            )));
        }
        text.push_str(&format!("{key} = {value}\n"));
    }
    Ok(text)
}

fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let mut text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| meanfield::Error::Io {
                path: path.clone(),
                source: e,
            })
            .with_context(|| "reading config")?,
        None => String::new(),
    };
    text.push('\n');
    text.push_str(&overrides_to_text(&args.overrides)?);
    let config = RunConfig::from_config_str(&text)?;
    config.validate()?;
    Ok(config)
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let ds = match args.dataset {
        DatasetKind::Linear => dataset::gen_linear(
            args.size.unwrap_or(dataset::LINEAR_DEFAULT_SIZE),
            args.seed,
            args.margin,
        )?,
        DatasetKind::Nonlinear => dataset::gen_nonlinear(
            args.size.unwrap_or(dataset::NONLINEAR_DEFAULT_SIZE),
            args.seed,
            args.noise,
        )?,
        DatasetKind::Digits => {
            dataset::load_digits_csv(&args.data_path, args.class_a, args.class_b)?
        }
    };
    match &args.out {
        Some(path) => {
            let file =
                fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut out = BufWriter::new(file);
            ds.write_csv(&mut out)
                .and_then(|_| out.flush())
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {} examples to {}", ds.len(), path.display());
        }
        None => ds.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn train(mut args: RunArgs) -> Result<()> {
    args.recover_flags()?;
    let config = resolve_config(&args)?;
    if args.dry_run {
        print!("{}", config.to_config_string());
        return Ok(());
    }
    eprintln!(
        "training {} on {} {:?} for {} epochs (seed {})",
        config.activation,
        config.dataset.name(),
        config.architecture,
        config.epochs,
        config.seed
    );
    let run = train_run(&config)?;
    let files = emit_outputs(&run, &config.output_dir)?;
    let last = run.final_record();
    println!("seed             {}", config.seed);
    println!("param_dim        {}", run.param_dim);
    println!("final_loss_train {:.6}", last.loss_train);
    println!("final_loss_test  {:.6}", last.loss_test);
    println!("final_acc_train  {:.4}", last.acc_train);
    println!("final_acc_test   {:.4}", last.acc_test);
    println!("final_alpha      {:.4}", last.alpha);
    println!("final_gamma      {:.4}", last.gamma);
    println!("zero_residual    {:.4}", last.zero_residual_frac);
    println!(
        "outputs          {}",
        files
            .trajectory
            .parent()
            .unwrap_or(Path::new("."))
            .display()
    );
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || usage(format!("invalid --seeds {s:?}; use 0,1,2 or 0..10"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        (a..b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn compare(mut args: CompareArgs) -> Result<()> {
    args.recover_flags()?;
    let base = resolve_config(&args.run)?;
    let seeds = parse_seeds(&args.seeds)?;
    if args.run.dry_run {
        print!("{}", base.to_config_string());
        let names: Vec<&str> = args.activations.iter().map(|a| a.name()).collect();
        println!("# activations = {}", names.join(","));
        println!("# seeds = {seeds:?}");
        return Ok(());
    }
    let configs: Vec<RunConfig> = args
        .activations
        .iter()
        .map(|&activation| RunConfig {
            activation,
            ..base.clone()
        })
        .collect();
    let root = base.output_dir.clone();
    let total = configs.len() * seeds.len();
    let mut done = 0;
    let summary = compare_runs(&configs, &seeds, args.loss_threshold, |run| {
        done += 1;
        let dir = root
            .join(run.config.activation.name())
            .join(format!("seed{}", run.config.seed));
        emit_outputs(run, &dir)?;
        eprintln!(
            "[{done}/{total}] {} seed {}: loss {:.5}",
            run.config.activation,
            run.config.seed,
            run.final_record().loss_train
        );
        Ok(())
    })?;
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    let path = root.join("compare.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;

    println!(
        "{:<8} {:>12} {:>10} {:>8} {:>8} {:>10} {:>10}",
        "act", "loss_train", "acc_test", "alpha", "gamma", "zero_res", "eig_std"
    );
    for s in &summary.activations {
        println!(
            "{:<8} {:>12.6} {:>10.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4e}",
            s.activation.name(),
            s.median_final_loss_train,
            s.median_final_acc_test,
            s.median_final_alpha,
            s.median_final_gamma,
            s.median_final_zero_residual_frac,
            s.median_final_eig_std
        );
    }
    println!(
        "(medians over {} seeds; summary in {})",
        seeds.len(),
        path.display()
    );
    Ok(())
}

fn spectrum(args: SpectrumArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let tol = args.zero_tol_rel.unwrap_or(ck.config.zero_tol_rel);
    let report = ck.spectrum(tol)?;
    println!("epoch      {}", report.checkpoint_epoch);
    println!("dimension  {}", report.eigenvalues.len());
    println!(
        "eig_min    {:.6e}",
        report.eigenvalues.first().copied().unwrap_or(f64::NAN)
    );
    println!(
        "eig_max    {:.6e}",
        report.eigenvalues.last().copied().unwrap_or(f64::NAN)
    );
    println!("eig_std    {:.6e}", report.std_dev());
    println!("alpha      {:.6}", report.alpha);
    println!("gamma      {:.6}", report.gamma);
    println!("zero_tol   {:.3e}", report.zero_tol);
    println!("asymmetry  {:.3e}", report.asymmetry);
    if let Some(path) = &args.out {
        let file =
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        write_spectrum_csv(&mut out, std::slice::from_ref(&report))
            .and_then(|_| out.flush())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn limits(args: LimitsArgs) -> Result<()> {
    if !(args.step > 0.0 && args.h_max > args.h_min) {
        bail!(usage("need h_min < h_max and step > 0"));
    }
    let g = grid(args.h_min, args.h_max, args.step);
    let h_abs = args.h_min.abs().max(args.h_max.abs());
    println!(
        "{:>10} {:>14} {:>10} {:>14} {:>14} {:>10} {:>14}",
        "beta", "relu_gap", "at_h", "1/(e beta)", "linear_gap", "at_h", "beta h^2/4"
    );
    for &b in &args.beta {
        let r = limit_check(&g, NoiseParam::new(b)?)?;
        println!(
            "{:>10} {:>14.6e} {:>10.4} {:>14.6e} {:>14.6e} {:>10.4} {:>14.6e}",
            b,
            r.relu_gap,
            r.relu_gap_at,
            r.relu_bound(),
            r.linear_gap,
            r.linear_gap_at,
            b * h_abs * h_abs / 4.0
        );
    }
    Ok(())
}

fn run_verify() -> Result<ExitCode> {
    let outcomes = verify::run_all()?;
    let mut failed = 0;
    for c in &outcomes {
        println!(
            "{} {:<50} worst {:.3e} (tol {:.1e}) {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.tolerance,
            c.detail
        );
        failed += usize::from(!c.passed);
    }
    println!("{} checks, {} failed", outcomes.len(), failed);
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_become_config_lines() {
        let text = overrides_to_text(&strings(&["--learning-rate", "0.1", "--seed=4"])).unwrap();
        assert_eq!(text, "learning_rate = 0.1\nseed = 4\n");
    }

    #[test]
    fn override_errors_are_usage_errors() {
        for bad in [&["--nope", "1"][..], &["--epochs"], &["stray"]] {
            let err = overrides_to_text(&strings(bad)).unwrap_err();
            assert_eq!(exit_code(&err), 1, "{bad:?}");
        }
    }

    #[test]
    fn swallowed_flags_are_recovered() {
        let mut args = strings(&["--epochs", "5", "--seeds", "1,2", "--dry-run", "--seed=3"]);
        assert_eq!(
            take_value(&mut args, "seeds").unwrap().as_deref(),
            Some("1,2")
        );
        assert!(take_switch(&mut args, "dry-run"));
        assert!(!take_switch(&mut args, "dry-run"));
        // `--seed` is a config key, not `--seeds`
        assert_eq!(args, strings(&["--epochs", "5", "--seed=3"]));
    }

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("0..4").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seeds("7, 2,9").unwrap(), vec![7, 2, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a,b").is_err());
    }
}
