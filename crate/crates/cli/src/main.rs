use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use splat_tr::harness::{self, CheckKind, RunConfig};

/// Gaussian splat scene fitting with a Hellinger trust-region optimizer.
#[derive(Parser, Debug)]
#[command(name = "splat-tr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Generate(Overrides),
    /// Optimize the initial scene against the training views.
    Train(Overrides),
    /// Report PSNR/SSIM of a checkpoint on the held-out views.
    Eval(Overrides),
    /// Fit one perturbed Gaussian with ADAM and the trust-region method.
    FitSingle(Overrides),
    /// Run a self-check: grad, adjoint, hutch, hellinger, tr-bounds, beta, radii, or all.
    Check {
        name: String,
        #[command(flatten)]
        rest: Overrides,
    },
}

#[derive(Args, Debug)]
struct Overrides {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` pairs overriding the configuration.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pairs: Vec<String>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut pairs = Vec::with_capacity(self.pairs.len());
        let mut file = self.config.clone();
        let mut it = self.pairs.iter();
        while let Some(a) = it.next() {
            if a == "--config" {
                file = Some(PathBuf::from(it.next().context("`--config` needs a path")?));
            } else {
                pairs.push(a.clone());
            }
        }
        let mut cfg = match &file {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Outcome {
    Ok,
    CheckFailed,
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Generate(o) => {
            let cfg = o.resolve()?;
            harness::generate(&cfg)?;
            println!(
                "wrote {} views of {} splats to {}",
                cfg.num_views,
                cfg.num_gt,
                cfg.data.display()
            );
        }
        Command::Train(o) => {
            let cfg = o.resolve()?;
            let out = harness::train(&cfg)?;
            println!("{}", harness::METRICS_HEADER);
            if let Some(r) = out.rows.last() {
                println!("{}", r.to_csv());
            }
            println!("metrics in {}", out.metrics_path.display());
        }
        Command::Eval(o) => {
            let cfg = o.resolve()?;
            print!("{}", harness::eval(&cfg)?.to_csv());
        }
        Command::FitSingle(o) => {
            let cfg = o.resolve()?;
            let r = harness::fit_single(&cfg)?;
            r.write(&cfg)?;
            for t in [&r.adam, &r.tr] {
                println!(
                    "{:8} final PSNR {:6.2} dB, first >= 40 dB at {:>5}, max step H²/det S {:.3e}",
                    t.kind.name(),
                    t.psnr.last().copied().unwrap_or(f64::NAN),
                    t.first_reaching(40.0).map_or("never".into(), |i| i.to_string()),
                    t.max_motion()
                );
            }
            println!("largest trust-region motion / eps: {:.4}", r.tr.max_bound_ratio());
            println!("wrote {}", cfg.out.display());
        }
        Command::Check { name, rest } => {
            let cfg = rest.resolve()?;
            let kinds = if name == "all" {
                CheckKind::ALL.to_vec()
            } else {
                vec![CheckKind::parse(&name)?]
            };
            let mut ok = true;
            for k in kinds {
                let r = harness::run_check(k, &cfg)?;
                println!("{}", r.summary());
                println!("  {}", r.detail);
                ok &= r.passed;
            }
            if !ok {
                return Ok(Outcome::CheckFailed);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .downcast_ref::<splat_tr::Error>()
                .is_some_and(splat_tr::Error::is_numerical);
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}
