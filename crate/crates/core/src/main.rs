//! Experiment CLI. Subcommands: schedule-dump, sample, truncate-experiment,
//! blend, train, gradcheck. Exit codes: 0 success, 1 validation error,
//! 2 numeric/solver error. Log verbosity comes from the TRUNCDIFF_LOG
//! environment variable; every scientific parameter lives in the config
//! file or explicit flags.

use clap::{Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use truncdiff::batch::SampleBatch;
use truncdiff::blend::{poisson_blend, BlendProblem, Solver};
use truncdiff::coarse::CoarseGenerator;
use truncdiff::config::ExperimentConfig;
use truncdiff::denoiser::AnalyticDenoiser;
use truncdiff::diffusion::{sample_chain, truncated_sample, SamplerKind, SamplerSpec};
use truncdiff::error::{Error, Result};
use truncdiff::experiment::run_and_write;
use truncdiff::net::{grad_check, train_denoiser, AdapterDenoiser, TrainData, TrainOptions};
use truncdiff::rng::child_seed;
use truncdiff::schedule::NoiseSchedule;

#[derive(Parser)]
#[command(name = "truncdiff", version, about = "Truncated diffusion sampling testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a schedule table (t, beta, alpha, alpha_bar, sigma) as CSV.
    ScheduleDump {
        #[arg(long, default_value_t = 1000)]
        t: usize,
        #[arg(long, default_value_t = 1e-4)]
        beta_start: f64,
        #[arg(long, default_value_t = 0.02)]
        beta_end: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate samples with the configured denoiser and write them as CSV.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Chain start step; defaults to the full schedule length.
        #[arg(long)]
        t_start: Option<usize>,
        /// DDIM step count; defaults to t_start for ddpm, 20 for ddim.
        #[arg(long)]
        n_steps: Option<usize>,
        /// Seed the chain from the configured coarse generator (truncation)
        /// instead of pure noise.
        #[arg(long)]
        from_coarse: bool,
    },
    /// Run the (T_trunc x n_steps) sweep from the config and write the CSV.
    TruncateExperiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Poisson-blend a generated image into an original inside a mask.
    Blend {
        /// Directly generated image f* (PGM).
        #[arg(long)]
        generated: PathBuf,
        /// Original image h supplying the guidance gradients (PGM).
        #[arg(long)]
        original: PathBuf,
        /// Region mask (PGM, nonzero = unknown region).
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// cg or dense.
        #[arg(long, default_value = "cg")]
        solver: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Defaults to 10x the unknown count.
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Train the adapter denoiser on the configured target.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        cond_width: usize,
        #[arg(long, default_value_t = 64)]
        hidden_width: usize,
        #[arg(long, default_value_t = 3)]
        hidden_layers: usize,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("TRUNCDIFF_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code for usage errors is 2; this tool reserves
            // 2 for numeric failures, so remap to 1 (validation).
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ScheduleDump {
            t,
            beta_start,
            beta_end,
            output,
        } => {
            let sched = NoiseSchedule::linear(t, beta_start, beta_end)?;
            let file = std::fs::File::create(&output)?;
            let mut w = std::io::BufWriter::new(file);
            writeln!(w, "t,beta,alpha,alpha_bar,sigma")?;
            for step in 1..=sched.len() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    step,
                    sched.beta(step),
                    sched.alpha(step),
                    sched.alpha_bar(step),
                    sched.ddpm_sigma(step)?
                )?;
            }
            log::info!("wrote schedule table to {}", output.display());
            Ok(())
        }
        Command::Sample {
            config,
            output,
            t_start,
            n_steps,
            from_coarse,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let sched = cfg.build_schedule()?;
            let gm = cfg.build_target()?;
            let kind = match cfg.sampler.as_str() {
                "ddpm" => SamplerKind::Ddpm,
                _ => SamplerKind::Ddim,
            };
            let t_start = t_start.unwrap_or(sched.len());
            let n_steps = n_steps.unwrap_or(match kind {
                SamplerKind::Ddpm => t_start,
                SamplerKind::Ddim => 20.min(t_start.max(1)),
            });
            let spec = SamplerSpec {
                kind,
                t_start,
                n_steps,
            };
            let checkpoint = match cfg.denoiser.kind.as_str() {
                "checkpoint" => Some(AdapterDenoiser::load(std::path::Path::new(
                    cfg.denoiser.path.as_ref().expect("validated"),
                ))?),
                _ => None,
            };
            let analytic = AnalyticDenoiser {
                mixture: &gm,
                schedule: &sched,
            };

            let out = if from_coarse {
                let generator = CoarseGenerator {
                    kind: cfg.build_coarse_kind()?,
                    reference: &gm,
                };
                let (coarse, cond) = generator.generate(cfg.n_samples, child_seed(cfg.seed, 12))?;
                let use_cond = checkpoint.as_ref().map(|n| n.cond_width() > 0).unwrap_or(false);
                let cond_ref = if use_cond { Some(&cond) } else { None };
                match &checkpoint {
                    Some(net) => truncated_sample(
                        &coarse,
                        t_start,
                        &spec,
                        net,
                        cond_ref,
                        &sched,
                        child_seed(cfg.seed, 11),
                    )?,
                    None => truncated_sample(
                        &coarse,
                        t_start,
                        &spec,
                        &analytic,
                        cond_ref,
                        &sched,
                        child_seed(cfg.seed, 11),
                    )?,
                }
            } else {
                let start =
                    SampleBatch::standard_normal(cfg.n_samples, gm.dim(), child_seed(cfg.seed, 10));
                match &checkpoint {
                    Some(net) => {
                        sample_chain(net, None, &spec, &start, &sched, child_seed(cfg.seed, 11))?
                    }
                    None => sample_chain(
                        &analytic,
                        None,
                        &spec,
                        &start,
                        &sched,
                        child_seed(cfg.seed, 11),
                    )?,
                }
            };

            let file = std::fs::File::create(&output)?;
            let mut w = std::io::BufWriter::new(file);
            let header: Vec<String> = (0..out.dim()).map(|j| format!("x{j}")).collect();
            writeln!(w, "{}", header.join(","))?;
            for row in out.rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", cells.join(","))?;
            }
            log::info!("wrote {} samples to {}", out.len(), output.display());
            Ok(())
        }
        Command::TruncateExperiment { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = run_and_write(&cfg)?;
            log::info!("wrote {} sweep rows to {}", rows.len(), cfg.output);
            Ok(())
        }
        Command::Blend {
            generated,
            original,
            mask,
            output,
            solver,
            tol,
            max_iter,
        } => {
            let f_star = truncdiff::pgm::read_pgm(&generated)?;
            let h = truncdiff::pgm::read_pgm(&original)?;
            let omega = truncdiff::pgm::read_mask(&mask)?;
            let problem = BlendProblem::new(f_star, h, omega)?;
            let unknowns = problem.omega.iter().filter(|m| **m).count();
            let solver = match solver.as_str() {
                "cg" => Solver::Cg {
                    tol,
                    max_iter: max_iter.unwrap_or(10 * unknowns.max(1)),
                },
                "dense" => Solver::Dense,
                other => {
                    return Err(Error::param("solver", format!("`{other}` is not cg or dense")))
                }
            };
            let out = poisson_blend(&problem, solver)?;
            truncdiff::pgm::write_pgm(&output, &out)?;
            log::info!("wrote blended image to {}", output.display());
            Ok(())
        }
        Command::Train { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let tr = cfg.train.clone().unwrap_or_default();
            let sched = cfg.build_schedule()?;
            let gm = cfg.build_target()?;
            if tr.cond_width != 0 && tr.cond_width != gm.dim() {
                return Err(Error::Config(
                    "train.cond_width: must be 0 (unconditional) or the target dimension \
                     (condition = the sample itself during training, the coarse point at \
                     sampling time)"
                        .into(),
                ));
            }
            let mut net = AdapterDenoiser::new(
                sched,
                cfg.schedule.beta_start,
                cfg.schedule.beta_end,
                gm.dim(),
                tr.cond_width,
                tr.hidden_width,
                tr.hidden_layers,
                child_seed(cfg.seed, 20),
            )?;
            net.zero_output_layer();
            net.set_base_locked(tr.lock_base);
            let opts = TrainOptions {
                steps: tr.steps,
                batch_size: tr.batch_size,
                learning_rate: tr.learning_rate,
                t_trunc: tr.t_trunc,
                seed: child_seed(cfg.seed, 21),
            };
            let cond_width = tr.cond_width;
            let cond_fn = move |x0: &[f64]| -> Vec<f64> { x0[..cond_width].to_vec() };
            let history = train_denoiser(&mut net, &TrainData::Mixture(&gm), &cond_fn, &opts)?;
            net.save(&output)?;
            let first = history.first().copied().unwrap_or(f64::NAN);
            let tail = &history[history.len().saturating_sub(500)..];
            let final_mean: f64 = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
            println!(
                "trained {} steps: first-batch loss {first:.4}, final mean loss {final_mean:.4}",
                history.len()
            );
            log::info!("checkpoint written to {}", output.display());
            Ok(())
        }
        Command::Gradcheck {
            d,
            cond_width,
            hidden_width,
            hidden_layers,
            probes,
            seed,
        } => {
            let sched = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
            let net = AdapterDenoiser::new(
                sched,
                1e-4,
                0.02,
                d,
                cond_width,
                hidden_width,
                hidden_layers,
                child_seed(seed, 0),
            )?;
            let x: Vec<f64> = (0..d).map(|j| 0.37 * (j as f64 + 1.0)).collect();
            let cond: Vec<f64> = (0..cond_width).map(|j| -0.21 * (j as f64 + 1.0)).collect();
            let cond_ref = if cond_width > 0 { Some(cond.as_slice()) } else { None };
            let rel = grad_check(&net, &x, 500, cond_ref, probes, child_seed(seed, 1))?;
            println!("gradcheck: max relative error {rel:e} over {probes} probes");
            if rel >= 1e-4 {
                return Err(Error::Numeric(format!(
                    "gradient check failed: max relative error {rel:e} exceeds 1e-4"
                )));
            }
            Ok(())
        }
    }
}
