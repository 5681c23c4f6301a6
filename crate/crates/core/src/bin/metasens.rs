use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;

use metasens::benchmarks::BenchmarkCase;
use metasens::distributions::SamplingMethod;
use metasens::gp::{FitOptions, GpModel};
use metasens::harness::{self, ExperimentConfig, GpOptions};
use metasens::pce::PceModel;
use metasens::rng;
use metasens::sobol::{
    gp_sobol_first_order, pick_freeze_first_order, EstimatorTag, SobolReport, SobolRequest,
};
use metasens::{Error, Result};

/// Surrogate modelling and variance-based sensitivity analysis toolkit.
#[derive(Parser)]
#[command(name = "metasens", version, about)]
struct Cli {
    /// Worker threads (0 = all available cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonFit {
    /// Benchmark name: ishigami | g-sobol | morris | truss.
    #[arg(long)]
    benchmark: String,
    /// Design size.
    #[arg(long)]
    n: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the fitted model (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a polynomial-chaos surrogate on a fresh LHS design.
    FitPce {
        #[command(flatten)]
        common: CommonFit,
        #[arg(long, default_value_t = 1)]
        p_min: usize,
        #[arg(long, default_value_t = 10)]
        p_max: usize,
    },
    /// Fit a Gaussian-process surrogate on a fresh LHS design.
    FitGp {
        #[command(flatten)]
        common: CommonFit,
        /// squared-exponential | matern12 | matern32 | matern52.
        #[arg(long, default_value = "matern52")]
        kernel: String,
        /// isotropic | tensorized.
        #[arg(long, default_value = "tensorized")]
        mode: String,
        /// constant | linear.
        #[arg(long, default_value = "constant")]
        trend: String,
        /// reml | loo.
        #[arg(long, default_value = "reml")]
        estimator: String,
        #[arg(long, default_value_t = 10)]
        n_starts: usize,
    },
    /// First-order Sobol' indices from a saved model or the true benchmark.
    Sobol {
        /// Saved PCE model (JSON) — exact spectral indices.
        #[arg(long, conflicts_with_all = ["gp_model", "benchmark"])]
        pce_model: Option<PathBuf>,
        /// Saved GP model (JSON) — realization-based pick-freeze estimates.
        #[arg(long, conflicts_with = "benchmark", requires = "benchmark_for_gp")]
        gp_model: Option<PathBuf>,
        /// Input law for a GP model (the model file stores no input law).
        #[arg(long)]
        benchmark_for_gp: Option<String>,
        /// Benchmark name — pick-freeze on the true evaluator.
        #[arg(long)]
        benchmark: Option<String>,
        /// Pick-freeze sample size (GP and true-model estimators).
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Posterior realizations (GP estimator).
        #[arg(long, default_value_t = 100)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe a benchmark: dimension, reference indices, truss geometry.
    Benchmark {
        /// ishigami | g-sobol | morris | truss.
        #[arg(long)]
        name: String,
        /// Recompute references by pick-freeze with this sample size.
        #[arg(long)]
        recompute: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path for the (recomputed) reference indices.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a replicated experiment from a TOML config file.
    Experiment {
        /// Config file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn sample_benchmark(
    name: &str,
    n: usize,
    seed: u64,
) -> Result<(BenchmarkCase, metasens::distributions::DesignMatrix, Array1<f64>)> {
    let case = BenchmarkCase::by_name(name)?;
    let design = case.input.sample(n, SamplingMethod::Lhs, seed)?;
    let responses: Array1<f64> = design
        .points
        .rows()
        .into_iter()
        .map(|row| case.eval(row.as_slice().unwrap()))
        .collect::<Result<Vec<f64>>>()?
        .into();
    Ok((case, design, responses))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FitPce { common, p_min, p_max } => {
            let (_, design, responses) = sample_benchmark(&common.benchmark, common.n, common.seed)?;
            let case = BenchmarkCase::by_name(&common.benchmark)?;
            let model = PceModel::adaptive_fit(&case.input, &design, &responses, p_min, p_max)?;
            std::fs::write(&common.out, model.to_json()?)?;
            println!(
                "fit-pce benchmark={} n={} p={} loo={:.6e} -> {}",
                common.benchmark,
                common.n,
                model.basis.index_set().max_degree(),
                model.loo_error_rel,
                common.out.display()
            );
        }
        Command::FitGp { common, kernel, mode, trend, estimator, n_starts } => {
            let (case, design, responses) =
                sample_benchmark(&common.benchmark, common.n, common.seed)?;
            let gp_opts = GpOptions { kernel, mode, trend, estimator, n_starts, ..GpOptions::default() };
            let options = FitOptions {
                estimator: gp_opts.estimator()?,
                n_starts: gp_opts.n_starts,
                seed: rng::derive(common.seed, 1),
                ..FitOptions::default()
            };
            let model = GpModel::fit(
                &design.points,
                &responses,
                gp_opts.trend_spec(case.dimension())?,
                gp_opts.kernel_family()?,
                gp_opts.kernel_mode()?,
                &options,
            )?;
            std::fs::write(&common.out, model.to_json()?)?;
            let theta: Vec<String> =
                model.kernel.lengthscales.iter().map(|t| format!("{t:.4e}")).collect();
            println!(
                "fit-gp benchmark={} n={} theta=[{}] -> {}",
                common.benchmark,
                common.n,
                theta.join(","),
                common.out.display()
            );
        }
        Command::Sobol { pce_model, gp_model, benchmark_for_gp, benchmark, n, m, seed, out } => {
            let report: SobolReport = if let Some(path) = pce_model {
                let model = PceModel::from_json(&std::fs::read_to_string(path)?)?;
                model.sobol_indices(SobolRequest::FirstOrder)?
            } else if let Some(path) = gp_model {
                let model = GpModel::from_json(&std::fs::read_to_string(path)?)?;
                let case = BenchmarkCase::by_name(benchmark_for_gp.as_deref().unwrap())?;
                gp_sobol_first_order(&model, &case.input, n, m, seed)?
            } else if let Some(name) = benchmark {
                let case = BenchmarkCase::by_name(&name)?;
                let mut report = SobolReport::new(EstimatorTag::PickFreezeFirst);
                report.n_pick_freeze = Some(n);
                report.seed = Some(seed);
                for i in 0..case.dimension() {
                    let s = pick_freeze_first_order(
                        &case,
                        &case.input,
                        &[i],
                        n,
                        rng::derive(seed, i as u64),
                    )?;
                    report.push(vec![i], s);
                }
                report
            } else {
                return Err(Error::InvalidArgument(
                    "provide --pce-model, --gp-model, or --benchmark".into(),
                ));
            };
            std::fs::write(&out, report.to_csv())?;
            println!("sobol entries={} -> {}", report.entries().len(), out.display());
        }
        Command::Benchmark { name, recompute, seed, out } => {
            let case = BenchmarkCase::by_name(&name)?;
            println!("benchmark={} dimension={}", case.name, case.dimension());
            if name == "truss" {
                print!("{}", metasens::benchmarks::TrussSpec::standard().to_text());
            }
            let report = match recompute {
                Some(n) => case.recompute_reference(n, seed)?,
                None => case.reference_indices(),
            };
            for entry in report.entries() {
                println!("S{} = {:.4}", entry.subset[0] + 1, entry.estimate);
            }
            if let Some(path) = out {
                std::fs::write(&path, report.to_csv())?;
                println!("written -> {}", path.display());
            }
        }
        Command::Experiment { config, seed, out } => {
            let text = std::fs::read_to_string(&config)?;
            let mut config = ExperimentConfig::from_toml(&text)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(dir) = out {
                config.out_dir = dir;
            }
            let report = harness::run_experiment(&config)?;
            let failures = report.rows.iter().filter(|r| r.error.is_some()).count();
            println!(
                "experiment benchmark={} rows={} failures={} -> {}",
                config.benchmark,
                report.rows.len(),
                failures,
                config.out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("{{\"category\":\"invalid_argument\",\"message\":\"{e}\"}}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('"', "'");
            eprintln!("{{\"category\":\"{}\",\"message\":\"{msg}\"}}", e.category());
            ExitCode::FAILURE
        }
    }
}
