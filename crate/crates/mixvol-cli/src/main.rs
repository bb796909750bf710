//! Command-line driver for the mixvol library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mixvol::error::{Error, ErrorClass};
use mixvol::hierarchy::{
    build_hierarchy, heston_variance_law, verify_hierarchy, HestonParams, HierarchicalModel,
    HierarchyOptions,
};
use mixvol::io;
use mixvol::localvol::{default_grids, project};
use mixvol::market::{chain_to_density, to_log_moneyness, RateCurve};
use mixvol::mc::{price_analytic, price_mc, simulate_hierarchical, simulate_mixture};
use mixvol::recovery::{calibrate_mixture, CalibrationOptions, InversionEngine};

#[derive(Parser)]
#[command(
    name = "mixvol",
    version,
    about = "Mixture-of-lognormal-diffusions pricing, calibration, and simulation"
)]
struct Cli {
    /// Base seed for all random streams.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (0 keeps the library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate a mixture model to option chains.
    Calibrate {
        /// Input chains JSON (kind "chains").
        #[arg(long)]
        chains: PathBuf,
        /// Output model JSON.
        #[arg(long)]
        output: PathBuf,
        /// Quantile nodes in the calibrated mixing law.
        #[arg(long, default_value_t = 256)]
        quantiles: usize,
        /// Cells in the variance-law recovery grid.
        #[arg(long, default_value_t = 512)]
        theta_cells: usize,
        /// Inversion engine: auto, talbot[:nodes], gaver[:terms].
        #[arg(long, default_value = "auto")]
        engine: String,
        /// Grid points per maturity when converting chains to densities.
        #[arg(long, default_value_t = 512)]
        density_grid: usize,
    },
    /// Price a payoff under a calibrated model.
    Price {
        #[arg(long)]
        model: PathBuf,
        /// Payoff JSON (kind "payoff").
        #[arg(long)]
        payoff: PathBuf,
        /// Write the price JSON here instead of stdout only.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Monte Carlo instead of the closed-form mixture price.
        #[arg(long)]
        mc: bool,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// Antithetic variance reduction (even path count).
        #[arg(long)]
        antithetic: bool,
    },
    /// Simulate model paths and write them as CSV.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated observation times, ascending. Required for
        /// mixture models; hierarchical models observe their own layers.
        #[arg(long)]
        times: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long)]
        antithetic: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Export the local-volatility projection as CSV.
    Project {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Time rows.
        #[arg(long, default_value_t = 50)]
        nt: usize,
        /// Price columns.
        #[arg(long, default_value_t = 201)]
        nx: usize,
        /// Emit local variance instead of local volatility.
        #[arg(long)]
        as_variance: bool,
    },
    /// Hierarchical multi-period models.
    #[command(subcommand)]
    Hier(HierCommand),
    /// Run the built-in closed-form self checks.
    Selftest,
}

#[derive(Subcommand)]
enum HierCommand {
    /// Build coupled variance layers from spot and ratio density slices.
    Build {
        /// Input slices JSON (kind "slices").
        #[arg(long)]
        slices: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Shared variance lattice size.
        #[arg(long, default_value_t = 512)]
        lattice: usize,
    },
    /// Verify a hierarchical model's marginal and chaining consistency.
    Verify {
        #[arg(long)]
        model: PathBuf,
    },
    /// Build layers from a square-root variance process by simulation.
    Heston {
        #[arg(long)]
        kappa: f64,
        /// Long-run variance level.
        #[arg(long)]
        theta: f64,
        /// Volatility of variance.
        #[arg(long)]
        xi: f64,
        /// Initial instantaneous variance.
        #[arg(long)]
        v0: f64,
        /// Comma-separated layer maturities, ascending.
        #[arg(long)]
        maturities: String,
        #[arg(long, default_value_t = 200_000)]
        paths: usize,
        #[arg(long, default_value_t = 500)]
        steps_per_year: usize,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = 100.0)]
        x0: f64,
        /// Flat continuously compounded rate.
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[arg(long, default_value_t = 512)]
        lattice: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Calibration => 3,
                ErrorClass::Verification => 4,
                ErrorClass::Internal => 5,
            };
            ExitCode::from(code)
        }
    }
}

fn parse_times(text: &str) -> Result<Vec<f64>, Error> {
    let times: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let times = times.map_err(|e| Error::Parse(format!("bad time list {text:?}: {e}")))?;
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parse("times must be a nonempty ascending list".into()));
    }
    Ok(times)
}

fn parse_engine(text: &str) -> Result<InversionEngine, Error> {
    let (name, arg) = match text.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (text, None),
    };
    let num = |default: usize| -> Result<usize, Error> {
        match arg {
            None => Ok(default),
            Some(a) => a
                .parse()
                .map_err(|e| Error::Parse(format!("bad engine parameter {a:?}: {e}"))),
        }
    };
    match name {
        "auto" => Ok(InversionEngine::Auto),
        "talbot" => Ok(InversionEngine::Talbot { nodes: num(32)? }),
        "gaver" => Ok(InversionEngine::Stehfest { terms: num(7)? }),
        other => Err(Error::Parse(format!(
            "unknown engine {other:?} (expected auto, talbot, gaver)"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Calibrate { chains, output, quantiles, theta_cells, engine, density_grid } => {
            let file = io::load_chains(&chains)?;
            let rates = RateCurve::new(file.rates.clone())?;
            let mut slices = Vec::with_capacity(file.chains.len());
            for chain in &file.chains {
                let df = rates.discount(file.t0, chain.maturity);
                let (slice, diags) = chain_to_density(chain, df, density_grid, 6.0)?;
                if !diags.repaired_strikes.is_empty() {
                    eprintln!(
                        "note: maturity {}: repaired {} strikes (max adjustment {:.2e})",
                        chain.maturity,
                        diags.repaired_strikes.len(),
                        diags.max_adjustment
                    );
                }
                slices.push(to_log_moneyness(&slice, chain.forward)?);
            }
            let opts = CalibrationOptions {
                n_quantiles: quantiles,
                theta_cells,
                engine: parse_engine(&engine)?,
                ..CalibrationOptions::default()
            };
            let (model, report) = calibrate_mixture(&slices, file.x0, file.t0, &rates, &opts)?;
            io::save_model(&output, &model)?;
            println!(
                "calibrated {} maturities: reprice L1 {:.2e}, calendar adjustment {:.2e}, \
                 asymmetry removed {:.2e}, engines [{}]",
                model.maturities.len(),
                report.reprice_l1,
                report.max_calendar_adjustment,
                report.max_asymmetry,
                report.slice_engines.join(", ")
            );
            println!("wrote {}", output.display());
            Ok(())
        }
        Command::Price { model, payoff, output, mc, paths, antithetic } => {
            let model = io::load_model(&model)?;
            let payoff = io::load_payoff(&payoff)?;
            if mc {
                let times = payoff.observation_times();
                let batch = simulate_mixture(&model, &times, paths, cli.seed, antithetic)?;
                let est = price_mc(&batch, &payoff, &model.rates, model.t0)?;
                println!(
                    "mc price {:.10} (se {:.3e}, {} paths, seed {})",
                    est.value, est.std_error, est.n_paths, cli.seed
                );
                if let Some(out) = output {
                    io::save_price(&out, est.value, Some(&est))?;
                    println!("wrote {}", out.display());
                }
            } else {
                let price = price_analytic(&model, &payoff)?;
                println!("price {price:.10}");
                if let Some(out) = output {
                    io::save_price(&out, price, None)?;
                    println!("wrote {}", out.display());
                }
            }
            Ok(())
        }
        Command::Simulate { model, times, paths, antithetic, output } => {
            // dispatch on the artifact kind: mixture models take arbitrary
            // observation times, hierarchical models observe their layers
            let head: serde_json::Value = io::read_json(&model)?;
            let kind = head.get("kind").and_then(|k| k.as_str()).unwrap_or("");
            let batch = if kind == "hierarchy" {
                if antithetic {
                    return Err(Error::InvalidInput(
                        "antithetic sampling applies to mixture models only".into(),
                    ));
                }
                let model = io::load_hierarchy(&model)?;
                simulate_hierarchical(&model, paths, cli.seed)?
            } else {
                let model = io::load_model(&model)?;
                let times = times.ok_or_else(|| {
                    Error::InvalidInput("--times is required for mixture models".into())
                })?;
                let times = parse_times(&times)?;
                simulate_mixture(&model, &times, paths, cli.seed, antithetic)?
            };
            std::fs::write(&output, io::paths_csv(&batch))
                .map_err(|e| Error::Parse(format!("cannot write {}: {e}", output.display())))?;
            println!(
                "simulated {} paths at {} times (seed {}), wrote {}",
                paths,
                batch.times.len(),
                cli.seed,
                output.display()
            );
            Ok(())
        }
        Command::Project { model, output, nt, nx, as_variance } => {
            let model = io::load_model(&model)?;
            let (times, space) = default_grids(&model, nt, nx);
            let surface = project(&model, &times, &space)?;
            std::fs::write(&output, io::surface_csv(&surface, as_variance))
                .map_err(|e| Error::Parse(format!("cannot write {}: {e}", output.display())))?;
            println!(
                "projected {} times x {} prices ({}), wrote {}",
                nt,
                nx,
                if as_variance { "variance" } else { "volatility" },
                output.display()
            );
            Ok(())
        }
        Command::Hier(cmd) => run_hier(cmd, cli.seed),
        Command::Selftest => selftest(),
    }
}

fn run_hier(cmd: HierCommand, seed: u64) -> Result<(), Error> {
    match cmd {
        HierCommand::Build { slices, output, lattice } => {
            let file = io::load_slices(&slices)?;
            let rates = RateCurve::new(file.rates.clone())?;
            let opts = HierarchyOptions { lattice_cells: lattice, ..HierarchyOptions::default() };
            let model =
                build_hierarchy(&file.spot, &file.ratio, file.x0, file.t0, 0.0, &rates, &opts)?;
            let report = verify_hierarchy(&model)?;
            for c in &report.checks {
                println!(
                    "coupling {}: row L1 {:.2e}, col L1 {:.2e}, diff L1 {:.2e}, chain L1 {:.2e}",
                    c.coupling, c.row_l1, c.col_l1, c.diff_l1, c.chain_l1
                );
            }
            if !report.passed {
                return Err(Error::Verification(
                    "built hierarchy failed its consistency checks".into(),
                ));
            }
            io::save_hierarchy(&output, &model)?;
            println!("wrote {}", output.display());
            Ok(())
        }
        HierCommand::Verify { model } => {
            let model = io::load_hierarchy(&model)?;
            let report = verify_hierarchy(&model)?;
            for c in &report.checks {
                println!(
                    "coupling {}: row L1 {:.2e}, col L1 {:.2e}, diff L1 {:.2e}, chain L1 {:.2e}",
                    c.coupling, c.row_l1, c.col_l1, c.diff_l1, c.chain_l1
                );
            }
            if !report.passed {
                return Err(Error::Verification(format!(
                    "hierarchy checks failed (marginal tolerance {:.0e}, chain tolerance {:.0e})",
                    report.marginal_tol, report.chain_tol
                )));
            }
            println!("hierarchy consistent");
            Ok(())
        }
        HierCommand::Heston {
            kappa,
            theta,
            xi,
            v0,
            maturities,
            paths,
            steps_per_year,
            t0,
            x0,
            rate,
            lattice,
            output,
        } => {
            let mats = parse_times(&maturities)?;
            let params = HestonParams { kappa, theta_bar: theta, xi, v0 };
            let (marginals, increment_laws, couplings) =
                heston_variance_law(&params, &mats, t0, paths, steps_per_year, seed, lattice)?;
            let model = HierarchicalModel {
                t0,
                x0,
                v0: 0.0,
                rates: RateCurve::flat(rate),
                maturities: mats,
                marginals,
                increment_laws,
                couplings,
            };
            let report = verify_hierarchy(&model)?;
            if !report.passed {
                return Err(Error::Verification(
                    "layers from the variance process failed consistency checks".into(),
                ));
            }
            io::save_hierarchy(&output, &model)?;
            println!("wrote {} ({} layer maturities, seed {})", output.display(), model.maturities.len(), seed);
            Ok(())
        }
    }
}

/// Closed-form sanity suite: every check has a hand-verifiable expected
/// value. Any failure exits with the verification code.
fn selftest() -> Result<(), Error> {
    use mixvol::black::{self, OptionKind};
    use mixvol::mixture::{self, EuropeanOption, MixingLaw, MixtureModel};

    let mut failures = 0usize;
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        let ok = (got - want).abs() <= tol;
        println!(
            "{} {name}: got {got:.12}, want {want:.12} (tol {tol:.0e})",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failures += 1;
        }
    };

    check(
        "standard normal cdf at 0.1",
        black::norm_cdf(0.1),
        0.539827837277029,
        1e-12,
    );
    check(
        "at-the-money call, variance 0.04",
        black::price(OptionKind::Call, 100.0, 100.0, 0.04),
        black::norm_cdf(0.1) * 100.0 - 100.0 * black::norm_cdf(-0.1),
        1e-12,
    );
    check(
        "put-call parity at strike 90",
        black::price(OptionKind::Call, 100.0, 90.0, 0.04)
            - black::price(OptionKind::Put, 100.0, 90.0, 0.04),
        10.0,
        1e-10,
    );
    check(
        "lognormal density at the forward",
        black::lognormal_density(100.0, 0.04, 100.0).unwrap(),
        0.01984762737385059,
        1e-15,
    );

    let rates = RateCurve::flat(0.0);
    let mixing = MixingLaw::atoms(vec![(0.01, 0.5), (0.09, 0.5)]).unwrap();
    let model = MixtureModel::single_period(mixing, 0.0, 1.0, 100.0, rates).unwrap();
    let opt = EuropeanOption { kind: OptionKind::Call, strike: 100.0, maturity: 1.0 };
    check(
        "two-component mixture call",
        mixture::price_european(&model, &opt).unwrap(),
        0.5 * black::price(OptionKind::Call, 100.0, 100.0, 0.01)
            + 0.5 * black::price(OptionKind::Call, 100.0, 100.0, 0.09),
        1e-12,
    );
    check(
        "mixture density at the forward",
        mixture::mixture_density(&model, 100.0, 1.0).unwrap(),
        0.026496851219869683,
        1e-15,
    );

    let zeta = mixvol::recovery::stehfest_weights(7);
    check("gaver weights sum", zeta.iter().sum::<f64>(), 0.0, 1e-4);
    check(
        "gaver weights harmonic identity",
        zeta.iter().enumerate().map(|(k, &z)| z / (k + 1) as f64).sum::<f64>(),
        1.0,
        1e-6,
    );

    let curve = RateCurve::new(vec![(0.0, 0.02), (0.5, 0.04)]).unwrap();
    check(
        "piecewise rate integral over [0, 1]",
        curve.integral(0.0, 1.0),
        0.03,
        1e-15,
    );
    check(
        "growth from constant 10% rate",
        100.0 * RateCurve::flat(0.1).integral(0.0, 1.0).exp(),
        110.51709180756477,
        1e-10,
    );

    if failures > 0 {
        return Err(Error::Verification(format!("{failures} self-test checks failed")));
    }
    println!("all self-test checks passed");
    Ok(())
}
