mod config;

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ordcop_core::combine::{fit_system, write_copula_table, write_marginal_table, CopulaSharing, Estimator};
use ordcop_core::data::{self, PanelSchema};
use ordcop_core::forecast::{forecast_paths, ForecastModel};
use ordcop_core::reference::{efficiency_report, write_efficiency_table};
use ordcop_core::simulate::{median, run_replication_study, sample_variance, simulate_system, ScenarioConfig};
use ordcop_core::{FitOptions, Panel, StatePanel};
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::{FileConfig, ForecastFlags, ModelFlags, ModelOptions};

#[derive(Parser, Debug)]
#[command(name = "ordcop", version, about = "Pairwise-copula models for multivariate ordinal time series")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ORDCOP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Io {
    /// Input panel (delimited, one column per series).
    #[arg(long, short)]
    input: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Name of the time column; auto-detected when omitted.
    #[arg(long)]
    time_column: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut a continuous panel into ordinal states at pooled quantiles.
    Discretize {
        #[command(flatten)]
        io: Io,
        /// Number of states.
        #[arg(long)]
        states: usize,
        /// Cut probabilities, comma separated (default: equal-probability bins).
        #[arg(long, value_delimiter = ',')]
        probs: Option<Vec<f64>>,
    },
    /// Kendall τ-b matrices at lags 0..=L.
    Screen {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = 1)]
        lag: usize,
    },
    /// Fit every pair, synthesize both estimators and write parameter tables.
    Fit {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Generate panels from a scenario and optionally run a replication study.
    Simulate {
        /// Scenario file (TOML).
        #[arg(long, conflicts_with = "preset")]
        scenario: Option<PathBuf>,
        /// Built-in scenario: trivariate-gumbel, bivariate-gumbel or trivariate-gaussian.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        t_len: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Copula sharing of the replication fits: per-pair or common.
        #[arg(long)]
        sharing: Option<String>,
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Monte Carlo forecasts from a fitted system.
    Forecast {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        forecast: ForecastFlags,
        #[arg(long)]
        seed: Option<u64>,
        /// Realised future states (a panel with the same series) for hit rates.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Compare the two-stage estimator with joint pairwise and full likelihood fits.
    #[command(name = "compare-appendix", alias = "compare")]
    Compare {
        /// Sample lengths, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "100,500")]
        t_len: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        replications: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct Meta<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config_hash: String,
    config: &'a C,
}

fn write_meta<C: Serialize>(out: &Path, command: &str, seed: Option<u64>, config: &C) -> Result<()> {
    let canonical = serde_json::to_vec(config)?;
    let meta = Meta {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_hash: hex::encode(Sha256::digest(&canonical)),
        config,
    };
    let file = create(&out.join("meta.json"))?;
    serde_json::to_writer_pretty(file, &meta)?;
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn read_input(io: &Io, file: &FileConfig) -> Result<Panel> {
    let schema = PanelSchema {
        time_column: io.time_column.clone().or_else(|| file.time_column.clone()),
        ..Default::default()
    };
    data::load_panel(&io.input, &schema).with_context(|| format!("cannot load {}", io.input.display()))
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create directory {}", out.display()))
}

fn discretize(io: &Io, file: &FileConfig, states: usize, probs: Option<&[f64]>) -> Result<()> {
    let panel = read_input(io, file)?;
    prepare_out(&io.out)?;
    let d = data::discretize_quantile(&panel, states, probs)?;
    data::save_panel(&d.panel, io.out.join("states.csv"))?;
    let mut w = csv_writer(&io.out.join("breakpoints.csv"))?;
    w.write_record(["state", "upper_breakpoint"])?;
    for (j, b) in d.breakpoints.iter().enumerate() {
        w.write_record([(j + 1).to_string(), b.to_string()])?;
    }
    w.flush()?;
    #[derive(Serialize)]
    struct C<'a> {
        input: &'a Path,
        states: usize,
        probs: Option<&'a [f64]>,
    }
    write_meta(&io.out, "discretize", None, &C { input: &io.input, states, probs })
}

fn screen(io: &Io, file: &FileConfig, max_lag: usize) -> Result<()> {
    let panel = StatePanel::from_panel(&read_input(io, file)?)?;
    prepare_out(&io.out)?;
    let names = panel.to_panel().names;
    for lag in 0..=max_lag {
        let tau = data::kendall_matrix(&panel, lag)?;
        let mut w = csv_writer(&io.out.join(format!("tau_lag{lag}.csv")))?;
        let mut header = vec!["series".to_owned()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in names.iter().zip(&tau) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.map_or_else(|| "NA".to_owned(), |x| x.to_string())));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    #[derive(Serialize)]
    struct C<'a> {
        input: &'a Path,
        lag: usize,
    }
    write_meta(&io.out, "screen", None, &C { input: &io.input, lag: max_lag })
}

fn fit(io: &Io, file: &FileConfig, flags: &ModelFlags) -> Result<()> {
    let options = ModelOptions::merge(flags, &file.model)?;
    let panel = StatePanel::from_panel(&read_input(io, file)?)?;
    let system = options.system_config(&panel.to_panel().names)?;
    let fit = fit_system(&panel, &system, &FitOptions::default())?;
    prepare_out(&io.out)?;

    let mut w = csv_writer(&io.out.join("params.csv"))?;
    w.write_record(["parameter", "estimator", "estimate", "se", "z", "p_value"])?;
    for r in fit.param_table() {
        w.write_record([
            r.name,
            r.method.name().to_owned(),
            r.estimate.to_string(),
            r.se.to_string(),
            r.z.to_string(),
            r.p_value.to_string(),
        ])?;
    }
    w.flush()?;
    write_marginal_table(&fit, options.estimator, create(&io.out.join("marginal_table.csv"))?)?;
    write_copula_table(&fit, options.estimator, create(&io.out.join("copula_table.csv"))?)?;

    let mut w = csv_writer(&io.out.join("pairs.csv"))?;
    w.write_record(["r", "s", "family", "loglik", "converged", "iterations", "grad_norm"])?;
    for p in &fit.pair_fits {
        w.write_record([
            fit.series_names[p.pair.r].clone(),
            fit.series_names[p.pair.s].clone(),
            format!("{:?}", p.pair.family).to_lowercase(),
            p.loglik.to_string(),
            p.converged.to_string(),
            p.iterations.to_string(),
            p.grad_norm.to_string(),
        ])?;
    }
    w.flush()?;
    if !fit.converged() {
        eprintln!("warning: some pair fits did not converge; see pairs.csv");
    }
    #[derive(Serialize)]
    struct C<'a> {
        input: &'a Path,
        model: &'a ModelOptions,
    }
    write_meta(&io.out, "fit", None, &C { input: &io.input, model: &options })
}

fn preset(name: &str, t_len: usize) -> Result<ScenarioConfig> {
    Ok(match name {
        "trivariate-gumbel" => ScenarioConfig::trivariate_gumbel(t_len),
        "bivariate-gumbel" => ScenarioConfig::bivariate_gumbel(t_len),
        "trivariate-gaussian" => ScenarioConfig::trivariate_gaussian(t_len),
        _ => bail!("unknown preset '{name}' (expected trivariate-gumbel, bivariate-gumbel or trivariate-gaussian)"),
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    file: &FileConfig,
    scenario: Option<&Path>,
    preset_name: Option<&str>,
    t_len: Option<usize>,
    replications: Option<usize>,
    seed: Option<u64>,
    sharing: Option<&str>,
    out: &Path,
) -> Result<()> {
    let mut sc = match (scenario, preset_name) {
        (Some(path), _) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("cannot read scenario {}", path.display()))?;
            toml::from_str::<ScenarioConfig>(&text).with_context(|| format!("invalid scenario {}", path.display()))?
        }
        (None, Some(name)) => preset(name, 500)?,
        (None, None) => bail!("simulate needs --scenario or --preset"),
    };
    if let Some(t) = t_len {
        sc.t_len = t;
    }
    if let Some(b) = replications {
        sc.replications = b;
    }
    if let Some(s) = seed.or(file.seed) {
        sc.seed = s;
    }
    let sharing: CopulaSharing = match sharing.or(file.model.sharing.as_deref()) {
        Some(s) => s.parse()?,
        None => CopulaSharing::PerPair,
    };
    sc.validate()?;
    prepare_out(out)?;
    let panel = simulate_system(&sc, &mut sc.rng(0))?;
    data::save_panel(&panel.to_panel(), out.join("panel.csv"))?;

    if sc.replications > 1 {
        let study = run_replication_study(&sc, sharing, &FitOptions::default())?;
        let mut w = csv_writer(&out.join("estimates.csv"))?;
        w.write_record(["replication", "estimator", "parameter", "estimate", "se"])?;
        for r in study.usable() {
            for estimator in [Estimator::Mean, Estimator::Weighted] {
                for (i, name) in study.names.iter().enumerate() {
                    w.write_record([
                        r.replication.to_string(),
                        estimator.name().to_owned(),
                        name.clone(),
                        r.estimate(estimator)[i].to_string(),
                        r.se(estimator)[i].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        let mut w = csv_writer(&out.join("replications.csv"))?;
        w.write_record(["replication", "converged", "mse_mean", "mse_weighted", "seconds", "error"])?;
        for r in &study.records {
            w.write_record([
                r.replication.to_string(),
                r.converged.to_string(),
                r.mse_mean.to_string(),
                r.mse_weighted.to_string(),
                r.seconds.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        let mut w = csv_writer(&out.join("summary.csv"))?;
        w.write_record(["parameter", "truth", "median_mean", "median_weighted", "var_mean", "var_weighted"])?;
        for (i, name) in study.names.iter().enumerate() {
            let (m, wt) = (study.estimates(Estimator::Mean, i), study.estimates(Estimator::Weighted, i));
            w.write_record([
                name.clone(),
                study.truth[i].to_string(),
                median(&m).to_string(),
                median(&wt).to_string(),
                sample_variance(&m).to_string(),
                sample_variance(&wt).to_string(),
            ])?;
        }
        w.flush()?;
        eprintln!(
            "{} of {} replications usable; median MSE mean {:.5}, weighted {:.5}",
            study.usable().count(),
            study.records.len(),
            study.median_mse(Estimator::Mean),
            study.median_mse(Estimator::Weighted)
        );
    }
    #[derive(Serialize)]
    struct C<'a> {
        scenario: &'a ScenarioConfig,
        sharing: CopulaSharing,
    }
    write_meta(out, "simulate", Some(sc.seed), &C { scenario: &sc, sharing })
}

fn forecast(
    io: &Io,
    file: &FileConfig,
    model_flags: &ModelFlags,
    flags: &ForecastFlags,
    seed: Option<u64>,
    truth: Option<&Path>,
) -> Result<()> {
    let options = ModelOptions::merge(model_flags, &file.model)?;
    let seed = seed.or(file.seed).unwrap_or(0);
    let fc = config::forecast_config(flags, &file.forecast, seed)?;
    let panel = StatePanel::from_panel(&read_input(io, file)?)?;
    let names = panel.to_panel().names;
    let system = options.system_config(&names)?;
    let fit = fit_system(&panel, &system, &FitOptions::default())?;
    let model = ForecastModel::from_system(&fit)?;
    let history = panel.tail_history(options.lag)?;
    let result = forecast_paths(&model, &fc, &history)?;
    prepare_out(&io.out)?;

    let mut w = csv_writer(&io.out.join("frequencies.csv"))?;
    w.write_record(["horizon", "series", "state", "frequency"])?;
    for r in result.frequency_records() {
        w.write_record([r.horizon.to_string(), r.series, r.state.to_string(), r.frequency.to_string()])?;
    }
    w.flush()?;
    let points = result.point_records();
    let mut w = csv_writer(&io.out.join("point.csv"))?;
    w.write_record(["horizon", "series", "forecast"])?;
    for r in &points {
        w.write_record([r.horizon.to_string(), r.series.clone(), r.forecast.to_string()])?;
    }
    w.flush()?;

    if let Some(path) = truth {
        let actual = data::load_panel(path, &PanelSchema::default())
            .with_context(|| format!("cannot load truth {}", path.display()))?;
        if actual.len() < fc.horizon {
            bail!("truth file has {} rows, the horizon is {}", actual.len(), fc.horizon);
        }
        let mut w = csv_writer(&io.out.join("hit_rate.csv"))?;
        w.write_record(["series", "hits", "horizons", "hit_rate"])?;
        let (mut total, mut count) = (0usize, 0usize);
        for name in &names {
            let k = actual
                .names
                .iter()
                .position(|n| n == name)
                .with_context(|| format!("truth file lacks series '{name}'"))?;
            let hits = points
                .iter()
                .filter(|p| &p.series == name)
                .filter(|p| actual.values[k][p.horizon - 1] == p.forecast as f64)
                .count();
            total += hits;
            count += fc.horizon;
            w.write_record([
                name.clone(),
                hits.to_string(),
                fc.horizon.to_string(),
                (hits as f64 / fc.horizon as f64).to_string(),
            ])?;
        }
        w.write_record([
            "all".to_owned(),
            total.to_string(),
            count.to_string(),
            (total as f64 / count as f64).to_string(),
        ])?;
        w.flush()?;
    }
    #[derive(Serialize)]
    struct C<'a> {
        input: &'a Path,
        model: &'a ModelOptions,
        horizon: usize,
        paths: usize,
        method: String,
        summary: String,
    }
    let c = C {
        input: &io.input,
        model: &options,
        horizon: fc.horizon,
        paths: fc.n_paths,
        method: fc.method.to_string(),
        summary: format!("{:?}", fc.summary).to_lowercase(),
    };
    write_meta(&io.out, "forecast", Some(seed), &c)
}

fn compare(file: &FileConfig, lengths: &[usize], replications: usize, seed: Option<u64>, out: &Path) -> Result<()> {
    let seed = seed.or(file.seed).unwrap_or(0);
    prepare_out(out)?;
    let mut reports = Vec::new();
    for &t in lengths {
        let mut sc = ScenarioConfig::trivariate_gaussian(t);
        sc.replications = replications;
        sc.seed = seed;
        let r = efficiency_report(&sc, &FitOptions::default())?;
        eprintln!(
            "T={t}: var_FL/var_TS {:.3}, var_PL/var_TS {:.3}, two-stage {:.2}x faster than joint pairwise",
            r.mean_var_ratio_full,
            r.mean_var_ratio_pairwise,
            r.two_stage_speedup()
        );
        reports.push(r);
    }
    write_efficiency_table(&reports, create(&out.join("efficiency.csv"))?)?;
    let mut w = csv_writer(&out.join("efficiency_by_parameter.csv"))?;
    w.write_record(["t_len", "parameter", "var_fl_over_ts", "var_pl_over_ts"])?;
    for r in &reports {
        for (i, name) in r.names.iter().enumerate() {
            w.write_record([
                r.t_len.to_string(),
                name.clone(),
                r.var_ratio_full[i].to_string(),
                r.var_ratio_pairwise[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    #[derive(Serialize)]
    struct C<'a> {
        t_len: &'a [usize],
        replications: usize,
    }
    write_meta(out, "compare-appendix", Some(seed), &C { t_len: lengths, replications })
}

fn run(cli: Cli) -> Result<()> {
    let file = config::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    match &cli.command {
        Command::Discretize { io, states, probs } => discretize(io, &file, *states, probs.as_deref()),
        Command::Screen { io, lag } => screen(io, &file, *lag),
        Command::Fit { io, model } => fit(io, &file, model),
        Command::Simulate {
            scenario,
            preset,
            t_len,
            replications,
            seed,
            sharing,
            out,
        } => simulate(
            &file,
            scenario.as_deref(),
            preset.as_deref(),
            *t_len,
            *replications,
            *seed,
            sharing.as_deref(),
            out,
        ),
        Command::Forecast {
            io,
            model,
            forecast: flags,
            seed,
            truth,
        } => forecast(io, &file, model, flags, *seed, truth.as_deref()),
        Command::Compare {
            t_len,
            replications,
            seed,
            out,
        } => compare(&file, t_len, *replications, *seed, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", line.trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
