//! `olstwin`: run the twin's steps from the command line or start the
//! service.

use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use olstwin::calib::{CalibOptions, DatasetDesign, DEFAULT_RECORDS};
use olstwin::dlm::DlmExtract;
use olstwin::gn::{predict, ParameterSet, Provenance};
use olstwin::line::LineSettings;
use olstwin::plant::{
    example_plant, file::parse_plant, measure, measure_q, span_loss_report, NoiseSpec, OpticalLinePlant,
};
use olstwin::provisioner::sweep::{SweepReport, SweepStats};
use olstwin::provisioner::{
    build_models, configure_transparency, power_sweep, run_provisioning, AutoDecision, CalibInputs, ChannelDecision,
    DecisionKind, DecisionSource, DlmAcquisition, RunConfig, RunState, SweepRange,
};
use olstwin_service::{listen_addr, AppState, ServiceConfig};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "olstwin", version, about = "Digital twin of a multi-span WDM optical line")]
struct Cli {
    /// Print results as JSON on stdout and errors as JSON on stderr.
    #[arg(long, global = true)]
    json: bool,
    /// Seed of the plant's measurement noise.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Measure without noise.
    #[arg(long, global = true)]
    noiseless: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure telemetry at given settings and predict QoT with the true parameters.
    Simulate {
        #[command(flatten)]
        plant: PlantArg,
        /// Amplifier settings (JSON); defaults to the plant's nominal settings.
        #[arg(long)]
        settings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Acquire a longitudinal profile and extract dataset 1.
    Dlm {
        #[command(flatten)]
        plant: PlantArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure calibration records and fit the carrier link (dataset 2).
    Calibrate {
        #[command(flatten)]
        plant: PlantArg,
        #[arg(long, default_value_t = DEFAULT_RECORDS)]
        records: usize,
        #[arg(long, value_enum, default_value_t = Design::Structured)]
        design: Design,
        /// Dataset 1 to use; acquired afresh when omitted.
        #[arg(long)]
        dataset1: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        lm_iterations: usize,
        #[arg(long, default_value_t = 2000)]
        polish_evaluations: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the merged calibrated parameter set.
        #[arg(long)]
        params_out: Option<PathBuf>,
        /// Also write the baseline parameter set.
        #[arg(long)]
        baseline_out: Option<PathBuf>,
    },
    /// Run the provisioning workflow.
    Provision {
        #[command(flatten)]
        plant: PlantArg,
        /// Adopt the new configuration after the review period.
        #[arg(long, conflicts_with = "serve")]
        auto_approve: bool,
        /// Serve the run over HTTP and wait for the console's decision.
        #[arg(long)]
        serve: bool,
        /// Run configuration (JSON); fields left out take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Artifact root; the run writes into <out>/<run id>.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value = "run")]
        run_id: String,
    },
    /// Step the booster with the rest of the line in transparency.
    Sweep {
        #[command(flatten)]
        plant: PlantArg,
        #[arg(long)]
        params: PathBuf,
        /// Baseline parameter set; built from the span losses when omitted.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        range: RangeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error statistics of two parameter sets against the plant.
    Compare {
        #[command(flatten)]
        plant: PlantArg,
        #[arg(long)]
        calibrated: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[command(flatten)]
        range: RangeArgs,
    },
    /// Serve the HTTP API on OLS_TWIN_ADDR.
    Serve,
}

#[derive(clap::Args)]
struct PlantArg {
    /// Plant file (TOML); the bundled example when omitted.
    #[arg(long)]
    plant: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RangeArgs {
    /// First booster gain, dB.
    #[arg(long, default_value_t = 12.0)]
    from: f64,
    /// Last booster gain, dB.
    #[arg(long, default_value_t = 20.0)]
    to: f64,
    #[arg(long, default_value_t = 0.5)]
    step: f64,
}

impl RangeArgs {
    fn range(&self) -> Result<SweepRange> {
        if self.step.is_nan() || self.step <= 0.0 || self.to < self.from {
            bail!("sweep range needs step > 0 and to >= from");
        }
        Ok(SweepRange { from_db: self.from, to_db: self.to, step_db: self.step })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Design {
    Structured,
    Randomized,
}

struct Ctx {
    json: bool,
    seed: u64,
    noiseless: bool,
}

impl Ctx {
    fn noise(&self, plant: &OpticalLinePlant) -> NoiseSpec {
        if self.noiseless {
            NoiseSpec::zero()
        } else {
            plant.noise
        }
    }

    /// Prints `value` as JSON, or `text` otherwise.
    fn emit(&self, value: Value, text: impl FnOnce() -> String) {
        if self.json {
            println!("{value}");
        } else {
            print!("{}", text());
        }
    }
}

fn load_plant(arg: &PlantArg) -> Result<OpticalLinePlant> {
    match &arg.plant {
        None => Ok(example_plant()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_plant(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    write_file(path, serde_json::to_vec_pretty(v)?)
}

/// Parameter sets from files lack transceivers when they describe the line
/// only; those take the plant's.
fn with_transceivers(mut p: ParameterSet, plant: &OpticalLinePlant) -> ParameterSet {
    if p.transceivers.is_empty() {
        p.transceivers = plant.transceivers.clone();
    }
    p
}

fn truth_params(plant: &OpticalLinePlant) -> ParameterSet {
    with_transceivers(ParameterSet::new(plant.line.clone(), Provenance::Truth), plant)
}

fn simulate(ctx: &Ctx, plant: &OpticalLinePlant, settings: Option<&Path>, out: &Path) -> Result<()> {
    let settings = match settings {
        Some(p) => read_json::<LineSettings>(p)?,
        None => plant.nominal_settings(),
    };
    settings.check_against(&plant.line)?;
    let noise = ctx.noise(plant);
    let telemetry = measure(plant, &plant.comb, &settings.restricted_to(&plant.carrier_link()), &noise, ctx.seed)?;
    let q = measure_q(plant, &settings, &noise, ctx.seed ^ 0x5a5a)?;
    let truth = truth_params(plant);
    let prediction = predict(&truth, &plant.ete_launch(), &settings)?;
    write_json(&out.join("telemetry.json"), &telemetry)?;
    write_json(&out.join("q.json"), &q)?;
    write_json(&out.join("prediction.json"), &prediction)?;
    write_json(&out.join("truth_params.json"), &truth)?;
    ctx.emit(json!({ "out": out, "q": q }), || {
        let mut s = format!("wrote {}\n", out.display());
        for r in &q {
            s += &format!("{:<8} slot {:>2}  SNR {:6.2} dB  BER {:.3e}\n", r.trx_id, r.slot, r.snr_db, r.ber);
        }
        s
    });
    Ok(())
}

fn dataset1(ctx: &Ctx, plant: &OpticalLinePlant) -> Result<DlmExtract> {
    Ok(DlmAcquisition::measure(plant, &ctx.noise(plant), ctx.seed)?.extract(plant)?)
}

fn dlm(ctx: &Ctx, plant: &OpticalLinePlant, out: &Path) -> Result<()> {
    let ex = dataset1(ctx, plant)?;
    write_json(out, &ex)?;
    ctx.emit(json!({ "out": out, "spans": ex.spans.len() }), || {
        format!("wrote {} ({} spans)\n", out.display(), ex.spans.len())
    });
    Ok(())
}

struct CalibrateArgs<'a> {
    records: usize,
    design: Design,
    dataset1: Option<&'a Path>,
    lm_iterations: usize,
    polish_evaluations: usize,
    out: &'a Path,
    params_out: Option<&'a Path>,
    baseline_out: Option<&'a Path>,
}

fn calibrate(ctx: &Ctx, plant: &OpticalLinePlant, a: CalibrateArgs) -> Result<()> {
    let dlm = match a.dataset1 {
        Some(p) => read_json(p)?,
        None => dataset1(ctx, plant)?,
    };
    let design = match a.design {
        Design::Structured => DatasetDesign::Structured,
        Design::Randomized => DatasetDesign::Randomized { seed: ctx.seed },
    };
    let inputs = CalibInputs::measure(plant, a.records, design, &ctx.noise(plant), ctx.seed)?;
    let opts = CalibOptions {
        lm_iterations: a.lm_iterations,
        polish_evaluations: a.polish_evaluations,
        ..CalibOptions::default()
    };
    let m = build_models(plant, &dlm, &inputs, &opts)?;
    write_json(a.out, &m.calibration)?;
    if let Some(p) = a.params_out {
        write_json(p, &m.params)?;
    }
    if let Some(p) = a.baseline_out {
        write_json(p, &m.baseline)?;
    }
    let c = &m.calibration;
    ctx.emit(
        json!({ "out": a.out, "initial_cost": c.initial_cost, "final_cost": c.final_cost, "stages": c.stages }),
        || {
            let mut s = format!("wrote {} from {} records\n", a.out.display(), inputs.records.records.len());
            for st in &c.stages {
                s += &format!(
                    "{:<16} cost {:.6}  best {:.6}  {} evaluations\n",
                    st.name, st.cost, st.best_cost, st.evaluations
                );
            }
            s
        },
    );
    Ok(())
}

/// Reads the decision from standard input.
fn stdin_decision() -> ChannelDecision {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        eprintln!("review the results, then type adopt or revert");
        for line in std::io::stdin().lock().lines().map_while(Result::ok) {
            let kind = match line.trim() {
                "adopt" => DecisionKind::Adopt,
                "revert" => DecisionKind::Revert,
                _ => {
                    eprintln!("type adopt or revert");
                    continue;
                }
            };
            let _ = tx.send((kind, "operator".to_string()));
            return;
        }
    });
    ChannelDecision { rx, wait: Duration::from_secs(600) }
}

struct ProvisionArgs<'a> {
    auto_approve: bool,
    serve: bool,
    config: Option<&'a Path>,
    out: &'a Path,
    run_id: &'a str,
}

fn provision(ctx: &Ctx, plant: OpticalLinePlant, a: ProvisionArgs) -> Result<ExitCode> {
    let mut cfg: RunConfig = match a.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    cfg.seed = ctx.seed;
    if ctx.noiseless {
        cfg.noise = Some(NoiseSpec::zero());
    }
    if a.serve {
        return serve_run(plant, cfg, a.out).map(|_| ExitCode::SUCCESS);
    }
    cfg.run_id = a.run_id.into();
    cfg.artifacts_dir = Some(a.out.to_path_buf());
    let mut auto = AutoDecision::adopt();
    let mut manual;
    let source: &mut dyn DecisionSource = if a.auto_approve {
        &mut auto
    } else {
        manual = stdin_decision();
        &mut manual
    };
    let o = run_provisioning(&plant, &cfg, source)?;
    let run = &o.run;
    let stats = o.outputs.sweep.as_ref().map(|s| (s.stats(true), s.stats(false)));
    ctx.emit(json!({ "run": run, "artifacts": a.out.join(&cfg.run_id) }), || {
        let mut s = String::new();
        for e in &run.timeline {
            s += &format!("{:<18} {:6.1} - {:6.1} min\n", format!("{:?}", e.state), e.start_min, e.end_min);
        }
        s += &format!("state {:?}, total {:.1} min\n", run.state, run.elapsed_min);
        if let Some(d) = &run.decision {
            s += &format!(
                "decision {:?} by {}{}\n",
                d.decision,
                d.decided_by,
                if d.timed_out { " (timeout)" } else { "" }
            );
        }
        if let Some((c, b)) = stats {
            s += &stats_table(&c, &b);
        }
        if let Some(e) = &run.error {
            s += &format!("error: {e}\n");
        }
        s
    });
    Ok(if run.state == RunState::Done && run.error.is_none() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

/// Serves one run; the process keeps serving after it finishes.
fn serve_run(plant: OpticalLinePlant, cfg: RunConfig, out: &Path) -> Result<()> {
    let state = AppState::new(ServiceConfig { data_dir: Some(out.to_path_buf()), ..ServiceConfig::default() });
    let plant_id = state.add_plant(plant);
    runtime()?.block_on(async {
        let addr = listen_addr();
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        let run_id = state.start_run(&plant_id, cfg).map_err(|e| anyhow::anyhow!(e.message))?;
        eprintln!("serving http://{addr}/runs/{run_id}; decide with POST /runs/{run_id}/decision");
        olstwin_service::serve(listener, state).await?;
        Ok(())
    })
}

fn serve() -> Result<()> {
    let state = AppState::new(ServiceConfig::from_env());
    runtime()?.block_on(async {
        let addr = listen_addr();
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("serving http://{addr}");
        olstwin_service::serve(listener, state).await?;
        Ok(())
    })
}

/// Runs the transparency setup of `params` and the booster sweep.
fn sweep_report(
    ctx: &Ctx,
    plant: &OpticalLinePlant,
    params: &ParameterSet,
    baseline: &ParameterSet,
    range: SweepRange,
    noise: &NoiseSpec,
) -> Result<SweepReport> {
    let t = configure_transparency(params, &plant.ete_launch(), range)?;
    for w in &t.warnings {
        eprintln!("warning: {w}");
    }
    Ok(power_sweep(plant, params, baseline, &t.settings, &t.booster_id, range, noise, ctx.seed)?)
}

fn sweep(
    ctx: &Ctx,
    plant: &OpticalLinePlant,
    params: &Path,
    baseline: Option<&Path>,
    range: SweepRange,
    out: &Path,
) -> Result<()> {
    let noise = ctx.noise(plant);
    let params = with_transceivers(read_json(params)?, plant);
    let baseline = match baseline {
        Some(p) => with_transceivers(read_json(p)?, plant),
        None => {
            let totals = span_loss_report(plant, &plant.nominal_settings(), &noise, ctx.seed.wrapping_add(2))?;
            let mut b = olstwin::calib::build_baseline(&plant.line, &totals)?;
            b.transceivers = params.transceivers.clone();
            b
        }
    };
    let report = sweep_report(ctx, plant, &params, &baseline, range, &noise)?;
    write_file(out, report.to_csv())?;
    ctx.emit(json!({ "out": out, "rows": report.points.len(), "booster_id": report.booster_id }), || {
        format!("wrote {} ({} rows, booster {})\n", out.display(), report.points.len(), report.booster_id)
    });
    Ok(())
}

fn stats_table(c: &SweepStats, b: &SweepStats) -> String {
    let mut s =
        format!("{:<11} {:>10} {:>10} {:>10} {:>10}\n", "model", "|dP| dB", "|dOSNR| dB", "|dQ| dB", "std dQ dB");
    for (name, m) in [("calibrated", c), ("baseline", b)] {
        s += &format!(
            "{:<11} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            name, m.mean_abs_p_sig_error_db, m.mean_abs_osnr_error_db, m.mean_abs_q_error_db, m.q_error_std_db
        );
    }
    s
}

/// Both models against the noiseless plant, so the errors are model
/// errors only.
fn compare(ctx: &Ctx, plant: &OpticalLinePlant, calibrated: &Path, baseline: &Path, range: SweepRange) -> Result<()> {
    let c = with_transceivers(read_json(calibrated)?, plant);
    let b = with_transceivers(read_json(baseline)?, plant);
    let report = sweep_report(ctx, plant, &c, &b, range, &NoiseSpec::zero())?;
    let (sc, sb) = (report.stats(true), report.stats(false));
    ctx.emit(json!({ "points": report.points.len(), "calibrated": sc, "baseline": sb }), || stats_table(&sc, &sb));
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let ctx = Ctx { json: cli.json, seed: cli.seed, noiseless: cli.noiseless };
    match cli.cmd {
        Command::Simulate { plant, settings, out } => simulate(&ctx, &load_plant(&plant)?, settings.as_deref(), &out)?,
        Command::Dlm { plant, out } => dlm(&ctx, &load_plant(&plant)?, &out)?,
        Command::Calibrate {
            plant,
            records,
            design,
            dataset1,
            lm_iterations,
            polish_evaluations,
            out,
            params_out,
            baseline_out,
        } => calibrate(
            &ctx,
            &load_plant(&plant)?,
            CalibrateArgs {
                records,
                design,
                dataset1: dataset1.as_deref(),
                lm_iterations,
                polish_evaluations,
                out: &out,
                params_out: params_out.as_deref(),
                baseline_out: baseline_out.as_deref(),
            },
        )?,
        Command::Provision { plant, auto_approve, serve, config, out, run_id } => {
            return provision(
                &ctx,
                load_plant(&plant)?,
                ProvisionArgs { auto_approve, serve, config: config.as_deref(), out: &out, run_id: &run_id },
            )
        }
        Command::Sweep { plant, params, baseline, range, out } => {
            sweep(&ctx, &load_plant(&plant)?, &params, baseline.as_deref(), range.range()?, &out)?
        }
        Command::Compare { plant, calibrated, baseline, range } => {
            compare(&ctx, &load_plant(&plant)?, &calibrated, &baseline, range.range()?)?
        }
        Command::Serve => serve()?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let json = std::env::args().any(|a| a == "--json");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if json && e.use_stderr() => {
            eprintln!("{}", json!({ "error": e.kind().to_string(), "message": e.to_string() }));
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            if json {
                let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
                eprintln!("{}", json!({ "error": e.to_string(), "causes": chain }));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}
