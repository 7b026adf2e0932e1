//! `loadrank` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use loadrank::controller::{rank_alternatives, run_event, ControllerConfig, ControllerModels, CurtailmentEvent};
use loadrank::domain::{Building, CriteriaConfig, Timestamp};
use loadrank::emulator::{snapshots_to_traces, write_snapshots_csv, Emulator, EmulatorConfig};
use loadrank::mcdm::rank;
use loadrank::occupancy::{write_traces_csv, DEFAULT_INTERVAL_S};
use loadrank::scoring::ScoreDistribution;
use loadrank::training::{fit_models, generate_training_log, occupancy_fit_options};
use loadrank::chiller::ChillerFitOptions;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::api::router;
use crate::session::{models_from_csv, RankingView, Session, SessionConfig};

#[derive(Parser, Debug)]
#[command(name = "loadrank", version, about = "Occupancy-aware load curtailment controller")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the emulator with set-point excitation and write training CSVs.
    GenerateData(GenerateArgs),
    /// Fit chiller and occupancy models from a snapshot CSV.
    Fit(FitArgs),
    /// Rank alternatives once and print the result as JSON.
    Rank(RankArgs),
    /// Run one curtailment event headless and write its report.
    RunEvent(RunEventArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Building JSON. Defaults to the built-in one-floor office.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Emulator scenario JSON (thermal parameters, weather, seeds).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct CriteriaArgs {
    /// Comfort and curtailment weights, e.g. `0.6,0.4`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub nu: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 28)]
    pub days: u32,
    /// Output directory for history.csv and occupancy.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Snapshot CSV as written by generate-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Models JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub criteria: CriteriaArgs,
    /// Models JSON, required when --config is a building.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Simulation time to rank at (seconds or ISO-8601).
    #[arg(long, default_value = "36000")]
    pub at: String,
    #[arg(long)]
    pub horizon_min: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunEventArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub criteria: CriteriaArgs,
    /// Models JSON; trained on a fresh emulator run when absent.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long, default_value_t = 28)]
    pub train_days: u32,
    #[arg(long, default_value_t = 7)]
    pub train_seed: u64,
    /// Required reduction in W, or `unlimited`.
    #[arg(long, default_value = "unlimited")]
    pub target: String,
    /// Event window as `HH:MM-HH:MM` on day 0.
    #[arg(long, default_value = "08:00-16:00")]
    pub window: String,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub criteria: CriteriaArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Wall-clock milliseconds per emulator step while running; 0 steps only
    /// on POST /api/simulation/advance.
    #[arg(long, default_value_t = 1000)]
    pub tick_ms: u64,
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Append the measurement log to this NDJSON file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        if e.use_stderr() {
            anyhow!("{e}")
        } else {
            print!("{e}");
            std::process::exit(0)
        }
    })?;
    match cli.command {
        Command::GenerateData(a) => generate_data(a),
        Command::Fit(a) => fit(a),
        Command::Rank(a) => rank_cmd(a),
        Command::RunEvent(a) => run_event_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_building(path: Option<&Path>) -> Result<Building> {
    match path {
        Some(p) => Building::from_json(&read_text(p)?).with_context(|| format!("building {}", p.display())),
        None => Ok(Building::office(1)),
    }
}

fn load_scenario(common: &CommonArgs, default: EmulatorConfig) -> Result<EmulatorConfig> {
    let mut cfg = match &common.scenario {
        Some(p) => EmulatorConfig::from_json(&read_text(p)?).with_context(|| format!("scenario {}", p.display()))?,
        None => default,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_models(path: &Path, building: &Building) -> Result<ControllerModels> {
    let models: ControllerModels =
        serde_json::from_str(&read_text(path)?).with_context(|| format!("models {}", path.display()))?;
    models.check(building)?;
    Ok(models)
}

fn criteria(args: &CriteriaArgs) -> Result<CriteriaConfig> {
    let mut c = CriteriaConfig::default();
    if let Some(w) = &args.weights {
        c.weights = w.clone();
    }
    if let Some(nu) = args.nu {
        c.threshold = nu;
    }
    c.validate()?;
    Ok(c)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn generate_data(a: GenerateArgs) -> Result<()> {
    if a.days == 0 {
        bail!("--days must be at least 1");
    }
    let building = load_building(a.common.config.as_deref())?;
    let cfg = load_scenario(
        &a.common,
        EmulatorConfig {
            dt_s: DEFAULT_INTERVAL_S,
            ..EmulatorConfig::default()
        },
    )?;
    let excitation = cfg.seed.wrapping_add(1);
    let mut emu = Emulator::new(building, cfg)?;
    let log = generate_training_log(&mut emu, a.days, excitation)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let history = a.out.join("history.csv");
    write_snapshots_csv(fs::File::create(&history)?, &log)?;
    let occupancy = a.out.join("occupancy.csv");
    write_traces_csv(fs::File::create(&occupancy)?, &snapshots_to_traces(&log, DEFAULT_INTERVAL_S)?)?;
    eprintln!("wrote {} rows to {} and {}", log.len(), history.display(), occupancy.display());
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let building = load_building(a.config.as_deref())?;
    let models = models_from_csv(&building, &read_text(&a.data)?)?;
    write_output(a.out.as_deref(), &serde_json::to_string_pretty(&models)?)
}

/// Ranking input given directly as score distributions.
#[derive(Debug, Deserialize)]
struct ExplicitInstance {
    #[serde(default)]
    criteria: Option<Vec<String>>,
    alternatives: Vec<ExplicitAlternative>,
}

#[derive(Debug, Deserialize)]
struct ExplicitAlternative {
    name: String,
    scores: Vec<ScoreInput>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScoreInput {
    Value(f64),
    Distribution(ScoreDistribution),
}

#[derive(Debug, Serialize)]
struct ExplicitRanking {
    order: Vec<String>,
    fitness: Vec<f64>,
    ranking: loadrank::mcdm::RankingResult,
}

fn rank_cmd(a: RankArgs) -> Result<()> {
    let mut config = criteria(&a.criteria)?;
    let path = a.common.config.as_deref();
    let doc: Option<Value> = match path {
        Some(p) => Some(serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    if let Some(doc) = doc.as_ref().filter(|d| d.get("alternatives").is_some()) {
        let inst: ExplicitInstance = serde_json::from_value(doc.clone()).context("ranking instance")?;
        if let Some(names) = inst.criteria {
            config.criteria = names;
            config.validate()?;
        }
        let scores = inst
            .alternatives
            .iter()
            .map(|alt| {
                alt.scores
                    .iter()
                    .map(|s| match s {
                        ScoreInput::Value(v) => ScoreDistribution::atom(*v).map_err(anyhow::Error::from),
                        ScoreInput::Distribution(d) => Ok(d.clone()),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let result = rank(&scores, &config)?;
        let out = ExplicitRanking {
            order: result.order.iter().map(|&i| inst.alternatives[i].name.clone()).collect(),
            fitness: result.order.iter().map(|&i| result.fitness[i]).collect(),
            ranking: result,
        };
        return write_output(a.out.as_deref(), &serde_json::to_string_pretty(&out)?);
    }
    let building = load_building(path)?;
    let models_path = a.models.as_deref().ok_or_else(|| anyhow!("--models is required to rank a building"))?;
    let models = load_models(models_path, &building)?;
    let at = Timestamp::parse(&a.at).ok_or_else(|| anyhow!("bad --at time '{}'", a.at))?;
    let mut emu = Emulator::new(building.clone(), load_scenario(&a.common, EmulatorConfig::default())?)?;
    emu.run_until(at)?;
    let controller = ControllerConfig::default();
    let horizon = a.horizon_min.unwrap_or(controller.forecast_horizon_min);
    let ranked = rank_alternatives(&building, emu.snapshot(), &models, &config, horizon, controller.alpha2)?;
    write_output(a.out.as_deref(), &serde_json::to_string_pretty(&RankingView::new(&ranked, horizon))?)
}

fn parse_window(text: &str) -> Result<(Timestamp, Timestamp)> {
    let (s, e) = text
        .split_once('-')
        .ok_or_else(|| anyhow!("window '{text}' is not HH:MM-HH:MM"))?;
    let hm = |t: &str| -> Result<Timestamp> {
        let (h, m) = t.trim().split_once(':').ok_or_else(|| anyhow!("bad time '{t}'"))?;
        let h: i64 = h.parse().with_context(|| format!("bad hour in '{t}'"))?;
        let m: i64 = m.parse().with_context(|| format!("bad minute in '{t}'"))?;
        if !(0..=24).contains(&h) || !(0..60).contains(&m) {
            bail!("time '{t}' out of range");
        }
        Ok(Timestamp::from_day_minute(0, h * 60 + m))
    };
    Ok((hm(s)?, hm(e)?))
}

fn parse_target(text: &str) -> Result<Option<f64>> {
    if text.eq_ignore_ascii_case("unlimited") {
        return Ok(None);
    }
    let w: f64 = text.parse().with_context(|| format!("bad --target '{text}'"))?;
    Ok(Some(w))
}

fn run_event_cmd(a: RunEventArgs) -> Result<()> {
    let building = load_building(a.common.config.as_deref())?;
    let (start, end) = parse_window(&a.window)?;
    let event = CurtailmentEvent {
        start,
        end,
        target_reduction_w: parse_target(&a.target)?,
        criteria: None,
    };
    event.validate()?;
    let controller = ControllerConfig {
        criteria: criteria(&a.criteria)?,
        ..ControllerConfig::default()
    };
    let models = match &a.models {
        Some(p) => load_models(p, &building)?,
        None => {
            let mut trainer = Emulator::new(
                building.clone(),
                EmulatorConfig {
                    seed: a.train_seed,
                    dt_s: DEFAULT_INTERVAL_S,
                    ..EmulatorConfig::default()
                },
            )?;
            let log = generate_training_log(&mut trainer, a.train_days, a.train_seed.wrapping_add(1))?;
            fit_models(&building, &log, &ChillerFitOptions::default(), &occupancy_fit_options())?
        }
    };
    let scenario = load_scenario(
        &a.common,
        EmulatorConfig {
            seed: 2024,
            start: Timestamp::from_hours(7.0).min(start),
            ..EmulatorConfig::default()
        },
    )?;
    let mut emu = Emulator::new(building, scenario)?;
    let report = run_event(&event, &mut emu, &models, &controller)?;
    write_output(a.out.as_deref(), &report.to_json())
}

fn serve(a: ServeArgs) -> Result<()> {
    let building = load_building(a.common.config.as_deref())?;
    let mut config = SessionConfig::new(building.clone());
    config.emulator = load_scenario(&a.common, EmulatorConfig::default())?;
    config.controller.criteria = criteria(&a.criteria)?;
    config.log_path = a.log.clone();
    let mut session = Session::new(config)?;
    if let Some(p) = &a.models {
        session.set_models(load_models(p, &building)?)?;
    }
    let shared = Arc::new(Mutex::new(session));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        if a.tick_ms > 0 {
            let ticker = shared.clone();
            let period = Duration::from_millis(a.tick_ms);
            tokio::spawn(async move {
                let mut interval = tokio::time::interval(period);
                loop {
                    interval.tick().await;
                    let mut s = ticker.lock().unwrap_or_else(|p| p.into_inner());
                    if s.is_running() {
                        if let Err(e) = s.advance(1) {
                            eprintln!("step failed: {e}");
                        }
                    }
                }
            });
        }
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(shared))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
