use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, ValueEnum};
use mcle_core::data::load_dataset;
use mcle_core::eval::{write_grid_csv, LearningCurve, QUERY_GRID};
use mcle_core::{
    Dataset, PriorSchedule, PriorSource, RunResult, ScheduleKind, Session, SessionConfig, StrategyConfig,
    StrategyKind,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PriorSourceArg {
    ZeroShot,
    Random,
    None,
}

impl From<PriorSourceArg> for PriorSource {
    fn from(p: PriorSourceArg) -> PriorSource {
        match p {
            PriorSourceArg::ZeroShot => PriorSource::ZeroShot,
            PriorSourceArg::Random => PriorSource::Random,
            PriorSourceArg::None => PriorSource::None,
        }
    }
}

/// Everything a run needs. Flags fill it in; `--config` supplies a JSON
/// copy, and flags given alongside win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub class: Option<String>,
    pub all_unknown: Option<bool>,
    pub strategy: Option<String>,
    pub prior: Option<String>,
    pub prior_source: Option<PriorSourceArg>,
    pub rho_prime: Option<f64>,
    pub burn_in: Option<u32>,
    pub drop_after: Option<u32>,
    pub t0: Option<u32>,
    pub budget: Option<usize>,
    pub max_iters: Option<u32>,
    pub c: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Fields set in `self` win over `base`.
    pub fn over(self, base: RunConfig) -> RunConfig {
        RunConfig {
            data_dir: self.data_dir.or(base.data_dir),
            class: self.class.or(base.class),
            all_unknown: self.all_unknown.or(base.all_unknown),
            strategy: self.strategy.or(base.strategy),
            prior: self.prior.or(base.prior),
            prior_source: self.prior_source.or(base.prior_source),
            rho_prime: self.rho_prime.or(base.rho_prime),
            burn_in: self.burn_in.or(base.burn_in),
            drop_after: self.drop_after.or(base.drop_after),
            t0: self.t0.or(base.t0),
            budget: self.budget.or(base.budget),
            max_iters: self.max_iters.or(base.max_iters),
            c: self.c.or(base.c),
            seed: self.seed.or(base.seed),
            out: self.out.or(base.out),
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data_dir
            .as_deref()
            .ok_or_else(|| CliError::Usage("--data is required".into()))
    }

    /// The session config for `class`; checked before any data is loaded.
    pub fn session_config(&self, class: &str) -> Result<SessionConfig> {
        let kind: StrategyKind = self
            .strategy
            .as_deref()
            .unwrap_or("mcle")
            .parse()
            .map_err(|e: mcle_core::sampler::SamplerError| CliError::Usage(e.to_string()))?;
        let schedule: ScheduleKind = self
            .prior
            .as_deref()
            .unwrap_or("constant")
            .parse()
            .map_err(|e: mcle_core::prior::PriorError| CliError::Usage(e.to_string()))?;
        let mut strategy = StrategyConfig::new(kind);
        if let Some(v) = self.rho_prime {
            strategy.rho_prime = v;
        }
        if let Some(v) = self.burn_in {
            strategy.burn_in = v;
        }
        let mut schedule = PriorSchedule::new(schedule);
        if let Some(v) = self.drop_after {
            schedule.drop_after = v;
        }
        if let Some(v) = self.t0 {
            schedule.t0 = v;
        }
        let mut config = SessionConfig::new(class, strategy, schedule);
        if let Some(v) = self.budget {
            config.budget = v;
        }
        if let Some(v) = self.max_iters {
            config.max_iters = v;
        }
        if let Some(v) = self.c {
            config.solver.c = v;
        }
        if let Some(v) = self.prior_source {
            config.prior_source = v.into();
        }
        config.seed = self.seed.unwrap_or(0);
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

/// Session knobs shared by `run` and `sweep`.
#[derive(Args, Debug, Default)]
pub struct SessionFlags {
    /// Prior schedule: vanilla, constant, inverse_decay or linear_decay.
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long, value_enum)]
    pub prior_source: Option<PriorSourceArg>,
    #[arg(long)]
    pub rho_prime: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<u32>,
    /// Iteration from which the prior is dropped; 0 never drops it.
    #[arg(long)]
    pub drop_after: Option<u32>,
    /// Decay constant of the decaying schedules.
    #[arg(long)]
    pub t0: Option<u32>,
    /// Queries per iteration.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub iters: Option<u32>,
    /// SVM box constraint.
    #[arg(long)]
    pub c: Option<f64>,
}

impl SessionFlags {
    pub fn into_config(self) -> RunConfig {
        RunConfig {
            prior: self.prior,
            prior_source: self.prior_source,
            rho_prime: self.rho_prime,
            burn_in: self.burn_in,
            drop_after: self.drop_after,
            t0: self.t0,
            budget: self.budget,
            max_iters: self.iters,
            c: self.c,
            ..RunConfig::default()
        }
    }
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, conflicts_with = "all_unknown")]
    class: Option<String>,
    /// Run every class that has a prior and ground truth; `--out` is then
    /// a directory.
    #[arg(long)]
    all_unknown: bool,
    /// mcle, fplus, fzero, fminus or random.
    #[arg(long)]
    strategy: Option<String>,
    #[command(flatten)]
    session: SessionFlags,
    #[arg(long)]
    seed: Option<u64>,
    /// Run log JSON; the curve CSV and model snapshot are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// A JSON run config; flags given alongside override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let flags = RunConfig {
            data_dir: self.data,
            class: self.class,
            all_unknown: self.all_unknown.then_some(true),
            strategy: self.strategy,
            seed: self.seed,
            out: self.out,
            ..self.session.into_config()
        };
        Ok(match &self.config {
            Some(path) => flags.over(RunConfig::load(path)?),
            None => flags,
        })
    }
}

/// Classes with a relation row and ground truth, in label order.
pub fn unknown_classes(data: &Dataset) -> Vec<String> {
    data.labels
        .class_names()
        .iter()
        .filter(|c| data.relations.row_for(c).is_some())
        .cloned()
        .collect()
}

pub fn run_one(data: Arc<Dataset>, config: SessionConfig) -> Result<Session> {
    let mut session = Session::new(format!("run-{}", config.class_name), data, config)?;
    session.run_to_completion()?;
    Ok(session)
}

fn write_curve_csv(path: &Path, curve: &LearningCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "test_ap"])?;
    for (t, ap) in curve.iterations.iter().zip(&curve.ap_values) {
        let ap = ap.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([t.to_string(), ap])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `<out>`, `<out>.csv` and `<out>.almd` for one finished session.
fn write_outputs(session: &Session, out: &Path) -> Result<RunResult> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let model_path = out.with_extension("almd");
    session.model().snapshot().save(&model_path)?;
    let result = session.run_result(Some(model_path.display().to_string()));
    let json = serde_json::to_vec_pretty(&result).map_err(|e| CliError::json(out, e))?;
    fs::write(out, json).map_err(|e| CliError::io(out, e))?;
    write_curve_csv(&out.with_extension("csv"), &result.learning_curve())?;
    Ok(result)
}

fn summary_line(result: &RunResult) -> String {
    let last = result.iterations.last().expect("t=0 is always logged");
    let ap = last.test_ap.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
    format!(
        "{} {}: {} iterations, final test AP {ap}, rho {:.3}",
        result.config.class_name,
        result.config.strategy.kind,
        last.t,
        last.rho
    )
}

pub fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = args.into_config()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let all = cfg.all_unknown.unwrap_or(false);
    if all == cfg.class.is_some() {
        return Err(CliError::Usage("give exactly one of --class and --all-unknown".into()));
    }
    // flag errors surface before the bundle is read
    cfg.session_config(cfg.class.as_deref().unwrap_or(""))?;
    let data = Arc::new(load_dataset(cfg.data_dir()?)?);

    if let Some(class) = &cfg.class {
        let session = run_one(data, cfg.session_config(class)?)?;
        let result = write_outputs(&session, &out)?;
        println!("{}", summary_line(&result));
        return Ok(());
    }

    let classes = unknown_classes(&data);
    if classes.is_empty() {
        return Err(CliError::Usage("the bundle has no class with both a prior and labels".into()));
    }
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut curves = Vec::new();
    for class in &classes {
        let session = run_one(data.clone(), cfg.session_config(class)?)?;
        let result = write_outputs(&session, &out.join(format!("{class}.json")))?;
        println!("{}", summary_line(&result));
        curves.push(result.learning_curve());
    }
    let grid_path = out.join("mean_ap.csv");
    let file = fs::File::create(&grid_path).map_err(|e| CliError::io(&grid_path, e))?;
    write_grid_csv(std::io::BufWriter::new(file), &curves, &QUERY_GRID)?;
    Ok(())
}
