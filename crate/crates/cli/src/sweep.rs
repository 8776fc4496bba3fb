use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use mcle_core::data::load_dataset;
use mcle_core::eval::{mean_ap, LearningCurve, QUERY_GRID};
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::run::{run_one, unknown_classes, RunConfig, SessionFlags};

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', default_value = "mcle,random,fplus,fzero")]
    strategies: Vec<String>,
    /// Comma-separated classes; defaults to every class with a prior.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    /// A count `N` (seeds 0..N), a range `a..b` or a list `1,4,9`.
    #[arg(long, default_value = "10")]
    seeds: String,
    #[command(flatten)]
    session: SessionFlags,
    /// Output directory for `curves.csv` and `summary.csv`.
    #[arg(long)]
    out: PathBuf,
    /// A JSON run config used as the base for every run.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Usage(format!("cannot read seeds {spec:?}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else if spec.contains(',') {
        spec.split(',').map(num).collect::<Result<_>>()?
    } else {
        (0..num(spec)?).collect()
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

struct Job {
    strategy: usize,
    class: String,
    seed: u64,
}

struct Finished {
    strategy: usize,
    class: String,
    seed: u64,
    curve: LearningCurve,
}

/// Fraction of (class, seed) pairs where `a`'s AP at `t` is at least `b`'s.
fn win_rate(runs: &[Finished], a: usize, b: usize, t: u32) -> Result<(usize, usize)> {
    let mut wins = 0;
    let mut pairs = 0;
    for ra in runs.iter().filter(|r| r.strategy == a) {
        if let Some(rb) = runs
            .iter()
            .find(|r| r.strategy == b && r.class == ra.class && r.seed == ra.seed)
        {
            pairs += 1;
            if ra.curve.at(t)? >= rb.curve.at(t)? {
                wins += 1;
            }
        }
    }
    Ok((wins, pairs))
}

pub fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let flags = RunConfig {
        data_dir: args.data,
        ..args.session.into_config()
    };
    let base = match &args.config {
        Some(path) => flags.over(RunConfig::load(path)?),
        None => flags,
    };
    let seeds = parse_seeds(&args.seeds)?;
    let strategies = args.strategies;
    for s in &strategies {
        RunConfig {
            strategy: Some(s.clone()),
            ..base.clone()
        }
        .session_config("")?;
    }
    let data = Arc::new(load_dataset(base.data_dir()?)?);
    let classes = if args.classes.is_empty() {
        unknown_classes(&data)
    } else {
        args.classes
    };
    if classes.is_empty() {
        return Err(CliError::Usage("no classes to sweep".into()));
    }

    let mut jobs = Vec::new();
    for (si, _) in strategies.iter().enumerate() {
        for class in &classes {
            for &seed in &seeds {
                jobs.push(Job {
                    strategy: si,
                    class: class.clone(),
                    seed,
                });
            }
        }
    }
    log::info!("sweeping {} runs", jobs.len());
    let mut runs = jobs
        .into_par_iter()
        .map(|job| {
            let cfg = RunConfig {
                strategy: Some(strategies[job.strategy].clone()),
                seed: Some(job.seed),
                ..base.clone()
            };
            let session = run_one(data.clone(), cfg.session_config(&job.class)?)?;
            Ok(Finished {
                strategy: job.strategy,
                class: job.class,
                seed: job.seed,
                curve: session.learning_curve(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| (a.strategy, &a.class, a.seed).cmp(&(b.strategy, &b.class, b.seed)));

    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut curves = csv::Writer::from_path(args.out.join("curves.csv"))?;
    curves.write_record(["strategy", "class", "seed", "t", "test_ap"])?;
    for r in &runs {
        for (t, ap) in r.curve.iterations.iter().zip(&r.curve.ap_values) {
            curves.write_record([
                strategies[r.strategy].clone(),
                r.class.clone(),
                r.seed.to_string(),
                t.to_string(),
                ap.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    curves.flush().map_err(|e| CliError::io(args.out.join("curves.csv"), e))?;

    let summary_path = args.out.join("summary.csv");
    let mut summary = csv::Writer::from_path(&summary_path)?;
    summary.write_record(["kind", "strategy", "t", "value"])?;
    for (si, name) in strategies.iter().enumerate() {
        let set: Vec<LearningCurve> = runs
            .iter()
            .filter(|r| r.strategy == si)
            .map(|r| r.curve.clone())
            .collect();
        let mut line = format!("{name:>8}");
        for &t in &QUERY_GRID {
            let m = mean_ap(&set, t)?;
            summary.write_record(["mean_ap", name, &t.to_string(), &format!("{m:.6}")])?;
            line.push_str(&format!(" {m:.4}"));
        }
        println!("{line}");
    }
    let mcle = strategies.iter().position(|s| s == "mcle");
    let random = strategies.iter().position(|s| s == "random");
    if let (Some(a), Some(b)) = (mcle, random) {
        let (wins, pairs) = win_rate(&runs, a, b, 50)?;
        let rate = wins as f64 / pairs as f64;
        summary.write_record(["win_rate", "mcle>=random", "50", &format!("{rate:.6}")])?;
        println!("mcle >= random at t=50: {wins}/{pairs} = {rate:.3}");
    }
    summary.flush().map_err(|e| CliError::io(&summary_path, e))?;
    println!("{} runs written to {}", runs.len(), args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("5..8").unwrap(), vec![5, 6, 7]);
        assert_eq!(parse_seeds("4,1,9").unwrap(), vec![4, 1, 9]);
        assert!(parse_seeds("0").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
