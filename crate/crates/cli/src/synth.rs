use std::path::PathBuf;

use clap::Args;
use mcle_core::data::{generate_synthetic, save_dataset, SynthConfig};

use crate::error::Result;

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Std-dev of the noise added to each class direction to form its
    /// source classifier.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true, value_parser = non_negative)]
    prior_noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite non-negative number, got {s}"))
    }
}

pub fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_classes: args.classes,
        n_per_class: args.per_class,
        dim: args.dim,
        prior_noise: args.prior_noise,
        seed: args.seed,
    };
    let data = generate_synthetic(&cfg)?;
    save_dataset(&args.out, &data)?;
    println!(
        "wrote {}: {} samples ({} train, {} test), {} classes, dim {}",
        args.out.display(),
        data.pool.n_samples(),
        data.pool.train_indices().len(),
        data.pool.test_indices().len(),
        data.labels.n_classes(),
        data.pool.dim(),
    );
    Ok(())
}
