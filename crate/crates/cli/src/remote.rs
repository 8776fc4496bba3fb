use clap::{Args, Subcommand};
use mcle_client::{Client, CreateRequest};
use mcle_core::Label;
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Args)]
pub struct SessionArgs {
    /// Service root.
    #[arg(long, env = "MCLE_URL", default_value = "http://127.0.0.1:8080", global = true)]
    url: String,
    #[command(subcommand)]
    command: SessionCommand,
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Service liveness.
    Health,
    /// Classes, strategies and schedules the service offers.
    Meta,
    /// Start a session.
    Create {
        #[arg(long)]
        class: String,
        #[arg(long, default_value = "mcle")]
        strategy: String,
        #[arg(long, default_value = "constant")]
        prior: String,
        #[arg(long)]
        rho_prime: Option<f64>,
        #[arg(long)]
        burn_in: Option<u32>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        iters: Option<u32>,
        #[arg(long)]
        drop_after: Option<u32>,
        #[arg(long)]
        t0: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        c: Option<f64>,
    },
    /// The sample awaiting a label.
    Query { id: String },
    /// Answer the pending query with +1 or -1.
    Label {
        id: String,
        sample_id: usize,
        #[arg(allow_negative_numbers = true, value_parser = parse_label)]
        label: Label,
    },
    /// Curve, query log and sampler diagnostics.
    State { id: String },
}

fn parse_label(s: &str) -> Result<Label, String> {
    match s {
        "1" | "+1" | "pos" => Ok(Label::Positive),
        "-1" | "neg" => Ok(Label::Negative),
        _ => Err(format!("expected +1 or -1, got {s:?}")),
    }
}

fn print(v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::json("response", e))?;
    println!("{text}");
    Ok(())
}

pub fn cmd_session(args: SessionArgs) -> Result<()> {
    let client = Client::new(args.url);
    crate::runtime()?.block_on(async move {
        match args.command {
            SessionCommand::Health => {
                client.health().await?;
                println!("ok");
                Ok(())
            }
            SessionCommand::Meta => print(&client.meta().await?),
            SessionCommand::Create {
                class,
                strategy,
                prior,
                rho_prime,
                burn_in,
                budget,
                iters,
                drop_after,
                t0,
                seed,
                c,
            } => {
                let req = CreateRequest {
                    class,
                    strategy,
                    prior,
                    rho_prime,
                    burn_in,
                    budget,
                    max_iters: iters,
                    drop_after,
                    t0,
                    seed,
                    c,
                };
                print(&client.create_session(&req).await?)
            }
            SessionCommand::Query { id } => print(&client.query(&id).await?),
            SessionCommand::Label { id, sample_id, label } => print(&client.label(&id, sample_id, label).await?),
            SessionCommand::State { id } => print(&client.state(&id).await?),
        }
    })
}
