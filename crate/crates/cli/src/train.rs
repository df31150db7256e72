use std::path::PathBuf;

use anyhow::Result;
use clap::Subcommand;
use vlkit_core::model::{run_demo, save_checkpoint, DemoConfig};

use crate::io::{Outputs, Report};
use crate::Ctx;

#[derive(Debug, Subcommand)]
pub enum TrainCmd {
    /// Train the toy model on its fixed synthetic batch under VLUAS plus NTP-M.
    Demo {
        #[arg(long, default_value_t = DemoConfig::default().steps)]
        steps: usize,
        #[arg(long, default_value_t = DemoConfig::default().lr)]
        lr: f64,
        /// Image-position weight of the VLUAS loss.
        #[arg(long, default_value_t = DemoConfig::default().lambda)]
        lambda: f64,
        #[arg(long, default_value_t = DemoConfig::default().ntp_weight)]
        ntp_weight: f64,
        /// Hard negatives per position for NTP-M.
        #[arg(long, default_value_t = DemoConfig::default().k)]
        k: usize,
        #[arg(long, default_value_t = DemoConfig::default().batch)]
        batch: usize,
        /// Steps averaged at each end for the smoothed loss.
        #[arg(long, default_value_t = DemoConfig::default().window)]
        window: usize,
        /// Write the trained weights here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the per-step losses here, one per line.
        #[arg(long)]
        losses: Option<PathBuf>,
    },
}

pub fn run(ctx: &Ctx, cmd: TrainCmd) -> Result<Outputs> {
    let TrainCmd::Demo { steps, lr, lambda, ntp_weight, k, batch, window, checkpoint, losses } = cmd;
    let cfg = DemoConfig { seed: ctx.seed, steps, batch, lr, lambda, ntp_weight, k, window };
    let (model, report) = run_demo(&cfg)?;
    let mut out = Outputs::new();
    if let Some(path) = &checkpoint {
        let mut bytes = Vec::new();
        save_checkpoint(&model, &mut bytes)?;
        out.add(Some(path), bytes);
    }
    if let Some(path) = &losses {
        let text: String = report.losses.iter().map(|l| format!("{l:?}\n")).collect();
        out.add(Some(path), text);
    }
    let mut r = Report::new();
    r.put("seed", ctx.seed)
        .put("steps", steps)
        .put("parameters", model.num_params())
        .float("smoothed_start", report.smoothed_start)
        .float("smoothed_end", report.smoothed_end)
        .float("reduction", report.reduction)
        .maybe_float("final_loss", report.losses.last().copied());
    out.print(r.render(ctx.format));
    Ok(out)
}
