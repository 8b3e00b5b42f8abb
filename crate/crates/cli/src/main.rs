//! `srlab`: one executable for the whole workflow — synthesize or prepare
//! data, pretrain a teacher, cache its centroids, train under any
//! objective, and run the evaluation/probe/spectrum/oracle diagnostics.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod config;
mod stage;
mod tools;
mod training;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "srlab",
    version,
    about = "Desk-scale super-resolution training laboratory"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a toy HR image corpus (gradients, waves, hard edges)
    GenData(tools::GenDataArgs),
    /// Crop HR images modulo scale, write bicubic LR pairs + manifest
    PrepareData(tools::PrepareDataArgs),
    /// Train the teacher with the vanilla objective
    Pretrain(training::PretrainArgs),
    /// Cache the teacher's full-image outputs as empirical centroids
    GenCentroids(training::GenCentroidsArgs),
    /// Train under vanilla | kd | eco | residual
    Train(training::TrainArgs),
    /// Score a checkpoint (PSNR/SSIM on luminance, border cropped)
    Eval(tools::EvalArgs),
    /// Loss/gradient behavior along the descent ray at a checkpoint
    Probe(tools::ProbeArgs),
    /// Spectrum of the loss-gradient plane for one item
    Spectrum(tools::SpectrumArgs),
    /// Repeat a run across batch sizes and seeds
    SweepBatch(training::SweepBatchArgs),
    /// PNG strip of blended targets across alphas
    TargetDump(tools::TargetDumpArgs),
    /// Verify the bound and convergence claims on an exact posterior
    OracleCheck(tools::OracleCheckArgs),
    /// Standalone bicubic resampler
    Resize(tools::ResizeArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::GenData(a) => tools::gen_data(&a),
        Cmd::PrepareData(a) => tools::prepare_data(&a),
        Cmd::Pretrain(a) => training::pretrain(&a),
        Cmd::GenCentroids(a) => training::gen_centroids(&a),
        Cmd::Train(a) => training::train_cmd(&a),
        Cmd::Eval(a) => tools::eval_cmd(&a),
        Cmd::Probe(a) => tools::probe_cmd(&a),
        Cmd::Spectrum(a) => tools::spectrum_cmd(&a),
        Cmd::SweepBatch(a) => training::sweep_batch(&a),
        Cmd::TargetDump(a) => tools::target_dump(&a),
        Cmd::OracleCheck(a) => tools::oracle_check(&a),
        Cmd::Resize(a) => tools::resize_cmd(&a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive as "errors"; keep their stdout
            // behavior and succeed.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}
