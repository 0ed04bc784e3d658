use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use golf::io::{
    read_params, read_wav, trace_rows, write_loss_csv, write_offsets, write_params, OffsetFile,
    TraceRow,
};
use golf::opt::{
    fit_params, fit_phase_offset, AdamConfig, FitOptions, LossWeights, OffsetInit, PhaseFitOptions,
};
use golf::synth::{RenderOptions, SynthParams};
use golf::{Error, Exec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{check_input, check_output, load_tables, usage_error};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// All continuous synthesis parameters against MSSTFT (+ optional L2).
    Params,
    /// Only the phase-offset track against waveform L2.
    Phase,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OffsetStart {
    Zero,
    Random,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("start").required(true).args(["init", "init_random"]))]
pub struct FitArgs {
    /// Target recording (mono WAV).
    #[arg(long)]
    target: PathBuf,
    /// Initial parameter file.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Start from seeded random parameters (params mode only).
    #[arg(long)]
    init_random: bool,
    #[arg(long)]
    tables: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Params)]
    mode: Mode,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Seed for the noise branch and random initialisation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial phase offsets in phase mode.
    #[arg(long, value_enum, default_value_t = OffsetStart::Random)]
    offset_init: OffsetStart,
    /// Weight of the MSSTFT term in params mode.
    #[arg(long, default_value_t = 1.0)]
    msstft_weight: f64,
    /// Weight of the waveform L2 term in params mode.
    #[arg(long, default_value_t = 0.0)]
    l2_weight: f64,
    /// Fitted parameters (params mode) or offsets (phase mode), as JSON.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV; defaults to the output path with a `.csv` extension.
    #[arg(long)]
    trace: Option<PathBuf>,
}

pub fn run(args: FitArgs, exec: Exec) -> Result<()> {
    if args.restarts == 0 {
        usage_error("--restarts must be at least 1");
    }
    if !(args.lr > 0.0) {
        usage_error("--lr must be positive");
    }
    if args.mode == Mode::Phase && args.init_random {
        usage_error("--mode phase needs --init with the parameters to align");
    }
    check_input(&args.target)?;
    if let Some(p) = &args.init {
        check_input(p)?;
    }
    let trace_path = args
        .trace
        .clone()
        .unwrap_or_else(|| args.out.with_extension("csv"));
    check_output(&args.out)?;
    check_output(&trace_path)?;
    let tables = load_tables(&args.tables)?;
    let (target, sample_rate) =
        read_wav(&args.target).with_context(|| format!("reading {}", args.target.display()))?;
    if target.iter().any(|x| !x.is_finite()) {
        bail!(
            "target {} contains non-finite samples",
            args.target.display()
        );
    }

    let (init, table_ref) = match &args.init {
        Some(path) => {
            let (p, r) =
                read_params(path).with_context(|| format!("reading {}", path.display()))?;
            if p.sample_rate != sample_rate {
                bail!(
                    "sample rate mismatch: {} is {sample_rate} Hz but {} is {} Hz",
                    args.target.display(),
                    path.display(),
                    p.sample_rate
                );
            }
            (p, r)
        }
        None => (random_params(target.len(), sample_rate, args.seed), None),
    };
    let target = fit_length(target, init.samples());
    let cfg = AdamConfig {
        learning_rate: args.lr,
        steps: args.steps,
        ..AdamConfig::default()
    };
    let render = RenderOptions {
        exec,
        ..RenderOptions::default()
    };

    let (rows, summary) = match args.mode {
        Mode::Phase => {
            let options = PhaseFitOptions {
                restarts: args.restarts,
                init: match args.offset_init {
                    OffsetStart::Zero => OffsetInit::Zero,
                    OffsetStart::Random => OffsetInit::Random,
                },
                render,
            };
            let fit = fit_phase_offset(&init, &tables, &target, &cfg, args.seed, &options)
                .map_err(|e| save_partial(e, &trace_path))?;
            let best = fit.best();
            write_offsets(
                &args.out,
                &OffsetFile {
                    rate: render.offset_rate,
                    values: best.offsets.clone(),
                },
            )
            .with_context(|| format!("writing {}", args.out.display()))?;
            let finals: Vec<f64> = fit.runs.iter().map(|r| r.final_loss).collect();
            (trace_rows(&best.trace), finals)
        }
        Mode::Params => {
            let weights = LossWeights {
                msstft: args.msstft_weight,
                l2: args.l2_weight,
                ..LossWeights::default()
            };
            let options = FitOptions {
                render,
                ..FitOptions::default()
            };
            let runs: Vec<golf::Result<_>> = (0..args.restarts)
                .into_par_iter()
                .map(|r| {
                    let seed = args.seed.wrapping_add(r as u64);
                    let start = if args.init_random && r > 0 {
                        random_params(init.samples(), sample_rate, seed)
                    } else {
                        init.clone()
                    };
                    fit_params(&target, &start, &tables, &weights, &cfg, seed, &options)
                })
                .collect();
            let runs = runs
                .into_iter()
                .collect::<golf::Result<Vec<_>>>()
                .map_err(|e| save_partial(e, &trace_path))?;
            let finals: Vec<f64> = runs.iter().map(|r| r.loss).collect();
            let best = (0..runs.len())
                .min_by(|&a, &b| finals[a].total_cmp(&finals[b]))
                .unwrap();
            write_params(&args.out, &runs[best].params, table_ref)
                .with_context(|| format!("writing {}", args.out.display()))?;
            (trace_rows(&runs[best].trace), finals)
        }
    };

    let min = summary.iter().copied().fold(f64::INFINITY, f64::min);
    let max = summary.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut rows = rows;
    if summary.len() > 1 {
        rows.push(TraceRow::Summary("final_min", min));
        rows.push(TraceRow::Summary("final_max", max));
    }
    write_loss_csv(&trace_path, &rows)
        .with_context(|| format!("writing {}", trace_path.display()))?;
    println!("wrote {} and {}", args.out.display(), trace_path.display());
    if summary.len() > 1 {
        println!(
            "final loss over {} restarts: min {min:.6e} max {max:.6e}",
            summary.len()
        );
    } else {
        println!("final loss {min:.6e}");
    }
    Ok(())
}

/// On a non-finite loss, keep the partial trace next to the intended output.
fn save_partial(e: Error, trace_path: &Path) -> anyhow::Error {
    if let Error::NonFiniteLoss { trace, .. } = &e {
        let path = trace_path.with_extension("partial.csv");
        if write_loss_csv(&path, &trace_rows(trace)).is_ok() {
            return anyhow::Error::new(e)
                .context(format!("fit aborted; partial trace in {}", path.display()));
        }
    }
    anyhow::Error::new(e).context("fit failed")
}

/// Zero-pad or truncate the target to the frame grid.
fn fit_length(mut target: Vec<f64>, len: usize) -> Vec<f64> {
    if target.len() != len {
        log::warn!(
            "target has {} samples, fitting the first {len} (zero-padded)",
            target.len()
        );
        target.resize(len, 0.0);
    }
    target
}

/// Voiced constant starting point with a random f0 and one mildly resonant
/// random filter per branch shared by all frames.
fn random_params(samples: usize, sample_rate: u32, seed: u64) -> SynthParams {
    let frames = samples.div_ceil(golf::HOP).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0: f64 = rng.random_range(100.0..250.0);
    let mut p = SynthParams::constant(frames, f0 / sample_rate as f64, 0.5, 0.05, golf::LPC_ORDER);
    p.sample_rate = sample_rate;
    for bank in [&mut p.harmonic, &mut p.noise] {
        let pairs: Vec<[f64; 2]> = (0..golf::LPC_ORDER / 2)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect();
        bank.iter_mut().for_each(|frame| frame.clone_from(&pairs));
    }
    p
}
