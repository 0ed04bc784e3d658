use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Args;
use golf::glottal::TableSpec;
use golf::synth::{benchmark_params, RenderOptions, Renderer, StageTimings};
use golf::Exec;
use serde::Serialize;

use crate::{check_output, load_tables, usage_error};

/// Published CPU real-time factor, for comparison in the report.
const PUBLISHED_RTF: f64 = 0.023;

#[derive(Args)]
pub struct BenchArgs {
    /// Wavetable file; the default table is built in memory when omitted.
    #[arg(long)]
    tables: Option<PathBuf>,
    /// Length of the rendered track in seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Seed of the random filters and the noise branch.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary {
    min: f64,
    median: f64,
    max: f64,
}

impl Summary {
    fn of(mut xs: Vec<f64>) -> Self {
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        let median = if n % 2 == 1 {
            xs[n / 2]
        } else {
            0.5 * (xs[n / 2 - 1] + xs[n / 2])
        };
        Self {
            min: xs[0],
            median,
            max: xs[n - 1],
        }
    }
}

#[derive(Serialize)]
struct Report {
    duration_s: f64,
    sample_rate: u32,
    lpc_order: usize,
    threads: usize,
    repeats: usize,
    rtf: Summary,
    /// Median wall-clock seconds per stage.
    stages_s: Stages,
    published_rtf: f64,
}

#[derive(Serialize)]
struct Stages {
    controls: f64,
    oscillator: f64,
    harmonic_lpc: f64,
    noise_lpc: f64,
}

pub fn run(args: BenchArgs, exec: Exec, threads: Option<usize>) -> Result<()> {
    if !(args.duration > 0.0 && args.duration.is_finite()) {
        usage_error("--duration must be a positive number of seconds");
    }
    if args.repeats == 0 {
        usage_error("--repeats must be at least 1");
    }
    if let Some(j) = &args.json {
        check_output(j)?;
    }
    let tables = match &args.tables {
        Some(path) => load_tables(path)?,
        None => TableSpec::default()
            .build(exec)
            .context("building default wavetables")?,
    };
    let params = benchmark_params(args.duration, args.seed);
    let seconds = params.samples() as f64 / params.sample_rate as f64;
    let renderer = Renderer::new(
        &tables,
        RenderOptions {
            exec,
            ..RenderOptions::default()
        },
    );
    let mut runs: Vec<StageTimings> = Vec::with_capacity(args.repeats);
    for _ in 0..args.repeats {
        let (_, t) = renderer
            .render_timed(&params, args.seed)
            .context("rendering")?;
        runs.push(t);
    }
    let median_of = |f: fn(&StageTimings) -> Duration| {
        Summary::of(runs.iter().map(|t| f(t).as_secs_f64()).collect()).median
    };
    let report = Report {
        duration_s: seconds,
        sample_rate: params.sample_rate,
        lpc_order: golf::LPC_ORDER,
        threads: threads.unwrap_or_else(rayon::current_num_threads),
        repeats: args.repeats,
        rtf: Summary::of(
            runs.iter()
                .map(|t| t.total().as_secs_f64() / seconds)
                .collect(),
        ),
        stages_s: Stages {
            controls: median_of(|t| t.controls),
            oscillator: median_of(|t| t.oscillator),
            harmonic_lpc: median_of(|t| t.harmonic_lpc),
            noise_lpc: median_of(|t| t.noise_lpc),
        },
        published_rtf: PUBLISHED_RTF,
    };
    print_report(&report);
    if let Some(path) = &args.json {
        golf::io::write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            Ok(())
        })
        .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn print_report(r: &Report) {
    let s = &r.stages_s;
    let total = s.controls + s.oscillator + s.harmonic_lpc + s.noise_lpc;
    println!(
        "rendered {:.2} s at {} Hz, M={}, {} thread(s), {} repeats",
        r.duration_s, r.sample_rate, r.lpc_order, r.threads, r.repeats
    );
    println!("{:<14} {:>10} {:>10} {:>10}", "", "min", "median", "max");
    println!(
        "{:<14} {:>10.4} {:>10.4} {:>10.4}",
        "RTF", r.rtf.min, r.rtf.median, r.rtf.max
    );
    println!("{:<14} {:>10.4}", "published RTF", r.published_rtf);
    println!();
    println!("{:<14} {:>10} {:>10}", "stage", "median ms", "share");
    for (name, v) in [
        ("controls", s.controls),
        ("oscillator", s.oscillator),
        ("harmonic LPC", s.harmonic_lpc),
        ("noise LPC", s.noise_lpc),
    ] {
        println!("{:<14} {:>10.2} {:>9.1}%", name, v * 1e3, 100.0 * v / total);
    }
}
