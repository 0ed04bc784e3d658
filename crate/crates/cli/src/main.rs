//! `golf`: build wavetables, render parameter files, fit parameters to audio,
//! and measure synthesis speed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bench;
mod fit;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use golf::glottal::{TableSpec, Wavetables, RD_MAX, RD_MIN};
use golf::io::{read_offsets, read_params, write_wav};
use golf::synth::{RenderOptions, Renderer};
use golf::Exec;

#[derive(Parser)]
#[command(name = "golf", version, about = "Glottal-flow LPC vocoder")]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build glottal flow derivative wavetables.
    Tables(TablesArgs),
    /// Render a parameter file to WAV.
    Synth(SynthArgs),
    /// Fit parameters or a phase-offset track to a target recording.
    Fit(fit::FitArgs),
    /// Measure the real-time factor of synthesis.
    Bench(bench::BenchArgs),
}

#[derive(clap::Args)]
struct TablesArgs {
    /// Number of Rd values (rows).
    #[arg(long, default_value_t = golf::glottal::DEFAULT_ROWS)]
    k: usize,
    /// Samples per period (columns).
    #[arg(long, default_value_t = golf::glottal::DEFAULT_COLUMNS)]
    l: usize,
    #[arg(long, default_value_t = RD_MIN)]
    rd_min: f64,
    #[arg(long, default_value_t = RD_MAX)]
    rd_max: f64,
    /// Column of the shared negative peak as a fraction of the period.
    #[arg(long, default_value_t = golf::glottal::DEFAULT_ALIGN_FRACTION)]
    align: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    tables: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed of the noise branch.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Phase-offset track (JSON with `rate` and `values`).
    #[arg(long)]
    offsets: Option<PathBuf>,
    /// Also write the harmonic and noise branches next to the mix.
    #[arg(long)]
    stems: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!("{}", first.trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            usage_error("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let exec = if cli.threads == Some(1) {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::Tables(args) => tables(args, exec),
        Command::Synth(args) => synth(args, exec),
        Command::Fit(args) => fit::run(args, exec),
        Command::Bench(args) => bench::run(args, exec, cli.threads),
    }
}

/// Report a command-line precondition failure and exit with status 2.
pub(crate) fn usage_error(msg: &str) -> ! {
    eprintln!("error: {msg}");
    std::process::exit(2)
}

pub(crate) fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("cannot read {}: no such file", path.display());
    }
    Ok(())
}

pub(crate) fn check_output(path: &Path) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(dir) = dir {
        if !dir.is_dir() {
            bail!(
                "cannot write {}: directory {} does not exist",
                path.display(),
                dir.display()
            );
        }
    }
    if path.is_dir() {
        bail!("cannot write {}: is a directory", path.display());
    }
    Ok(())
}

pub(crate) fn load_tables(path: &Path) -> Result<Wavetables> {
    check_input(path)?;
    Wavetables::load(path).with_context(|| format!("reading wavetables {}", path.display()))
}

fn tables(args: TablesArgs, exec: Exec) -> Result<()> {
    if !(args.rd_min < args.rd_max) {
        usage_error(&format!(
            "--rd-min ({}) must be less than --rd-max ({})",
            args.rd_min, args.rd_max
        ));
    }
    check_output(&args.out)?;
    if let Some(csv) = &args.csv {
        check_output(csv)?;
    }
    let spec = TableSpec {
        rows: args.k,
        columns: args.l,
        rd_min: args.rd_min,
        rd_max: args.rd_max,
        align_fraction: args.align,
    };
    let tables = spec.build(exec).context("building wavetables")?;
    tables
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(csv) = &args.csv {
        golf::io::write_atomic(csv, |w| tables.write_csv(w))
            .with_context(|| format!("writing {}", csv.display()))?;
    }

    let energies: Vec<f64> = (0..tables.rows())
        .map(|k| tables.row(k).iter().map(|x| x * x).sum())
        .collect();
    let (e_min, e_max) = energies
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| {
            (lo.min(e), hi.max(e))
        });
    let aligned = (0..tables.rows())
        .filter(|&k| {
            let row = tables.row(k);
            (0..row.len()).min_by(|&a, &b| row[a].total_cmp(&row[b])) == Some(tables.align_index())
        })
        .count();
    let max_sum = (0..tables.rows())
        .map(|k| tables.row(k).iter().sum::<f64>().abs())
        .fold(0.0, f64::max);
    println!(
        "wrote {} ({} x {})",
        args.out.display(),
        tables.rows(),
        tables.columns()
    );
    println!(
        "rd range        {} .. {} (log-spaced)",
        args.rd_min, args.rd_max
    );
    println!("row energy      min {e_min:.12} max {e_max:.12}");
    println!(
        "negative peaks  {aligned}/{} rows at column {}",
        tables.rows(),
        tables.align_index()
    );
    println!("max |row sum|   {max_sum:.3e}");
    Ok(())
}

fn synth(args: SynthArgs, exec: Exec) -> Result<()> {
    check_input(&args.params)?;
    if let Some(o) = &args.offsets {
        check_input(o)?;
    }
    check_output(&args.out)?;
    let tables = load_tables(&args.tables)?;
    let (params, table_ref) =
        read_params(&args.params).with_context(|| format!("reading {}", args.params.display()))?;
    if let Some(r) = table_ref {
        let given = args
            .tables
            .file_name()
            .map(|n| n.to_string_lossy().into_owned());
        if Path::new(&r)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            != given
        {
            log::warn!(
                "parameters were made for tables {r}, rendering with {}",
                args.tables.display()
            );
        }
    }
    let mut options = RenderOptions {
        exec,
        ..RenderOptions::default()
    };
    let offsets = match &args.offsets {
        Some(path) => {
            let file = read_offsets(path).with_context(|| format!("reading {}", path.display()))?;
            options.offset_rate = file.rate;
            Some(file.values)
        }
        None => None,
    };
    let renderer = Renderer::new(&tables, options);
    let out = match &offsets {
        Some(o) => renderer.render_with_offset(&params, o, args.seed),
        None => renderer.render(&params, args.seed),
    }
    .context("rendering")?;

    write_wav(&args.out, &out.audio, params.sample_rate)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if args.stems {
        for (suffix, signal) in [("harmonic", &out.harmonic), ("noise", &out.noise)] {
            let path = stem_path(&args.out, suffix);
            write_wav(&path, signal, params.sample_rate)
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    println!(
        "wrote {} ({} samples, {:.3} s)",
        args.out.display(),
        out.audio.len(),
        out.audio.len() as f64 / params.sample_rate as f64
    );
    Ok(())
}

/// `dir/name.wav` becomes `dir/name.<suffix>.wav`.
pub(crate) fn stem_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = out
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "wav".into());
    out.with_file_name(format!("{stem}.{suffix}.{ext}"))
}
