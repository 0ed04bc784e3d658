//! File formats: parameter JSON, phase-offset JSON, WAV audio, loss CSV.
//!
//! Writers go through a temporary file in the destination directory that is
//! renamed into place on success, so a failed write leaves nothing behind.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::SynthParams;

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk form of [`SynthParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub schema_version: u32,
    pub sample_rate: u32,
    pub hop: usize,
    /// Order of the harmonic filter.
    pub lpc_order: usize,
    /// Order of the noise filter, when it differs from `lpc_order`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_lpc_order: Option<usize>,
    pub tau_stride: usize,
    /// Free-form reference to the wavetable file the parameters were made for.
    #[serde(default)]
    pub table_ref: Option<String>,
    pub f: Vec<f64>,
    pub v: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
    pub harmonic: Vec<Vec<[f64; 2]>>,
    pub noise: Vec<Vec<[f64; 2]>>,
}

impl ParamFile {
    pub fn from_params(p: &SynthParams, table_ref: Option<String>) -> Self {
        let noise = p.noise_order();
        Self {
            schema_version: SCHEMA_VERSION,
            sample_rate: p.sample_rate,
            hop: p.hop,
            lpc_order: p.harmonic_order(),
            noise_lpc_order: (noise != p.harmonic_order()).then_some(noise),
            tau_stride: p.tau_stride,
            table_ref,
            f: p.f.clone(),
            v: p.v.clone(),
            gamma: p.gamma.clone(),
            beta: p.beta.clone(),
            tau: p.tau.clone(),
            harmonic: p.harmonic.clone(),
            noise: p.noise.clone(),
        }
    }

    /// Check the header against the arrays and convert.
    pub fn into_params(self) -> Result<SynthParams> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Format {
                what: "parameter file",
                reason: format!(
                    "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            });
        }
        let params = SynthParams {
            sample_rate: self.sample_rate,
            hop: self.hop,
            tau_stride: self.tau_stride,
            f: self.f,
            v: self.v,
            gamma: self.gamma,
            beta: self.beta,
            tau: self.tau,
            harmonic: self.harmonic,
            noise: self.noise,
        };
        params.validate()?;
        let orders = [
            ("lpc_order", self.lpc_order, params.harmonic_order()),
            (
                "noise_lpc_order",
                self.noise_lpc_order.unwrap_or(self.lpc_order),
                params.noise_order(),
            ),
        ];
        for (what, declared, actual) in orders {
            if declared != actual {
                return Err(Error::Format {
                    what: "parameter file",
                    reason: format!(
                        "{what} is {declared} but the filter arrays have order {actual}"
                    ),
                });
            }
        }
        Ok(params)
    }
}

pub fn read_params(path: &Path) -> Result<(SynthParams, Option<String>)> {
    let file: ParamFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let table_ref = file.table_ref.clone();
    Ok((file.into_params()?, table_ref))
}

pub fn write_params(path: &Path, p: &SynthParams, table_ref: Option<String>) -> Result<()> {
    let file = ParamFile::from_params(p, table_ref);
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &file)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Phase-offset track and its rate in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetFile {
    pub rate: f64,
    pub values: Vec<f64>,
}

pub fn read_offsets(path: &Path) -> Result<OffsetFile> {
    let file: OffsetFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if !(file.rate > 0.0) {
        return Err(Error::OutOfDomain {
            what: "offset rate",
            value: file.rate,
        });
    }
    Ok(file)
}

pub fn write_offsets(path: &Path, offsets: &OffsetFile) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, offsets)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Mono audio and its sample rate. 16-bit integer and 32-bit float files
/// are accepted; other integer depths are scaled to [-1, 1) as well.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format {
            what: "WAV file",
            reason: format!("expected mono audio, found {} channels", spec.channels),
        });
    }
    let samples = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<Vec<_>, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|x| x as f64 / scale))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Write mono 32-bit float audio.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    write_atomic(path, |w| {
        let mut writer = hound::WavWriter::new(w, spec)?;
        for &s in samples {
            writer.write_sample(s as f32)?;
        }
        writer.finalize()?;
        Ok(())
    })
}

/// One row in a loss CSV.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceRow {
    Step(usize, f64),
    /// Summary row whose first column is a label such as `final_min`.
    Summary(&'static str, f64),
}

/// CSV with header `step,loss`.
pub fn write_loss_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "step,loss")?;
        for row in rows {
            match row {
                TraceRow::Step(step, loss) => writeln!(w, "{step},{loss}")?,
                TraceRow::Summary(label, loss) => writeln!(w, "{label},{loss}")?,
            }
        }
        Ok(())
    })
}

pub fn trace_rows(trace: &[f64]) -> Vec<TraceRow> {
    trace
        .iter()
        .enumerate()
        .map(|(i, &l)| TraceRow::Step(i, l))
        .collect()
}

/// Write through a temporary sibling file that replaces `path` on success.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let mut p = SynthParams::constant(15, 0.01, 0.4, 0.1, 4);
        p.harmonic[2][1] = [0.123456789012345, -1.0 / 3.0];
        write_params(&path, &p, Some("tables.golf".into())).unwrap();
        let (q, table_ref) = read_params(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(table_ref.as_deref(), Some("tables.golf"));
    }

    #[test]
    fn param_file_header_checks() {
        let p = SynthParams::constant(15, 0.01, 0.4, 0.1, 4);
        let mut file = ParamFile::from_params(&p, None);
        file.schema_version = 2;
        assert!(matches!(file.into_params(), Err(Error::Format { .. })));
        let mut file = ParamFile::from_params(&p, None);
        file.lpc_order = 6;
        assert!(matches!(file.into_params(), Err(Error::Format { .. })));
    }

    #[test]
    fn wav_roundtrip_is_float() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.05).sin() * 0.5).collect();
        write_wav(&path, &x, 24000).unwrap();
        let (y, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 24000);
        for (a, b) in x.iter().zip(&y) {
            assert_eq!(*a as f32 as f64, *b);
        }
    }

    #[test]
    fn reads_16_bit_wav() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [0i16, 16384, -32768] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(read_wav(&path).unwrap(), (vec![0.0, 0.5, -1.0], 16000));
    }

    #[test]
    fn failed_write_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let r = write_atomic(&path, |_| Err(Error::Empty("nothing")));
        assert!(r.is_err());
        assert!(!path.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn loss_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut rows = trace_rows(&[2.0, 1.5]);
        rows.push(TraceRow::Summary("final_min", 1.5));
        write_loss_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,loss\n0,2\n1,1.5\nfinal_min,1.5\n");
    }
}
