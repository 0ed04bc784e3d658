//! Transformed-LF glottal flow derivative and the wavetables built from it.
//!
//! The LF model describes one period of the glottal flow derivative with an
//! exponentially growing sinusoid up to the main excitation instant `te`,
//! followed by an exponential return phase that reaches zero at the end of
//! the period. The transformed variant derives all timing parameters from a
//! single shape parameter `Rd` through Fant's regression:
//!
//! ```text
//! Ra = (-1 + 4.8 Rd) / 100
//! Rk = (22.4 + 11.8 Rd) / 100
//! Rg = Rk / (4 (0.11 Rd / (0.5 + 1.2 Rk) - Ra))
//! tp = 1 / (2 Rg),  te = tp (1 + Rk),  ta = Ra      (period = 1)
//! ```
//!
//! `epsilon` and `alpha` then follow from two implicit equations: continuity
//! of the return phase at `te`, and zero net flow over the period.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::par::Exec;

/// Lower end of the supported Rd range.
pub const RD_MIN: f64 = 0.3;
/// Upper end of the supported Rd range.
pub const RD_MAX: f64 = 2.7;
/// Default number of wavetable rows.
pub const DEFAULT_ROWS: usize = 100;
/// Default number of samples per period.
pub const DEFAULT_COLUMNS: usize = 2048;
/// Default column of the negative peak, as a fraction of the period.
pub const DEFAULT_ALIGN_FRACTION: f64 = 0.65;

const EPSILON_TOL: f64 = 1e-12;
const EPSILON_MAX_ITER: usize = 64;
const ALPHA_MAX_ITER: usize = 200;

/// LF model parameters on a unit period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfParams {
    pub rd: f64,
    /// Instant of the main excitation (negative peak).
    pub te: f64,
    /// Instant of maximum flow (zero crossing of the derivative).
    pub tp: f64,
    /// Effective duration of the return phase.
    pub ta: f64,
    /// Growth rate of the open phase, per period.
    pub alpha: f64,
    /// Decay rate of the return phase, per period.
    pub epsilon: f64,
    /// Magnitude of the derivative at `te`.
    pub ee: f64,
    /// Amplitude of the open-phase sinusoid, chosen so that `g'(te) = -ee`.
    pub e0: f64,
}

impl LfParams {
    fn omega(&self) -> f64 {
        PI / self.tp
    }
}

/// Solve the transformed-LF model for `rd`.
///
/// Values outside `[RD_MIN, RD_MAX]` are clamped with a warning.
pub fn rd_to_lf_params(rd: f64) -> Result<LfParams> {
    if !rd.is_finite() {
        return Err(Error::OutOfDomain {
            what: "rd",
            value: rd,
        });
    }
    let rd = if !(RD_MIN..=RD_MAX).contains(&rd) {
        let clamped = rd.clamp(RD_MIN, RD_MAX);
        warn!("rd = {rd} outside [{RD_MIN}, {RD_MAX}], clamped to {clamped}");
        clamped
    } else {
        rd
    };

    let ra = (-1.0 + 4.8 * rd) / 100.0;
    let rk = (22.4 + 11.8 * rd) / 100.0;
    let rg = rk / (4.0 * (0.11 * rd / (0.5 + 1.2 * rk) - ra));
    let tp = 1.0 / (2.0 * rg);
    let te = tp * (1.0 + rk);
    let ta = ra;
    if !(0.0 < tp && tp < te && te < 1.0 && ta > 0.0 && te + ta <= 1.0 + 1e-9) {
        return Err(Error::Solver {
            rd,
            what: "timing parameters out of range",
        });
    }

    let epsilon = solve_epsilon(rd, ta, 1.0 - te)?;
    let alpha = solve_alpha(rd, tp, te, ta, epsilon)?;
    let ee = 1.0;
    let e0 = -ee / ((alpha * te).exp() * (PI * te / tp).sin());
    Ok(LfParams {
        rd,
        te,
        tp,
        ta,
        alpha,
        epsilon,
        ee,
        e0,
    })
}

/// Positive root of `eps * ta = 1 - exp(-eps * tail)`, by Newton from `1 / ta`.
///
/// The function is convex and positive at the starting point, so the
/// iterates decrease monotonically onto the root.
fn solve_epsilon(rd: f64, ta: f64, tail: f64) -> Result<f64> {
    let mut eps = 1.0 / ta;
    for _ in 0..EPSILON_MAX_ITER {
        let decay = (-eps * tail).exp();
        let f = eps * ta - 1.0 + decay;
        let df = ta - tail * decay;
        if df <= 0.0 {
            break;
        }
        let step = f / df;
        eps -= step;
        if step.abs() <= EPSILON_TOL * eps.abs() {
            return Ok(eps);
        }
    }
    Err(Error::Solver {
        rd,
        what: "return-phase decay (epsilon)",
    })
}

/// Net flow over one period with `g'(te) = -1`, as a function of `alpha`.
fn net_flow(alpha: f64, tp: f64, te: f64, ta: f64, eps: f64) -> f64 {
    let omega = PI / tp;
    let (s, c) = (omega * te).sin_cos();
    // open phase: integral of -exp(alpha (t - te)) sin(omega t) / sin(omega te)
    let open = -(alpha * s - omega * c + omega * (-alpha * te).exp())
        / ((alpha * alpha + omega * omega) * s);
    let tail = 1.0 - te;
    let decay = (-eps * tail).exp();
    let ret = -((1.0 - decay) / eps - tail * decay) / (eps * ta);
    open + ret
}

/// Root of the zero-net-flow condition. `net_flow` goes from `+inf` to a
/// negative limit as alpha increases, so a sign change is bracketed by
/// geometric expansion and refined with safeguarded Newton steps.
fn solve_alpha(rd: f64, tp: f64, te: f64, ta: f64, eps: f64) -> Result<f64> {
    let f = |a: f64| net_flow(a, tp, te, ta, eps);
    let fail = Error::Solver {
        rd,
        what: "open-phase growth (alpha)",
    };

    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut expansions = 0;
    while !(f(lo) > 0.0) {
        lo *= 2.0;
        expansions += 1;
        if expansions > 64 {
            return Err(fail);
        }
    }
    while !(f(hi) < 0.0) {
        hi *= 2.0;
        expansions += 1;
        if expansions > 128 {
            return Err(fail);
        }
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..ALPHA_MAX_ITER {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if (hi - lo) <= 1e-14 * x.abs().max(1.0) {
            return Ok(x);
        }
        let h = 1e-7 * x.abs().max(1.0);
        let slope = (f(x + h) - f(x - h)) / (2.0 * h);
        let newton = x - fx / slope;
        let next = if slope.is_finite() && slope != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Err(fail)
}

/// Glottal flow derivative at normalised time `t` in `[0, 1)`.
pub fn lf_flow_derivative(t: f64, p: &LfParams) -> Result<f64> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::OutOfDomain {
            what: "t",
            value: t,
        });
    }
    Ok(flow_derivative_unchecked(t, p))
}

fn flow_derivative_unchecked(t: f64, p: &LfParams) -> f64 {
    if t <= p.te {
        p.e0 * (p.alpha * t).exp() * (p.omega() * t).sin()
    } else {
        let end = (-p.epsilon * (1.0 - p.te)).exp();
        -p.ee / (p.epsilon * p.ta) * ((-p.epsilon * (t - p.te)).exp() - end)
    }
}

/// `K x L` matrix of single-period flow derivatives, one row per Rd value.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavetables {
    data: Vec<f64>,
    rd_values: Vec<f64>,
    columns: usize,
    align_index: usize,
}

impl Wavetables {
    /// Assemble a table from raw rows. Used for file import and for tests
    /// that need hand-made tables; no shape invariants beyond sizes are
    /// checked here.
    pub fn from_raw(
        data: Vec<f64>,
        rd_values: Vec<f64>,
        columns: usize,
        align_index: usize,
    ) -> Result<Self> {
        if rd_values.is_empty() || columns == 0 {
            return Err(Error::Empty("wavetables"));
        }
        crate::error::check_len("wavetable data", rd_values.len() * columns, data.len())?;
        if align_index >= columns {
            return Err(Error::InvalidArgument(format!(
                "align index {align_index} >= {columns} columns"
            )));
        }
        Ok(Self {
            data,
            rd_values,
            columns,
            align_index,
        })
    }

    pub fn rows(&self) -> usize {
        self.rd_values.len()
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn rd_values(&self) -> &[f64] {
        &self.rd_values
    }

    pub fn align_index(&self) -> usize {
        self.align_index
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.columns..(k + 1) * self.columns]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn at(&self, k: usize, l: usize) -> f64 {
        self.data[k * self.columns + l]
    }
}

/// Construction parameters for [`Wavetables`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableSpec {
    pub rows: usize,
    pub columns: usize,
    pub rd_min: f64,
    pub rd_max: f64,
    /// Column of the shared negative peak as a fraction of the period.
    pub align_fraction: f64,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self {
            rows: DEFAULT_ROWS,
            columns: DEFAULT_COLUMNS,
            rd_min: RD_MIN,
            rd_max: RD_MAX,
            align_fraction: DEFAULT_ALIGN_FRACTION,
        }
    }
}

impl TableSpec {
    pub fn align_index(&self) -> usize {
        ((self.columns as f64 * self.align_fraction).ceil() as usize).min(self.columns - 1)
    }

    /// Log-spaced Rd grid with exact endpoints.
    pub fn rd_grid(&self) -> Vec<f64> {
        let (lo, hi) = (self.rd_min.ln(), self.rd_max.ln());
        let last = self.rows - 1;
        (0..self.rows)
            .map(|k| match k {
                0 => self.rd_min,
                k if k == last => self.rd_max,
                k => (lo + (hi - lo) * k as f64 / last as f64).exp(),
            })
            .collect()
    }

    pub fn build(&self, exec: Exec) -> Result<Wavetables> {
        if self.rows < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 rows, got {}",
                self.rows
            )));
        }
        if self.columns < 16 {
            return Err(Error::InvalidArgument(format!(
                "need at least 16 columns, got {}",
                self.columns
            )));
        }
        if !(self.rd_min > 0.0 && self.rd_min < self.rd_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < rd_min < rd_max, got [{}, {}]",
                self.rd_min, self.rd_max
            )));
        }
        if !(0.0..1.0).contains(&self.align_fraction) {
            return Err(Error::OutOfDomain {
                what: "align_fraction",
                value: self.align_fraction,
            });
        }

        let rd_values = self.rd_grid();
        let align = self.align_index();
        let rows = exec.try_map(self.rows, |k| {
            let p = rd_to_lf_params(rd_values[k])?;
            Ok::<_, Error>(sample_row(&p, self.columns, align))
        })?;
        Ok(Wavetables {
            data: rows.concat(),
            rd_values,
            columns: self.columns,
            align_index: align,
        })
    }
}

/// One period on the left-endpoint grid `j / L`, made zero-sum, scaled to
/// unit L2 norm and rotated so its minimum lands on `align`.
fn sample_row(p: &LfParams, columns: usize, align: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..columns)
        .map(|j| flow_derivative_unchecked(j as f64 / columns as f64, p))
        .collect();
    // Sampling leaves a small DC residual where the return phase is only a
    // few samples long; the continuous period integrates to zero.
    let mean = row.iter().sum::<f64>() / columns as f64;
    row.iter_mut().for_each(|x| *x -= mean);
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    row.iter_mut().for_each(|x| *x /= norm);

    let peak = argmin(&row);
    let shift = (align + columns - peak) % columns;
    row.rotate_right(shift);
    row
}

pub(crate) fn argmin(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| {
                if v < bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            },
        )
        .0
}

/// Build a table with the default alignment.
pub fn build_wavetables(
    rows: usize,
    columns: usize,
    rd_min: f64,
    rd_max: f64,
) -> Result<Wavetables> {
    TableSpec {
        rows,
        columns,
        rd_min,
        rd_max,
        ..TableSpec::default()
    }
    .build(Exec::default())
}

const MAGIC: &[u8; 4] = b"GOLF";
const VERSION: u32 = 1;

impl Wavetables {
    /// Binary container: `"GOLF"`, then `version, K, L, align_index` as
    /// little-endian `u32`, then `K` Rd values and the row-major `K * L`
    /// samples as little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            VERSION,
            self.rows() as u32,
            self.columns as u32,
            self.align_index as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for x in self.rd_values.iter().chain(&self.data) {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "wavetable file",
            reason,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u32::from_le_bytes(word);
        }
        let [version, rows, columns, align] = header.map(|x| x as usize);
        if version != VERSION as usize {
            return Err(bad(format!("unsupported version {version}")));
        }
        if rows == 0 || columns == 0 {
            return Err(bad(format!("empty table {rows}x{columns}")));
        }
        let count = rows
            .checked_mul(columns)
            .and_then(|n| n.checked_add(rows))
            .ok_or_else(|| bad("size overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(bad(format!(
                "expected {} payload bytes, found {}",
                count * 8,
                bytes.len()
            )));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let rd_values: Vec<f64> = values.by_ref().take(rows).collect();
        let data: Vec<f64> = values.collect();
        Self::from_raw(data, rd_values, columns, align)
    }

    /// Replaces `path` only once the whole file has been written.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), |w| self.write_to(w))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// One line per row: `rd,x0,x1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "rd")?;
        for j in 0..self.columns {
            write!(w, ",s{j}")?;
        }
        writeln!(w)?;
        for (k, rd) in self.rd_values.iter().enumerate() {
            write!(w, "{rd}")?;
            for x in self.row(k) {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}
