//! Stable biquad cascades and time-varying LPC synthesis.
//!
//! Each second-order factor `1 + eta1 z^-1 + eta2 z^-2` is produced from two
//! unconstrained reals so that it always lies strictly inside the stability
//! triangle; their product is the direct-form denominator of the frame's
//! LPC filter. Frame-wise synthesis filters every frame independently from
//! zero state and overlap-adds the results with a synthesis window.

use crate::error::{check_len, Error, Result};
use crate::iir::{lfilter_allpole, lfilter_into, vjp_coeffs, vjp_input};
use crate::par::Exec;
use crate::roots::quadratic_roots;

/// `tanh` is capped at `1 - SATURATION` so that `eta2 = 1` cannot be reached
/// through rounding when the inputs are large.
const SATURATION: f64 = 1e-6;

/// Second-order factor `1 + eta1 z^-1 + eta2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiquadSection {
    pub eta1: f64,
    pub eta2: f64,
}

impl BiquadSection {
    pub fn new(eta1: f64, eta2: f64) -> Self {
        Self { eta1, eta2 }
    }

    /// Strictly inside `|eta2| < 1, |eta1| < 1 + eta2`.
    pub fn is_stable(&self) -> bool {
        self.eta2.abs() < 1.0 && self.eta1.abs() < 1.0 + self.eta2
    }

    pub fn max_pole_magnitude(&self) -> f64 {
        let (a, b) = quadratic_roots(self.eta1, self.eta2);
        a.norm().max(b.norm())
    }
}

#[inline]
fn saturating_tanh(x: f64) -> (f64, f64) {
    let t = x.tanh();
    let cap = 1.0 - SATURATION;
    if t.abs() > cap {
        (cap.copysign(t), 0.0)
    } else {
        (t, 1.0 - t * t)
    }
}

/// Map two unconstrained reals into the open stability triangle:
///
/// ```text
/// eta1 = 2 tanh(x1)
/// eta2 = ((2 - |eta1|) tanh(x2) + |eta1|) / 2
/// ```
pub fn biquad_from_unconstrained(x1: f64, x2: f64) -> Result<BiquadSection> {
    if !x1.is_finite() {
        return Err(Error::OutOfDomain {
            what: "x1",
            value: x1,
        });
    }
    if !x2.is_finite() {
        return Err(Error::OutOfDomain {
            what: "x2",
            value: x2,
        });
    }
    let (t1, _) = saturating_tanh(x1);
    let (t2, _) = saturating_tanh(x2);
    let eta1 = 2.0 * t1;
    let eta2 = ((2.0 - eta1.abs()) * t2 + eta1.abs()) / 2.0;
    Ok(BiquadSection { eta1, eta2 })
}

/// Inverse of [`biquad_from_unconstrained`] for a section strictly inside the
/// stability triangle.
pub fn biquad_to_unconstrained(section: BiquadSection) -> Result<[f64; 2]> {
    if !section.is_stable() {
        return Err(Error::InvalidArgument(format!(
            "section ({}, {}) is outside the stability triangle",
            section.eta1, section.eta2
        )));
    }
    let e1 = section.eta1.abs();
    let t2 = (2.0 * section.eta2 - e1) / (2.0 - e1);
    Ok([(section.eta1 / 2.0).atanh(), t2.atanh()])
}

/// Section with complex-conjugate poles at `radius * exp(+-i theta)`.
pub fn resonator(radius: f64, theta: f64) -> BiquadSection {
    BiquadSection::new(-2.0 * radius * theta.cos(), radius * radius)
}

/// Gradient of [`biquad_from_unconstrained`] given `(dL/deta1, dL/deta2)`.
pub fn biquad_from_unconstrained_vjp(x1: f64, x2: f64, g_eta1: f64, g_eta2: f64) -> [f64; 2] {
    let (t1, dt1) = saturating_tanh(x1);
    let (t2, dt2) = saturating_tanh(x2);
    let eta1 = 2.0 * t1;
    let deta1_dx1 = 2.0 * dt1;
    // d eta2 / d |eta1| = (1 - t2) / 2, and d|eta1| = sign(eta1) d eta1
    let deta2_deta1 = 0.5 * (1.0 - t2) * if eta1 == 0.0 { 0.0 } else { eta1.signum() };
    let deta2_dx2 = 0.5 * (2.0 - eta1.abs()) * dt2;
    [
        (g_eta1 + g_eta2 * deta2_deta1) * deta1_dx1,
        g_eta2 * deta2_dx2,
    ]
}

/// Multiply the section polynomials; returns `a[1..=M]` (leading 1 dropped).
pub fn cascade_to_direct(sections: &[BiquadSection]) -> Result<Vec<f64>> {
    if sections.is_empty() {
        return Err(Error::Empty("biquad cascade"));
    }
    Ok(poly_product(sections.iter())[1..].to_vec())
}

fn poly_product<'a>(sections: impl Iterator<Item = &'a BiquadSection>) -> Vec<f64> {
    let mut poly = vec![1.0];
    for s in sections {
        let mut next = vec![0.0; poly.len() + 2];
        for (i, &c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] += c * s.eta1;
            next[i + 2] += c * s.eta2;
        }
        poly = next;
    }
    poly
}

/// Gradient of [`cascade_to_direct`] with respect to every `(eta1, eta2)`.
///
/// `d a / d eta_{i,1}` is the product of all other sections delayed by one
/// sample, and by two for `eta_{i,2}`.
pub fn cascade_to_direct_vjp(sections: &[BiquadSection], grad_a: &[f64]) -> Result<Vec<[f64; 2]>> {
    check_len("direct-form gradient", 2 * sections.len(), grad_a.len())?;
    // grad with a leading zero for the fixed a0 = 1
    let g: Vec<f64> = std::iter::once(0.0).chain(grad_a.iter().copied()).collect();
    Ok((0..sections.len())
        .map(|i| {
            let others = poly_product(
                sections
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, s)| s),
            );
            let d1: f64 = others.iter().enumerate().map(|(k, c)| c * g[k + 1]).sum();
            let d2: f64 = others.iter().enumerate().map(|(k, c)| c * g[k + 2]).sum();
            [d1, d2]
        })
        .collect())
}

/// A product of second-order sections with its expanded coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    sections: Vec<BiquadSection>,
    expanded: Vec<f64>,
}

impl BiquadCascade {
    pub fn new(sections: Vec<BiquadSection>) -> Result<Self> {
        let expanded = cascade_to_direct(&sections)?;
        Ok(Self { sections, expanded })
    }

    /// One section per unconstrained `[x1, x2]` pair.
    pub fn from_unconstrained(pairs: &[[f64; 2]]) -> Result<Self> {
        let sections = pairs
            .iter()
            .map(|&[x1, x2]| biquad_from_unconstrained(x1, x2))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sections)
    }

    /// Gradient with respect to the unconstrained pairs, given the gradient
    /// with respect to the expanded coefficients.
    pub fn unconstrained_vjp(pairs: &[[f64; 2]], grad_a: &[f64]) -> Result<Vec<[f64; 2]>> {
        let cascade = Self::from_unconstrained(pairs)?;
        let g_eta = cascade_to_direct_vjp(&cascade.sections, grad_a)?;
        Ok(pairs
            .iter()
            .zip(g_eta)
            .map(|(&[x1, x2], [g1, g2])| biquad_from_unconstrained_vjp(x1, x2, g1, g2))
            .collect())
    }

    pub fn sections(&self) -> &[BiquadSection] {
        &self.sections
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.expanded
    }

    pub fn order(&self) -> usize {
        self.expanded.len()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(BiquadSection::is_stable)
    }
}

/// Per-frame direct-form coefficients on a hop grid.
///
/// Frame `k` filters samples `[k * hop, k * hop + window)`. The signal start
/// is covered by clipped frames that reuse frame 0, so every sample sees the
/// same number of overlapping windows.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCoeffs {
    pub coeffs: Vec<Vec<f64>>,
    pub hop: usize,
    pub window: usize,
}

impl FrameCoeffs {
    pub fn new(coeffs: Vec<Vec<f64>>, hop: usize, window: usize) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Empty("frame coefficients"));
        }
        if hop == 0 || window < hop {
            return Err(Error::InvalidArgument(format!(
                "need 0 < hop <= window, got hop {hop}, window {window}"
            )));
        }
        Ok(Self {
            coeffs,
            hop,
            window,
        })
    }

    pub fn from_cascades(cascades: &[BiquadCascade], hop: usize, window: usize) -> Result<Self> {
        Self::new(
            cascades.iter().map(|c| c.coefficients().to_vec()).collect(),
            hop,
            window,
        )
    }

    pub fn frames(&self) -> usize {
        self.coeffs.len()
    }

    /// Number of clipped frames before frame 0.
    fn preroll(&self) -> usize {
        self.window.div_ceil(self.hop) - 1
    }

    /// Sample ranges and coefficient indices of every frame touching `[0, len)`.
    fn segments(&self, len: usize) -> Vec<Segment> {
        let pre = self.preroll() as isize;
        (-pre..self.frames() as isize)
            .filter_map(|j| {
                let start = j * self.hop as isize;
                let lo = start.max(0) as usize;
                let hi = ((start + self.window as isize).max(0) as usize).min(len);
                (lo < hi).then_some(Segment {
                    start,
                    lo,
                    hi,
                    frame: j.max(0) as usize,
                })
            })
            .collect()
    }

    fn check_coverage(&self, len: usize) -> Result<()> {
        let covered = self.frames() * self.hop;
        if covered < len {
            return Err(Error::CoverageGap { covered, len });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    /// Nominal frame start, negative for clipped lead-in frames.
    start: isize,
    lo: usize,
    hi: usize,
    frame: usize,
}

impl Segment {
    fn window_offset(&self) -> usize {
        (self.lo as isize - self.start) as usize
    }
}

/// Periodic Hann window, `0.5 - 0.5 cos(2 pi n / len)`.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / len as f64).cos())
        .collect()
}

/// Mean number of window weights summed at a sample: `sum(w) / hop`. Equal
/// to the overlap-add constant whenever the window/hop pair is COLA.
pub fn window_sum(window: &[f64], hop: usize) -> f64 {
    window.iter().sum::<f64>() / hop as f64
}

/// Frame-wise LPC forward pass with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct FramewiseTape {
    pub output: Vec<f64>,
    segments: Vec<Segment>,
    filtered: Vec<Vec<f64>>,
}

/// Gradients of [`framewise_lpc`].
#[derive(Debug, Clone, PartialEq)]
pub struct FramewiseGrads {
    pub source: Vec<f64>,
    pub gain: Vec<f64>,
    /// Per frame, with respect to the direct-form coefficients. Empty when
    /// coefficient gradients were not requested.
    pub coeffs: Vec<Vec<f64>>,
}

/// `s[n] = sum_k LPC(source * gain * u_k; a_k)[n] * w[n - kT] / S`, with a
/// rectangular analysis window `u_k` and `S` the steady-state window sum.
pub fn framewise_lpc(
    source: &[f64],
    gain: &[f64],
    frames: &FrameCoeffs,
    window: &[f64],
) -> Result<Vec<f64>> {
    Ok(framewise_lpc_forward(source, gain, frames, window, Exec::default())?.output)
}

pub fn framewise_lpc_forward(
    source: &[f64],
    gain: &[f64],
    frames: &FrameCoeffs,
    window: &[f64],
    exec: Exec,
) -> Result<FramewiseTape> {
    check_len("gain track", source.len(), gain.len())?;
    check_len("synthesis window", frames.window, window.len())?;
    frames.check_coverage(source.len())?;
    let segments = frames.segments(source.len());
    let filtered = exec.try_map(segments.len(), |i| {
        let seg = segments[i];
        let excitation: Vec<f64> = (seg.lo..seg.hi).map(|n| source[n] * gain[n]).collect();
        lfilter_allpole(&excitation, &frames.coeffs[seg.frame])
    })?;

    let norm = window_sum(window, frames.hop);
    let mut output = vec![0.0; source.len()];
    for (seg, y) in segments.iter().zip(&filtered) {
        let w = &window[seg.window_offset()..];
        for ((out, y), w) in output[seg.lo..seg.hi].iter_mut().zip(y).zip(w) {
            *out += y * w;
        }
    }
    output.iter_mut().for_each(|x| *x /= norm);
    Ok(FramewiseTape {
        output,
        segments,
        filtered,
    })
}

/// Backward pass of [`framewise_lpc_forward`].
#[allow(clippy::too_many_arguments)]
pub fn framewise_lpc_vjp(
    tape: &FramewiseTape,
    source: &[f64],
    gain: &[f64],
    frames: &FrameCoeffs,
    window: &[f64],
    grad_out: &[f64],
    want_coeffs: bool,
    exec: Exec,
) -> Result<FramewiseGrads> {
    check_len("output gradient", source.len(), grad_out.len())?;
    check_len("gain track", source.len(), gain.len())?;
    let norm = window_sum(window, frames.hop);
    let per_segment = exec.try_map(tape.segments.len(), |i| {
        let seg = tape.segments[i];
        let a = &frames.coeffs[seg.frame];
        let w = &window[seg.window_offset()..];
        let g: Vec<f64> = grad_out[seg.lo..seg.hi]
            .iter()
            .zip(w)
            .map(|(g, w)| g * w / norm)
            .collect();
        let d_exc = vjp_input(&g, a)?;
        let d_a = if want_coeffs {
            vjp_coeffs(&g, &tape.filtered[i], a)?
        } else {
            Vec::new()
        };
        Ok::<_, Error>((d_exc, d_a))
    })?;

    let mut d_source = vec![0.0; source.len()];
    let mut d_gain = vec![0.0; source.len()];
    let mut d_coeffs = if want_coeffs {
        frames.coeffs.iter().map(|a| vec![0.0; a.len()]).collect()
    } else {
        Vec::new()
    };
    for (seg, (d_exc, d_a)) in tape.segments.iter().zip(per_segment) {
        for (k, d) in d_exc.iter().enumerate() {
            let n = seg.lo + k;
            d_source[n] += d * gain[n];
            d_gain[n] += d * source[n];
        }
        if want_coeffs {
            for (acc, d) in d_coeffs[seg.frame].iter_mut().zip(&d_a) {
                *acc += d;
            }
        }
    }
    Ok(FramewiseGrads {
        source: d_source,
        gain: d_gain,
        coeffs: d_coeffs,
    })
}

/// Reference time-varying LPC: coefficients interpolated linearly per sample
/// between frame centres (`k * hop + window / 2`), held constant outside, and
/// a single recursion over the whole signal. Not differentiable.
pub fn samplewise_lpc(source: &[f64], gain: &[f64], frames: &FrameCoeffs) -> Result<Vec<f64>> {
    check_len("gain track", source.len(), gain.len())?;
    frames.check_coverage(source.len())?;
    let order = frames.coeffs[0].len();
    for a in &frames.coeffs {
        check_len("frame coefficients", order, a.len())?;
    }
    let excitation: Vec<f64> = source.iter().zip(gain).map(|(x, g)| x * g).collect();
    let last = frames.frames() - 1;
    let hop = frames.hop as f64;
    let centre0 = frames.window as f64 / 2.0;

    if frames.coeffs.iter().all(|a| *a == frames.coeffs[0]) {
        let mut s = vec![0.0; source.len()];
        lfilter_into(&excitation, &frames.coeffs[0], &mut s)?;
        return Ok(s);
    }

    let mut s = vec![0.0; source.len()];
    let mut a = vec![0.0; order];
    for n in 0..source.len() {
        let pos = (n as f64 - centre0) / hop;
        if pos <= 0.0 {
            a.copy_from_slice(&frames.coeffs[0]);
        } else if pos >= last as f64 {
            a.copy_from_slice(&frames.coeffs[last]);
        } else {
            let k = pos.floor() as usize;
            let t = pos - k as f64;
            for (ai, (x, y)) in a
                .iter_mut()
                .zip(frames.coeffs[k].iter().zip(&frames.coeffs[k + 1]))
            {
                *ai = (1.0 - t) * x + t * y;
            }
        }
        let mut acc = excitation[n];
        for (i, ai) in a.iter().enumerate() {
            if n > i {
                acc -= ai * s[n - i - 1];
            }
        }
        if !acc.is_finite() {
            return Err(Error::NonFinite {
                what: "sample-wise LPC output",
                index: n,
            });
        }
        s[n] = acc;
    }
    Ok(s)
}
