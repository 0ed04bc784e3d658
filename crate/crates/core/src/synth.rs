//! The full synthesis path and its backward pass.
//!
//! ```text
//! f_hat  = v * f
//! phi    = cumsum(f_hat) + offset
//! source = lookup(phi, tau)            (zero where v == 0)
//! audio  = framewise_lpc(source, gamma, a_k) + framewise_lpc(noise, beta, b_k)
//! ```
//!
//! Frame-rate tracks are upsampled linearly to the sample rate; the Rd index
//! arrives at a further reduced rate and is upsampled twice.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::filters::{
    framewise_lpc_forward, framewise_lpc_vjp, hann_window, BiquadCascade, FrameCoeffs,
    FramewiseTape,
};
use crate::glottal::Wavetables;
use crate::oscillator::{
    accumulate_phase, accumulate_phase_vjp, gate_frequency, pulse_train_from_phase,
    pulse_train_vjp, wavetable_lookup, wavetable_lookup_vjp, PhaseTrack,
};
use crate::par::Exec;

/// Rate of the phase-offset control track, in Hz.
pub const OFFSET_RATE: f64 = 20.0;

/// Frame-rate synthesis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub sample_rate: u32,
    pub hop: usize,
    /// Frames per Rd index value.
    pub tau_stride: usize,
    /// Normalised frequency, cycles per sample, in `[0, 0.5]`.
    pub f: Vec<f64>,
    pub v: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// Reduced-rate Rd fractional index, one value per `tau_stride` frames.
    pub tau: Vec<f64>,
    /// Unconstrained biquad inputs of the harmonic filter, per frame.
    pub harmonic: Vec<Vec<[f64; 2]>>,
    /// Unconstrained biquad inputs of the noise filter, per frame.
    pub noise: Vec<Vec<[f64; 2]>>,
}

impl SynthParams {
    /// Constant tracks with identity filters of the given order.
    pub fn constant(frames: usize, f: f64, gamma: f64, beta: f64, lpc_order: usize) -> Self {
        Self {
            sample_rate: crate::SAMPLE_RATE,
            hop: crate::HOP,
            tau_stride: crate::TAU_STRIDE,
            f: vec![f; frames],
            v: vec![1.0; frames],
            gamma: vec![gamma; frames],
            beta: vec![beta; frames],
            tau: vec![0.5; frames.div_ceil(crate::TAU_STRIDE)],
            harmonic: vec![vec![[0.0; 2]; lpc_order / 2]; frames],
            noise: vec![vec![[0.0; 2]; lpc_order / 2]; frames],
        }
    }

    pub fn frames(&self) -> usize {
        self.f.len()
    }

    pub fn samples(&self) -> usize {
        self.frames() * self.hop
    }

    pub fn tau_len(&self) -> usize {
        self.frames().div_ceil(self.tau_stride)
    }

    pub fn harmonic_order(&self) -> usize {
        self.harmonic.first().map_or(0, |s| 2 * s.len())
    }

    pub fn noise_order(&self) -> usize {
        self.noise.first().map_or(0, |s| 2 * s.len())
    }

    pub fn validate(&self) -> Result<()> {
        let frames = self.frames();
        if frames == 0 {
            return Err(Error::Empty("frequency track"));
        }
        if self.hop == 0 || self.tau_stride == 0 || self.sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "hop, tau_stride and sample_rate must be positive".into(),
            ));
        }
        check_len("voicing track", frames, self.v.len())?;
        check_len("gamma track", frames, self.gamma.len())?;
        check_len("beta track", frames, self.beta.len())?;
        check_len("harmonic filter frames", frames, self.harmonic.len())?;
        check_len("noise filter frames", frames, self.noise.len())?;
        check_len("tau track", self.tau_len(), self.tau.len())?;
        for (what, bank) in [("harmonic", &self.harmonic), ("noise", &self.noise)] {
            let sections = bank[0].len();
            if sections == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{what} filter has no sections"
                )));
            }
            for s in bank {
                check_len("filter sections", sections, s.len())?;
            }
        }
        let tracks = [
            ("f", &self.f),
            ("v", &self.v),
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("tau", &self.tau),
        ];
        for (what, t) in tracks {
            if let Some(index) = t.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { what, index });
            }
        }
        Ok(())
    }

    /// Clamp bounded fields into range.
    pub fn project(&mut self) {
        self.f.iter_mut().for_each(|x| *x = x.clamp(0.0, 0.5));
        self.v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        self.tau.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        self.gamma.iter_mut().for_each(|x| *x = x.max(0.0));
        self.beta.iter_mut().for_each(|x| *x = x.max(0.0));
    }

    /// Length of a phase-offset track that covers the whole render.
    pub fn offset_len(&self, rate: f64) -> usize {
        let spacing = self.sample_rate as f64 / rate;
        (self.samples() as f64 / spacing).ceil() as usize + 1
    }
}

/// Piecewise-linear interpolation between values anchored at `k * hop`,
/// held constant after the last anchor. Output has `track.len() * hop`
/// samples.
pub fn upsample_linear(track: &[f64], hop: usize) -> Result<Vec<f64>> {
    if track.is_empty() {
        return Err(Error::Empty("track"));
    }
    if hop == 0 {
        return Err(Error::InvalidArgument("hop must be positive".into()));
    }
    let last = track.len() - 1;
    let mut out = Vec::with_capacity(track.len() * hop);
    for k in 0..track.len() {
        let (a, b) = (track[k], track[(k + 1).min(last)]);
        for j in 0..hop {
            let t = j as f64 / hop as f64;
            out.push(a + t * (b - a));
        }
    }
    Ok(out)
}

/// Transpose of [`upsample_linear`].
pub fn upsample_linear_vjp(grad: &[f64], frames: usize, hop: usize) -> Vec<f64> {
    let mut out = vec![0.0; frames];
    if frames == 0 {
        return out;
    }
    let last = frames - 1;
    for (n, g) in grad.iter().enumerate().take(frames * hop) {
        let k = n / hop;
        let t = (n % hop) as f64 / hop as f64;
        out[k] += (1.0 - t) * g;
        out[(k + 1).min(last)] += t * g;
    }
    out
}

/// Linear interpolation of `track` anchored every `spacing` samples
/// (possibly fractional), evaluated at `0..len`.
pub fn resample_linear(track: &[f64], spacing: f64, len: usize) -> Vec<f64> {
    let last = track.len() - 1;
    (0..len)
        .map(|n| {
            let x = n as f64 / spacing;
            let k = (x.floor() as usize).min(last);
            if k >= last {
                return track[last];
            }
            let t = x - k as f64;
            track[k] + t * (track[k + 1] - track[k])
        })
        .collect()
}

pub fn resample_linear_vjp(grad: &[f64], spacing: f64, points: usize) -> Vec<f64> {
    let last = points - 1;
    let mut out = vec![0.0; points];
    for (n, g) in grad.iter().enumerate() {
        let x = n as f64 / spacing;
        let k = (x.floor() as usize).min(last);
        if k >= last {
            out[last] += g;
            continue;
        }
        let t = x - k as f64;
        out[k] += (1.0 - t) * g;
        out[k + 1] += t * g;
    }
    out
}

/// Unit-variance Gaussian noise from a seeded ChaCha stream.
pub fn gaussian_noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Synthetic track for speed measurements: constant 220 Hz, fully voiced,
/// `gamma = beta = 0.5`, and independent random stable order-22 cascades on
/// every frame of both branches.
pub fn benchmark_params(seconds: f64, seed: u64) -> SynthParams {
    let frames =
        ((seconds * crate::SAMPLE_RATE as f64 / crate::HOP as f64).round() as usize).max(1);
    let mut p = SynthParams::constant(
        frames,
        220.0 / crate::SAMPLE_RATE as f64,
        0.5,
        0.5,
        crate::LPC_ORDER,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pair in p.harmonic.iter_mut().chain(p.noise.iter_mut()).flatten() {
        *pair = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        ];
    }
    p
}

/// Harmonic excitation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceKind {
    /// Glottal flow wavetables.
    #[default]
    Wavetable,
    /// Band-limited pulse train; the Rd index is ignored.
    PulseTrain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub source: SourceKind,
    /// Block gradients from the harmonic source to `f` and `v`.
    pub stop_source_gradient: bool,
    /// Overlap-add window length in samples.
    pub window: usize,
    /// Rate of the phase-offset track in Hz.
    pub offset_rate: f64,
    pub exec: Exec,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            source: SourceKind::Wavetable,
            stop_source_gradient: false,
            window: crate::WINDOW,
            offset_rate: OFFSET_RATE,
            exec: Exec::default(),
        }
    }
}

/// Rendered audio and its two branches.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub audio: Vec<f64>,
    pub harmonic: Vec<f64>,
    pub noise: Vec<f64>,
    pub phase: PhaseTrack,
}

/// Wall-clock time per stage of one render.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub controls: Duration,
    pub oscillator: Duration,
    pub harmonic_lpc: Duration,
    pub noise_lpc: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.controls + self.oscillator + self.harmonic_lpc + self.noise_lpc
    }
}

/// Gradient of a scalar loss with respect to every continuous parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub f: Vec<f64>,
    pub v: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
    pub harmonic: Vec<Vec<[f64; 2]>>,
    pub noise: Vec<Vec<[f64; 2]>>,
    /// Empty unless the render used a phase-offset track.
    pub offsets: Vec<f64>,
}

/// Per-sample controls and per-frame filters derived from [`SynthParams`].
#[derive(Debug, Clone)]
pub(crate) struct Controls {
    pub len: usize,
    pub f: Vec<f64>,
    pub v: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub harmonic: FrameCoeffs,
    pub noise: FrameCoeffs,
}

pub(crate) struct HarmonicTape {
    pub phase: PhaseTrack,
    pub source: Vec<f64>,
    pub lpc: FramewiseTape,
}

pub(crate) struct NoiseTape {
    pub excitation: Vec<f64>,
    pub lpc: FramewiseTape,
}

/// Everything the backward pass of [`Renderer::forward`] needs.
pub struct RenderTape {
    controls: Controls,
    harmonic: HarmonicTape,
    noise: NoiseTape,
    offset_points: usize,
}

/// Renders [`SynthParams`] against a fixed set of wavetables.
#[derive(Debug, Clone)]
pub struct Renderer<'a> {
    tables: &'a Wavetables,
    options: RenderOptions,
    window: Vec<f64>,
}

impl<'a> Renderer<'a> {
    pub fn new(tables: &'a Wavetables, options: RenderOptions) -> Self {
        Self {
            tables,
            window: hann_window(options.window),
            options,
        }
    }

    pub fn options(&self) -> &RenderOptions {
        &self.options
    }

    pub fn tables(&self) -> &Wavetables {
        self.tables
    }

    pub fn render(&self, params: &SynthParams, seed: u64) -> Result<RenderOutput> {
        Ok(self.forward(params, None, seed)?.0)
    }

    /// Render with a phase-offset track sampled at `offset_rate`, linearly
    /// upsampled and added to the instantaneous phase.
    pub fn render_with_offset(
        &self,
        params: &SynthParams,
        offsets: &[f64],
        seed: u64,
    ) -> Result<RenderOutput> {
        Ok(self.forward(params, Some(offsets), seed)?.0)
    }

    pub fn render_timed(
        &self,
        params: &SynthParams,
        seed: u64,
    ) -> Result<(RenderOutput, StageTimings)> {
        let mut timings = StageTimings::default();
        let t = Instant::now();
        let controls = self.controls(params)?;
        timings.controls = t.elapsed();
        let (phase, source) = self.oscillate(&controls, None)?;
        timings.oscillator = t.elapsed() - timings.controls;
        let mark = Instant::now();
        let harmonic = self.filter_harmonic(&controls, phase, source)?;
        timings.harmonic_lpc = mark.elapsed();
        let mark = Instant::now();
        let noise = self.noise_branch(&controls, seed)?;
        timings.noise_lpc = mark.elapsed();
        Ok((assemble(&harmonic, &noise), timings))
    }

    pub fn forward(
        &self,
        params: &SynthParams,
        offsets: Option<&[f64]>,
        seed: u64,
    ) -> Result<(RenderOutput, RenderTape)> {
        let controls = self.controls(params)?;
        let upsampled = offsets
            .map(|o| self.upsample_offsets(params, o))
            .transpose()?;
        let harmonic = self.harmonic_branch(&controls, upsampled.as_deref())?;
        let noise = self.noise_branch(&controls, seed)?;
        let out = assemble(&harmonic, &noise);
        let tape = RenderTape {
            controls,
            harmonic,
            noise,
            offset_points: offsets.map_or(0, <[f64]>::len),
        };
        Ok((out, tape))
    }

    pub fn backward(
        &self,
        params: &SynthParams,
        tape: &RenderTape,
        grad_audio: &[f64],
    ) -> Result<ParamGrads> {
        let c = &tape.controls;
        check_len("audio gradient", c.len, grad_audio.len())?;
        let frames = params.frames();
        let hop = params.hop;
        let exec = self.options.exec;

        let hg = framewise_lpc_vjp(
            &tape.harmonic.lpc,
            &tape.harmonic.source,
            &c.gamma,
            &c.harmonic,
            &self.window,
            grad_audio,
            true,
            exec,
        )?;
        let (d_phi, d_tau_n) = self.source_vjp(c, &tape.harmonic.phase, &hg.source)?;

        let (d_f, d_v) = if self.options.stop_source_gradient {
            (vec![0.0; frames], vec![0.0; frames])
        } else {
            let d_fhat = accumulate_phase_vjp(&d_phi);
            let d_f_n: Vec<f64> = d_fhat.iter().zip(&c.v).map(|(g, v)| g * v).collect();
            let d_v_n: Vec<f64> = d_fhat.iter().zip(&c.f).map(|(g, f)| g * f).collect();
            (
                upsample_linear_vjp(&d_f_n, frames, hop),
                upsample_linear_vjp(&d_v_n, frames, hop),
            )
        };

        let d_tau_frames = upsample_linear_vjp(&d_tau_n, frames, hop);
        let mut padded = vec![0.0; params.tau.len() * params.tau_stride];
        padded[..frames].copy_from_slice(&d_tau_frames);
        let d_tau = upsample_linear_vjp(&padded, params.tau.len(), params.tau_stride);

        let offsets = if tape.offset_points > 0 {
            resample_linear_vjp(&d_phi, self.offset_spacing(params), tape.offset_points)
        } else {
            Vec::new()
        };

        let ng = framewise_lpc_vjp(
            &tape.noise.lpc,
            &tape.noise.excitation,
            &c.beta,
            &c.noise,
            &self.window,
            grad_audio,
            true,
            exec,
        )?;

        Ok(ParamGrads {
            f: d_f,
            v: d_v,
            gamma: upsample_linear_vjp(&hg.gain, frames, hop),
            beta: upsample_linear_vjp(&ng.gain, frames, hop),
            tau: d_tau,
            harmonic: pairs_vjp(&params.harmonic, &hg.coeffs)?,
            noise: pairs_vjp(&params.noise, &ng.coeffs)?,
            offsets,
        })
    }

    pub(crate) fn controls(&self, params: &SynthParams) -> Result<Controls> {
        params.validate()?;
        let mut p = params.clone();
        p.project();
        let hop = p.hop;
        let frames = p.frames();
        let tau_frames = upsample_linear(&p.tau, p.tau_stride)?;
        let tau = upsample_linear(&tau_frames[..frames], hop)?;
        let f = upsample_linear(&p.f, hop)?;
        let v = upsample_linear(&p.v, hop)?;
        let f_hat = gate_frequency(&f, &v)?;
        let cascades = |bank: &[Vec<[f64; 2]>]| -> Result<FrameCoeffs> {
            let list = bank
                .iter()
                .map(|pairs| BiquadCascade::from_unconstrained(pairs))
                .collect::<Result<Vec<_>>>()?;
            FrameCoeffs::from_cascades(&list, hop, self.options.window)
        };
        Ok(Controls {
            len: p.samples(),
            gamma: upsample_linear(&p.gamma, hop)?,
            beta: upsample_linear(&p.beta, hop)?,
            harmonic: cascades(&p.harmonic)?,
            noise: cascades(&p.noise)?,
            f,
            v,
            tau,
            f_hat,
        })
    }

    pub(crate) fn offset_spacing(&self, params: &SynthParams) -> f64 {
        params.sample_rate as f64 / self.options.offset_rate
    }

    pub(crate) fn upsample_offsets(
        &self,
        params: &SynthParams,
        offsets: &[f64],
    ) -> Result<Vec<f64>> {
        let duration = params.samples() as f64 / params.sample_rate as f64;
        let needed = (duration * self.options.offset_rate).ceil() as usize;
        if offsets.len() < needed.max(1) {
            return Err(Error::LengthMismatch {
                what: "phase offset track",
                expected: needed.max(1),
                got: offsets.len(),
            });
        }
        if let Some(index) = offsets.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "phase offset track",
                index,
            });
        }
        Ok(resample_linear(
            offsets,
            self.offset_spacing(params),
            params.samples(),
        ))
    }

    /// Phase and gated excitation.
    fn oscillate(&self, c: &Controls, offset: Option<&[f64]>) -> Result<(PhaseTrack, Vec<f64>)> {
        let phase = accumulate_phase(&c.f_hat, offset)?;
        let raw = match self.options.source {
            SourceKind::Wavetable => wavetable_lookup(&phase.phi, &c.tau, self.tables)?,
            SourceKind::PulseTrain => pulse_train_from_phase(&phase.phi, &c.f_hat),
        };
        // an unvoiced oscillator is frozen, not silent; gate its output too
        let source = raw
            .iter()
            .zip(&c.v)
            .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
            .collect();
        Ok((phase, source))
    }

    fn filter_harmonic(
        &self,
        c: &Controls,
        phase: PhaseTrack,
        source: Vec<f64>,
    ) -> Result<HarmonicTape> {
        let lpc = framewise_lpc_forward(
            &source,
            &c.gamma,
            &c.harmonic,
            &self.window,
            self.options.exec,
        )?;
        Ok(HarmonicTape { phase, source, lpc })
    }

    pub(crate) fn harmonic_branch(
        &self,
        c: &Controls,
        offset: Option<&[f64]>,
    ) -> Result<HarmonicTape> {
        let (phase, source) = self.oscillate(c, offset)?;
        self.filter_harmonic(c, phase, source)
    }

    pub(crate) fn noise_branch(&self, c: &Controls, seed: u64) -> Result<NoiseTape> {
        let excitation = gaussian_noise(seed, c.len);
        let lpc = framewise_lpc_forward(
            &excitation,
            &c.beta,
            &c.noise,
            &self.window,
            self.options.exec,
        )?;
        Ok(NoiseTape { excitation, lpc })
    }

    /// Gradient of the harmonic branch with respect to the upsampled phase
    /// only, for phase-offset fitting.
    pub(crate) fn harmonic_phase_vjp(
        &self,
        c: &Controls,
        tape: &HarmonicTape,
        grad: &[f64],
    ) -> Result<Vec<f64>> {
        let hg = framewise_lpc_vjp(
            &tape.lpc,
            &tape.source,
            &c.gamma,
            &c.harmonic,
            &self.window,
            grad,
            false,
            self.options.exec,
        )?;
        Ok(self.source_vjp(c, &tape.phase, &hg.source)?.0)
    }

    /// `(d phi, d tau)` per sample from the gradient of the gated source.
    fn source_vjp(
        &self,
        c: &Controls,
        phase: &PhaseTrack,
        d_source: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let gated: Vec<f64> = d_source
            .iter()
            .zip(&c.v)
            .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
            .collect();
        match self.options.source {
            SourceKind::Wavetable => wavetable_lookup_vjp(&phase.phi, &c.tau, self.tables, &gated),
            SourceKind::PulseTrain => Ok((
                pulse_train_vjp(&phase.phi, &c.f_hat, &gated),
                vec![0.0; c.len],
            )),
        }
    }
}

fn assemble(h: &HarmonicTape, n: &NoiseTape) -> RenderOutput {
    RenderOutput {
        audio: h
            .lpc
            .output
            .iter()
            .zip(&n.lpc.output)
            .map(|(a, b)| a + b)
            .collect(),
        harmonic: h.lpc.output.clone(),
        noise: n.lpc.output.clone(),
        phase: h.phase.clone(),
    }
}

fn pairs_vjp(bank: &[Vec<[f64; 2]>], grad_a: &[Vec<f64>]) -> Result<Vec<Vec<[f64; 2]>>> {
    bank.iter()
        .zip(grad_a)
        .map(|(pairs, g)| BiquadCascade::unconstrained_vjp(pairs, g))
        .collect()
}

/// Render with default options.
pub fn render(params: &SynthParams, tables: &Wavetables, seed: u64) -> Result<RenderOutput> {
    Renderer::new(tables, RenderOptions::default()).render(params, seed)
}

/// Render with a 20 Hz phase-offset track and default options.
pub fn render_with_offset(
    params: &SynthParams,
    tables: &Wavetables,
    offsets: &[f64],
    seed: u64,
) -> Result<RenderOutput> {
    Renderer::new(tables, RenderOptions::default()).render_with_offset(params, offsets, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_ramp() {
        assert_eq!(
            upsample_linear(&[0.0, 1.0], 4).unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(upsample_linear(&[0.3; 3], 5).unwrap(), vec![0.3; 15]);
        assert!(upsample_linear(&[], 4).is_err());
    }

    #[test]
    fn two_stage_upsample_matches_single_stage_at_anchors() {
        let tau_o = [0.1, 0.7, 0.4];
        let two = upsample_linear(&upsample_linear(&tau_o, 10).unwrap(), 120).unwrap();
        let one = upsample_linear(&tau_o, 1200).unwrap();
        for k in 0..30 {
            let n = k * 120;
            assert!((two[n] - one[n]).abs() < 1e-12, "anchor {k}");
        }
    }

    #[test]
    fn upsample_vjp_is_transpose() {
        let track = [0.3, -1.0, 2.0, 0.5];
        let g: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
        let up = upsample_linear(&track, 4).unwrap();
        let lhs: f64 = up.iter().zip(&g).map(|(a, b)| a * b).sum();
        let back = upsample_linear_vjp(&g, 4, 4);
        let rhs: f64 = back.iter().zip(&track).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let r = resample_linear(&track, 3.5, 14);
        let lhs: f64 = r.iter().zip(&g).map(|(a, b)| a * b).sum();
        let back = resample_linear_vjp(&g[..14], 3.5, 4);
        let rhs: f64 = back.iter().zip(&track).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn noise_is_seeded() {
        assert_eq!(gaussian_noise(3, 100), gaussian_noise(3, 100));
        assert_ne!(gaussian_noise(3, 100), gaussian_noise(4, 100));
    }

    #[test]
    fn validation_catches_shape_errors() {
        let mut p = SynthParams::constant(20, 0.01, 0.5, 0.1, 4);
        assert!(p.validate().is_ok());
        p.tau.push(0.1);
        assert!(p.validate().is_err());
        let mut p = SynthParams::constant(20, 0.01, 0.5, 0.1, 4);
        p.noise[3].pop();
        assert!(p.validate().is_err());
        let mut p = SynthParams::constant(20, 0.01, 0.5, 0.1, 4);
        p.gamma[2] = f64::NAN;
        assert!(p.validate().is_err());
    }
}
