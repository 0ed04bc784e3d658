//! Losses, Adam, and gradient-descent fitting of synthesis parameters.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};
use crate::filters::hann_window;
use crate::glottal::Wavetables;
use crate::par::Exec;
use crate::synth::{resample_linear_vjp, ParamGrads, RenderOptions, Renderer, SynthParams};

/// Multi-resolution STFT loss settings. The hop of each resolution is a
/// quarter of its FFT size.
#[derive(Debug, Clone, PartialEq)]
pub struct MsstftConfig {
    pub fft_sizes: Vec<usize>,
    /// Floor added to magnitudes inside the log.
    pub eps: f64,
    pub exec: Exec,
}

impl Default for MsstftConfig {
    fn default() -> Self {
        Self {
            fft_sizes: vec![512, 1024, 2048],
            eps: 1e-8,
            exec: Exec::default(),
        }
    }
}

impl MsstftConfig {
    fn validate(&self) -> Result<()> {
        if self.fft_sizes.is_empty() {
            return Err(Error::Empty("FFT size list"));
        }
        for &n in &self.fft_sizes {
            if n < 4 || !n.is_power_of_two() {
                return Err(Error::InvalidArgument(format!(
                    "FFT size {n} is not a power of two >= 4"
                )));
            }
        }
        Ok(())
    }
}

/// One STFT resolution: periodic Hann window, hop `n_fft / 4`, and
/// `n_fft / 2` zeros of padding on both ends.
struct Resolution {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Resolution {
    fn new(n_fft: usize, planner: &mut FftPlanner<f64>) -> Self {
        Self {
            n_fft,
            hop: n_fft / 4,
            window: hann_window(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Signal index of sample `j` of frame `t`, if inside the signal.
    fn index(&self, t: usize, j: usize, len: usize) -> Option<usize> {
        let pos = (t * self.hop + j) as isize - (self.n_fft / 2) as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    fn frame_spectrum(&self, x: &[f64], t: usize) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = (0..self.n_fft)
            .map(|j| {
                let v = self.index(t, j, x.len()).map_or(0.0, |i| x[i]);
                Complex64::new(v * self.window[j], 0.0)
            })
            .collect();
        self.forward.process(&mut buf);
        buf.truncate(self.bins());
        buf
    }

    fn spectra(&self, x: &[f64], exec: Exec) -> Vec<Vec<Complex64>> {
        exec.map(self.frames(x.len()), |t| self.frame_spectrum(x, t))
    }

    /// Adjoint of the windowed real-input DFT of frame `t`: accumulates into
    /// `grad` the signal gradient for the given per-bin complex gradient.
    fn frame_adjoint(&self, g: &[Complex64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        buf[..g.len()].copy_from_slice(g);
        self.inverse.process(&mut buf);
        buf.iter()
            .zip(&self.window)
            .map(|(z, w)| z.re * w)
            .collect()
    }
}

/// Multi-resolution STFT distance to a fixed reference.
pub struct MsstftLoss {
    cfg: MsstftConfig,
    resolutions: Vec<Resolution>,
    reference: Vec<Vec<Vec<f64>>>,
    reference_norm: Vec<f64>,
    len: usize,
}

impl MsstftLoss {
    pub fn new(reference: &[f64], cfg: &MsstftConfig) -> Result<Self> {
        cfg.validate()?;
        if reference.iter().all(|&y| y == 0.0) {
            return Err(Error::ZeroReference);
        }
        let mut planner = FftPlanner::new();
        let resolutions: Vec<Resolution> = cfg
            .fft_sizes
            .iter()
            .map(|&n| Resolution::new(n, &mut planner))
            .collect();
        let len = reference.len();
        let reference: Vec<Vec<Vec<f64>>> = resolutions
            .iter()
            .map(|r| magnitudes(&r.spectra(reference, cfg.exec)))
            .collect();
        let reference_norm = reference.iter().map(|m| frobenius(m)).collect();
        Ok(Self {
            cfg: cfg.clone(),
            resolutions,
            reference,
            reference_norm,
            len,
        })
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_len("signal", self.len, x.len())?;
        let mut total = 0.0;
        for (r, res) in self.resolutions.iter().enumerate() {
            let mags = magnitudes(&res.spectra(x, self.cfg.exec));
            total += self.terms(r, &mags).0;
        }
        Ok(total)
    }

    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("signal", self.len, x.len())?;
        let mut total = 0.0;
        let mut grad = vec![0.0; x.len()];
        for (r, res) in self.resolutions.iter().enumerate() {
            let spectra = res.spectra(x, self.cfg.exec);
            let mags = magnitudes(&spectra);
            let (value, d_mag) = self.terms(r, &mags);
            total += value;
            let frame_grads = self.cfg.exec.map(spectra.len(), |t| {
                let g: Vec<Complex64> = spectra[t]
                    .iter()
                    .zip(&mags[t])
                    .zip(&d_mag[t])
                    .map(|((z, &m), &dm)| {
                        if m > 0.0 {
                            z * (dm / m)
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect();
                res.frame_adjoint(&g)
            });
            for (t, fg) in frame_grads.iter().enumerate() {
                for (j, g) in fg.iter().enumerate() {
                    if let Some(i) = res.index(t, j, x.len()) {
                        grad[i] += g;
                    }
                }
            }
        }
        Ok((total, grad))
    }

    /// Spectral convergence plus mean absolute log-magnitude difference, and
    /// the gradient of their sum with respect to the magnitudes.
    fn terms(&self, r: usize, mags: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let reference = &self.reference[r];
        let eps = self.cfg.eps;
        let count = (mags.len() * mags[0].len()) as f64;
        let mut diff_sq = 0.0;
        let mut log_sum = 0.0;
        for (xm, ym) in mags.iter().zip(reference) {
            for (x, y) in xm.iter().zip(ym) {
                diff_sq += (x - y) * (x - y);
                log_sum += ((x + eps).ln() - (y + eps).ln()).abs();
            }
        }
        let diff_norm = diff_sq.sqrt();
        let ref_norm = self.reference_norm[r];
        let value = diff_norm / ref_norm + log_sum / count;
        let sc_scale = if diff_norm > 0.0 {
            1.0 / (diff_norm * ref_norm)
        } else {
            0.0
        };
        let grad = mags
            .iter()
            .zip(reference)
            .map(|(xm, ym)| {
                xm.iter()
                    .zip(ym)
                    .map(|(x, y)| {
                        let d = (x + eps).ln() - (y + eps).ln();
                        let sign = if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        (x - y) * sc_scale + sign / ((x + eps) * count)
                    })
                    .collect()
            })
            .collect();
        (value, grad)
    }
}

fn magnitudes(spectra: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
    spectra
        .iter()
        .map(|s| s.iter().map(|z| z.norm()).collect())
        .collect()
}

fn frobenius(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn msstft_loss(x: &[f64], y: &[f64], cfg: &MsstftConfig) -> Result<f64> {
    check_len("signal", y.len(), x.len())?;
    MsstftLoss::new(y, cfg)?.value(x)
}

pub fn msstft_loss_grad(x: &[f64], y: &[f64], cfg: &MsstftConfig) -> Result<(f64, Vec<f64>)> {
    check_len("signal", y.len(), x.len())?;
    MsstftLoss::new(y, cfg)?.value_and_grad(x)
}

/// Sum of squared sample differences.
pub fn l2_waveform(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len("signal", y.len(), x.len())?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn l2_waveform_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = l2_waveform(x, y)?;
    Ok((loss, x.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 1000,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::OutOfDomain {
                what: "learning_rate",
                value: self.learning_rate,
            });
        }
        for (what, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::OutOfDomain { what, value: b });
            }
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One bias-corrected update; `lr_scale` multiplies the learning rate
    /// per parameter.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grad: &[f64],
        cfg: &AdamConfig,
        lr_scale: Option<&[f64]>,
    ) -> Result<()> {
        check_len("parameters", self.m.len(), params.len())?;
        check_len("gradient", self.m.len(), grad.len())?;
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: "parameter".into(),
                index,
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            let lr = cfg.learning_rate * lr_scale.map_or(1.0, |s| s[i]);
            params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }
}

pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
    cfg: &AdamConfig,
) -> Result<()> {
    state.step(params, grad, cfg, None)
}

/// Wrap each consecutive difference into `[-0.5, 0.5)` and rebuild the track
/// from its first point.
pub fn wrap_offset_differences(offsets: &mut [f64]) {
    for i in 1..offsets.len() {
        let d = offsets[i] - offsets[i - 1];
        offsets[i] = offsets[i - 1] + (d - (d + 0.5).floor());
    }
}

/// Initial phase-offset track of each restart.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum OffsetInit {
    Zero,
    /// Uniform in `[0, 1)` per point, one seeded stream per restart.
    #[default]
    Random,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFitOptions {
    pub restarts: usize,
    pub init: OffsetInit,
    pub render: RenderOptions,
}

impl Default for PhaseFitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            init: OffsetInit::Random,
            render: RenderOptions::default(),
        }
    }
}

/// Result of one phase-offset optimisation run.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFitRun {
    /// Lowest-loss iterate of the run.
    pub offsets: Vec<f64>,
    /// Loss before every update, then the loss after the last update.
    pub trace: Vec<f64>,
    /// Loss of `offsets`, the minimum of `trace`.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFit {
    pub runs: Vec<PhaseFitRun>,
}

impl PhaseFit {
    pub fn best(&self) -> &PhaseFitRun {
        self.runs
            .iter()
            .min_by(|a, b| a.final_loss.total_cmp(&b.final_loss))
            .expect("at least one run")
    }

    pub fn min_loss(&self) -> f64 {
        self.best().final_loss
    }

    pub fn max_loss(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.final_loss)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fit only the phase-offset track so that the render matches `target` in
/// waveform L2. The noise branch is rendered once with `seed` and held fixed.
/// Each run keeps its lowest-loss iterate.
pub fn fit_phase_offset(
    params: &SynthParams,
    tables: &Wavetables,
    target: &[f64],
    cfg: &AdamConfig,
    seed: u64,
    options: &PhaseFitOptions,
) -> Result<PhaseFit> {
    cfg.validate()?;
    check_len("target", params.samples(), target.len())?;
    if options.restarts == 0 {
        return Err(Error::InvalidArgument("need at least one restart".into()));
    }
    let renderer = Renderer::new(tables, options.render);
    let controls = renderer.controls(params)?;
    let noise = renderer.noise_branch(&controls, seed)?.lpc.output;
    let points = params.offset_len(options.render.offset_rate);
    let spacing = renderer.offset_spacing(params);

    let evaluate = |offsets: &[f64], want_grad: bool| -> Result<(f64, Vec<f64>)> {
        let upsampled = renderer.upsample_offsets(params, offsets)?;
        let tape = renderer.harmonic_branch(&controls, Some(&upsampled))?;
        let audio: Vec<f64> = tape
            .lpc
            .output
            .iter()
            .zip(&noise)
            .map(|(h, n)| h + n)
            .collect();
        let (loss, grad) = l2_waveform_grad(&audio, target)?;
        if !want_grad {
            return Ok((loss, Vec::new()));
        }
        let d_phi = renderer.harmonic_phase_vjp(&controls, &tape, &grad)?;
        Ok((loss, resample_linear_vjp(&d_phi, spacing, offsets.len())))
    };

    let runs = options.render.exec.try_map(options.restarts, |restart| {
        let mut offsets = match &options.init {
            OffsetInit::Zero => vec![0.0; points],
            OffsetInit::Given(o) => {
                check_len("initial offsets", points, o.len())?;
                o.clone()
            }
            OffsetInit::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(restart as u64 + 1);
                (0..points).map(|_| rng.random::<f64>()).collect()
            }
        };
        wrap_offset_differences(&mut offsets);
        let mut state = AdamState::new(points);
        let mut trace = Vec::with_capacity(cfg.steps + 1);
        let mut best = (f64::INFINITY, offsets.clone());
        for step in 0..cfg.steps {
            let (loss, grad) = evaluate(&offsets, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, trace });
            }
            trace.push(loss);
            if loss < best.0 {
                best = (loss, offsets.clone());
            }
            if loss == 0.0 {
                break;
            }
            state
                .step(&mut offsets, &grad, cfg, None)
                .map_err(name_offset_error)?;
            wrap_offset_differences(&mut offsets);
        }
        let last = evaluate(&offsets, false)?.0;
        trace.push(last);
        if last < best.0 {
            best = (last, offsets);
        }
        Ok(PhaseFitRun {
            offsets: best.1,
            trace,
            final_loss: best.0,
        })
    })?;
    Ok(PhaseFit { runs })
}

fn name_offset_error(e: Error) -> Error {
    match e {
        Error::NonFiniteGradient { index, .. } => Error::NonFiniteGradient {
            param: "offsets".into(),
            index,
        },
        e => e,
    }
}

/// Groups of continuous parameters in [`SynthParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    F,
    V,
    Gamma,
    Beta,
    Tau,
    Harmonic,
    Noise,
}

impl Field {
    pub const ALL: [Field; 7] = [
        Field::F,
        Field::V,
        Field::Gamma,
        Field::Beta,
        Field::Tau,
        Field::Harmonic,
        Field::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::F => "f",
            Field::V => "v",
            Field::Gamma => "gamma",
            Field::Beta => "beta",
            Field::Tau => "tau",
            Field::Harmonic => "harmonic",
            Field::Noise => "noise",
        }
    }

    fn len(self, p: &SynthParams) -> usize {
        match self {
            Field::F => p.f.len(),
            Field::V => p.v.len(),
            Field::Gamma => p.gamma.len(),
            Field::Beta => p.beta.len(),
            Field::Tau => p.tau.len(),
            Field::Harmonic => p.harmonic.iter().map(|s| 2 * s.len()).sum(),
            Field::Noise => p.noise.iter().map(|s| 2 * s.len()).sum(),
        }
    }
}

fn flat_pairs(bank: &[Vec<[f64; 2]>]) -> impl Iterator<Item = f64> + '_ {
    bank.iter().flatten().flat_map(|p| p.iter().copied())
}

/// Concatenate all fields in [`Field::ALL`] order.
pub fn flatten_params(p: &SynthParams) -> Vec<f64> {
    p.f.iter()
        .chain(&p.v)
        .chain(&p.gamma)
        .chain(&p.beta)
        .chain(&p.tau)
        .copied()
        .chain(flat_pairs(&p.harmonic))
        .chain(flat_pairs(&p.noise))
        .collect()
}

pub fn flatten_grads(g: &ParamGrads) -> Vec<f64> {
    g.f.iter()
        .chain(&g.v)
        .chain(&g.gamma)
        .chain(&g.beta)
        .chain(&g.tau)
        .copied()
        .chain(flat_pairs(&g.harmonic))
        .chain(flat_pairs(&g.noise))
        .collect()
}

/// Inverse of [`flatten_params`]; shapes come from `p`.
pub fn unflatten_params(p: &mut SynthParams, flat: &[f64]) {
    let mut it = flat.iter().copied();
    for track in [&mut p.f, &mut p.v, &mut p.gamma, &mut p.beta, &mut p.tau] {
        track.iter_mut().for_each(|x| *x = it.next().unwrap());
    }
    for bank in [&mut p.harmonic, &mut p.noise] {
        bank.iter_mut()
            .flatten()
            .flat_map(|pair| pair.iter_mut())
            .for_each(|x| *x = it.next().unwrap());
    }
}

/// Field name and in-field index of flat position `i`.
pub fn locate(p: &SynthParams, mut i: usize) -> (Field, usize) {
    for field in Field::ALL {
        let n = field.len(p);
        if i < n {
            return (field, i);
        }
        i -= n;
    }
    panic!("flat index out of range")
}

/// Weights of the fitting objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub msstft: f64,
    pub l2: f64,
    pub msstft_cfg: MsstftConfig,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            msstft: 1.0,
            l2: 0.0,
            msstft_cfg: MsstftConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Fields that are optimised; the rest stay at their initial values.
    pub fields: Vec<Field>,
    /// Learning-rate multiplier for normalised frequency, whose natural scale
    /// is a few hundredths rather than order one.
    pub f_lr_scale: f64,
    pub render: RenderOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fields: Field::ALL.to_vec(),
            f_lr_scale: 0.01,
            render: RenderOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Lowest-loss iterate.
    pub params: SynthParams,
    /// Loss of `params`, the minimum of `trace`.
    pub loss: f64,
    /// Loss before every update, then the loss after the last update.
    pub trace: Vec<f64>,
}

/// Analysis-by-synthesis: gradient descent over the selected fields against a
/// weighted sum of MSSTFT and waveform L2. Bounded fields are clamped back
/// into range after every step. Returns the lowest-loss iterate.
pub fn fit_params(
    target: &[f64],
    init: &SynthParams,
    tables: &Wavetables,
    weights: &LossWeights,
    cfg: &AdamConfig,
    seed: u64,
    options: &FitOptions,
) -> Result<FitResult> {
    cfg.validate()?;
    init.validate()?;
    check_len("target", init.samples(), target.len())?;
    let renderer = Renderer::new(tables, options.render);
    let spectral = if weights.msstft != 0.0 {
        Some(MsstftLoss::new(target, &weights.msstft_cfg)?)
    } else {
        None
    };

    let mut params = init.clone();
    params.project();
    let mut flat = flatten_params(&params);
    let mut mask = Vec::with_capacity(flat.len());
    let mut lr_scale = Vec::with_capacity(flat.len());
    for field in Field::ALL {
        let on = options.fields.contains(&field);
        let scale = if field == Field::F {
            options.f_lr_scale
        } else {
            1.0
        };
        for _ in 0..field.len(&params) {
            mask.push(on);
            lr_scale.push(scale);
        }
    }

    let objective = |p: &SynthParams, want_grad: bool| -> Result<(f64, Vec<f64>)> {
        let (out, tape) = renderer.forward(p, None, seed)?;
        let mut loss = 0.0;
        let mut grad = vec![0.0; out.audio.len()];
        if let Some(s) = &spectral {
            let (l, g) = s.value_and_grad(&out.audio)?;
            loss += weights.msstft * l;
            grad.iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += weights.msstft * b);
        }
        if weights.l2 != 0.0 {
            let (l, g) = l2_waveform_grad(&out.audio, target)?;
            loss += weights.l2 * l;
            grad.iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += weights.l2 * b);
        }
        if !want_grad || !loss.is_finite() {
            return Ok((loss, Vec::new()));
        }
        Ok((loss, flatten_grads(&renderer.backward(p, &tape, &grad)?)))
    };

    let mut state = AdamState::new(flat.len());
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut best = (f64::INFINITY, params.clone());
    for step in 0..cfg.steps {
        let (loss, mut grad) = objective(&params, true)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, trace });
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, params.clone());
        }
        grad.iter_mut().zip(&mask).for_each(|(g, &on)| {
            if !on {
                *g = 0.0;
            }
        });
        state
            .step(&mut flat, &grad, cfg, Some(&lr_scale))
            .map_err(|e| match e {
                Error::NonFiniteGradient { index, .. } => {
                    let (field, i) = locate(&params, index);
                    Error::NonFiniteGradient {
                        param: field.name().into(),
                        index: i,
                    }
                }
                e => e,
            })?;
        unflatten_params(&mut params, &flat);
        params.project();
        flat = flatten_params(&params);
    }
    let (final_loss, _) = objective(&params, false)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: cfg.steps,
            trace,
        });
    }
    trace.push(final_loss);
    if final_loss < best.0 {
        best = (final_loss, params);
    }
    Ok(FitResult {
        params: best.1,
        loss: best.0,
        trace,
    })
}
