//! Harmonic source: gated phase accumulation and bilinear wavetable lookup,
//! plus a band-limited pulse train as an alternative source.

use std::f64::consts::TAU;

use crate::error::{check_len, Error, Result};
use crate::glottal::Wavetables;

/// Per-sample control signals of the source.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlTrack {
    /// Normalised instantaneous frequency, cycles per sample.
    pub f: Vec<f64>,
    /// Voicing in `[0, 1]`.
    pub v: Vec<f64>,
    /// Fractional Rd row index in `[0, 1]`.
    pub tau: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ControlTrack {
    /// Validate lengths and clamp every track to its range.
    pub fn new(
        f: Vec<f64>,
        v: Vec<f64>,
        tau: Vec<f64>,
        gamma: Vec<f64>,
        beta: Vec<f64>,
    ) -> Result<Self> {
        let n = f.len();
        check_len("voicing track", n, v.len())?;
        check_len("tau track", n, tau.len())?;
        check_len("gamma track", n, gamma.len())?;
        check_len("beta track", n, beta.len())?;
        let mut track = Self {
            f,
            v,
            tau,
            gamma,
            beta,
        };
        track.clamp();
        Ok(track)
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn clamp(&mut self) {
        self.f.iter_mut().for_each(|x| *x = x.clamp(0.0, 0.5));
        self.v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        self.tau.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        self.gamma.iter_mut().for_each(|x| *x = x.max(0.0));
        self.beta.iter_mut().for_each(|x| *x = x.max(0.0));
    }
}

/// Unwrapped instantaneous phase in cycles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseTrack {
    pub phi: Vec<f64>,
}

/// `f_hat[n] = v[n] * f[n]`; unvoiced samples freeze the oscillator.
pub fn gate_frequency(f: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len("voicing track", f.len(), v.len())?;
    Ok(f.iter().zip(v).map(|(f, v)| f * v).collect())
}

/// Running sum of `f_hat`, plus an optional per-sample phase offset.
///
/// The offset is added unwrapped; reduction modulo one happens in the lookup.
pub fn accumulate_phase(f_hat: &[f64], offset: Option<&[f64]>) -> Result<PhaseTrack> {
    if let Some(off) = offset {
        check_len("phase offset", f_hat.len(), off.len())?;
    }
    let mut acc = 0.0;
    let phi = f_hat
        .iter()
        .enumerate()
        .map(|(n, &f)| {
            acc += f;
            acc + offset.map_or(0.0, |o| o[n])
        })
        .collect();
    Ok(PhaseTrack { phi })
}

/// Adjoint of the running sum: `grad_f_hat[i] = sum_{n >= i} grad_phi[n]`.
pub fn accumulate_phase_vjp(grad_phi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grad_phi.len()];
    let mut acc = 0.0;
    for (o, g) in out.iter_mut().zip(grad_phi).rev() {
        acc += g;
        *o = acc;
    }
    out
}

/// Interpolation cell containing `x` in `[0, size]`, preferring the cell to
/// the left at exact boundaries. Returns the lower index and the weight of
/// the upper neighbour, which lies in `(0, 1]` away from the lower edge.
#[inline]
fn left_cell(x: f64) -> (isize, f64) {
    let lo = x.ceil() as isize - 1;
    (lo, x - lo as f64)
}

struct Stencil {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
    p: f64,
    q: f64,
}

#[inline]
fn stencil(phi: f64, tau: f64, rows: usize, cols: usize) -> Stencil {
    let l = (phi - phi.floor()) * cols as f64;
    let (c0, q) = left_cell(l);
    // c0 = -1 only when l == 0; that is the wrap cell between the last
    // column and the appended copy of the first.
    let c0 = if c0 < 0 { cols - 1 } else { c0 as usize };
    let c1 = if c0 + 1 >= cols { 0 } else { c0 + 1 };
    if rows == 1 {
        return Stencil {
            r0: 0,
            r1: 0,
            c0,
            c1,
            p: 0.0,
            q,
        };
    }
    let k = tau * (rows - 1) as f64;
    let (r0, _) = left_cell(k);
    let r0 = r0.clamp(0, rows as isize - 2) as usize;
    Stencil {
        r0,
        r1: r0 + 1,
        c0,
        c1,
        p: k - r0 as f64,
        q,
    }
}

/// Bilinear lookup into the wavetables, one sample per phase value.
///
/// The column coordinate is `(phi mod 1) * L` with the first column
/// repeated after the last; the row coordinate is `tau * (K - 1)`. Only
/// the two rows adjacent to the row coordinate contribute.
pub fn wavetable_lookup(phi: &[f64], tau: &[f64], tables: &Wavetables) -> Result<Vec<f64>> {
    check_len("tau track", phi.len(), tau.len())?;
    let (rows, cols) = (tables.rows(), tables.columns());
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("wavetables"));
    }
    Ok(phi
        .iter()
        .zip(tau)
        .map(|(&phi, &tau)| {
            let s = stencil(phi, tau.clamp(0.0, 1.0), rows, cols);
            let top = (1.0 - s.q) * tables.at(s.r0, s.c0) + s.q * tables.at(s.r0, s.c1);
            let bottom = (1.0 - s.q) * tables.at(s.r1, s.c0) + s.q * tables.at(s.r1, s.c1);
            (1.0 - s.p) * top + s.p * bottom
        })
        .collect())
}

/// Vector-Jacobian product of [`wavetable_lookup`]: returns the gradients
/// with respect to `phi` and `tau`.
pub fn wavetable_lookup_vjp(
    phi: &[f64],
    tau: &[f64],
    tables: &Wavetables,
    grad_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("tau track", phi.len(), tau.len())?;
    check_len("lookup gradient", phi.len(), grad_out.len())?;
    let (rows, cols) = (tables.rows(), tables.columns());
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("wavetables"));
    }
    let row_scale = rows.saturating_sub(1) as f64;
    let mut d_phi = vec![0.0; phi.len()];
    let mut d_tau = vec![0.0; phi.len()];
    for n in 0..phi.len() {
        let g = grad_out[n];
        if g == 0.0 {
            continue;
        }
        let s = stencil(phi[n], tau[n].clamp(0.0, 1.0), rows, cols);
        let (d00, d01) = (tables.at(s.r0, s.c0), tables.at(s.r0, s.c1));
        let (d10, d11) = (tables.at(s.r1, s.c0), tables.at(s.r1, s.c1));
        d_phi[n] = g * cols as f64 * ((1.0 - s.p) * (d01 - d00) + s.p * (d11 - d10));
        d_tau[n] = g * row_scale * ((1.0 - s.q) * (d10 - d00) + s.q * (d11 - d01));
    }
    Ok((d_phi, d_tau))
}

/// Number of harmonics `m >= 1` with `m * f < 0.5`.
pub fn harmonic_count(f: f64) -> usize {
    if f <= 0.0 || !f.is_finite() {
        return 0;
    }
    let mut m = (0.5 / f).floor() as usize;
    while m > 0 && m as f64 * f >= 0.5 {
        m -= 1;
    }
    m
}

/// Band-limited pulse train by additive synthesis, driven by the gated
/// frequency track.
pub fn pulse_train(f_hat: &[f64]) -> Vec<f64> {
    let phase = accumulate_phase(f_hat, None).expect("no offset");
    pulse_train_from_phase(&phase.phi, f_hat)
}

/// Unit-amplitude cosines at every harmonic below Nyquist, averaged over the
/// instantaneous harmonic count so loudness does not jump as harmonics enter.
pub fn pulse_train_from_phase(phi: &[f64], f_hat: &[f64]) -> Vec<f64> {
    phi.iter()
        .zip(f_hat)
        .map(|(&phi, &f)| {
            let m = harmonic_count(f);
            if m == 0 {
                return 0.0;
            }
            let theta = TAU * (phi - phi.floor());
            cosine_sum(theta, m).0 / m as f64
        })
        .collect()
}

/// Gradient of [`pulse_train_from_phase`] with respect to the phase; the
/// harmonic count is piecewise constant in `f_hat` and contributes nothing.
pub fn pulse_train_vjp(phi: &[f64], f_hat: &[f64], grad_out: &[f64]) -> Vec<f64> {
    phi.iter()
        .zip(f_hat)
        .zip(grad_out)
        .map(|((&phi, &f), &g)| {
            let m = harmonic_count(f);
            if m == 0 || g == 0.0 {
                return 0.0;
            }
            let theta = TAU * (phi - phi.floor());
            -g * TAU * cosine_sum(theta, m).1 / m as f64
        })
        .collect()
}

/// `(sum_{m=1}^M cos(m theta), sum_{m=1}^M m sin(m theta))` via the
/// angle-addition recurrence.
fn cosine_sum(theta: f64, count: usize) -> (f64, f64) {
    let (s1, c1) = theta.sin_cos();
    let (mut s, mut c) = (s1, c1);
    let (mut cos_sum, mut sin_sum) = (0.0, 0.0);
    for m in 1..=count {
        cos_sum += c;
        sin_sum += m as f64 * s;
        let next_c = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = next_c;
    }
    (cos_sum, sin_sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: Vec<Vec<f64>>) -> Wavetables {
        let k = rows.len();
        let l = rows[0].len();
        Wavetables::from_raw(
            rows.concat(),
            (0..k).map(|i| 1.0 + i as f64).collect(),
            l,
            0,
        )
        .unwrap()
    }

    #[test]
    fn gating() {
        assert_eq!(
            gate_frequency(&[0.01, 0.01], &[1.0, 1.0]).unwrap(),
            vec![0.01, 0.01]
        );
        assert_eq!(
            gate_frequency(&[0.01, 0.01], &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(gate_frequency(&[0.02], &[0.5]).unwrap(), vec![0.01]);
        assert!(gate_frequency(&[0.02], &[0.5, 1.0]).is_err());
    }

    #[test]
    fn phase_is_running_sum() {
        let p = accumulate_phase(&[0.25; 4], None).unwrap();
        assert_eq!(p.phi, vec![0.25, 0.5, 0.75, 1.0]);
        let p = accumulate_phase(&[0.0; 5], Some(&[0.3; 5])).unwrap();
        assert!(p.phi.iter().all(|&x| x == 0.3));
        assert!(accumulate_phase(&[0.0; 5], Some(&[0.3; 4])).is_err());
    }

    #[test]
    fn phase_vjp_is_reverse_cumsum() {
        assert_eq!(accumulate_phase_vjp(&[1.0, 2.0, 3.0]), vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn lookup_hits_grid_points_exactly() {
        let t = crate::glottal::build_wavetables(3, 64, 0.3, 2.7).unwrap();
        for j in 0..64 {
            let phi = j as f64 / 64.0;
            let out = wavetable_lookup(&[phi + 3.0], &[0.0], &t).unwrap();
            assert_eq!(out[0], t.row(0)[j]);
            let out = wavetable_lookup(&[phi], &[1.0], &t).unwrap();
            assert_eq!(out[0], t.row(2)[j]);
        }
    }

    #[test]
    fn lookup_wraps_past_last_column() {
        let t = table(vec![vec![0.0, 1.0, 2.0, 3.0], vec![10.0, 11.0, 12.0, 13.0]]);
        // three quarters of the way from the last column back to the first
        let phi = (3.0 + 0.75) / 4.0;
        let out = wavetable_lookup(&[phi], &[1.0], &t).unwrap();
        assert!((out[0] - (0.25 * 13.0 + 0.75 * 10.0)).abs() < 1e-12);
    }

    #[test]
    fn half_tau_averages_two_rows() {
        let t = table(vec![vec![0.0, 4.0, -2.0, 1.0], vec![2.0, 0.0, 6.0, -1.0]]);
        for i in 0..40 {
            let phi = i as f64 * 0.0371;
            let mean = table(vec![vec![1.0, 2.0, 2.0, 0.0]]);
            let a = wavetable_lookup(&[phi], &[0.5], &t).unwrap()[0];
            let b = wavetable_lookup(&[phi], &[0.0], &mean).unwrap()[0];
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn half_period_offset_negates_odd_table() {
        let l = 64;
        let row: Vec<f64> = (0..l).map(|j| (TAU * j as f64 / l as f64).sin()).collect();
        let t = table(vec![row.clone(), row]);
        let f_hat = vec![0.013; 200];
        let base = accumulate_phase(&f_hat, None).unwrap();
        let shifted = accumulate_phase(&f_hat, Some(&vec![0.5; 200])).unwrap();
        let tau = vec![0.3; 200];
        let a = wavetable_lookup(&base.phi, &tau, &t).unwrap();
        let b = wavetable_lookup(&shifted.phi, &tau, &t).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn lookup_vjp_matches_finite_differences() {
        let t = crate::glottal::build_wavetables(8, 128, 0.3, 2.7).unwrap();
        let phi: Vec<f64> = (0..50).map(|i| 0.1234 + i as f64 * 0.0731).collect();
        let tau: Vec<f64> = (0..50).map(|i| 0.05 + 0.018 * i as f64).collect();
        let w: Vec<f64> = (0..50).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let loss = |phi: &[f64], tau: &[f64]| -> f64 {
            wavetable_lookup(phi, tau, &t)
                .unwrap()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (dphi, dtau) = wavetable_lookup_vjp(&phi, &tau, &t, &w).unwrap();
        let h = 1e-9;
        for n in 0..50 {
            let mut p = phi.clone();
            p[n] += h;
            let up = loss(&p, &tau);
            p[n] -= 2.0 * h;
            let fd = (up - loss(&p, &tau)) / (2.0 * h);
            assert!((fd - dphi[n]).abs() <= 1e-5 * fd.abs().max(1.0), "phi {n}");
            let mut q = tau.clone();
            q[n] += h;
            let up = loss(&phi, &q);
            q[n] -= 2.0 * h;
            let fd = (up - loss(&phi, &q)) / (2.0 * h);
            assert!((fd - dtau[n]).abs() <= 1e-5 * fd.abs().max(1.0), "tau {n}");
        }
    }

    #[test]
    fn harmonic_counts() {
        assert_eq!(harmonic_count(0.2), 2);
        assert_eq!(harmonic_count(0.01), 49);
        assert_eq!(harmonic_count(0.25), 1);
        assert_eq!(harmonic_count(0.0), 0);
    }

    #[test]
    fn silent_pulse_train_without_frequency() {
        assert!(pulse_train(&[0.0; 100]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pulse_train_vjp_matches_finite_differences() {
        let f = vec![0.031; 40];
        let phi: Vec<f64> = (0..40).map(|i| 0.017 + 0.031 * i as f64).collect();
        let g: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).cos()).collect();
        let d = pulse_train_vjp(&phi, &f, &g);
        let h = 1e-7;
        for n in 0..40 {
            let mut p = phi.clone();
            p[n] += h;
            let up = pulse_train_from_phase(&p, &f)[n];
            p[n] -= 2.0 * h;
            let fd = g[n] * (up - pulse_train_from_phase(&p, &f)[n]) / (2.0 * h);
            assert!((fd - d[n]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }
}
