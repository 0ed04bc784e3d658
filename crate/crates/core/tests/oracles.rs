use std::f64::consts::TAU;

use golf::filters::{
    cascade_to_direct, cascade_to_direct_vjp, framewise_lpc_forward, framewise_lpc_vjp,
    hann_window, resonator, BiquadSection, FrameCoeffs,
};
use golf::iir::{lfilter_allpole, vjp_coeffs, vjp_input};
use golf::opt::{l2_waveform_grad, msstft_loss, msstft_loss_grad, MsstftConfig};
use golf::oscillator::{harmonic_count, pulse_train};
use golf::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

/// Central difference of `loss` along each unit vector in `idx` and along
/// one random direction; returns (finite differences, analytic projections).
fn probe(
    x: &[f64],
    grad: &[f64],
    idx: &[usize],
    h: f64,
    rng: &mut ChaCha8Rng,
    loss: impl Fn(&[f64]) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut dirs: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| {
            let mut d = vec![0.0; x.len()];
            d[i] = 1.0;
            d
        })
        .collect();
    dirs.push(normal_vec(rng, x.len()));
    dirs.iter()
        .map(|d| {
            let xp: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(d).map(|(a, b)| a - h * b).collect();
            ((loss(&xp) - loss(&xm)) / (2.0 * h), dot(grad, d))
        })
        .unzip()
}

fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let a = TAU * (k * i % n) as f64 / n as f64;
                re += v * a.cos();
                im -= v * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

#[test]
fn pulse_train_has_flat_harmonics_below_nyquist() {
    let period = 64;
    let n = 16 * period;
    let f = 1.0 / period as f64;
    let m = harmonic_count(f);
    assert_eq!(m, 31);
    let spectrum = dft_magnitudes(&pulse_train(&vec![f; n]));
    let line = n as f64 / 2.0 / m as f64;
    for (bin, mag) in spectrum.iter().enumerate() {
        let harmonic = bin % 16 == 0 && (1..=m).contains(&(bin / 16));
        let expected = if harmonic { line } else { 0.0 };
        assert!(
            (mag - expected).abs() < 1e-9 * line,
            "bin {bin}: {mag} vs {expected}"
        );
    }
}

#[test]
fn resonator_impulse_response_is_a_damped_sinusoid() {
    let (r, theta) = (0.97, 0.3);
    let s = resonator(r, theta);
    let mut e = vec![0.0; 400];
    e[0] = 1.0;
    let h = lfilter_allpole(&e, &[s.eta1, s.eta2]).unwrap();
    for (n, y) in h.iter().enumerate() {
        let exact = r.powi(n as i32) * ((n + 1) as f64 * theta).sin() / theta.sin();
        assert!((y - exact).abs() < 1e-12, "n={n}: {y} vs {exact}");
    }
}

#[test]
fn cascade_of_two_filters_chains_both_adjoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a1 = cascade_to_direct(&[resonator(0.9, 0.4), resonator(0.7, 2.0)]).unwrap();
    let a2 = cascade_to_direct(&[resonator(0.8, 1.1), BiquadSection::new(-0.2, 0.1)]).unwrap();
    let n = 64;
    let e = normal_vec(&mut rng, n);
    let g = normal_vec(&mut rng, n);
    let loss = |e: &[f64], a1: &[f64], a2: &[f64]| {
        let s1 = lfilter_allpole(e, a1).unwrap();
        dot(&g, &lfilter_allpole(&s1, a2).unwrap())
    };
    let s1 = lfilter_allpole(&e, &a1).unwrap();
    let s2 = lfilter_allpole(&s1, &a2).unwrap();
    let d_a2 = vjp_coeffs(&g, &s2, &a2).unwrap();
    let g1 = vjp_input(&g, &a2).unwrap();
    let d_a1 = vjp_coeffs(&g1, &s1, &a1).unwrap();
    let d_e = vjp_input(&g1, &a1).unwrap();

    let h = 1e-6;
    let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
    let fd_a1: Vec<f64> = (0..4)
        .map(|i| {
            fd(&|d| {
                let mut a = a1.clone();
                a[i] += d;
                loss(&e, &a, &a2)
            })
        })
        .collect();
    let fd_a2: Vec<f64> = (0..4)
        .map(|i| {
            fd(&|d| {
                let mut a = a2.clone();
                a[i] += d;
                loss(&e, &a1, &a)
            })
        })
        .collect();
    let fd_e: Vec<f64> = (0..n)
        .map(|i| {
            fd(&|d| {
                let mut x = e.clone();
                x[i] += d;
                loss(&x, &a1, &a2)
            })
        })
        .collect();
    assert!(rel_err(&d_a1, &fd_a1) < 1e-6, "{d_a1:?} vs {fd_a1:?}");
    assert!(rel_err(&d_a2, &fd_a2) < 1e-6, "{d_a2:?} vs {fd_a2:?}");
    assert!(rel_err(&d_e, &fd_e) < 1e-6);
}

#[test]
fn framewise_lpc_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (hop, window) = (120, 480);
    let n = 16 * hop;
    let frames_n = n / hop;
    let source = normal_vec(&mut rng, n);
    let gain: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let g = normal_vec(&mut rng, n);
    let sections: Vec<Vec<BiquadSection>> = (0..frames_n)
        .map(|k| {
            vec![
                resonator(0.9, 0.5 + 0.01 * k as f64),
                resonator(0.8, 1.7 - 0.02 * k as f64),
            ]
        })
        .collect();
    let w = hann_window(window);
    let frames_of = |secs: &[Vec<BiquadSection>]| {
        let coeffs = secs.iter().map(|s| cascade_to_direct(s).unwrap()).collect();
        FrameCoeffs::new(coeffs, hop, window).unwrap()
    };
    let loss = |src: &[f64], gain: &[f64], secs: &[Vec<BiquadSection>]| {
        let out = framewise_lpc_forward(src, gain, &frames_of(secs), &w, Exec::Sequential).unwrap();
        dot(&g, &out.output)
    };
    let frames = frames_of(&sections);
    let tape = framewise_lpc_forward(&source, &gain, &frames, &w, Exec::Sequential).unwrap();
    let grads = framewise_lpc_vjp(
        &tape,
        &source,
        &gain,
        &frames,
        &w,
        &g,
        true,
        Exec::Sequential,
    )
    .unwrap();

    let idx: Vec<usize> = (0..12).map(|_| rng.random_range(0..n)).collect();
    let (fd, an) = probe(&source, &grads.source, &idx, 1e-5, &mut rng, |x| {
        loss(x, &gain, &sections)
    });
    assert!(rel_err(&an, &fd) < 1e-4, "source");
    let (fd, an) = probe(&gain, &grads.gain, &idx, 1e-5, &mut rng, |x| {
        loss(&source, x, &sections)
    });
    assert!(rel_err(&an, &fd) < 1e-4, "gain");

    let mut an = Vec::new();
    let mut fd = Vec::new();
    let h = 1e-6;
    for k in [0, 5, frames_n - 1] {
        let d_eta = cascade_to_direct_vjp(&sections[k], &grads.coeffs[k]).unwrap();
        for (i, pair) in d_eta.iter().enumerate() {
            for (j, d) in pair.iter().enumerate() {
                let bump = |delta: f64| {
                    let mut secs = sections.clone();
                    let s = &mut secs[k][i];
                    if j == 0 {
                        s.eta1 += delta;
                    } else {
                        s.eta2 += delta;
                    }
                    loss(&source, &gain, &secs)
                };
                fd.push((bump(h) - bump(-h)) / (2.0 * h));
                an.push(*d);
            }
        }
    }
    assert!(rel_err(&an, &fd) < 1e-4, "eta: {an:?} vs {fd:?}");
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 2400;
    let y: Vec<f64> = (0..n)
        .map(|i| (TAU * 0.011 * i as f64).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let x: Vec<f64> = (0..n)
        .map(|i| {
            0.8 * (TAU * 0.0113 * i as f64 + 0.4).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let idx: Vec<usize> = (0..16).map(|_| rng.random_range(0..n)).collect();

    let cfg = MsstftConfig::default();
    let (_, grad) = msstft_loss_grad(&x, &y, &cfg).unwrap();
    let (fd, an) = probe(&x, &grad, &idx, 1e-6, &mut rng, |x| {
        msstft_loss(x, &y, &cfg).unwrap()
    });
    assert!(rel_err(&an, &fd) < 1e-4, "msstft: {an:?} vs {fd:?}");

    let (_, grad) = l2_waveform_grad(&x, &y).unwrap();
    let (fd, an) = probe(&x, &grad, &idx, 1e-3, &mut rng, |x| {
        l2_waveform_grad(x, &y).unwrap().0
    });
    assert!(rel_err(&an, &fd) < 1e-8, "l2");
}
