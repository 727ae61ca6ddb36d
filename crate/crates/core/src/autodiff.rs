//! Reverse-mode derivatives of Yingram channels with respect to frame samples.
//!
//! The Yingram of a frame is a chain of three maps:
//!
//! 1. `d(τ) = Σ_{j<W} (x_j − x_{j+τ})²`
//! 2. `d′(τ) = τ d(τ) / S(τ)` with `S(τ) = Σ_{k=1..τ} d(k)` (pinned to 1 while `S < ε`)
//! 3. `Y[c] = (1 − φ_c) d′(⌊τ_c⌋) + φ_c d′(⌈τ_c⌉)` at the fixed grid lags `τ_c`
//!
//! [`yingram_vjp`] pulls a channel cotangent back through all three. The grid
//! lags do not depend on the signal, so the only non-smooth point is the
//! silence guard, where the derivative is taken to be zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{note_to_lag, YingramParams};
use crate::scalar::Sample;
use crate::signal::Frame;
use crate::yin::{difference_function_naive, DifferenceKernel, CMND_EPS};

/// Gradient of `Σ_c cotangent[c] · Y[c]` with respect to the frame samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Vjp<T> {
    pub gradient: Vec<T>,
    /// True if a weighted channel read a lag inside the silence guard; those
    /// contributions are zero by convention.
    pub guarded: bool,
}

/// Linear-interpolation weights of each channel on the CMND lag axis.
fn channel_taps(params: &YingramParams, sample_rate: u32) -> Vec<(usize, usize, f64)> {
    (0..params.grid.num_channels)
        .map(|ch| {
            let lag = note_to_lag(params.grid.note_of_channel(ch), sample_rate, &params.grid);
            let lo = lag.floor();
            (lo as usize, lag.ceil() as usize, lag - lo)
        })
        .collect()
}

pub fn yingram_vjp<T: Sample>(frame: &Frame<T>, params: &YingramParams, cotangent: &[T]) -> Result<Vjp<T>> {
    let grid = &params.grid;
    if cotangent.len() != grid.num_channels {
        return Err(Error::Dimension(format!(
            "cotangent has {} entries, grid has {} channels",
            cotangent.len(),
            grid.num_channels
        )));
    }
    let (w, tau_max) = (params.window, params.tau_max(frame.sample_rate));
    let d = DifferenceKernel::new(w, tau_max).compute(frame)?.values;
    let x = &frame.samples;

    let eps = T::of(CMND_EPS);
    let mut running = vec![T::zero(); tau_max + 1];
    let mut acc = T::zero();
    for tau in 1..=tau_max {
        acc = acc + d[tau];
        running[tau] = acc;
    }
    let live = |tau: usize| tau > 0 && running[tau] >= eps;

    // cotangent on d′
    let mut g_cmnd = vec![T::zero(); tau_max + 1];
    let mut guarded = false;
    for (&(lo, hi, frac), &wc) in channel_taps(params, frame.sample_rate).iter().zip(cotangent) {
        if wc == T::zero() {
            continue;
        }
        if hi > tau_max {
            return Err(Error::LagOutOfRange { lag: lo as f64 + frac, needed: hi, tau_max });
        }
        let frac = T::of(frac);
        for (tau, weight) in [(lo, T::one() - frac), (hi, frac)] {
            if weight == T::zero() {
                continue;
            }
            if live(tau) {
                g_cmnd[tau] = g_cmnd[tau] + wc * weight;
            } else {
                guarded = true;
            }
        }
    }

    // cotangent on d: ∂d′(τ)/∂d(τ) = τ/S(τ) − d′(τ)/S(τ), ∂d′(τ)/∂d(k<τ) = −d′(τ)/S(τ)
    let mut g_diff = vec![T::zero(); tau_max + 1];
    let mut tail = T::zero();
    for tau in (1..=tau_max).rev() {
        if live(tau) && g_cmnd[tau] != T::zero() {
            let s = running[tau];
            let dprime = d[tau] * T::of_usize(tau) / s;
            tail = tail + g_cmnd[tau] * dprime / s;
            g_diff[tau] = g_cmnd[tau] * T::of_usize(tau) / s;
        }
        g_diff[tau] = g_diff[tau] - tail;
    }

    // cotangent on x through the squared differences
    let mut gradient = vec![T::zero(); x.len()];
    let two = T::of(2.0);
    for (tau, &g) in g_diff.iter().enumerate().skip(1) {
        if g == T::zero() {
            continue;
        }
        let g2 = two * g;
        for j in 0..w {
            let t = g2 * (x[j] - x[j + tau]);
            gradient[j] = gradient[j] + t;
            gradient[j + tau] = gradient[j + tau] - t;
        }
    }
    Ok(Vjp { gradient, guarded })
}

/// Settings for [`finite_diff_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckParams {
    pub eps: f64,
    pub probes: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckParams {
    fn default() -> Self {
        GradcheckParams { eps: 1e-5, probes: 25, tolerance: 1e-4, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked_channels: usize,
    pub probes: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Set when the silence guard was active; guarded probes are skipped.
    pub guarded: bool,
    pub pass: bool,
}

/// Central difference `(Φ(x + ε eᵢ) − Φ(x − ε eᵢ)) / 2ε` of `Φ = Σ_c w_c Y[c]`.
///
/// Perturbing `x_i` only changes the squared differences that contain it, so
/// the change is carried through `d`, the running sum and the quotient as a
/// difference rather than by subtracting two full evaluations. Forming `Φ`
/// twice would lose the leading digits of a small derivative to cancellation.
fn central_difference<T: Sample>(
    x: &[T],
    base: &[T],
    window: usize,
    taps: &[(usize, usize, f64)],
    weights: &[T],
    i: usize,
    eps: T,
) -> T {
    let tau_max = base.len() - 1;
    let (xp, xm) = (x[i] + eps, x[i] - eps);
    let guard = T::of(CMND_EPS);

    let mut delta = vec![T::zero(); tau_max + 1];
    let (mut s_minus, mut s_delta) = (T::zero(), T::zero());
    for tau in 1..=tau_max {
        // d₊ − d₋ and d₋ − d over the terms that contain x_i
        let (mut dd, mut dm) = (T::zero(), T::zero());
        if i < window {
            let other = x[i + tau];
            let (u, up, um) = (x[i] - other, xp - other, xm - other);
            dd = dd + (up - um) * (up + um);
            dm = dm + (um - u) * (um + u);
        }
        if i >= tau && i - tau < window {
            let other = x[i - tau];
            let (v, vp, vm) = (other - x[i], other - xp, other - xm);
            dd = dd + (vp - vm) * (vp + vm);
            dm = dm + (vm - v) * (vm + v);
        }
        let d_minus = base[tau] + dm;
        s_minus = s_minus + d_minus;
        s_delta = s_delta + dd;
        let s_plus = s_minus + s_delta;
        let t = T::of_usize(tau);
        delta[tau] = match (s_plus >= guard, s_minus >= guard) {
            (true, true) => t * (dd * s_minus - d_minus * s_delta) / (s_plus * s_minus),
            (true, false) => t * (d_minus + dd) / s_plus - T::one(),
            (false, true) => T::one() - t * d_minus / s_minus,
            (false, false) => T::zero(),
        };
    }
    let change: T = taps
        .iter()
        .zip(weights)
        .map(|(&(lo, hi, frac), &w)| w * (delta[lo] + (delta[hi] - delta[lo]) * T::of(frac)))
        .sum();
    change / (eps + eps)
}

/// Compares [`yingram_vjp`] against central differences on random sample indices.
///
/// The cotangent draws a uniform weight in `[-1, 1]` for every channel. The
/// difference quotients run on the naive difference function, independent of
/// the FFT kernel the analytic path uses. Each probe's relative error has the
/// denominator `max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_diff_check<T: Sample>(
    frame: &Frame<T>,
    params: &YingramParams,
    check: &GradcheckParams,
) -> Result<GradReport> {
    if !(check.eps > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {} must be positive", check.eps)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let channels = params.grid.num_channels;
    let weights: Vec<T> = (0..channels).map(|_| T::of(rng.gen_range(-1.0..=1.0))).collect();
    let vjp = yingram_vjp(frame, params, &weights)?;

    let mut report = GradReport {
        max_rel_error: 0.0,
        checked_channels: channels,
        probes: 0,
        eps: check.eps,
        tolerance: check.tolerance,
        guarded: vjp.guarded,
        pass: true,
    };
    if vjp.guarded {
        log::warn!("silence guard active on checked channels; skipping comparison");
        return Ok(report);
    }

    let tau_max = params.tau_max(frame.sample_rate);
    let base = difference_function_naive(frame, tau_max, params.window)?.values;
    let taps = channel_taps(params, frame.sample_rate);
    let eps = T::of(check.eps);
    for _ in 0..check.probes {
        let i = rng.gen_range(0..frame.len());
        let numeric = central_difference(&frame.samples, &base, params.window, &taps, &weights, i, eps).as_f64();
        let analytic = vjp.gradient[i].as_f64();
        let denom = analytic.abs().max(numeric.abs()).max(1e-12);
        report.max_rel_error = report.max_rel_error.max((analytic - numeric).abs() / denom);
        report.probes += 1;
    }
    report.pass = report.max_rel_error < check.tolerance;
    Ok(report)
}

/// A seeded voiced frame: one to three partials between 60 and 480 Hz plus a
/// little uniform noise. Never silent.
pub fn random_voiced_frame<T: Sample, R: Rng>(rng: &mut R, len: usize, sample_rate: u32) -> Frame<T> {
    let partials: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..=3))
        .map(|_| {
            (
                rng.gen_range(60.0..480.0),
                rng.gen_range(0.2..1.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let sr = f64::from(sample_rate);
    let samples = (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let tone: f64 = partials
                .iter()
                .map(|&(f, a, p)| a * (std::f64::consts::TAU * f * t + p).sin())
                .sum();
            T::of(tone + rng.gen_range(-0.05..0.05))
        })
        .collect();
    Frame::from_samples(samples, sample_rate)
}
