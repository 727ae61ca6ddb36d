//! YIN primitives: squared-difference function, cumulative mean normalized
//! difference (CMND), parabolic lag refinement and a thresholded f0 picker.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Sample;
use crate::signal::Frame;

/// Denominator floor for the CMND quotient. Below it the curve is pinned to 1.
pub const CMND_EPS: f64 = 1e-8;

/// `d(τ) = Σ_{j<W} (x_j − x_{j+τ})²` for `τ = 0..=tau_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceCurve<T> {
    pub values: Vec<T>,
    pub window: usize,
    pub sample_rate: u32,
}

impl<T: Sample> DifferenceCurve<T> {
    pub fn tau_max(&self) -> usize {
        self.values.len() - 1
    }
}

/// Cumulative mean normalized difference `d′(τ)`, with `d′(0) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CmndCurve<T> {
    pub values: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Sample> CmndCurve<T> {
    pub fn tau_max(&self) -> usize {
        self.values.len() - 1
    }
}

fn check_frame_len(len: usize, window: usize, tau_max: usize) -> Result<()> {
    let needed = window + tau_max;
    if len < needed || window == 0 {
        return Err(Error::InsufficientFrameLength { needed, got: len });
    }
    Ok(())
}

/// Direct `O(W · tau_max)` evaluation of the difference function.
pub fn difference_function_naive<T: Sample>(
    frame: &Frame<T>,
    tau_max: usize,
    window: usize,
) -> Result<DifferenceCurve<T>> {
    check_frame_len(frame.len(), window, tau_max)?;
    let x = &frame.samples;
    let values = (0..=tau_max)
        .map(|tau| {
            x[..window]
                .iter()
                .zip(&x[tau..tau + window])
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    Ok(DifferenceCurve { values, window, sample_rate: frame.sample_rate })
}

/// Smallest `2^a · 3^b · 5^c` that is at least `n`.
fn smooth_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut m = p35;
            while m < n {
                m *= 2;
            }
            best = best.min(m);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// FFT-backed difference function for a fixed `(window, tau_max)` pair.
///
/// Uses `d(τ) = e₀ + e_τ − 2 r(τ)` where `e_τ` is the energy of
/// `x[τ..τ+W]` and `r` the cross-correlation of `x[..W]` with the frame.
/// Both real inputs share one complex forward transform.
pub struct DifferenceKernel<T: Sample> {
    window: usize,
    tau_max: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    buf: Vec<Complex<T>>,
    spec: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
    prefix: Vec<T>,
}

impl<T: Sample> DifferenceKernel<T> {
    pub fn new(window: usize, tau_max: usize) -> Self {
        let fft_len = smooth_len(window + tau_max);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        DifferenceKernel {
            window,
            tau_max,
            fft_len,
            forward,
            inverse,
            buf: vec![Complex::default(); fft_len],
            spec: vec![Complex::default(); fft_len],
            scratch: vec![Complex::default(); scratch_len],
            prefix: Vec::with_capacity(window + tau_max + 1),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn tau_max(&self) -> usize {
        self.tau_max
    }

    pub fn frame_len(&self) -> usize {
        self.window + self.tau_max
    }

    pub fn compute(&mut self, frame: &Frame<T>) -> Result<DifferenceCurve<T>> {
        let (w, tau_max, n) = (self.window, self.tau_max, self.fft_len);
        check_frame_len(frame.len(), w, tau_max)?;
        let x = &frame.samples[..w + tau_max];

        // pack a = x[..W] into the real part, b = x into the imaginary part
        for (i, z) in self.buf.iter_mut().enumerate() {
            let re = if i < w { x[i] } else { T::zero() };
            let im = x.get(i).copied().unwrap_or_else(T::zero);
            *z = Complex::new(re, im);
        }
        self.forward.process_with_scratch(&mut self.buf, &mut self.scratch);

        let half = T::of(0.5);
        for k in 0..n {
            let zk = self.buf[k];
            let zn = self.buf[(n - k) % n].conj();
            let a = (zk + zn) * half;
            // (zk - zn) / 2i
            let d = (zk - zn) * half;
            let b = Complex::new(d.im, -d.re);
            self.spec[k] = a.conj() * b;
        }
        self.inverse.process_with_scratch(&mut self.spec, &mut self.scratch);

        self.prefix.clear();
        self.prefix.push(T::zero());
        let mut acc = T::zero();
        for &s in x {
            acc = acc + s * s;
            self.prefix.push(acc);
        }
        let energy0 = self.prefix[w];
        let scale = T::one() / T::of_usize(n);

        let mut values = Vec::with_capacity(tau_max + 1);
        values.push(T::zero());
        for tau in 1..=tau_max {
            let energy = self.prefix[tau + w] - self.prefix[tau];
            let r = self.spec[tau].re * scale;
            let d = energy0 + energy - (r + r);
            values.push(d.max(T::zero()));
        }
        Ok(DifferenceCurve { values, window: w, sample_rate: frame.sample_rate })
    }
}

/// FFT-accelerated difference function. Builds a one-off [`DifferenceKernel`];
/// reuse a kernel directly when processing many frames.
pub fn difference_function<T: Sample>(
    frame: &Frame<T>,
    tau_max: usize,
    window: usize,
) -> Result<DifferenceCurve<T>> {
    check_frame_len(frame.len(), window, tau_max)?;
    DifferenceKernel::new(window, tau_max).compute(frame)
}

/// `d′(τ) = d(τ) · τ / Σ_{j=1..τ} d(j)`, pinned to 1 while the running sum is below [`CMND_EPS`].
pub fn cmnd<T: Sample>(d: &DifferenceCurve<T>) -> CmndCurve<T> {
    let eps = T::of(CMND_EPS);
    let mut running = T::zero();
    let values = d
        .values
        .iter()
        .enumerate()
        .map(|(tau, &v)| {
            if tau == 0 {
                return T::one();
            }
            running = running + v;
            if running < eps {
                T::one()
            } else {
                v * T::of_usize(tau) / running
            }
        })
        .collect();
    CmndCurve { values, sample_rate: d.sample_rate }
}

/// Vertex of the parabola through `d′(τ−1), d′(τ), d′(τ+1)`, clamped to `[τ−1, τ+1]`.
///
/// Lags without both neighbours come back unchanged.
pub fn parabolic_refine<T: Sample>(c: &CmndCurve<T>, tau: usize) -> T {
    let t = T::of_usize(tau);
    if tau < 1 || tau + 1 > c.tau_max() {
        return t;
    }
    let (a, b, cc) = (c.values[tau - 1], c.values[tau], c.values[tau + 1]);
    let curvature = a - (b + b) + cc;
    if curvature.abs() <= T::epsilon() {
        return t;
    }
    let offset = (a - cc) / (curvature + curvature);
    t + offset.max(-T::one()).min(T::one())
}

/// Parameters of the thresholded f0 picker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Params {
    /// First-dip threshold on `d′`.
    pub threshold: f64,
    /// Frames whose chosen `d′` exceeds this are unvoiced.
    pub voicing_cutoff: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for F0Params {
    fn default() -> Self {
        F0Params { threshold: 0.1, voicing_cutoff: 0.25, f_min: 52.0, f_max: 508.0 }
    }
}

/// Outcome of the lag search for one frame, voiced or not.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LagChoice<T> {
    pub lag: usize,
    pub refined_lag: T,
    pub aperiodicity: T,
    pub voiced: bool,
}

/// A voiced pitch estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchEstimate<T> {
    pub f0: T,
    pub aperiodicity: T,
}

/// Integer lag range searched for `params`, `[floor(sr/f_max), ceil(sr/f_min)]`,
/// trimmed so that every lag keeps both neighbours inside the curve.
pub fn lag_search_range(sample_rate: u32, tau_max: usize, params: &F0Params) -> Result<(usize, usize)> {
    let sr = f64::from(sample_rate);
    let ok = params.f_min.is_finite()
        && params.f_max.is_finite()
        && params.f_min > 0.0
        && params.f_min < params.f_max
        && params.f_max <= sr / 2.0;
    if !ok {
        return Err(Error::InvalidF0Bounds(format!(
            "need 0 < f_min < f_max <= {}, got [{}, {}]",
            sr / 2.0,
            params.f_min,
            params.f_max
        )));
    }
    let lo = ((sr / params.f_max).floor() as usize).max(2);
    let hi = ((sr / params.f_min).ceil() as usize).min(tau_max.saturating_sub(1));
    if lo > hi {
        return Err(Error::InvalidF0Bounds(format!(
            "empty lag range [{lo}, {hi}] for tau_max {tau_max}"
        )));
    }
    Ok((lo, hi))
}

/// Picks the first local minimum below `threshold` (the global minimum if
/// none dips that low) and decides voicing.
///
/// A frame is voiced when the chosen lag is a local minimum of `d′` and its
/// value does not exceed `voicing_cutoff`.
pub fn choose_lag<T: Sample>(c: &CmndCurve<T>, params: &F0Params) -> Result<LagChoice<T>> {
    let (lo, hi) = lag_search_range(c.sample_rate, c.tau_max(), params)?;
    let v = &c.values;
    let threshold = T::of(params.threshold);

    let lag = match (lo..=hi).find(|&t| v[t] < threshold) {
        Some(mut t) => {
            while t < hi && v[t + 1] < v[t] {
                t += 1;
            }
            t
        }
        None => (lo..=hi)
            .min_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(lo),
    };

    let aperiodicity = v[lag];
    let local_min = v[lag - 1] >= aperiodicity && v[lag + 1] >= aperiodicity;
    let voiced = local_min && aperiodicity <= T::of(params.voicing_cutoff);
    Ok(LagChoice { lag, refined_lag: parabolic_refine(c, lag), aperiodicity, voiced })
}

/// Thresholded YIN pitch estimate; `None` for unvoiced frames.
///
/// The returned f0 is clamped into `[f_min, f_max]`.
pub fn estimate_f0<T: Sample>(c: &CmndCurve<T>, params: &F0Params) -> Result<Option<PitchEstimate<T>>> {
    let choice = choose_lag(c, params)?;
    if !choice.voiced {
        return Ok(None);
    }
    let f0 = T::of(f64::from(c.sample_rate)) / choice.refined_lag;
    let f0 = f0.max(T::of(params.f_min)).min(T::of(params.f_max));
    Ok(Some(PitchEstimate { f0, aperiodicity: choice.aperiodicity }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const W: usize = 2048;
    const TAU_MAX: usize = 426;
    const SR: u32 = 22050;

    fn sine_frame(freq: f64, phase: f64) -> Frame<f64> {
        let samples = (0..W + TAU_MAX)
            .map(|n| (2.0 * PI * freq * n as f64 / f64::from(SR) + phase).sin())
            .collect();
        Frame::from_samples(samples, SR)
    }

    fn noise_frame(rng: &mut ChaCha8Rng) -> Frame<f64> {
        // Box-Muller, unit variance
        let samples = (0..W + TAU_MAX)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
            })
            .collect();
        Frame::from_samples(samples, SR)
    }

    /// Brute-force oracle written independently of both library paths.
    fn oracle_difference(x: &[f64], tau: usize, w: usize) -> f64 {
        let mut s = 0.0;
        for j in 0..w {
            let diff = x[j] - x[j + tau];
            s += diff * diff;
        }
        s
    }

    #[test]
    fn smooth_lengths() {
        assert_eq!(smooth_len(2474), 2500);
        assert_eq!(smooth_len(1), 1);
        assert_eq!(smooth_len(7), 8);
        assert_eq!(smooth_len(11), 12);
        assert_eq!(smooth_len(1024), 1024);
    }

    #[test]
    fn silent_and_constant_frames_have_zero_difference() {
        for value in [0.0f64, 0.7] {
            let f = Frame::from_samples(vec![value; W + TAU_MAX], SR);
            for d in [difference_function(&f, TAU_MAX, W).unwrap(), difference_function_naive(&f, TAU_MAX, W).unwrap()] {
                assert!(d.values.iter().all(|&v| v.abs() < 1e-9), "value {value}");
            }
        }
    }

    #[test]
    fn sine_period_100_nulls_difference() {
        let f = sine_frame(220.5, 0.3);
        let d = difference_function(&f, TAU_MAX, W).unwrap();
        let oracle_100 = oracle_difference(&f.samples, 100, W);
        let oracle_50 = oracle_difference(&f.samples, 50, W);
        assert!(oracle_100 < 1e-6 * oracle_50);
        assert!(d.values[100] < 1e-6 * d.values[50]);
        assert!((d.values[50] - oracle_50).abs() < 1e-9 * oracle_50);
        assert_eq!(d.values[0], 0.0);
    }

    #[test]
    fn fft_and_naive_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut kernel = DifferenceKernel::new(W, TAU_MAX);
        for _ in 0..10 {
            let f = noise_frame(&mut rng);
            let fast = kernel.compute(&f).unwrap();
            let slow = difference_function_naive(&f, TAU_MAX, W).unwrap();
            for tau in 1..=TAU_MAX {
                let rel = (fast.values[tau] - slow.values[tau]).abs() / slow.values[tau];
                assert!(rel < 1e-9, "tau {tau}: rel {rel}");
            }
        }
    }

    #[test]
    fn short_frame_is_rejected() {
        let f = Frame::from_samples(vec![0.0f64; W + TAU_MAX - 1], SR);
        assert!(matches!(
            difference_function(&f, TAU_MAX, W),
            Err(Error::InsufficientFrameLength { .. })
        ));
        assert!(difference_function_naive(&f, TAU_MAX, W).is_err());
    }

    #[test]
    fn cmnd_definition_and_guard() {
        let d = DifferenceCurve { values: vec![0.0f64; 10], window: 4, sample_rate: SR };
        let c = cmnd(&d);
        assert!(c.values.iter().all(|&v| v == 1.0));

        let d = DifferenceCurve { values: vec![0.0f64, 2.0, 1.0, 3.0], window: 4, sample_rate: SR };
        let c = cmnd(&d);
        assert_eq!(c.values[0], 1.0);
        assert!((c.values[1] - 1.0).abs() < 1e-15);
        assert!((c.values[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.values[3] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn cmnd_dips_at_sine_period() {
        let c = cmnd(&difference_function(&sine_frame(220.5, 1.1), TAU_MAX, W).unwrap());
        assert!(c.values[100] < 0.05);
        assert!(c.values[100] <= c.values[99] && c.values[100] <= c.values[101]);
    }

    fn curve(vals: &[f64]) -> CmndCurve<f64> {
        CmndCurve { values: vals.to_vec(), sample_rate: SR }
    }

    /// Least-squares quadratic through sampled points, minimised on a dense grid.
    fn dense_vertex(a: f64, b: f64, c: f64) -> f64 {
        let (mut best, mut best_x) = (f64::INFINITY, 0.0);
        for i in 0..=200_000 {
            let x = -1.0 + i as f64 * 1e-5;
            // Lagrange basis on {-1, 0, 1}
            let y = a * x * (x - 1.0) / 2.0 + b * (1.0 - x * x) + c * x * (x + 1.0) / 2.0;
            if y < best {
                best = y;
                best_x = x;
            }
        }
        best_x
    }

    #[test]
    fn parabolic_refine_examples() {
        assert_eq!(parabolic_refine(&curve(&[1.0, 1.0, 0.0, 1.0, 1.0]), 2), 2.0);
        assert_eq!(parabolic_refine(&curve(&[1.0, 0.3, 0.1, 0.3, 1.0]), 2), 2.0);
        let refined = parabolic_refine(&curve(&[1.0, 0.4, 0.1, 0.2, 1.0]), 2);
        let oracle = 2.0 + dense_vertex(0.4, 0.1, 0.2);
        assert!((refined - 2.25).abs() < 1e-12);
        assert!((refined - oracle).abs() < 1e-4);
    }

    #[test]
    fn parabolic_refine_boundaries_and_clamp() {
        let c = curve(&[1.0, 0.5, 0.2, 0.1]);
        assert_eq!(parabolic_refine(&c, 0), 0.0);
        assert_eq!(parabolic_refine(&c, 3), 3.0);
        // monotone neighbourhood pushes the vertex beyond the bracket
        let c = curve(&[1.0, 0.9, 0.5, 0.1001, 0.0]);
        let r = parabolic_refine(&c, 2);
        assert!((1.0..=3.0).contains(&r));
    }

    #[test]
    fn estimate_440_hz() {
        let c = cmnd(&difference_function(&sine_frame(440.0, 0.2), TAU_MAX, W).unwrap());
        let est = estimate_f0(&c, &F0Params::default()).unwrap().expect("voiced");
        assert!((est.f0 - 440.0).abs() < 1.0, "{}", est.f0);
        assert!(est.aperiodicity < 0.1);
    }

    #[test]
    fn silence_is_unvoiced() {
        let f = Frame::from_samples(vec![0.0f64; W + TAU_MAX], SR);
        let c = cmnd(&difference_function(&f, TAU_MAX, W).unwrap());
        assert!(estimate_f0(&c, &F0Params::default()).unwrap().is_none());
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut kernel = DifferenceKernel::new(W, TAU_MAX);
        let unvoiced = (0..100)
            .filter(|_| {
                let c = cmnd(&kernel.compute(&noise_frame(&mut rng)).unwrap());
                estimate_f0(&c, &F0Params::default()).unwrap().is_none()
            })
            .count();
        assert!(unvoiced >= 95, "only {unvoiced}/100 unvoiced");
    }

    #[test]
    fn out_of_range_tone_is_unvoiced() {
        let c = cmnd(&difference_function(&sine_frame(220.0, 0.0), TAU_MAX, W).unwrap());
        let params = F0Params { f_min: 300.0, ..F0Params::default() };
        assert!(estimate_f0(&c, &params).unwrap().is_none());
    }

    #[test]
    fn invalid_bounds() {
        let c = curve(&vec![1.0; 427]);
        for (lo, hi) in [(0.0, 100.0), (300.0, 200.0), (50.0, 20000.0), (f64::NAN, 100.0)] {
            let p = F0Params { f_min: lo, f_max: hi, ..F0Params::default() };
            assert!(matches!(estimate_f0(&c, &p), Err(Error::InvalidF0Bounds(_))), "{lo} {hi}");
        }
        // range entirely above tau_max
        let short = curve(&[1.0; 20]);
        assert!(matches!(estimate_f0(&short, &F0Params::default()), Err(Error::InvalidF0Bounds(_))));
    }
}
