//! Waveform ingestion, band-limited resampling and framing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Sample;

/// Mono sample buffer at a fixed integer sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Sample> Waveform<T> {
    /// Fails if `sample_rate` is zero or any sample is NaN/Inf.
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    /// Builds a waveform from a closure over the time in seconds.
    pub fn from_fn(len: usize, sample_rate: u32, f: impl Fn(f64) -> f64) -> Result<Self> {
        let sr = f64::from(sample_rate);
        let samples = (0..len).map(|n| T::of(f(n as f64 / sr))).collect();
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Reinterprets the samples at another rate without touching them.
    ///
    /// Combined with [`resample`] this is how pitch shifts with known ratios
    /// are produced: resample to `sr * r`, then relabel as `sr`.
    pub fn with_sample_rate(self, sample_rate: u32) -> Result<Self> {
        Self::new(self.samples, sample_rate)
    }

    pub fn scaled(&self, gain: T) -> Self {
        Waveform {
            samples: self.samples.iter().map(|&s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// A contiguous analysis window cut from a [`Waveform`].
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    pub samples: Vec<T>,
    pub start_index: usize,
    pub sample_rate: u32,
    /// True when the window extends past the end of the source and was zero-filled.
    pub padded: bool,
}

impl<T: Sample> Frame<T> {
    /// Wraps an in-memory buffer as an unpadded frame starting at sample 0.
    pub fn from_samples(samples: Vec<T>, sample_rate: u32) -> Self {
        Frame { samples, start_index: 0, sample_rate, padded: false }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Reads a RIFF/WAVE file, averaging all channels to mono.
///
/// Integer PCM is scaled by `2^(bits - 1)`; 32-bit float is taken as is.
pub fn load_wav<T: Sample>(path: impl AsRef<Path>) -> Result<Waveform<T>> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 {
        return Err(Error::CorruptFile(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = f64::from(1u32 << (bits - 1));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };

    if !interleaved.len().is_multiple_of(channels) {
        return Err(Error::CorruptFile(format!("{}: partial sample frame", path.display())));
    }
    let inv = 1.0 / channels as f64;
    let mono: Vec<T> = interleaved
        .chunks_exact(channels)
        .map(|frame| T::of(frame.iter().sum::<f64>() * inv))
        .collect();
    if mono.iter().any(|s| !s.is_finite()) {
        return Err(Error::CorruptFile(format!("{}: non-finite sample", path.display())));
    }
    Waveform::new(mono, spec.sample_rate)
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        // hound reports a short read as `Other`
        hound::Error::IoError(e) if matches!(e.kind(), std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other) => {
            Error::CorruptFile(format!("{}: truncated data", path.display()))
        }
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::Unsupported => {
            Error::UnsupportedFormat(format!("{}: codec not supported", path.display()))
        }
        hound::Error::FormatError(msg) => Error::CorruptFile(format!("{}: {msg}", path.display())),
        other => Error::CorruptFile(format!("{}: {other}", path.display())),
    }
}

const RESAMPLE_TAPS: usize = 64;
const RESAMPLE_PHASES: usize = 512;
const KAISER_BETA: f64 = 8.6;
const CUTOFF: f64 = 0.92;

/// Polyphase Kaiser-windowed sinc interpolator for a fixed rate pair.
///
/// Output sample `n` sits at input position `n * source / target`, computed
/// exactly in integers. Coefficients between table phases are linearly
/// interpolated.
#[derive(Clone, Debug)]
pub struct Resampler {
    source_rate: u32,
    target_rate: u32,
    // (RESAMPLE_PHASES + 1) rows of RESAMPLE_TAPS coefficients
    table: Vec<f64>,
}

impl Resampler {
    pub fn new(source_rate: u32, target_rate: u32) -> Result<Self> {
        if source_rate == 0 || target_rate == 0 {
            return Err(Error::InvalidArgument("sample rates must be positive".into()));
        }
        let ratio = f64::from(target_rate) / f64::from(source_rate);
        let fc = CUTOFF * ratio.min(1.0);
        let half = (RESAMPLE_TAPS / 2) as f64;
        let norm = bessel_i0(KAISER_BETA);

        let mut table = Vec::with_capacity((RESAMPLE_PHASES + 1) * RESAMPLE_TAPS);
        for phase in 0..=RESAMPLE_PHASES {
            let frac = phase as f64 / RESAMPLE_PHASES as f64;
            let start = table.len();
            for k in 0..RESAMPLE_TAPS {
                // distance from the output position to input tap k
                let t = frac + (half - 1.0) - k as f64;
                let u = t / half;
                let window = if u.abs() >= 1.0 {
                    0.0
                } else {
                    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / norm
                };
                table.push(fc * sinc(fc * t) * window);
            }
            let gain: f64 = table[start..].iter().sum();
            table[start..].iter_mut().for_each(|c| *c /= gain);
        }
        Ok(Resampler { source_rate, target_rate, table })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        let num = input_len as u128 * u128::from(self.target_rate);
        let den = u128::from(self.source_rate);
        ((2 * num + den) / (2 * den)) as usize
    }

    pub fn process<T: Sample>(&self, input: &[T]) -> Vec<T> {
        let n_out = self.output_len(input.len());
        let src = u64::from(self.source_rate);
        let dst = u64::from(self.target_rate);
        let half = RESAMPLE_TAPS as i64 / 2;
        let x: Vec<f64> = input.iter().map(|s| s.as_f64()).collect();
        let mut coeffs = [0.0f64; RESAMPLE_TAPS];

        (0..n_out as u64)
            .map(|n| {
                let pos = n * src;
                let base = (pos / dst) as i64;
                let frac = (pos % dst) as f64 / dst as f64;
                let p = frac * RESAMPLE_PHASES as f64;
                let row = (p.floor() as usize).min(RESAMPLE_PHASES - 1);
                let w = p - row as f64;
                let lo = &self.table[row * RESAMPLE_TAPS..(row + 1) * RESAMPLE_TAPS];
                let hi = &self.table[(row + 1) * RESAMPLE_TAPS..(row + 2) * RESAMPLE_TAPS];
                for (c, (a, b)) in coeffs.iter_mut().zip(lo.iter().zip(hi)) {
                    *c = a + (b - a) * w;
                }

                let first = base - (half - 1);
                let acc: f64 = coeffs
                    .iter()
                    .enumerate()
                    .filter_map(|(k, c)| {
                        let j = first + k as i64;
                        (j >= 0 && (j as usize) < x.len()).then(|| c * x[j as usize])
                    })
                    .sum();
                T::of(acc)
            })
            .collect()
    }
}

/// Band-limited conversion of `w` to `target_sr`.
///
/// The output holds `round(len * target_sr / source_sr)` samples; equal rates
/// return the input unchanged.
pub fn resample<T: Sample>(w: &Waveform<T>, target_sr: u32) -> Result<Waveform<T>> {
    if target_sr == 0 {
        return Err(Error::InvalidArgument("target sample rate must be positive".into()));
    }
    if target_sr == w.sample_rate {
        return Ok(w.clone());
    }
    let resampler = Resampler::new(w.sample_rate, target_sr)?;
    Waveform::new(resampler.process(&w.samples), target_sr)
}

/// Slices `w` into `ceil(len / hop)` frames starting at multiples of `hop`.
///
/// Frames that run past the end of the signal are zero-filled and flagged.
pub fn frame_signal<T: Sample>(w: &Waveform<T>, frame_len: usize, hop: usize) -> Result<Vec<Frame<T>>> {
    if frame_len == 0 || hop == 0 {
        return Err(Error::InvalidArgument("frame length and hop must be positive".into()));
    }
    let len = w.len();
    let count = len.div_ceil(hop);
    Ok((0..count)
        .map(|k| {
            let start = k * hop;
            let end = (start + frame_len).min(len);
            let mut samples = Vec::with_capacity(frame_len);
            samples.extend_from_slice(&w.samples[start..end]);
            let padded = samples.len() < frame_len;
            samples.resize(frame_len, T::zero());
            Frame { samples, start_index: start, sample_rate: w.sample_rate, padded }
        })
        .collect())
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
