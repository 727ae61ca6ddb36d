#![allow(dead_code)]

use std::f64::consts::TAU;
use std::path::Path;

use yingram::{Waveform, ANALYSIS_SAMPLE_RATE};

pub const SR: u32 = ANALYSIS_SAMPLE_RATE;

/// Five harmonics with 1/h amplitudes.
pub fn harmonic(f0: f64, secs: f64, sample_rate: u32) -> Waveform {
    let n = (secs * f64::from(sample_rate)) as usize;
    Waveform::from_fn(n, sample_rate, |t| {
        0.4 * (1..=5).map(|h| (TAU * f0 * h as f64 * t + 0.3 * h as f64).sin() / h as f64).sum::<f64>()
    })
    .unwrap()
}

pub fn write_wav16(path: &Path, w: &Waveform) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = hound::WavWriter::create(path, spec).unwrap();
    for &s in w.samples() {
        out.write_sample((s * 32767.0).round().clamp(-32768.0, 32767.0) as i16).unwrap();
    }
    out.finalize().unwrap();
}
