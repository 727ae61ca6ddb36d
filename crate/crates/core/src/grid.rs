//! The 24-TET note grid, Yingram extraction and scope-shift arithmetic.
//!
//! Channel `c` of a Yingram samples the CMND curve at the lag of note
//! `start_note + c`, so a pitch change of one grid step moves the pattern by
//! one channel. A scope is a 50-channel window into the 80-channel axis; the
//! default scope covers channels 15..=64 (0-indexed) and a shift `s` moves it
//! to `15 + s ..= 64 + s`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Sample;
use crate::signal::{frame_signal, Frame, Waveform};
use crate::yin::{cmnd, CmndCurve, DifferenceKernel};

/// Channels in a scope.
pub const SCOPE_LEN: usize = 50;
/// First channel of the unshifted scope.
pub const SCOPE_START: usize = 15;
/// Largest admissible `|s|`.
pub const MAX_SHIFT: i32 = 15;

/// Equal-temperament note grid anchored at `reference_note -> reference_hz`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteGrid {
    pub start_note: i32,
    pub num_channels: usize,
    pub bins_per_octave: u32,
    pub reference_note: i32,
    pub reference_hz: f64,
}

impl Default for NoteGrid {
    fn default() -> Self {
        NoteGrid {
            start_note: -5,
            num_channels: 80,
            bins_per_octave: 24,
            reference_note: 69,
            reference_hz: 440.0,
        }
    }
}

impl NoteGrid {
    pub fn validate(&self) -> Result<()> {
        if self.num_channels == 0 || self.bins_per_octave == 0 {
            return Err(Error::Config("grid needs channels and bins per octave".into()));
        }
        if !(self.reference_hz.is_finite() && self.reference_hz > 0.0) {
            return Err(Error::Config(format!("reference frequency {} must be positive", self.reference_hz)));
        }
        Ok(())
    }

    pub fn note_of_channel(&self, channel: usize) -> i32 {
        self.start_note + channel as i32
    }

    pub fn end_note(&self) -> i32 {
        self.note_of_channel(self.num_channels - 1)
    }

    /// Largest lag any channel touches, plus one so the interpolation ceiling exists.
    pub fn tau_max(&self, sample_rate: u32) -> usize {
        note_to_lag(self.start_note, sample_rate, self).ceil() as usize + 1
    }
}

/// `f(m) = reference_hz · 2^((m − reference_note) / bins_per_octave)`.
pub fn note_to_hz(note: i32, grid: &NoteGrid) -> f64 {
    let steps = note - grid.reference_note;
    // whole octaves are applied exactly so that f(m + B) = 2 f(m) bit for bit
    let b = grid.bins_per_octave as i32;
    let octaves = steps.div_euclid(b);
    let rem = steps.rem_euclid(b);
    let frac = if rem == 0 { 1.0 } else { (f64::from(rem) / f64::from(b)).exp2() };
    grid.reference_hz * frac * 2f64.powi(octaves)
}

/// Period of note `m` in samples at `sample_rate`.
pub fn note_to_lag(note: i32, sample_rate: u32, grid: &NoteGrid) -> f64 {
    f64::from(sample_rate) / note_to_hz(note, grid)
}

/// Pitch shift in semitones produced by scope shift `s` (two grid steps per semitone).
pub fn shift_to_semitones(s: i32) -> f64 {
    -f64::from(s) / 2.0
}

/// A 50-channel window into the Yingram channel axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    shift: i32,
}

impl Scope {
    pub fn new(shift: i32) -> Result<Self> {
        if !(-MAX_SHIFT..=MAX_SHIFT).contains(&shift) {
            return Err(Error::ShiftOutOfRange(shift));
        }
        Ok(Scope { shift })
    }

    pub fn shift(&self) -> i32 {
        self.shift
    }

    pub fn start_channel(&self) -> usize {
        (SCOPE_START as i32 + self.shift) as usize
    }

    pub fn len(&self) -> usize {
        SCOPE_LEN
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> std::ops::Range<usize> {
        self.start_channel()..self.start_channel() + SCOPE_LEN
    }
}

/// Frames × channels Yingram with the grid and framing it was computed on.
#[derive(Clone, Debug, PartialEq)]
pub struct YingramMatrix<T> {
    pub values: Matrix<T>,
    pub grid: NoteGrid,
    pub hop: usize,
    pub sample_rate: u32,
    /// Per-frame zero-padding flag carried over from framing.
    pub padded: Vec<bool>,
}

impl<T: Sample> YingramMatrix<T> {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, t: usize) -> &[T] {
        self.values.row(t)
    }

    pub fn get(&self, t: usize, c: usize) -> T {
        self.values[(t, c)]
    }

    /// Keeps the first `frames` rows.
    pub fn truncated(&self, frames: usize) -> Self {
        let frames = frames.min(self.frames());
        YingramMatrix {
            values: self.values.top_rows(frames),
            grid: self.grid,
            hop: self.hop,
            sample_rate: self.sample_rate,
            padded: self.padded[..frames].to_vec(),
        }
    }

    /// Index of the smallest channel value in frame `t`.
    pub fn argmin_channel(&self, t: usize) -> usize {
        self.row(t)
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(c, _)| c)
            .unwrap_or(0)
    }

    pub fn sidecar(&self) -> YingramSidecar {
        YingramSidecar {
            frames: self.frames(),
            channels: self.channels(),
            hop: self.hop,
            sample_rate: self.sample_rate,
            grid: self.grid,
        }
    }

    /// CSV with header `frame,c0,..,c{N-1}`, one row per frame.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = String::from("frame");
        for c in 0..self.channels() {
            header.push_str(&format!(",c{c}"));
        }
        writeln!(out, "{header}")?;
        for t in 0..self.frames() {
            write!(out, "{t}")?;
            for v in self.row(t) {
                write!(out, ",{}", v)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Row-major little-endian `f32` matrix; pair it with [`Self::sidecar`].
    pub fn write_raw_f32<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in self.values.as_slice() {
            out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`Self::write_raw_f32`].
    pub fn from_raw_f32(bytes: &[u8], sidecar: &YingramSidecar) -> Result<Self> {
        let n = sidecar.frames * sidecar.channels;
        if bytes.len() != n * 4 {
            return Err(Error::Dimension(format!(
                "raw matrix holds {} bytes, sidecar implies {}",
                bytes.len(),
                n * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| T::of(f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))))
            .collect();
        Ok(YingramMatrix {
            values: Matrix::from_vec(sidecar.frames, sidecar.channels, data)?,
            grid: sidecar.grid,
            hop: sidecar.hop,
            sample_rate: sidecar.sample_rate,
            padded: vec![false; sidecar.frames],
        })
    }
}

/// JSON description accompanying a raw Yingram matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YingramSidecar {
    pub frames: usize,
    pub channels: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub grid: NoteGrid,
}

/// Framing and grid settings for [`compute_yingram`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YingramParams {
    /// YIN integration window `W` in samples.
    pub window: usize,
    pub hop: usize,
    pub grid: NoteGrid,
}

impl Default for YingramParams {
    fn default() -> Self {
        YingramParams { window: 2048, hop: 256, grid: NoteGrid::default() }
    }
}

impl YingramParams {
    pub fn tau_max(&self, sample_rate: u32) -> usize {
        self.grid.tau_max(sample_rate)
    }

    pub fn frame_len(&self, sample_rate: u32) -> usize {
        self.window + self.tau_max(sample_rate)
    }
}

/// Samples `c` at every grid lag by linear interpolation between the
/// neighbouring integer lags.
pub fn yingram_frame<T: Sample>(c: &CmndCurve<T>, grid: &NoteGrid) -> Result<Vec<T>> {
    (0..grid.num_channels)
        .map(|ch| {
            let lag = note_to_lag(grid.note_of_channel(ch), c.sample_rate, grid);
            let lo = lag.floor() as usize;
            let hi = lag.ceil() as usize;
            if hi > c.tau_max() {
                return Err(Error::LagOutOfRange { lag, needed: hi, tau_max: c.tau_max() });
            }
            let (a, b) = (c.values[lo], c.values[hi]);
            Ok(a + (b - a) * T::of(lag - lo as f64))
        })
        .collect()
}

/// Yingram of a single frame through the FFT difference kernel.
pub fn yingram_of_frame<T: Sample>(
    kernel: &mut DifferenceKernel<T>,
    frame: &Frame<T>,
    grid: &NoteGrid,
) -> Result<Vec<T>> {
    yingram_frame(&cmnd(&kernel.compute(frame)?), grid)
}

/// Framewise Yingram of `w`: frames of `W + tau_max` samples every `hop`.
pub fn compute_yingram<T: Sample>(w: &Waveform<T>, params: &YingramParams) -> Result<YingramMatrix<T>> {
    params.grid.validate()?;
    if params.window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let sr = w.sample_rate();
    let tau_max = params.tau_max(sr);
    let frames = frame_signal(w, params.window + tau_max, params.hop)?;

    let rows: Vec<Vec<T>> = frames
        .par_iter()
        .map_init(
            || DifferenceKernel::new(params.window, tau_max),
            |kernel, frame| yingram_of_frame(kernel, frame, &params.grid),
        )
        .collect::<Result<_>>()?;

    let padded = frames.iter().map(|f| f.padded).collect();
    let n = rows.len();
    let data = rows.into_iter().flatten().collect();
    Ok(YingramMatrix {
        values: Matrix::from_vec(n, params.grid.num_channels, data)?,
        grid: params.grid,
        hop: params.hop,
        sample_rate: sr,
        padded,
    })
}

/// Frames × 50 window `Y[t][15 + s ..= 64 + s]`.
pub fn crop_scope<T: Sample>(y: &YingramMatrix<T>, s: i32) -> Result<Matrix<T>> {
    crop_matrix(&y.values, s)
}

/// [`crop_scope`] on a bare matrix with at least 80 channels.
pub fn crop_matrix<T: Sample>(m: &Matrix<T>, s: i32) -> Result<Matrix<T>> {
    let scope = Scope::new(s)?;
    let cols = scope.channels();
    if cols.end > m.cols() {
        return Err(Error::Dimension(format!(
            "scope {:?} exceeds {} channels",
            cols,
            m.cols()
        )));
    }
    m.column_slice(cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const SR: u32 = 22050;

    #[test]
    fn note_frequencies() {
        let g = NoteGrid::default();
        assert_eq!(note_to_hz(69, &g), 440.0);
        assert_eq!(note_to_hz(45, &g), 220.0);
        assert!((note_to_hz(74, &g) - 508.355).abs() < 1e-3);
        assert!((note_to_hz(-5, &g) - 440.0 * (-74.0f64 / 24.0).exp2()).abs() < 1e-12);
        assert!((note_to_hz(-5, &g) - 51.913).abs() < 1e-3);
    }

    #[test]
    fn octave_is_exact() {
        let g = NoteGrid::default();
        for m in -30..120 {
            assert_eq!(note_to_hz(m + 24, &g), 2.0 * note_to_hz(m, &g), "m = {m}");
        }
    }

    #[test]
    fn note_lags() {
        let g = NoteGrid::default();
        assert!((note_to_lag(69, SR, &g) - 50.1136).abs() < 1e-4);
        assert!((note_to_lag(45, SR, &g) - 100.227).abs() < 1e-3);
        let low = note_to_lag(-5, SR, &g);
        assert!((low - 424.748).abs() < 1e-3, "{low}");
        assert!((f64::from(SR) / low - note_to_hz(-5, &g)).abs() < 1e-12);
        for m in -5..74 {
            assert!(note_to_lag(m + 1, SR, &g) < note_to_lag(m, SR, &g));
        }
        assert_eq!(g.tau_max(SR), 426);
    }

    #[test]
    fn scope_arithmetic() {
        assert_eq!(Scope::new(0).unwrap().channels(), 15..65);
        assert_eq!(Scope::new(8).unwrap().channels(), 23..73);
        assert_eq!(Scope::new(-15).unwrap().channels(), 0..50);
        assert_eq!(Scope::new(15).unwrap().channels(), 30..80);
        assert!(matches!(Scope::new(16), Err(Error::ShiftOutOfRange(16))));
        assert!(matches!(Scope::new(-16), Err(Error::ShiftOutOfRange(-16))));
    }

    #[test]
    fn shift_table() {
        let table = [(8, -4.0), (6, -3.0), (4, -2.0), (2, -1.0), (0, 0.0), (-2, 1.0), (-4, 2.0), (-6, 3.0), (-8, 4.0)];
        for (s, st) in table {
            assert_eq!(shift_to_semitones(s), st);
        }
    }

    #[test]
    fn silence_gives_unit_yingram() {
        let c = CmndCurve { values: vec![1.0f64; 427], sample_rate: SR };
        let y = yingram_frame(&c, &NoteGrid::default()).unwrap();
        assert_eq!(y.len(), 80);
        assert!(y.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn integer_lag_is_not_interpolated() {
        // 24-TET with reference 441 Hz at note 69 puts note 45 at 220.5 Hz, lag exactly 100
        let g = NoteGrid { reference_hz: 441.0, ..NoteGrid::default() };
        let c = CmndCurve { values: (0..430).map(|t| (t as f64 * 0.37).sin().abs()).collect(), sample_rate: SR };
        let y = yingram_frame(&c, &g).unwrap();
        let ch = (45 - g.start_note) as usize;
        assert_eq!(note_to_lag(45, SR, &g), 100.0);
        assert_eq!(y[ch], c.values[100]);
    }

    #[test]
    fn short_curve_is_lag_out_of_range() {
        let c = CmndCurve { values: vec![1.0f64; 400], sample_rate: SR };
        assert!(matches!(yingram_frame(&c, &NoteGrid::default()), Err(Error::LagOutOfRange { .. })));
    }

    #[test]
    fn frame_count_and_determinism() {
        let w = Waveform::<f64>::from_fn(SR as usize, SR, |t| (2.0 * PI * 440.0 * t).sin()).unwrap();
        let p = YingramParams::default();
        let a = compute_yingram(&w, &p).unwrap();
        assert_eq!((a.frames(), a.channels()), (87, 80));
        let b = compute_yingram(&w, &p).unwrap();
        assert_eq!(a, b);
        let wide = compute_yingram(&w, &YingramParams { hop: 512, ..p }).unwrap();
        assert_eq!(wide.frames(), 44);
    }

    #[test]
    fn sine_valleys_land_on_octave_copies_of_the_note_channel() {
        // CMND of an exactly periodic signal vanishes at every multiple of the
        // period, so the deepest channel may be any octave copy (24 channels
        // apart) of the note channel. Which copy wins is decided by the
        // interpolation error at each fractional lag.
        let g = NoteGrid::default();
        for (note, phase) in [(50, 0.4), (69, 1.3)] {
            let f = note_to_hz(note, &g);
            let w = Waveform::<f64>::from_fn(SR as usize, SR, |t| (2.0 * PI * f * t + phase).sin()).unwrap();
            let y = compute_yingram(&w, &YingramParams::default()).unwrap();
            let ch = (note - g.start_note) as usize;
            for t in (0..y.frames()).filter(|&t| !y.padded[t]) {
                assert!(y.get(t, ch) < 1e-3);
                assert!(y.get(t, ch) < y.get(t, ch - 1) && y.get(t, ch) < y.get(t, ch + 1));
                let am = y.argmin_channel(t);
                assert!(am <= ch && (ch - am).is_multiple_of(24), "note {note}: argmin {am}");
            }
        }
    }

    #[test]
    fn crop_selects_scope_columns() {
        let data: Vec<f64> = (0..3 * 80).map(|i| i as f64).collect();
        let m = Matrix::from_vec(3, 80, data).unwrap();
        let c = crop_matrix(&m, 0).unwrap();
        assert_eq!((c.rows(), c.cols()), (3, 50));
        assert_eq!(c[(1, 0)], m[(1, 15)]);
        assert_eq!(c[(2, 49)], m[(2, 64)]);
        let c8 = crop_matrix(&m, 8).unwrap();
        assert_eq!(c8[(0, 0)], m[(0, 23)]);
        assert_eq!(c8[(0, 49)], m[(0, 72)]);
        assert!(matches!(crop_matrix(&m, 16), Err(Error::ShiftOutOfRange(16))));
        let narrow = Matrix::from_vec(1, 60, vec![0.0f64; 60]).unwrap();
        assert!(matches!(crop_matrix(&narrow, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn raw_export_round_trips_through_sidecar() {
        let w = Waveform::<f64>::from_fn(3000, SR, |t| (2.0 * PI * 300.0 * t).sin()).unwrap();
        let y = compute_yingram(&w, &YingramParams::default()).unwrap();
        let mut raw = Vec::new();
        y.write_raw_f32(&mut raw).unwrap();
        let sidecar: YingramSidecar = serde_json::from_str(&serde_json::to_string(&y.sidecar()).unwrap()).unwrap();
        let back = YingramMatrix::<f64>::from_raw_f32(&raw, &sidecar).unwrap();
        assert_eq!(back.frames(), y.frames());
        for (a, b) in back.values.as_slice().iter().zip(y.values.as_slice()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
        assert!(YingramMatrix::<f64>::from_raw_f32(&raw[4..], &sidecar).is_err());
    }

    #[test]
    fn csv_layout() {
        let w = Waveform::<f64>::from_fn(600, SR, |t| (2.0 * PI * 300.0 * t).sin()).unwrap();
        let y = compute_yingram(&w, &YingramParams::default()).unwrap();
        let mut out = Vec::new();
        y.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + y.frames());
        assert!(lines[0].starts_with("frame,c0,c1,"));
        assert!(lines[0].ends_with(",c79"));
        assert_eq!(lines[1].split(',').count(), 81);
    }
}
