//! Pitch contours and pairwise pitch-shift evaluation.
//!
//! A pair is a "normal" rendition and a pitch-shifted one that claims scope
//! shift `s`, i.e. a pitch change of `-s/2` semitones. Two independent views
//! are scored: the Yingram shift metric, and the median semitone offset
//! between the two f0 contours.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;
use crate::error::{Error, Result};
use crate::grid::{compute_yingram, shift_to_semitones, Scope};
use crate::loss::shift_consistency_metric;
use crate::scalar::Sample;
use crate::signal::{frame_signal, load_wav, resample, Waveform};
use crate::yin::{choose_lag, cmnd, DifferenceKernel, F0Params};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    /// Centre of the integration window, seconds.
    pub time: f64,
    pub f0: Option<f64>,
    pub aperiodicity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchContour {
    pub hop: usize,
    pub sample_rate: u32,
    pub points: Vec<ContourPoint>,
}

impl PitchContour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn voiced(&self) -> usize {
        self.points.iter().filter(|p| p.f0.is_some()).count()
    }

    fn frame_period(&self) -> f64 {
        self.hop as f64 / f64::from(self.sample_rate)
    }

    /// Resamples the contour onto its own frame times after stretching its
    /// time axis: frame `k` of the result holds this contour at `scale · time_k`.
    ///
    /// Undoes the time scaling of a resampling pitch shift, so that
    /// `a.time_warped(q)` lines up frame for frame with a copy of `a`'s audio
    /// played `q` times faster. `log f0` is interpolated linearly between
    /// neighbouring frames; the result is unvoiced wherever a neighbour is.
    pub fn time_warped(&self, scale: f64) -> PitchContour {
        let period = self.frame_period();
        let origin = self.points.first().map_or(0.0, |p| p.time);
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut u = (scale * p.time - origin) / period;
                if (u - u.round()).abs() < 1e-9 {
                    u = u.round();
                }
                let k = u.floor();
                let frac = u - k;
                let (lo, hi) = (k as isize, k as isize + 1);
                let get = |i: isize| (i >= 0).then(|| self.points.get(i as usize)).flatten();
                let (f0, aperiodicity) = match (get(lo), get(hi)) {
                    (Some(a), _) if frac == 0.0 => (a.f0, a.aperiodicity),
                    (Some(a), Some(b)) => {
                        let f0 = match (a.f0, b.f0) {
                            (Some(fa), Some(fb)) => Some((fa.ln() * (1.0 - frac) + fb.ln() * frac).exp()),
                            _ => None,
                        };
                        (f0, a.aperiodicity * (1.0 - frac) + b.aperiodicity * frac)
                    }
                    _ => (None, 1.0),
                };
                ContourPoint { time: p.time, f0, aperiodicity }
            })
            .collect();
        PitchContour { hop: self.hop, sample_rate: self.sample_rate, points }
    }
}

/// Framing for contour extraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourParams {
    pub window: usize,
    pub hop: usize,
    pub f0: F0Params,
}

impl From<&AnalysisConfig> for ContourParams {
    fn from(cfg: &AnalysisConfig) -> Self {
        ContourParams { window: cfg.window, hop: cfg.hop, f0: cfg.f0() }
    }
}

/// Per-frame YIN f0 over `w`. Zero-padded tail frames are reported unvoiced.
pub fn extract_pitch_contour<T: Sample>(w: &Waveform<T>, params: &ContourParams) -> Result<PitchContour> {
    let sr = w.sample_rate();
    if !(params.f0.f_min > 0.0) {
        return Err(Error::InvalidF0Bounds(format!("f_min {} must be positive", params.f0.f_min)));
    }
    // the picker needs one lag beyond the slowest period
    let tau_max = (f64::from(sr) / params.f0.f_min).ceil() as usize + 1;
    let frames = frame_signal(w, params.window + tau_max, params.hop)?;
    let centre = params.window as f64 / 2.0;

    let points = frames
        .par_iter()
        .map_init(
            || DifferenceKernel::new(params.window, tau_max),
            |kernel, frame| -> Result<ContourPoint> {
                let time = (frame.start_index as f64 + centre) / f64::from(sr);
                let choice = choose_lag(&cmnd(&kernel.compute(frame)?), &params.f0)?;
                let f0 = (choice.voiced && !frame.padded).then(|| {
                    (f64::from(sr) / choice.refined_lag.as_f64()).clamp(params.f0.f_min, params.f0.f_max)
                });
                Ok(ContourPoint { time, f0, aperiodicity: choice.aperiodicity.as_f64() })
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(PitchContour { hop: params.hop, sample_rate: sr, points })
}

fn check_compatible(a: &PitchContour, b: &PitchContour) -> Result<()> {
    if a.hop != b.hop || a.sample_rate != b.sample_rate {
        return Err(Error::Dimension(format!(
            "contours use hop/rate {}/{} and {}/{}",
            a.hop, a.sample_rate, b.hop, b.sample_rate
        )));
    }
    Ok(())
}

/// `12 · log2(f0_b / f0_a)` on every frame voiced in both contours.
pub fn semitone_offsets(a: &PitchContour, b: &PitchContour) -> Result<Vec<f64>> {
    check_compatible(a, b)?;
    Ok(a.points
        .iter()
        .zip(&b.points)
        .filter_map(|(pa, pb)| Some(12.0 * (pb.f0? / pa.f0?).log2()))
        .collect())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median co-voiced semitone offset of `b` relative to `a`, and the co-voiced
/// fraction `co_voiced / min(voiced_a, voiced_b)`.
pub fn median_semitone_offset(a: &PitchContour, b: &PitchContour) -> Result<(f64, f64)> {
    let mut offsets = semitone_offsets(a, b)?;
    if offsets.is_empty() {
        return Err(Error::NoVoicedOverlap);
    }
    let overlap = offsets.len() as f64 / a.voiced().min(b.voiced()) as f64;
    Ok((median(&mut offsets), overlap))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub scope_shift: i32,
    pub expected_semitones: f64,
    pub measured_semitone_offset: Option<f64>,
    pub voiced_overlap_fraction: f64,
    pub l_yin_shift: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Scores `shifted` as a rendition of `normal` under scope shift `s`.
///
/// Passes when the median contour offset is within `shift_tolerance`
/// semitones of `-s/2` and at least `min_overlap` of the voiced frames are
/// co-voiced.
pub fn evaluate_shift_pair<T: Sample>(
    normal: &Waveform<T>,
    shifted: &Waveform<T>,
    s: i32,
    cfg: &AnalysisConfig,
) -> Result<ShiftReport> {
    Scope::new(s)?;
    if normal.sample_rate() != shifted.sample_rate() {
        return Err(Error::Dimension(format!(
            "sample rates differ: {} vs {}",
            normal.sample_rate(),
            shifted.sample_rate()
        )));
    }
    let params = cfg.yingram();
    let y_normal = compute_yingram(normal, &params)?;
    let y_shifted = compute_yingram(shifted, &params)?;
    let l_yin_shift = shift_consistency_metric(&y_normal, &y_shifted, s, &cfg.loss())?.as_f64();

    let contour_params = ContourParams::from(cfg);
    let a = extract_pitch_contour(normal, &contour_params)?;
    let b = extract_pitch_contour(shifted, &contour_params)?;
    let expected = shift_to_semitones(s);

    let report = match median_semitone_offset(&a, &b) {
        Ok((measured, overlap)) => {
            let close = (measured - expected).abs() <= cfg.shift_tolerance;
            let covered = overlap >= cfg.min_overlap;
            let reason = match (close, covered) {
                (true, true) => None,
                (false, _) => Some(format!(
                    "measured {measured:.3} st, expected {expected:.3} st (tolerance {})",
                    cfg.shift_tolerance
                )),
                (true, false) => Some(format!("voiced overlap {overlap:.3} below {}", cfg.min_overlap)),
            };
            ShiftReport {
                scope_shift: s,
                expected_semitones: expected,
                measured_semitone_offset: Some(measured),
                voiced_overlap_fraction: overlap,
                l_yin_shift,
                pass: close && covered,
                reason,
            }
        }
        Err(Error::NoVoicedOverlap) => ShiftReport {
            scope_shift: s,
            expected_semitones: expected,
            measured_semitone_offset: None,
            voiced_overlap_fraction: 0.0,
            l_yin_shift,
            pass: false,
            reason: Some("no voiced overlap".into()),
        },
        Err(e) => return Err(e),
    };
    Ok(report)
}

/// Loads a WAV file and brings it to the configured analysis rate.
pub fn load_for_analysis(path: impl AsRef<Path>, cfg: &AnalysisConfig) -> Result<Waveform<f64>> {
    let w = load_wav::<f64>(path)?;
    resample(&w, cfg.sample_rate)
}

/// Pitch-shifts by resampling: duration scales by `2^(-semitones/12)`.
///
/// Returns the shifted waveform (relabelled at the input rate) and the exact
/// frequency ratio realized after rounding the intermediate rate.
pub fn pitch_shift_by_resampling<T: Sample>(w: &Waveform<T>, semitones: f64) -> Result<(Waveform<T>, f64)> {
    let sr = w.sample_rate();
    let target = (f64::from(sr) / (semitones / 12.0).exp2()).round();
    if !(target >= 1.0 && target <= f64::from(u32::MAX)) {
        return Err(Error::InvalidArgument(format!("shift of {semitones} semitones is out of range")));
    }
    let target = target as u32;
    let shifted = resample(w, target)?.with_sample_rate(sr)?;
    Ok((shifted, f64::from(sr) / f64::from(target)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub normal: PathBuf,
    pub shifted: PathBuf,
    pub scope_shift: i32,
}

/// Parses a manifest, resolving relative paths against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: Option<&Path>) -> Result<Vec<ManifestEntry>> {
    let mut entries: Vec<ManifestEntry> = serde_json::from_str(text)?;
    if let Some(base) = base_dir {
        for e in &mut entries {
            for p in [&mut e.normal, &mut e.shifted] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
    Ok(entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub normal: PathBuf,
    pub shifted: PathBuf,
    pub scope_shift: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ShiftReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftAggregate {
    pub scope_shift: i32,
    pub expected_semitones: f64,
    pub pairs: usize,
    pub mean_l_yin_shift: f64,
    pub pass_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub pairs: usize,
    pub evaluated: usize,
    pub errors: usize,
    pub passed: usize,
    /// `None` when nothing could be evaluated.
    pub pass_rate: Option<f64>,
    /// One row per scope shift, largest shift first.
    pub per_shift: Vec<ShiftAggregate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub config: AnalysisConfig,
    pub entries: Vec<BatchEntry>,
    pub summary: BatchSummary,
}

impl BatchReport {
    /// True when every pair that could be evaluated passed.
    pub fn all_passed(&self) -> bool {
        self.summary.passed == self.summary.evaluated
    }

    /// One row per evaluated pair in manifest order; errored pairs are only in the JSON.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "s,expected_st,measured_st,overlap,l_yin_shift,pass")?;
        for r in self.entries.iter().filter_map(|e| e.report.as_ref()) {
            let measured = r.measured_semitone_offset.map(|m| m.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.scope_shift, r.expected_semitones, measured, r.voiced_overlap_fraction, r.l_yin_shift, r.pass
            )?;
        }
        Ok(())
    }
}

fn evaluate_entry(entry: &ManifestEntry, cfg: &AnalysisConfig) -> Result<ShiftReport> {
    let normal = load_for_analysis(&entry.normal, cfg)?;
    let shifted = load_for_analysis(&entry.shifted, cfg)?;
    evaluate_shift_pair(&normal, &shifted, entry.scope_shift, cfg)
}

/// Evaluates every manifest pair; failures are recorded per entry and do not stop the batch.
pub fn batch_report(manifest: &[ManifestEntry], cfg: &AnalysisConfig) -> BatchReport {
    let entries: Vec<BatchEntry> = manifest
        .par_iter()
        .map(|m| {
            let (report, error) = match evaluate_entry(m, cfg) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            BatchEntry { normal: m.normal.clone(), shifted: m.shifted.clone(), scope_shift: m.scope_shift, report, error }
        })
        .collect();

    let reports: Vec<&ShiftReport> = entries.iter().filter_map(|e| e.report.as_ref()).collect();
    let passed = reports.iter().filter(|r| r.pass).count();
    let mut shifts: Vec<i32> = reports.iter().map(|r| r.scope_shift).collect();
    shifts.sort_unstable_by(|a, b| b.cmp(a));
    shifts.dedup();
    let per_shift = shifts
        .into_iter()
        .map(|s| {
            let group: Vec<&&ShiftReport> = reports.iter().filter(|r| r.scope_shift == s).collect();
            let n = group.len() as f64;
            ShiftAggregate {
                scope_shift: s,
                expected_semitones: shift_to_semitones(s),
                pairs: group.len(),
                mean_l_yin_shift: group.iter().map(|r| r.l_yin_shift).sum::<f64>() / n,
                pass_rate: group.iter().filter(|r| r.pass).count() as f64 / n,
            }
        })
        .collect();

    let summary = BatchSummary {
        pairs: entries.len(),
        evaluated: reports.len(),
        errors: entries.len() - reports.len(),
        passed,
        pass_rate: (!reports.is_empty()).then(|| passed as f64 / reports.len() as f64),
        per_shift,
    };
    BatchReport { config: cfg.clone(), entries, summary }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const SR: u32 = 22050;

    fn tone(freq: f64, secs: f64) -> Waveform<f64> {
        Waveform::from_fn((secs * f64::from(SR)) as usize, SR, |t| (2.0 * PI * freq * t).sin()).unwrap()
    }

    fn contour(f0s: &[Option<f64>]) -> PitchContour {
        let points = f0s
            .iter()
            .enumerate()
            .map(|(k, &f0)| ContourPoint { time: k as f64 * 256.0 / 22050.0, f0, aperiodicity: 0.0 })
            .collect();
        PitchContour { hop: 256, sample_rate: SR, points }
    }

    fn params() -> ContourParams {
        ContourParams::from(&AnalysisConfig::default())
    }

    #[test]
    fn steady_tone_contour() {
        let c = extract_pitch_contour(&tone(440.0, 1.0), &params()).unwrap();
        assert_eq!(c.len(), 87);
        let unpadded = (22050 - 2048 - 425) / 256 + 1;
        for p in &c.points[..unpadded] {
            let f0 = p.f0.expect("voiced");
            assert!((f0 - 440.0).abs() < 1.0, "{f0}");
        }
        assert!(c.points[unpadded..].iter().all(|p| p.f0.is_none()));
        assert!(c.points.windows(2).all(|w| (w[1].time - w[0].time - 256.0 / 22050.0).abs() < 1e-12));
    }

    #[test]
    fn silence_contour_is_unvoiced() {
        let w = Waveform::new(vec![0.0f64; 22050], SR).unwrap();
        let c = extract_pitch_contour(&w, &params()).unwrap();
        assert_eq!(c.voiced(), 0);
    }

    #[test]
    fn two_plateaus() {
        let half = SR as usize / 2;
        let mut phase = 0.0;
        let samples: Vec<f64> = (0..2 * half)
            .map(|n| {
                let f = if n < half { 220.0 } else { 330.0 };
                phase += 2.0 * PI * f / f64::from(SR);
                phase.sin()
            })
            .collect();
        let c = extract_pitch_contour(&Waveform::new(samples, SR).unwrap(), &params()).unwrap();
        let near = |f: Option<f64>, target: f64| f.is_some_and(|f| (f - target).abs() < 1.0);
        // A frame is only off-plateau while its analysis span straddles the
        // switch; there the 2:3 mixture is periodic at 110 Hz.
        let span = (2048 + 426usize).div_ceil(256);
        let off: Vec<usize> = (0..c.len()).filter(|&k| c.points[k].f0.is_some() && !near(c.points[k].f0, 220.0) && !near(c.points[k].f0, 330.0)).collect();
        assert!(off.len() <= span, "{} transition frames", off.len());
        assert!(off.windows(2).all(|w| w[1] == w[0] + 1), "transition frames not contiguous: {off:?}");
        let switch_frame = half / 256;
        assert!(off.iter().all(|&k| k + span >= switch_frame && k <= switch_frame));
        assert!(c.points.iter().filter(|p| near(p.f0, 220.0)).count() > 20);
        assert!(c.points.iter().filter(|p| near(p.f0, 330.0)).count() > 20);
    }

    #[test]
    fn offsets_and_overlap() {
        let a = contour(&[Some(440.0), Some(440.0), None, Some(440.0)]);
        assert_eq!(median_semitone_offset(&a, &a).unwrap(), (0.0, 1.0));
        let b = contour(&[Some(880.0), None, None, Some(880.0)]);
        let (off, overlap) = median_semitone_offset(&a, &b).unwrap();
        assert!((off - 12.0).abs() < 1e-12);
        assert_eq!(overlap, 1.0);
        let down = contour(&[Some(440.0 * (-1.0f64 / 12.0).exp2()); 4]);
        let (off, overlap) = median_semitone_offset(&a, &down).unwrap();
        assert!((off + 1.0).abs() < 1e-12);
        assert_eq!(overlap, 1.0);
        let silent = contour(&[None; 4]);
        assert!(matches!(median_semitone_offset(&a, &silent), Err(Error::NoVoicedOverlap)));
        let other_hop = PitchContour { hop: 128, ..a.clone() };
        assert!(matches!(median_semitone_offset(&a, &other_hop), Err(Error::Dimension(_))));
    }

    #[test]
    fn median_of_even_count_averages() {
        assert_eq!(median(&mut [3.0, 1.0, 4.0, 2.0]), 2.5);
        assert_eq!(median(&mut [5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn identical_audio_passes_with_zero_metric() {
        let w = tone(220.0, 1.0);
        let r = evaluate_shift_pair(&w, &w, 0, &AnalysisConfig::default()).unwrap();
        assert_eq!(r.l_yin_shift, 0.0);
        assert_eq!(r.measured_semitone_offset, Some(0.0));
        assert!(r.pass && r.reason.is_none());
    }

    #[test]
    fn out_of_range_shift_rejected() {
        let w = tone(220.0, 0.3);
        assert!(matches!(evaluate_shift_pair(&w, &w, 16, &AnalysisConfig::default()), Err(Error::ShiftOutOfRange(16))));
    }

    #[test]
    fn time_warp_identity_and_scaling() {
        let a = contour(&[Some(100.0), Some(200.0), Some(400.0), None]);
        assert_eq!(a.time_warped(1.0), a);
        let half = a.time_warped(0.5);
        // frame 1 now reads time 0.5 * t_1, halfway between frames 0 and 1
        assert!((half.points[1].f0.unwrap() - (100.0f64 * 200.0).sqrt()).abs() < 1e-9);
        let double = a.time_warped(2.0);
        assert_eq!(double.points[1].f0, Some(400.0));
        assert_eq!(double.points[2].f0, None);
    }

    #[test]
    fn pitch_shift_ratio() {
        let (shifted, ratio) = pitch_shift_by_resampling(&tone(220.0, 0.5), -2.0).unwrap();
        assert!((ratio - (-2.0f64 / 12.0).exp2()).abs() < 1e-4);
        assert_eq!(shifted.sample_rate(), SR);
        assert!(shifted.len() > 11025);
    }

    #[test]
    fn manifest_paths_resolve_against_base() {
        let text = r#"[{"normal": "a.wav", "shifted": "/abs/b.wav", "scope_shift": 4}]"#;
        let entries = parse_manifest(text, Some(Path::new("/data"))).unwrap();
        assert_eq!(entries[0].normal, PathBuf::from("/data/a.wav"));
        assert_eq!(entries[0].shifted, PathBuf::from("/abs/b.wav"));
        assert!(parse_manifest("{not json", None).is_err());
    }

    #[test]
    fn empty_batch() {
        let r = batch_report(&[], &AnalysisConfig::default());
        assert!(r.entries.is_empty() && r.all_passed());
        assert_eq!(r.summary.pass_rate, None);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "s,expected_st,measured_st,overlap,l_yin_shift,pass\n");
    }
}
