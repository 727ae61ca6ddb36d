//! Yingram objectives on cropped (frames × 50) matrices.
//!
//! Expectations are realized as the mean over every frame and channel, so
//! `lambda_yin` weighs clips of any length the same.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{crop_scope, YingramMatrix};
use crate::matrix::Matrix;
use crate::scalar::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_yin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_yin: 45.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_yin.is_finite() && self.lambda_yin > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("lambda_yin must be positive, got {}", self.lambda_yin)))
        }
    }
}

fn check_shapes<T: Sample>(a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::Dimension("empty matrices".into()));
    }
    Ok(())
}

fn mean_abs_diff<T: Sample>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T) -> T) -> T {
    let sum: T = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (f(x) - f(y)).abs())
        .sum();
    sum / T::of_usize(a.len())
}

fn neg_exp<T: Sample>(v: T) -> T {
    (-v).exp()
}

/// `λ · mean |target − prediction|`.
pub fn decoding_loss<T: Sample>(target: &Matrix<T>, prediction: &Matrix<T>, cfg: &LossConfig) -> Result<T> {
    cfg.validate()?;
    check_shapes(target, prediction)?;
    Ok(T::of(cfg.lambda_yin) * mean_abs_diff(target, prediction, |v| v))
}

/// `λ · (mean |e^−Y_crop − e^−synth_default| + mean |e^−Y_crop_shift − e^−synth_shifted|)`.
pub fn recon_loss<T: Sample>(
    y_crop: &Matrix<T>,
    y_crop_shift: &Matrix<T>,
    synth_default: &Matrix<T>,
    synth_shifted: &Matrix<T>,
    cfg: &LossConfig,
) -> Result<T> {
    cfg.validate()?;
    check_shapes(y_crop, synth_default)?;
    check_shapes(y_crop_shift, synth_shifted)?;
    check_shapes(y_crop, y_crop_shift)?;
    let normal = mean_abs_diff(y_crop, synth_default, neg_exp);
    let shifted = mean_abs_diff(y_crop_shift, synth_shifted, neg_exp);
    Ok(T::of(cfg.lambda_yin) * (normal + shifted))
}

/// How well `shifted_audio` realizes scope shift `s` of `normal`:
/// `λ · mean |e^−crop(Y_normal, s) − e^−crop(Y_shifted, 0)|`.
///
/// Frame counts are aligned by truncating to the shorter input.
pub fn shift_consistency_metric<T: Sample>(
    normal: &YingramMatrix<T>,
    shifted_audio: &YingramMatrix<T>,
    s: i32,
    cfg: &LossConfig,
) -> Result<T> {
    cfg.validate()?;
    if normal.grid != shifted_audio.grid || normal.channels() != shifted_audio.channels() {
        return Err(Error::Dimension("Yingrams were computed on different grids".into()));
    }
    let frames = normal.frames().min(shifted_audio.frames());
    if normal.frames() != shifted_audio.frames() {
        log::warn!(
            "frame counts differ ({} vs {}); truncating to {frames}",
            normal.frames(),
            shifted_audio.frames()
        );
    }
    let expected = crop_scope(&normal.truncated(frames), s)?;
    let observed = crop_scope(&shifted_audio.truncated(frames), 0)?;
    check_shapes(&expected, &observed)?;
    Ok(T::of(cfg.lambda_yin) * mean_abs_diff(&expected, &observed, neg_exp))
}
