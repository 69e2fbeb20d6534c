//! F0 codec: Hz <-> mel, 256-class quantization (class 0 = unvoiced) and
//! mean-based dequantization from a class posterior.

use crate::error::{Result, SvsError};
use serde::{Deserialize, Serialize};

/// Per-frame F0 in Hz plus V/UV flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Contour {
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl F0Contour {
    pub fn new(f0_hz: Vec<f64>, voiced: Vec<bool>) -> Result<Self> {
        if f0_hz.len() != voiced.len() {
            return Err(SvsError::shape("F0Contour", "f0/voiced length mismatch"));
        }
        for (t, (&f, &v)) in f0_hz.iter().zip(&voiced).enumerate() {
            if v && f <= 0.0 {
                return Err(SvsError::Domain(format!(
                    "voiced frame {t} has non-positive F0 {f}"
                )));
            }
            if !v && f != 0.0 {
                return Err(SvsError::Domain(format!(
                    "unvoiced frame {t} has nonzero F0 {f}"
                )));
            }
        }
        Ok(F0Contour { f0_hz, voiced })
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }
}

/// Per-frame class indices in [0, n_levels]; 0 means unvoiced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedF0Sequence {
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub n_levels: usize,
    pub mel_low: f64,
    pub mel_high: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            n_levels: 255,
            mel_low: 106.0,
            mel_high: 831.0,
        }
    }
}

impl QuantizerConfig {
    pub fn bin_width(&self) -> f64 {
        (self.mel_high - self.mel_low) / self.n_levels as f64
    }

    /// Center of voiced bin k (1-based) on the mel axis.
    pub fn bin_center_mel(&self, k: usize) -> f64 {
        debug_assert!(k >= 1 && k <= self.n_levels);
        self.mel_low + (k as f64 - 0.5) * self.bin_width()
    }

    /// Voiced class whose bin contains the given mel value (clamped).
    pub fn class_of_mel(&self, mel: f64) -> usize {
        let m = mel.clamp(self.mel_low, self.mel_high);
        let k = 1 + ((m - self.mel_low) / self.bin_width()).floor() as usize;
        k.min(self.n_levels)
    }
}

/// mel = 1127 ln(1 + f/700)
pub fn hz_to_mel(f: f64) -> Result<f64> {
    if f < 0.0 {
        return Err(SvsError::Domain(format!("negative frequency {f} Hz")));
    }
    Ok(1127.0 * (1.0 + f / 700.0).ln())
}

/// f = 700 (exp(m/1127) - 1)
pub fn mel_to_hz(m: f64) -> Result<f64> {
    if m < 0.0 {
        return Err(SvsError::Domain(format!("negative mel value {m}")));
    }
    Ok(700.0 * ((m / 1127.0).exp() - 1.0))
}

pub fn quantize(contour: &F0Contour, cfg: &QuantizerConfig) -> QuantizedF0Sequence {
    let classes = contour
        .f0_hz
        .iter()
        .zip(&contour.voiced)
        .map(|(&f, &v)| {
            if !v {
                0
            } else {
                let mel = hz_to_mel(f).expect("voiced F0 is positive");
                cfg.class_of_mel(mel)
            }
        })
        .collect();
    QuantizedF0Sequence { classes }
}

/// Mean-based generation: unvoiced if posterior[0] >= 0.5, otherwise the
/// expectation of bin centers under the renormalized voiced posterior.
pub fn dequantize_mean(posterior: &[f64], cfg: &QuantizerConfig) -> Result<(bool, f64)> {
    if posterior.len() != cfg.n_levels + 1 {
        return Err(SvsError::shape(
            "dequantize_mean",
            format!("posterior length {} != {}", posterior.len(), cfg.n_levels + 1),
        ));
    }
    let sum: f64 = posterior.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(SvsError::Domain(format!(
            "posterior sums to {sum}, expected 1"
        )));
    }
    if posterior[0] >= 0.5 {
        return Ok((false, 0.0));
    }
    let voiced_mass: f64 = posterior[1..].iter().sum();
    let mut mean_mel = 0.0;
    for (k, &p) in posterior[1..].iter().enumerate() {
        mean_mel += p / voiced_mass * cfg.bin_center_mel(k + 1);
    }
    Ok((true, mel_to_hz(mean_mel)?))
}
