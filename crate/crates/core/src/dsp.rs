//! Small spectral helpers for vibrato analysis. Segment lengths are a few
//! hundred frames, so a direct O(n^2) DFT is plenty.

/// Magnitude spectrum |X(f)| of a real signal at `n/2` positive-frequency
/// bins. Returns (frequency_hz, magnitude) pairs given the frame rate.
pub fn magnitude_spectrum(signal: &[f64], frame_rate_hz: f64) -> Vec<(f64, f64)> {
    let n = signal.len();
    let half = n / 2;
    let mut out = Vec::with_capacity(half);
    for k in 1..half {
        let mut re = 0.0;
        let mut im = 0.0;
        for (t, &x) in signal.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * k as f64 * t as f64 / n as f64;
            re += x * ang.cos();
            im += x * ang.sin();
        }
        let freq = k as f64 * frame_rate_hz / n as f64;
        out.push((freq, (re * re + im * im).sqrt()));
    }
    out
}

/// Remove the mean and a linear trend (least squares) from a signal.
pub fn detrend(signal: &[f64]) -> Vec<f64> {
    let n = signal.len() as f64;
    if signal.len() < 2 {
        return vec![0.0; signal.len()];
    }
    let tm = (n - 1.0) / 2.0;
    let ym: f64 = signal.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, &y) in signal.iter().enumerate() {
        let dt = t as f64 - tm;
        num += dt * (y - ym);
        den += dt * dt;
    }
    let slope = if den > 0.0 { num / den } else { 0.0 };
    signal
        .iter()
        .enumerate()
        .map(|(t, &y)| y - ym - slope * (t as f64 - tm))
        .collect()
}

/// Peak magnitude (dB over the median of the surrounding band) inside
/// `[f_lo, f_hi]` Hz. Returns (peak_freq, db_over_median).
pub fn band_peak_over_median(
    spectrum: &[(f64, f64)],
    f_lo: f64,
    f_hi: f64,
    surround_hi: f64,
) -> Option<(f64, f64)> {
    let in_band: Vec<&(f64, f64)> = spectrum
        .iter()
        .filter(|(f, _)| *f >= f_lo && *f <= f_hi)
        .collect();
    let (pf, pm) = in_band
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|p| **p)?;
    let mut surround: Vec<f64> = spectrum
        .iter()
        .filter(|(f, _)| *f > 0.5 && *f <= surround_hi && (*f < f_lo || *f > f_hi))
        .map(|(_, m)| *m)
        .collect();
    if surround.is_empty() {
        return None;
    }
    surround.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = surround[surround.len() / 2].max(1e-12);
    Some((pf, 20.0 * (pm / median).log10()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_tone_peaks_at_its_frequency() {
        let rate = 200.0;
        let n = 800;
        let f = 5.5;
        let sig: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * f * t as f64 / rate).sin())
            .collect();
        let spec = magnitude_spectrum(&detrend(&sig), rate);
        let (pf, db) = band_peak_over_median(&spec, 4.0, 7.0, 20.0).unwrap();
        assert!((pf - f).abs() < 0.5);
        assert!(db > 20.0);
    }

    #[test]
    fn detrend_removes_line() {
        let sig: Vec<f64> = (0..50).map(|t| 3.0 + 0.25 * t as f64).collect();
        let d = detrend(&sig);
        assert!(d.iter().all(|v| v.abs() < 1e-9));
    }
}
