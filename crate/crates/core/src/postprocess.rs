//! Moving-average F0 post-processing: per voiced segment, replace the
//! slow-change component of the predicted contour with the stair-like
//! note contour (f_hat = f - f_tilde + f_note).

use crate::codec::F0Contour;
use crate::error::{Result, SvsError};
use serde::{Deserialize, Serialize};

/// Default moving-average half-width.
pub const DEFAULT_WINDOW: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoicedSegment {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

/// Per-frame F0 implied by the musical score; piecewise constant, 0 on rests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteContour {
    pub f0_hz: Vec<f64>,
}

/// Maximal runs of voiced frames, in order.
pub fn segment_voiced(contour: &F0Contour) -> Vec<VoicedSegment> {
    let mut segs = Vec::new();
    let mut start = None;
    for (t, &v) in contour.voiced.iter().enumerate() {
        match (v, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                segs.push(VoicedSegment { start: s, end: t - 1 });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segs.push(VoicedSegment {
            start: s,
            end: contour.len() - 1,
        });
    }
    segs
}

/// Moving average with half-width w; the first and last values are copied
/// w times to pad both ends.
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let get = |i: isize| -> f64 {
        if i < 0 {
            values[0]
        } else if i as usize >= n {
            values[n - 1]
        } else {
            values[i as usize]
        }
    };
    let denom = (2 * w + 1) as f64;
    (0..n as isize)
        .map(|t| {
            let mut s = 0.0;
            for i in t - w as isize..=t + w as isize {
                s += get(i);
            }
            s / denom
        })
        .collect()
}

/// Apply Eq. 1-2 per voiced segment; unvoiced frames pass through unchanged.
/// Voiced frames whose note F0 is 0 fall back to the nearest nonzero note
/// value. Output is clamped at 0 Hz.
pub fn apply(contour: &F0Contour, notes: &NoteContour, w: usize) -> Result<F0Contour> {
    if contour.len() != notes.f0_hz.len() {
        return Err(SvsError::shape(
            "postprocess::apply",
            format!(
                "contour length {} != note length {}",
                contour.len(),
                notes.f0_hz.len()
            ),
        ));
    }
    let mut out = contour.f0_hz.clone();
    for seg in segment_voiced(contour) {
        let vals = &contour.f0_hz[seg.start..=seg.end];
        let smooth = moving_average(vals, w);
        for (off, t) in (seg.start..=seg.end).enumerate() {
            let note = note_at(notes, t);
            let v = contour.f0_hz[t] - smooth[off] + note;
            out[t] = v.max(0.0);
        }
    }
    F0Contour::new(out, contour.voiced.clone())
}

fn note_at(notes: &NoteContour, t: usize) -> f64 {
    if notes.f0_hz[t] > 0.0 {
        return notes.f0_hz[t];
    }
    // Nearest nonzero note value, ties resolved toward earlier frames.
    let n = notes.f0_hz.len();
    for d in 1..n {
        if t >= d && notes.f0_hz[t - d] > 0.0 {
            return notes.f0_hz[t - d];
        }
        if t + d < n && notes.f0_hz[t + d] > 0.0 {
            return notes.f0_hz[t + d];
        }
    }
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn contour(f0: Vec<f64>, v: Vec<bool>) -> F0Contour {
        F0Contour::new(f0, v).unwrap()
    }

    #[test]
    fn segment_all_unvoiced_is_empty() {
        let c = contour(vec![0.0; 4], vec![false; 4]);
        assert!(segment_voiced(&c).is_empty());
    }

    #[test]
    fn segment_vvuv_pattern() {
        let c = contour(
            vec![100.0, 100.0, 0.0, 100.0],
            vec![true, true, false, true],
        );
        let segs = segment_voiced(&c);
        assert_eq!(segs, vec![
            VoicedSegment { start: 0, end: 1 },
            VoicedSegment { start: 3, end: 3 },
        ]);
    }

    #[test]
    fn moving_average_constant_and_identity() {
        assert_eq!(moving_average(&[5.0; 7], 3), vec![5.0; 7]);
        let v = vec![1.0, 4.0, 2.0];
        assert_eq!(moving_average(&v, 0), v);
    }

    #[test]
    fn moving_average_edge_copy_example() {
        // [1,2,3,4,5], w=1 with edge copies -> [4/3, 2, 3, 4, 14/3]
        let out = moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0], 1);
        let expect = [4.0 / 3.0, 2.0, 3.0, 4.0, 14.0 / 3.0];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_segment_returns_note_contour() {
        let c = contour(vec![200.0; 6], vec![true; 6]);
        let notes = NoteContour {
            f0_hz: vec![150.0, 150.0, 150.0, 180.0, 180.0, 180.0],
        };
        let out = apply(&c, &notes, 2).unwrap();
        assert_eq!(out.f0_hz, notes.f0_hz);
    }

    #[test]
    fn notes_equal_smooth_is_fixed_point() {
        // If the note contour equals the moving average, output == input.
        let f0 = vec![100.0, 110.0, 120.0, 130.0, 140.0];
        let c = contour(f0.clone(), vec![true; 5]);
        let smooth = moving_average(&f0, 1);
        let notes = NoteContour { f0_hz: smooth };
        let out = apply(&c, &notes, 1).unwrap();
        for (o, i) in out.f0_hz.iter().zip(&f0) {
            assert!((o - i).abs() < 1e-9);
        }
    }

    #[test]
    fn vibrato_recentered_on_note() {
        // Sinusoid of amplitude A around a wrong mean; post-processing must
        // recenter it near the note pitch.
        let n = 2000; // 10 periods at 200 frames each
        let a = 8.0;
        let mu = 250.0;
        let nu = 220.0;
        let f0: Vec<f64> = (0..n)
            .map(|t| mu + a * (2.0 * std::f64::consts::PI * t as f64 / 200.0).sin())
            .collect();
        let c = contour(f0, vec![true; n]);
        let notes = NoteContour { f0_hz: vec![nu; n] };
        let out = apply(&c, &notes, 15).unwrap();
        let mean: f64 = out.f0_hz.iter().sum::<f64>() / n as f64;
        assert!((mean - nu).abs() < a / 10.0, "mean {mean} vs note {nu}");
    }

    #[test]
    fn length_mismatch_errors() {
        let c = contour(vec![100.0], vec![true]);
        let notes = NoteContour { f0_hz: vec![100.0, 100.0] };
        assert!(apply(&c, &notes, 1).is_err());
    }

    #[test]
    fn voiced_frame_over_rest_uses_nearest_note() {
        let c = contour(vec![200.0, 200.0, 200.0], vec![true, true, true]);
        let notes = NoteContour { f0_hz: vec![180.0, 0.0, 0.0] };
        let out = apply(&c, &notes, 0).unwrap();
        // w=0 makes f = f_tilde, so output is the (fallback) note value.
        assert_eq!(out.f0_hz, vec![180.0, 180.0, 180.0]);
    }

    proptest! {
        #[test]
        fn identity_holds_per_voiced_frame(
            f0 in proptest::collection::vec(100.0f64..400.0, 5..40),
            mask in proptest::collection::vec(any::<bool>(), 5..40),
            w in 0usize..6,
        ) {
            let n = f0.len().min(mask.len());
            let f0v: Vec<f64> = (0..n).map(|i| if mask[i] { f0[i] } else { 0.0 }).collect();
            let c = contour(f0v, mask[..n].to_vec());
            let notes = NoteContour { f0_hz: vec![300.0; n] };
            let out = apply(&c, &notes, w).unwrap();
            // f_hat - f = f_note - f_tilde exactly, per segment.
            for seg in segment_voiced(&c) {
                let vals = &c.f0_hz[seg.start..=seg.end];
                let smooth = moving_average(vals, w);
                for (off, t) in (seg.start..=seg.end).enumerate() {
                    let lhs = out.f0_hz[t] - c.f0_hz[t];
                    let rhs = 300.0 - smooth[off];
                    prop_assert!((lhs - rhs).abs() < 1e-12);
                }
            }
            // Unvoiced frames untouched; V/UV invariant.
            for t in 0..n {
                prop_assert_eq!(out.voiced[t], c.voiced[t]);
                if !c.voiced[t] {
                    prop_assert_eq!(out.f0_hz[t], 0.0);
                }
            }
        }

        #[test]
        fn segments_match_run_length_oracle(mask in proptest::collection::vec(any::<bool>(), 1..80)) {
            let f0: Vec<f64> = mask.iter().map(|&v| if v { 150.0 } else { 0.0 }).collect();
            let c = contour(f0, mask.clone());
            let segs = segment_voiced(&c);
            // Brute-force scan.
            let mut expected = Vec::new();
            let mut i = 0;
            while i < mask.len() {
                if mask[i] {
                    let s = i;
                    while i < mask.len() && mask[i] {
                        i += 1;
                    }
                    expected.push(VoicedSegment { start: s, end: i - 1 });
                } else {
                    i += 1;
                }
            }
            prop_assert_eq!(segs, expected);
        }
    }
}
