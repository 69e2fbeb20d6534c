//! Deterministic synthetic singing corpus: random scores, reference F0
//! contours with singing dynamics (vibrato, overshoot, preparation,
//! fine-fluctuation), procedural spectral features, context encoding and
//! song-level train/val/test splitting.

use crate::codec::F0Contour;
use crate::error::{Result, SvsError};
use crate::par;
use crate::postprocess::NoteContour;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// 5 ms frame shift.
pub const FRAME_RATE_HZ: f64 = 200.0;
/// 40 MCC + 1 energy.
pub const SPEC_DIM: usize = 41;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    /// None = rest.
    pub midi_pitch: Option<u8>,
    pub duration_frames: usize,
    pub phone_id: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleParams {
    pub vibrato_rate_hz: f64,
    pub vibrato_depth_cents: f64,
    pub overshoot_cents: f64,
    pub preparation_cents: f64,
    pub fluctuation_std_cents: f64,
    pub ramp_frames: usize,
}

impl Default for StyleParams {
    fn default() -> Self {
        StyleParams {
            vibrato_rate_hz: 5.5,
            vibrato_depth_cents: 60.0,
            overshoot_cents: 80.0,
            preparation_cents: 60.0,
            fluctuation_std_cents: 5.0,
            ramp_frames: 10,
        }
    }
}

impl StyleParams {
    pub fn flat() -> Self {
        StyleParams {
            vibrato_rate_hz: 0.0,
            vibrato_depth_cents: 0.0,
            overshoot_cents: 0.0,
            preparation_cents: 0.0,
            fluctuation_std_cents: 0.0,
            ramp_frames: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_songs: usize,
    pub utts_per_song: usize,
    pub notes_per_utt: usize,
    pub n_phones: usize,
    pub dur_min_frames: usize,
    pub dur_max_frames: usize,
    pub rest_prob: f64,
    pub style: StyleParams,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 2019,
            n_songs: 25,
            utts_per_song: 6,
            notes_per_utt: 6,
            n_phones: 10,
            dur_min_frames: 40,
            dur_max_frames: 200,
            rest_prob: 0.1,
            style: StyleParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(SvsError::Data(format!("unknown split '{s}'"))),
        }
    }
}

/// Aligned sequences for one synthetic song segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Utterance {
    pub song: usize,
    pub index_in_song: usize,
    pub split: Split,
    pub score: Vec<NoteEvent>,
    /// T x ctx_dim context features.
    pub ctx: Vec<Vec<f64>>,
    pub ref_f0: F0Contour,
    /// T x 41 raw (unnormalized) spectral frames.
    pub ref_spec: Vec<Vec<f64>>,
    pub note_f0: NoteContour,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.ref_f0.len()
    }

    pub fn id(&self) -> String {
        format!("s{:03}_u{:02}", self.song, self.index_in_song)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureStats {
    pub spec_mean: Vec<f64>,
    pub spec_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub utterances: Vec<Utterance>,
    pub stats: FeatureStats,
    pub ctx_dim: usize,
}

pub fn midi_to_hz(midi: u8) -> f64 {
    440.0 * 2f64.powf((midi as f64 - 69.0) / 12.0)
}

fn cents_to_ratio(cents: f64) -> f64 {
    2f64.powf(cents / 1200.0)
}

const DIATONIC: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const MIDI_LO: u8 = 48;
const MIDI_HI: u8 = 72;

/// Deterministic random score: diatonic pitches in MIDI 48..=72, durations
/// from the configured range, ~rest_prob rests (phone 0 = silence).
pub fn generate_score(seed: u64, n_notes: usize, cfg: &CorpusConfig) -> Vec<NoteEvent> {
    assert!(n_notes >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_notes)
        .map(|_| {
            let duration_frames = rng.gen_range(cfg.dur_min_frames..=cfg.dur_max_frames);
            if rng.gen::<f64>() < cfg.rest_prob {
                NoteEvent {
                    midi_pitch: None,
                    duration_frames,
                    phone_id: 0,
                }
            } else {
                let pitch = loop {
                    let m = rng.gen_range(MIDI_LO..=MIDI_HI);
                    if DIATONIC.contains(&(m % 12)) {
                        break m;
                    }
                };
                NoteEvent {
                    midi_pitch: Some(pitch),
                    duration_frames,
                    phone_id: rng.gen_range(1..cfg.n_phones),
                }
            }
        })
        .collect()
}

/// Stair-like per-frame note contour (equal temperament, 0 on rests).
pub fn note_contour(score: &[NoteEvent]) -> NoteContour {
    let mut f0 = Vec::new();
    for n in score {
        let hz = n.midi_pitch.map(midi_to_hz).unwrap_or(0.0);
        f0.extend(std::iter::repeat(hz).take(n.duration_frames));
    }
    NoteContour { f0_hz: f0 }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Reference F0 with singing dynamics layered on the note contour in the
/// cent domain: preparation dip before a pitch change, overshoot after,
/// vibrato ramping in after a third of the note, Gaussian fine-fluctuation.
pub fn render_reference_f0(score: &[NoteEvent], style: &StyleParams, seed: u64) -> F0Contour {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5f0f);
    let mut f0 = Vec::new();
    let mut voiced = Vec::new();
    for (i, n) in score.iter().enumerate() {
        let dur = n.duration_frames;
        let Some(midi) = n.midi_pitch else {
            f0.extend(std::iter::repeat(0.0).take(dur));
            voiced.extend(std::iter::repeat(false).take(dur));
            continue;
        };
        let base = midi_to_hz(midi);
        let prev_step = score
            .get(i.wrapping_sub(1))
            .and_then(|p| p.midi_pitch)
            .map(|pm| midi as f64 - pm as f64)
            .unwrap_or(0.0);
        let next_step = score
            .get(i + 1)
            .and_then(|p| p.midi_pitch)
            .map(|pm| pm as f64 - midi as f64)
            .unwrap_or(0.0);
        let ramp = style.ramp_frames.min(dur / 2).max(1);
        // Vibrato phase is a property of the take, not the score: singers do
        // not lock phase to the note onset, so each note draws a random
        // starting phase. Without this, phase would be a deterministic
        // function of note position and a pure-regression model could learn
        // it outright.
        let phase0 = if style.vibrato_depth_cents > 0.0 && style.vibrato_rate_hz > 0.0 {
            rng.gen_range(0.0..2.0 * std::f64::consts::PI)
        } else {
            0.0
        };
        for t in 0..dur {
            let mut cents = 0.0;
            // Overshoot: exceed the new pitch just after an upward change
            // (undershoot after a downward one), decaying over the ramp.
            if prev_step != 0.0 && t < ramp {
                let decay = 1.0 - t as f64 / ramp as f64;
                cents += style.overshoot_cents * prev_step.signum() * decay;
            }
            // Preparation: dip opposite to the upcoming change near note end.
            if next_step != 0.0 && t + ramp >= dur {
                let rise = (t + ramp - dur + 1) as f64 / ramp as f64;
                cents -= style.preparation_cents * next_step.signum() * rise;
            }
            // Vibrato, ramping in after the first third of the note.
            if style.vibrato_depth_cents > 0.0 && style.vibrato_rate_hz > 0.0 {
                let onset = dur as f64 / 3.0;
                if (t as f64) >= onset {
                    let ramp_len = (dur as f64 / 6.0).max(1.0);
                    let amp = ((t as f64 - onset) / ramp_len).min(1.0);
                    let phase = phase0
                        + 2.0 * std::f64::consts::PI * style.vibrato_rate_hz * (t as f64 - onset)
                            / FRAME_RATE_HZ;
                    cents += style.vibrato_depth_cents * amp * phase.sin();
                }
            }
            if style.fluctuation_std_cents > 0.0 {
                cents += style.fluctuation_std_cents * gaussian(&mut rng);
            }
            f0.push(base * cents_to_ratio(cents));
            voiced.push(true);
        }
    }
    F0Contour::new(f0, voiced).expect("rendered contour is consistent")
}

/// Fixed MCC template for a phone, derived deterministically from the id.
pub fn phone_template(phone_id: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e3a_0000 + phone_id as u64);
    (0..40)
        .map(|c| rng.gen_range(-1.0..1.0) / (1.0 + 0.3 * c as f64))
        .collect()
}

/// Half-length of the crossfade region on each side of a note boundary.
const COART_FRAMES: usize = 8;
/// Deterministic pitch-to-spectrum coupling strength.
const F0_COUPLING: f64 = 0.05;

/// Procedural spectral frames: per-phone templates crossfaded at note
/// boundaries, note-gated energy, and a small F0-coupled perturbation.
pub fn render_spectral(score: &[NoteEvent], ref_f0: &F0Contour) -> Vec<Vec<f64>> {
    let total: usize = score.iter().map(|n| n.duration_frames).sum();
    assert_eq!(total, ref_f0.len(), "score and contour disagree on length");
    let templates: Vec<Vec<f64>> = {
        let max_phone = score.iter().map(|n| n.phone_id).max().unwrap_or(0);
        (0..=max_phone).map(phone_template).collect()
    };
    let mut frames = Vec::with_capacity(total);
    let mut note_start = 0usize;
    for (i, n) in score.iter().enumerate() {
        let dur = n.duration_frames;
        let cur = &templates[n.phone_id];
        for t in 0..dur {
            let mut mcc: Vec<f64> = cur.clone();
            // Crossfade with the previous phone over the first COART frames
            // and with the next over the last COART frames. At the exact
            // boundary the mix weight is 0.5.
            if t < COART_FRAMES && i > 0 {
                let w_prev = 0.5 * (1.0 - t as f64 / COART_FRAMES as f64);
                let prev = &templates[score[i - 1].phone_id];
                for (m, (c, p)) in mcc.iter_mut().zip(cur.iter().zip(prev)) {
                    *m = (1.0 - w_prev) * c + w_prev * p;
                }
            } else if t + COART_FRAMES >= dur && i + 1 < score.len() {
                let w_next = 0.5 * (1.0 - (dur - 1 - t) as f64 / COART_FRAMES as f64);
                let next = &templates[score[i + 1].phone_id];
                for (m, (c, x)) in mcc.iter_mut().zip(cur.iter().zip(next)) {
                    *m = (1.0 - w_next) * c + w_next * x;
                }
            }
            let g = note_start + t;
            if ref_f0.voiced[g] {
                // Pitch-coupled perturbation so spectra follow F0 movements.
                let mel = 1127.0 * (1.0 + ref_f0.f0_hz[g] / 700.0).ln();
                for (c, m) in mcc.iter_mut().enumerate() {
                    *m += F0_COUPLING * (mel / 1000.0) / (1.0 + c as f64);
                }
            }
            let energy = if n.midi_pitch.is_some() {
                let ramp = 10.min(dur / 2).max(1);
                let rise = ((t + 1) as f64 / ramp as f64).min(1.0);
                let fall = ((dur - t) as f64 / ramp as f64).min(1.0);
                0.3 + 0.7 * rise.min(fall)
            } else {
                0.05
            };
            mcc.push(energy);
            frames.push(mcc);
        }
        note_start += dur;
    }
    frames
}

/// Context dimension for a given phone inventory size.
pub fn ctx_dim(n_phones: usize) -> usize {
    // prev/cur/next phone one-hots, pitch-class one-hot + rest slot,
    // octave one-hot + rest slot, 4 numeric values.
    3 * n_phones + 13 + 12 + 4
}

/// Frame-level context features from the score alignment.
pub fn encode_context(score: &[NoteEvent], n_phones: usize) -> Vec<Vec<f64>> {
    let total: usize = score.iter().map(|n| n.duration_frames).sum();
    let dim = ctx_dim(n_phones);
    let mut out = Vec::with_capacity(total);
    for (i, n) in score.iter().enumerate() {
        let prev = if i > 0 { &score[i - 1] } else { n };
        let next = if i + 1 < score.len() { &score[i + 1] } else { n };
        for t in 0..n.duration_frames {
            let mut v = vec![0.0; dim];
            let mut off = 0;
            for p in [prev, n, next] {
                v[off + p.phone_id] = 1.0;
                off += n_phones;
            }
            // Pitch class (12) + rest slot.
            match n.midi_pitch {
                Some(m) => v[off + (m % 12) as usize] = 1.0,
                None => v[off + 12] = 1.0,
            }
            off += 13;
            // Octave (11) + rest slot.
            match n.midi_pitch {
                Some(m) => v[off + (m / 12) as usize] = 1.0,
                None => v[off + 11] = 1.0,
            }
            off += 12;
            let dur = n.duration_frames as f64;
            v[off] = t as f64 / dur; // forward position, 0 at note start
            v[off + 1] = (n.duration_frames - 1 - t) as f64 / dur; // backward
            v[off + 2] = dur / 200.0;
            v[off + 3] = n.midi_pitch.map(|m| m as f64 / 127.0).unwrap_or(0.0);
            out.push(v);
        }
    }
    out
}

fn utterance_seed(seed: u64, song: usize, utt: usize) -> u64 {
    // splitmix-style scramble so nearby indices decorrelate
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul((song * 1001 + utt + 1) as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Split sizes: ~91/2/7 song proportions scaled down; 25 songs -> 20/2/3.
pub fn split_sizes(n_songs: usize) -> Result<(usize, usize, usize)> {
    if n_songs < 3 {
        return Err(SvsError::Data(format!(
            "need at least 3 songs to split, got {n_songs}"
        )));
    }
    let val = ((n_songs as f64 * 2.0 / 25.0).round() as usize).max(1);
    let test = ((n_songs as f64 * 3.0 / 25.0).round() as usize).max(1);
    let train = n_songs
        .checked_sub(val + test)
        .filter(|&t| t >= 1)
        .ok_or_else(|| SvsError::Data("too few songs for a train split".into()))?;
    Ok((train, val, test))
}

fn build_utterance(cfg: &CorpusConfig, song: usize, utt: usize, split: Split) -> Utterance {
    let seed = utterance_seed(cfg.seed, song, utt);
    let score = generate_score(seed, cfg.notes_per_utt, cfg);
    let ref_f0 = render_reference_f0(&score, &cfg.style, seed);
    let ref_spec = render_spectral(&score, &ref_f0);
    let ctx = encode_context(&score, cfg.n_phones);
    let note_f0 = note_contour(&score);
    Utterance {
        song,
        index_in_song: utt,
        split,
        score,
        ctx,
        ref_f0,
        ref_spec,
        note_f0,
    }
}

/// Build the full corpus; pure function of the config.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    let (n_train, n_val, _n_test) = split_sizes(cfg.n_songs)?;
    let split_of_song = |s: usize| {
        if s < n_train {
            Split::Train
        } else if s < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    };
    let n_utts = cfg.n_songs * cfg.utts_per_song;
    let cfgc = cfg.clone();
    let utterances = par::map_indexed(n_utts, move |i| {
        let song = i / cfgc.utts_per_song;
        let utt = i % cfgc.utts_per_song;
        build_utterance(&cfgc, song, utt, split_of_song(song))
    });
    let stats = compute_stats(&utterances)?;
    Ok(Corpus {
        config: cfg.clone(),
        ctx_dim: ctx_dim(cfg.n_phones),
        utterances,
        stats,
    })
}

/// Per-dimension z-score statistics of the spectral features, train split only.
pub fn compute_stats(utterances: &[Utterance]) -> Result<FeatureStats> {
    let mut mean = vec![0.0; SPEC_DIM];
    let mut m2 = vec![0.0; SPEC_DIM];
    let mut n = 0usize;
    for u in utterances.iter().filter(|u| u.split == Split::Train) {
        for f in &u.ref_spec {
            n += 1;
            for (d, &v) in f.iter().enumerate() {
                mean[d] += v;
                m2[d] += v * v;
            }
        }
    }
    if n == 0 {
        return Err(SvsError::Data("no training frames for statistics".into()));
    }
    let nf = n as f64;
    let std: Vec<f64> = mean
        .iter()
        .zip(&m2)
        .map(|(&s, &sq)| {
            let m = s / nf;
            ((sq / nf - m * m).max(0.0)).sqrt().max(1e-6)
        })
        .collect();
    for m in &mut mean {
        *m /= nf;
    }
    Ok(FeatureStats {
        spec_mean: mean,
        spec_std: std,
    })
}

impl Corpus {
    pub fn split(&self, s: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == s).collect()
    }

    /// Z-scored spectral frames of one utterance.
    pub fn normalized_spec(&self, u: &Utterance) -> Vec<Vec<f64>> {
        u.ref_spec
            .iter()
            .map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(d, &v)| (v - self.stats.spec_mean[d]) / self.stats.spec_std[d])
                    .collect()
            })
            .collect()
    }

    pub fn denormalize_spec(&self, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
        frames
            .iter()
            .map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(d, &v)| v * self.stats.spec_std[d] + self.stats.spec_mean[d])
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp;

    #[test]
    fn score_is_deterministic() {
        let cfg = CorpusConfig::default();
        let a = generate_score(42, 10, &cfg);
        let b = generate_score(42, 10, &cfg);
        assert_eq!(a, b);
        assert_eq!(generate_score(42, 1, &cfg).len(), 1);
    }

    #[test]
    fn score_pitches_in_range() {
        let cfg = CorpusConfig::default();
        let mut n_rest = 0;
        let total = 10_000;
        for s in 0..100u64 {
            for n in generate_score(s, total / 100, &cfg) {
                match n.midi_pitch {
                    Some(m) => {
                        assert!((MIDI_LO..=MIDI_HI).contains(&m));
                        assert!(DIATONIC.contains(&(m % 12)));
                    }
                    None => n_rest += 1,
                }
                assert!(n.duration_frames >= cfg.dur_min_frames);
                assert!(n.duration_frames <= cfg.dur_max_frames);
            }
        }
        let rest_frac = n_rest as f64 / total as f64;
        assert!(rest_frac > 0.05 && rest_frac < 0.2, "rest frac {rest_frac}");
    }

    #[test]
    fn flat_style_equals_note_contour() {
        let cfg = CorpusConfig::default();
        let score = generate_score(7, 8, &cfg);
        let f0 = render_reference_f0(&score, &StyleParams::flat(), 7);
        let notes = note_contour(&score);
        for (t, (&f, &n)) in f0.f0_hz.iter().zip(&notes.f0_hz).enumerate() {
            assert!((f - n).abs() < 1e-9, "frame {t}: {f} vs {n}");
        }
    }

    #[test]
    fn rest_frames_are_unvoiced() {
        let score = vec![NoteEvent {
            midi_pitch: None,
            duration_frames: 20,
            phone_id: 0,
        }];
        let f0 = render_reference_f0(&score, &StyleParams::default(), 1);
        assert!(f0.voiced.iter().all(|&v| !v));
        assert!(f0.f0_hz.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn vibrato_peak_at_configured_rate() {
        let score = vec![NoteEvent {
            midi_pitch: Some(60),
            duration_frames: 800,
            phone_id: 1,
        }];
        let style = StyleParams {
            vibrato_rate_hz: 5.5,
            vibrato_depth_cents: 60.0,
            overshoot_cents: 0.0,
            preparation_cents: 0.0,
            fluctuation_std_cents: 0.0,
            ramp_frames: 0,
        };
        let f0 = render_reference_f0(&score, &style, 3);
        // Analyze the steady tail where vibrato is fully ramped in.
        let tail = &f0.f0_hz[500..];
        let spec = dsp::magnitude_spectrum(&dsp::detrend(tail), FRAME_RATE_HZ);
        let (pf, _) = dsp::band_peak_over_median(&spec, 3.0, 9.0, 25.0).unwrap();
        assert!((pf - 5.5).abs() <= 0.5, "vibrato peak at {pf} Hz");
    }

    #[test]
    fn reference_minus_note_near_zero_mean_on_long_note() {
        let score = vec![NoteEvent {
            midi_pitch: Some(64),
            duration_frames: 600,
            phone_id: 2,
        }];
        let style = StyleParams {
            fluctuation_std_cents: 0.0,
            ..StyleParams::default()
        };
        let f0 = render_reference_f0(&score, &style, 5);
        let base = midi_to_hz(64);
        let depth_hz = base * (cents_to_ratio(style.vibrato_depth_cents) - 1.0);
        let mean_dev: f64 =
            f0.f0_hz.iter().map(|f| f - base).sum::<f64>() / f0.len() as f64;
        assert!(mean_dev.abs() < depth_hz / 10.0 + 1.0);
    }

    #[test]
    fn spectral_constant_phone_constant_frames() {
        let score = vec![NoteEvent {
            midi_pitch: Some(60),
            duration_frames: 60,
            phone_id: 3,
        }];
        let notes = note_contour(&score);
        let f0 = F0Contour::new(notes.f0_hz.clone(), vec![true; 60]).unwrap();
        let spec = render_spectral(&score, &f0);
        let tpl = phone_template(3);
        // Interior frames away from energy ramps: MCCs equal the template
        // plus the constant F0 coupling.
        let mel = 1127.0 * (1.0 + midi_to_hz(60) / 700.0).ln();
        for f in &spec[15..45] {
            for (c, (&got, &t)) in f[..40].iter().zip(&tpl).enumerate() {
                let want = t + F0_COUPLING * (mel / 1000.0) / (1.0 + c as f64);
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectral_boundary_is_template_average() {
        let score = vec![
            NoteEvent {
                midi_pitch: None,
                duration_frames: 60,
                phone_id: 1,
            },
            NoteEvent {
                midi_pitch: None,
                duration_frames: 60,
                phone_id: 2,
            },
        ];
        let f0 = F0Contour::new(vec![0.0; 120], vec![false; 120]).unwrap();
        let spec = render_spectral(&score, &f0);
        let t1 = phone_template(1);
        let t2 = phone_template(2);
        // Last frame of note 1 has w_next = 0.5.
        for ((got, a), b) in spec[59][..40].iter().zip(&t1).zip(&t2) {
            assert!((got - 0.5 * (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn rest_energy_below_voiced_minimum() {
        let score = vec![
            NoteEvent {
                midi_pitch: Some(60),
                duration_frames: 50,
                phone_id: 1,
            },
            NoteEvent {
                midi_pitch: None,
                duration_frames: 50,
                phone_id: 0,
            },
        ];
        let mut v = vec![true; 50];
        v.extend(vec![false; 50]);
        let mut f = vec![midi_to_hz(60); 50];
        f.extend(vec![0.0; 50]);
        let f0 = F0Contour::new(f, v).unwrap();
        let spec = render_spectral(&score, &f0);
        let min_voiced = spec[..50].iter().map(|f| f[40]).fold(f64::MAX, f64::min);
        let max_rest = spec[50..].iter().map(|f| f[40]).fold(f64::MIN, f64::max);
        assert!(max_rest < min_voiced);
    }

    #[test]
    fn context_positions_and_one_hots() {
        let cfg = CorpusConfig::default();
        let score = generate_score(9, 5, &cfg);
        let ctx = encode_context(&score, cfg.n_phones);
        let mut t = 0;
        for n in &score {
            assert_eq!(ctx[t][3 * cfg.n_phones + 13 + 12], 0.0, "fwd pos at start");
            let last = t + n.duration_frames - 1;
            assert_eq!(ctx[last][3 * cfg.n_phones + 13 + 12 + 1], 0.0, "bwd pos at end");
            t += n.duration_frames;
        }
        for f in &ctx {
            assert!(f.iter().all(|v| v.is_finite()));
            let p = cfg.n_phones;
            for (a, b) in [(0, p), (p, 2 * p), (2 * p, 3 * p), (3 * p, 3 * p + 13), (3 * p + 13, 3 * p + 25)] {
                let s: f64 = f[a..b].iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "one-hot group [{a},{b}) sums to {s}");
            }
        }
    }

    #[test]
    fn corpus_split_and_determinism() {
        let cfg = CorpusConfig {
            n_songs: 25,
            utts_per_song: 2,
            notes_per_utt: 3,
            dur_min_frames: 20,
            dur_max_frames: 40,
            ..CorpusConfig::default()
        };
        assert_eq!(split_sizes(25).unwrap(), (20, 2, 3));
        assert!(split_sizes(2).is_err());
        let a = build_corpus(&cfg).unwrap();
        let b = build_corpus(&cfg).unwrap();
        assert_eq!(a.utterances.len(), 50);
        for (x, y) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(x.ctx, y.ctx);
            assert_eq!(x.ref_f0, y.ref_f0);
            assert_eq!(x.ref_spec, y.ref_spec);
        }
        let songs: std::collections::HashSet<(usize, &str)> = a
            .utterances
            .iter()
            .map(|u| (u.song, u.split.as_str()))
            .collect();
        // No song spans splits.
        let mut per_song: std::collections::HashMap<usize, Vec<&str>> = Default::default();
        for (s, sp) in songs {
            per_song.entry(s).or_default().push(sp);
        }
        assert!(per_song.values().all(|v| v.len() == 1));
    }

    #[test]
    fn train_stats_normalize_train_data() {
        let cfg = CorpusConfig {
            n_songs: 5,
            utts_per_song: 2,
            notes_per_utt: 3,
            dur_min_frames: 20,
            dur_max_frames: 40,
            ..CorpusConfig::default()
        };
        let corpus = build_corpus(&cfg).unwrap();
        let mut sum = vec![0.0; SPEC_DIM];
        let mut sq = vec![0.0; SPEC_DIM];
        let mut n = 0;
        for u in corpus.split(Split::Train) {
            for f in corpus.normalized_spec(u) {
                n += 1;
                for (d, v) in f.iter().enumerate() {
                    sum[d] += v;
                    sq[d] += v * v;
                }
            }
        }
        for d in 0..SPEC_DIM {
            let m = sum[d] / n as f64;
            let v = sq[d] / n as f64 - m * m;
            assert!(m.abs() < 1e-9, "dim {d} mean {m}");
            assert!((v - 1.0).abs() < 1e-6, "dim {d} var {v}");
        }
    }

    #[test]
    fn note_contour_recoverable_from_score() {
        let cfg = CorpusConfig::default();
        let score = generate_score(13, 6, &cfg);
        let nc = note_contour(&score);
        let mut t = 0;
        for n in &score {
            let hz = n.midi_pitch.map(midi_to_hz).unwrap_or(0.0);
            for _ in 0..n.duration_frames {
                assert_eq!(nc.f0_hz[t], hz);
                t += 1;
            }
        }
    }
}
