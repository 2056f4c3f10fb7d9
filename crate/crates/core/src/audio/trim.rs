use super::Waveform;
use crate::error::{Error, Result};

/// Intensity assigned to frames with zero energy (and the lower clamp for all frames).
pub const SILENCE_FLOOR_DB: f64 = -120.0;

/// Settings for [`trim_silence`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimParams {
    /// Frames quieter than `peak - threshold_db` count as silence.
    pub threshold_db: f64,
    /// Trimming is skipped when the kept region would be shorter than this.
    pub min_keep_ms: f64,
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for TrimParams {
    fn default() -> Self {
        Self {
            threshold_db: 40.0,
            min_keep_ms: 100.0,
            window_ms: 25.0,
            hop_ms: 10.0,
        }
    }
}

/// Per-frame intensity in dB relative to the loudest frame.
///
/// Frame `i` stands for the hop slot `[i*hop, (i+1)*hop)`. Its RMS is measured
/// over a rectangular window of `window` samples centred on that slot and
/// clipped to the signal, so the first and last frames may be partial.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTrack {
    pub frame_db: Vec<f64>,
    /// Start of each frame's hop slot, in seconds.
    pub frame_times: Vec<f64>,
    pub window_ms: f64,
    pub hop_ms: f64,
}

#[derive(Debug, Clone, Copy)]
struct FrameGeometry {
    window: usize,
    hop: usize,
    /// Samples the window reaches before the slot start.
    lead: usize,
}

impl FrameGeometry {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negated so NaN is rejected too
    fn new(w: &Waveform, window_ms: f64, hop_ms: f64) -> Result<Self> {
        if !(hop_ms > 0.0) || !(window_ms >= hop_ms) {
            return Err(Error::input(format!(
                "need window_ms >= hop_ms > 0, got window {window_ms} ms, hop {hop_ms} ms"
            )));
        }
        let hop = w.ms_to_samples(hop_ms).max(1);
        let window = w.ms_to_samples(window_ms).max(hop);
        Ok(Self {
            window,
            hop,
            lead: (window - hop) / 2,
        })
    }

    fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    fn window_bounds(&self, frame: usize, len: usize) -> (usize, usize) {
        let slot = frame * self.hop;
        let start = slot.saturating_sub(self.lead);
        let end = (slot + self.window - self.lead).min(len);
        (start, end)
    }

    fn slot_bounds(&self, frame: usize, len: usize) -> (usize, usize) {
        let start = frame * self.hop;
        (start, (start + self.hop).min(len))
    }
}

fn frame_rms(samples: &[f32], geom: FrameGeometry) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(samples.len() + 1);
    prefix.push(0.0f64);
    let mut acc = 0.0f64;
    for &s in samples {
        acc += f64::from(s) * f64::from(s);
        prefix.push(acc);
    }
    (0..geom.frame_count(samples.len()))
        .map(|i| {
            let (a, b) = geom.window_bounds(i, samples.len());
            let energy = (prefix[b] - prefix[a]).max(0.0);
            (energy / (b - a) as f64).sqrt()
        })
        .collect()
}

fn rms_to_db(rms: &[f64]) -> Vec<f64> {
    let peak = rms.iter().copied().fold(0.0f64, f64::max);
    rms.iter()
        .map(|&r| {
            if peak == 0.0 || r == 0.0 {
                SILENCE_FLOOR_DB
            } else {
                (20.0 * (r / peak).log10()).max(SILENCE_FLOOR_DB)
            }
        })
        .collect()
}

/// Sliding-window RMS intensity relative to the peak frame.
pub fn frame_intensity(w: &Waveform, window_ms: f64, hop_ms: f64) -> Result<IntensityTrack> {
    if w.is_empty() {
        return Err(Error::input("cannot compute intensity of an empty waveform"));
    }
    let geom = FrameGeometry::new(w, window_ms, hop_ms)?;
    let frame_db = rms_to_db(&frame_rms(w.samples(), geom));
    let frame_times = (0..frame_db.len())
        .map(|i| (i * geom.hop) as f64 / w.sample_rate() as f64)
        .collect();
    Ok(IntensityTrack {
        frame_db,
        frame_times,
        window_ms,
        hop_ms,
    })
}

/// One trimming pass: slot range of frames above threshold, snapped outward.
fn single_pass(samples: &[f32], geom: FrameGeometry, threshold_db: f64) -> Option<(usize, usize)> {
    if samples.is_empty() {
        return None;
    }
    let db = rms_to_db(&frame_rms(samples, geom));
    let loud = |d: &f64| *d > -threshold_db;
    let first = db.iter().position(loud)?;
    let last = db.iter().rposition(loud)?;
    let (start, _) = geom.slot_bounds(first, samples.len());
    let (_, end) = geom.slot_bounds(last, samples.len());
    Some((start, end))
}

/// Sample range `[start, end)` that trimming keeps, before the minimum-length
/// bypass is applied. `None` when no frame exceeds the threshold.
///
/// Passes are repeated on the kept region until it stops shrinking, so the
/// result is a fixed point: re-running on the output keeps all of it.
pub fn kept_range(w: &Waveform, params: &TrimParams) -> Result<Option<(usize, usize)>> {
    if w.is_empty() {
        return Ok(None);
    }
    let geom = FrameGeometry::new(w, params.window_ms, params.hop_ms)?;
    let mut range = (0, w.len());
    loop {
        let Some((a, b)) = single_pass(&w.samples()[range.0..range.1], geom, params.threshold_db) else {
            return Ok(None);
        };
        let next = (range.0 + a, range.0 + b);
        if next == range {
            return Ok(Some(range));
        }
        range = next;
    }
}

/// Drop leading and trailing silence. Interior pauses are untouched.
///
/// Returns the input unchanged when the kept region would be shorter than
/// `params.min_keep_ms` (including the all-silent case).
pub fn trim_silence(w: &Waveform, params: &TrimParams) -> Result<Waveform> {
    let Some((start, end)) = kept_range(w, params)? else {
        return Ok(w.clone());
    };
    let kept_ms = (end - start) as f64 * 1000.0 / w.sample_rate() as f64;
    if kept_ms < params.min_keep_ms {
        return Ok(w.clone());
    }
    Ok(w.slice(start, end))
}
