//! Event synthesis from rendered frames, time-window batching and binary
//! event masks.
//!
//! Two generators are provided:
//! * [`EventCameraModel::accumulate`]: per-pixel threshold crossings against
//!   a reference log-intensity that carries its residual from frame to frame.
//! * [`events_difflog`]: stateless signed counts from the difference of two
//!   consecutive log images, the only option when frames arrive in real time.
//!
//! Both count crossings as `sign(d) * floor(|d| / C)`, i.e. truncation toward zero.

mod augment;

pub use augment::{augment, AugmentSpec, DEFAULT_NOISE_FRACTION, MAX_NOISE_FRACTION, MAX_ROTATION};

use crate::error::{Error, Result};
use crate::render::Frame;
use serde::{Deserialize, Serialize};

/// One brightness-change detection. `p` is +1 or -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: i8,
}

/// Seconds to whole microseconds.
pub fn to_micros(t: f64) -> u64 {
    (t * 1e6).round().max(0.0) as u64
}

/// Contrast thresholds and log offset of the simulated sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub c_pos: f64,
    pub c_neg: f64,
    pub log_eps: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            c_pos: 0.2,
            c_neg: 0.2,
            log_eps: 1e-3,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_pos > 0.0 && self.c_neg > 0.0 && self.log_eps > 0.0) {
            return Err(Error::Validation(format!(
                "thresholds and log offset must be positive: {:?}",
                self
            )));
        }
        Ok(())
    }

    /// Signed number of whole threshold crossings in a log-intensity change.
    pub fn crossings(&self, delta: f64) -> i32 {
        if delta > 0.0 {
            (delta / self.c_pos).floor() as i32
        } else if delta < 0.0 {
            -((-delta / self.c_neg).floor() as i32)
        } else {
            0
        }
    }
}

/// Per-pixel natural log of `intensity + log_eps`.
pub fn log_intensity(frame: &Frame, log_eps: f64) -> Vec<f64> {
    frame
        .intensity
        .iter()
        .map(|&v| (v as f64 + log_eps).ln())
        .collect()
}

/// Stateful threshold-crossing event generator.
///
/// The reference level of each pixel is kept as `base + n_pos * c_pos - n_neg * c_neg`
/// with integer crossing counters, so the change of the reference is always an
/// exact multiple of the thresholds.
#[derive(Debug, Clone)]
pub struct EventCameraModel {
    pub thresholds: ThresholdConfig,
    width: usize,
    height: usize,
    base: Vec<f64>,
    n_pos: Vec<i64>,
    n_neg: Vec<i64>,
    initialized: bool,
}

impl EventCameraModel {
    pub fn new(thresholds: ThresholdConfig, width: usize, height: usize) -> Result<Self> {
        thresholds.validate()?;
        Ok(Self {
            thresholds,
            width,
            height,
            base: vec![0.0; width * height],
            n_pos: vec![0; width * height],
            n_neg: vec![0; width * height],
            initialized: false,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Sets every reference level to the log intensity of `frame`.
    pub fn reset(&mut self, frame: &Frame) -> Result<()> {
        self.check_shape(frame)?;
        self.base = log_intensity(frame, self.thresholds.log_eps);
        self.n_pos.iter_mut().for_each(|n| *n = 0);
        self.n_neg.iter_mut().for_each(|n| *n = 0);
        self.initialized = true;
        Ok(())
    }

    /// Sets reference levels directly from log values.
    pub fn reset_log(&mut self, log: &[f64]) -> Result<()> {
        if log.len() != self.width * self.height {
            return Err(Error::shape(self.width * self.height, log.len()));
        }
        self.base = log.to_vec();
        self.n_pos.iter_mut().for_each(|n| *n = 0);
        self.n_neg.iter_mut().for_each(|n| *n = 0);
        self.initialized = true;
        Ok(())
    }

    pub fn ref_log(&self, idx: usize) -> f64 {
        self.base[idx] + self.n_pos[idx] as f64 * self.thresholds.c_pos
            - self.n_neg[idx] as f64 * self.thresholds.c_neg
    }

    /// Net signed crossings emitted at pixel `idx` since the last reset.
    pub fn net_crossings(&self, idx: usize) -> i64 {
        self.n_pos[idx] - self.n_neg[idx]
    }

    fn check_shape(&self, frame: &Frame) -> Result<()> {
        if frame.width != self.width || frame.height != self.height {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", frame.width, frame.height),
            ));
        }
        Ok(())
    }

    /// Emits the events between `prev` and `next`, time-sorted.
    ///
    /// The k-th of n crossings at a pixel is stamped at
    /// `t_prev + ceil(k * (t_next - t_prev) / n)` microseconds, so every
    /// timestamp lies in `(t_prev, t_next]`. An uninitialized model is first
    /// reset to `prev`.
    pub fn accumulate(&mut self, prev: &Frame, next: &Frame) -> Result<Vec<Event>> {
        self.check_shape(prev)?;
        self.check_shape(next)?;
        let (t0, t1) = (to_micros(prev.t), to_micros(next.t));
        if t1 <= t0 {
            return Err(Error::Contract(format!(
                "frames must advance in time ({} us -> {} us)",
                t0, t1
            )));
        }
        if !self.initialized {
            self.reset(prev)?;
        }
        let span = t1 - t0;
        let th = self.thresholds;
        let mut events = Vec::new();
        for (idx, &v) in next.intensity.iter().enumerate() {
            let l = (v as f64 + th.log_eps).ln();
            let n = th.crossings(l - self.ref_log(idx));
            if n == 0 {
                continue;
            }
            let (count, p) = if n > 0 {
                self.n_pos[idx] += n as i64;
                (n as u64, 1i8)
            } else {
                self.n_neg[idx] += (-n) as i64;
                ((-n) as u64, -1i8)
            };
            let (x, y) = ((idx % self.width) as u16, (idx / self.width) as u16);
            for k in 1..=count {
                events.push(Event {
                    t: t0 + (k * span).div_ceil(count),
                    x,
                    y,
                    p,
                });
            }
        }
        events.sort_by_key(|e| (e.t, e.y, e.x));
        Ok(events)
    }
}

/// Free-function form of [`EventCameraModel::accumulate`].
pub fn events_accumulator(model: &mut EventCameraModel, prev: &Frame, next: &Frame) -> Result<Vec<Event>> {
    model.accumulate(prev, next)
}

/// Signed per-pixel event counts for one frame interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedCounts {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<i32>,
}

impl SignedCounts {
    pub fn total_events(&self) -> u64 {
        self.counts.iter().map(|c| c.unsigned_abs() as u64).sum()
    }
}

/// Stateless count estimate from the difference of two log images.
pub fn events_difflog(thresholds: &ThresholdConfig, prev: &Frame, next: &Frame) -> Result<SignedCounts> {
    if prev.width != next.width || prev.height != next.height {
        return Err(Error::shape(
            format!("{}x{}", prev.width, prev.height),
            format!("{}x{}", next.width, next.height),
        ));
    }
    let eps = thresholds.log_eps;
    let counts = prev
        .intensity
        .iter()
        .zip(&next.intensity)
        .map(|(&a, &b)| thresholds.crossings((b as f64 + eps).ln() - (a as f64 + eps).ln()))
        .collect();
    Ok(SignedCounts {
        width: prev.width,
        height: prev.height,
        counts,
    })
}

/// Events falling in the half-open window `[t_start, t_end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventBatch {
    pub events: Vec<Event>,
    pub t_start: u64,
    pub t_end: u64,
    pub width: usize,
    pub height: usize,
}

/// Selects the events of a time-sorted stream with `t0 <= t < t0 + dt`, preserving order.
pub fn batch_events(stream: &[Event], t0: u64, dt: u64, width: usize, height: usize) -> Result<EventBatch> {
    if let Some(i) = stream.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(Error::Contract(format!(
            "event stream is not time-sorted at index {}",
            i + 1
        )));
    }
    let t_end = t0 + dt;
    let lo = stream.partition_point(|e| e.t < t0);
    let hi = stream.partition_point(|e| e.t < t_end);
    let events = stream[lo..hi].to_vec();
    if let Some(e) = events
        .iter()
        .find(|e| e.x as usize >= width || e.y as usize >= height || e.p.abs() != 1)
    {
        return Err(Error::Contract(format!("event {:?} outside a {}x{} sensor", e, width, height)));
    }
    Ok(EventBatch {
        events,
        t_start: t0,
        t_end,
        width,
        height,
    })
}

/// Binary event mask: 1 where a pixel's net signed event count is nonzero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bem {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<u8>,
}

impl Bem {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            mask: vec![0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.mask[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.mask.iter().filter(|&&b| b != 0).count()
    }

    pub fn hamming(&self, other: &Bem) -> usize {
        self.mask
            .iter()
            .zip(&other.mask)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Mirrors columns.
    pub fn flip_lr(&self) -> Bem {
        let mut out = Bem::zeros(self.width, self.height);
        for y in 0..self.height {
            let row = &self.mask[y * self.width..(y + 1) * self.width];
            let dst = &mut out.mask[y * self.width..(y + 1) * self.width];
            for (d, s) in dst.iter_mut().zip(row.iter().rev()) {
                *d = *s;
            }
        }
        out
    }

    /// Max-pools onto a `width x height` grid: an output bit is set when any
    /// source pixel in its block is set.
    pub fn downsample(&self, width: usize, height: usize) -> Bem {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let xs = block_ranges(self.width, width);
        let ys = block_ranges(self.height, height);
        let mut out = Bem::zeros(width, height);
        for (oy, &(y0, y1)) in ys.iter().enumerate() {
            for (ox, &(x0, x1)) in xs.iter().enumerate() {
                let hit = (y0..y1).any(|y| (x0..x1).any(|x| self.mask[y * self.width + x] != 0));
                out.mask[oy * width + ox] = hit as u8;
            }
        }
        out
    }

    /// Mask as 0.0 / 1.0 values.
    pub fn to_f64(&self) -> Vec<f64> {
        self.mask.iter().map(|&b| b as f64).collect()
    }
}

/// Source index range pooled into each of `dst` output cells. Ranges
/// partition the source when shrinking and repeat source cells when growing.
pub(crate) fn block_ranges(src: usize, dst: usize) -> Vec<(usize, usize)> {
    (0..dst)
        .map(|i| {
            let lo = i * src / dst;
            let hi = ((i + 1) * src / dst).max(lo + 1);
            (lo, hi)
        })
        .collect()
}

/// Mask of pixels whose net polarity sum over the batch is nonzero.
pub fn bem_from_batch(batch: &EventBatch) -> Bem {
    let mut net = vec![0i32; batch.width * batch.height];
    for e in &batch.events {
        if (e.x as usize) < batch.width && (e.y as usize) < batch.height {
            net[e.y as usize * batch.width + e.x as usize] += e.p as i32;
        }
    }
    Bem {
        width: batch.width,
        height: batch.height,
        mask: net.iter().map(|&n| (n != 0) as u8).collect(),
    }
}

pub fn bem_from_difflog(counts: &SignedCounts) -> Bem {
    Bem {
        width: counts.width,
        height: counts.height,
        mask: counts.counts.iter().map(|&c| (c != 0) as u8).collect(),
    }
}
