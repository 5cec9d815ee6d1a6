//! Core domain types shared by every module: complex phasor samples,
//! measurement matrices, sliding windows, deviation queues, and attack
//! patterns.
//!
//! A measurement stream is a time-by-channel grid of complex phasor values.
//! Each channel is processed as an independent stream; cross-channel
//! alignment is by sample index, not wall clock.

use std::collections::VecDeque;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default synchrophasor reporting rate in frames per second.
pub const DEFAULT_RATE_HZ: f64 = 30.0;

/// One complex phasor value in per-unit. Both components are finite by
/// construction; no NaN/Inf is admitted into any stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexSample {
    pub re: f64,
    pub im: f64,
}

impl ComplexSample {
    /// Build a sample, rejecting non-finite components.
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::NonFinite { t: 0, channel: 0, value: if re.is_finite() { im } else { re } });
        }
        Ok(Self { re, im })
    }

    pub fn zero() -> Self {
        Self { re: 0.0, im: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    pub fn abs(&self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn from_complex(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }

    /// Euclidean distance to another sample on the complex plane.
    pub fn dist(&self, other: &ComplexSample) -> f64 {
        (self.re - other.re).hypot(self.im - other.im)
    }
}

/// Channel kind as reported by the PMU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Voltage,
    Current,
}

/// Per-column channel tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMeta {
    pub pmu_id: usize,
    pub kind: ChannelKind,
}

impl ChannelMeta {
    pub fn voltage(pmu_id: usize) -> Self {
        Self { pmu_id, kind: ChannelKind::Voltage }
    }

    pub fn current(pmu_id: usize) -> Self {
        Self { pmu_id, kind: ChannelKind::Current }
    }
}

impl Default for ChannelMeta {
    fn default() -> Self {
        Self { pmu_id: 0, kind: ChannelKind::Voltage }
    }
}

/// Dense time-by-channel grid of complex phasor samples. Rows are sample
/// indices, columns are channels. Every cell is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMatrix {
    samples: Vec<ComplexSample>,
    n_samples: usize,
    n_channels: usize,
    pub rate_hz: f64,
    pub channel_meta: Vec<ChannelMeta>,
}

impl MeasurementMatrix {
    /// Build from a row-major sample buffer.
    pub fn new(
        samples: Vec<ComplexSample>,
        n_samples: usize,
        n_channels: usize,
        rate_hz: f64,
        channel_meta: Vec<ChannelMeta>,
    ) -> Result<Self> {
        if n_samples == 0 || n_channels == 0 {
            return Err(Error::InvalidConfig("measurement matrix must be at least 1x1".into()));
        }
        if samples.len() != n_samples * n_channels {
            return Err(Error::DimensionMismatch(format!(
                "buffer holds {} cells, expected {}x{}",
                samples.len(),
                n_samples,
                n_channels
            )));
        }
        if channel_meta.len() != n_channels {
            return Err(Error::DimensionMismatch(format!(
                "channel_meta has {} entries, expected {}",
                channel_meta.len(),
                n_channels
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    t: i / n_channels,
                    channel: i % n_channels,
                    value: if s.re.is_finite() { s.im } else { s.re },
                });
            }
        }
        Ok(Self { samples, n_samples, n_channels, rate_hz, channel_meta })
    }

    /// Fill a matrix from a per-cell generator.
    pub fn from_fn<F>(
        n_samples: usize,
        n_channels: usize,
        rate_hz: f64,
        channel_meta: Vec<ChannelMeta>,
        mut f: F,
    ) -> Result<Self>
    where
        F: FnMut(usize, usize) -> ComplexSample,
    {
        let mut samples = Vec::with_capacity(n_samples * n_channels);
        for t in 0..n_samples {
            for j in 0..n_channels {
                samples.push(f(t, j));
            }
        }
        Self::new(samples, n_samples, n_channels, rate_hz, channel_meta)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn get(&self, t: usize, channel: usize) -> ComplexSample {
        debug_assert!(t < self.n_samples && channel < self.n_channels);
        self.samples[t * self.n_channels + channel]
    }

    /// Overwrite one cell. Rejects non-finite values.
    pub fn set(&mut self, t: usize, channel: usize, value: ComplexSample) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite { t, channel, value: if value.re.is_finite() { value.im } else { value.re } });
        }
        self.samples[t * self.n_channels + channel] = value;
        Ok(())
    }

    /// One time row as a slice of channel values.
    pub fn row(&self, t: usize) -> &[ComplexSample] {
        &self.samples[t * self.n_channels..(t + 1) * self.n_channels]
    }

    /// One channel column M_j, in time order.
    pub fn channel(&self, j: usize) -> Vec<ComplexSample> {
        (0..self.n_samples).map(|t| self.get(t, j)).collect()
    }

    /// Root-mean-square magnitude of one channel.
    pub fn channel_rms(&self, j: usize) -> f64 {
        let sum: f64 = (0..self.n_samples)
            .map(|t| {
                let z = self.get(t, j);
                z.re * z.re + z.im * z.im
            })
            .sum();
        (sum / self.n_samples as f64).sqrt()
    }

    pub fn cells(&self) -> &[ComplexSample] {
        &self.samples
    }
}

/// Fixed-capacity window over the most recent samples of one channel.
/// Stride is one sample: every push slides the window forward by one.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    capacity: usize,
    buffer: VecDeque<ComplexSample>,
}

impl SlidingWindow {
    /// `capacity` is the window length omega; at least 4 so the circle fit
    /// always sees more points than parameters.
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < 4 {
            return Err(Error::InvalidConfig(format!("window length must be >= 4, got {capacity}")));
        }
        Ok(Self { capacity, buffer: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Window holds exactly `capacity` samples.
    pub fn is_warm(&self) -> bool {
        self.buffer.len() == self.capacity
    }

    /// Append `z`, evicting the oldest sample iff the buffer was full.
    pub fn advance(&mut self, z: ComplexSample) -> Result<()> {
        if !z.is_finite() {
            return Err(Error::NonFinite { t: 0, channel: 0, value: if z.re.is_finite() { z.im } else { z.re } });
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(z);
        Ok(())
    }

    /// Current contents, oldest first.
    pub fn points(&self) -> Vec<ComplexSample> {
        self.buffer.iter().copied().collect()
    }
}

/// FIFO of the most recent center deviations d_t for one channel.
#[derive(Debug, Clone)]
pub struct DeviationQueue {
    capacity: usize,
    values: VecDeque<f64>,
}

impl DeviationQueue {
    /// `capacity` is the queue length tau.
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("deviation queue length must be positive".into()));
        }
        Ok(Self { capacity, values: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.capacity
    }

    /// Enqueue a deviation, evicting the oldest value iff full.
    /// Deviations are distances, so negative or non-finite input is rejected.
    pub fn push(&mut self, d: f64) -> Result<()> {
        if !d.is_finite() || d < 0.0 {
            return Err(Error::InvalidConfig(format!("deviation must be a finite non-negative value, got {d}")));
        }
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(d);
        Ok(())
    }

    /// Mean of the stored deviations; 0 when empty.
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Stored deviations in arrival order.
    pub fn values(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    /// Export the full queue as an attack pattern. Requires a full queue so
    /// every pattern has exactly `capacity` entries.
    pub fn export(&self, channel_id: usize, t_detect: usize) -> Result<AttackPattern> {
        if !self.is_full() {
            return Err(Error::InvalidConfig(format!(
                "cannot export attack pattern: queue holds {} of {} deviations",
                self.values.len(),
                self.capacity
            )));
        }
        Ok(AttackPattern { sequence: self.values(), channel_id, t_detect })
    }
}

/// The deviation sequence exported from a full queue at detection time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPattern {
    /// Length-tau deviation sequence, oldest first.
    pub sequence: Vec<f64>,
    /// Channel the pattern was captured on.
    pub channel_id: usize,
    /// Sample index of the detection that exported this pattern.
    pub t_detect: usize,
}

impl AttackPattern {
    pub fn new(sequence: Vec<f64>, channel_id: usize, t_detect: usize) -> Self {
        Self { sequence, channel_id, t_detect }
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }
}
