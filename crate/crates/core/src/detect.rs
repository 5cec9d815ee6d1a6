//! Streaming intrusion detection from circle-fit center deviations.
//!
//! Per channel: a stride-1 sliding window is fitted with a least-squares
//! circle; the distance d_t between the fitted center and a baseline center
//! learned on attack-free training data is pushed into a FIFO queue. Once
//! the queue is full, any d_t above the threshold raises the intrusion flag
//! and exports the queue as an attack pattern for the classifier.
//!
//! The threshold delta is calibrated empirically as `margin` times the
//! largest training deviation (floored at 1e-6), which guarantees zero
//! false alarms on anything the training data already exhibits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle::{fit_circle, fit_circle_fast};
use crate::error::{Error, Result};
use crate::model::{AttackPattern, ComplexSample, DeviationQueue, MeasurementMatrix, SlidingWindow};

/// Lower bound on the calibrated threshold so noiseless training does not
/// produce a zero threshold.
pub const DELTA_FLOOR: f64 = 1e-6;

/// Detector tuning: window length omega, queue length tau, and the
/// calibration margin on the maximum training deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub omega: usize,
    pub tau: usize,
    pub margin: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        // One nominal cycle at 30 Hz for both window and queue.
        Self { omega: 30, tau: 30, margin: 3.0 }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if self.omega < 4 {
            return Err(Error::InvalidConfig(format!("omega must be >= 4, got {}", self.omega)));
        }
        if self.tau == 0 {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        if self.margin < 1.0 {
            return Err(Error::InvalidConfig(format!("margin must be >= 1, got {}", self.margin)));
        }
        Ok(())
    }
}

/// One emitted detection: the deviation that crossed the threshold and the
/// full queue exported as an attack pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub t: usize,
    pub channel: usize,
    pub d_t: f64,
    pub delta: f64,
    pub pattern: Vec<f64>,
}

impl DetectionEvent {
    pub fn attack_pattern(&self) -> AttackPattern {
        AttackPattern::new(self.pattern.clone(), self.channel, self.t)
    }
}

/// Calibrated per-channel detector state.
#[derive(Debug, Clone)]
pub struct ChannelDetector {
    channel_id: usize,
    params: DetectorParams,
    baseline_center: (f64, f64),
    delta: f64,
    window: SlidingWindow,
    queue: DeviationQueue,
    flag: bool,
    cooldown: usize,
    degenerate_fits: usize,
    last_d: f64,
    last_center: Option<(f64, f64)>,
    t: usize,
}

impl ChannelDetector {
    /// Learn the baseline center and threshold from an attack-free training
    /// stream. The stream must hold at least `omega + tau` samples.
    pub fn calibrate(channel_id: usize, training: &[ComplexSample], params: DetectorParams) -> Result<Self> {
        params.validate()?;
        let need = params.omega + params.tau;
        if training.len() < need {
            return Err(Error::TrainingTooShort { got: training.len(), need });
        }

        let baseline = fit_circle(training)?;
        let c0 = baseline.center;

        // Maximum center deviation over all stride-1 training windows, using
        // the same fit path the online detector runs.
        let mut max_dev: f64 = 0.0;
        let mut prev = 0.0;
        for w in training.windows(params.omega) {
            let d = match fit_circle_fast(w) {
                Ok(fit) => (fit.center.0 - c0.0).hypot(fit.center.1 - c0.1),
                Err(Error::DegenerateFit) => prev,
                Err(e) => return Err(e),
            };
            prev = d;
            max_dev = max_dev.max(d);
        }
        let delta = (params.margin * max_dev).max(DELTA_FLOOR);

        Ok(Self {
            channel_id,
            params,
            baseline_center: c0,
            delta,
            window: SlidingWindow::new(params.omega)?,
            queue: DeviationQueue::new(params.tau)?,
            flag: false,
            cooldown: 0,
            degenerate_fits: 0,
            last_d: 0.0,
            last_center: None,
            t: 0,
        })
    }

    pub fn channel_id(&self) -> usize {
        self.channel_id
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn baseline_center(&self) -> (f64, f64) {
        self.baseline_center
    }

    /// Intrusion flag; true while the current deviation exceeds delta.
    pub fn flag(&self) -> bool {
        self.flag
    }

    /// Mean of the queued deviations, the magnitude estimate used by
    /// retrieval.
    pub fn mean_deviation(&self) -> f64 {
        self.queue.mean()
    }

    /// Center fitted on the current window, if the last fit succeeded.
    pub fn last_center(&self) -> Option<(f64, f64)> {
        self.last_center
    }

    pub fn last_deviation(&self) -> f64 {
        self.last_d
    }

    /// Count of degenerate window fits that reused the previous deviation.
    pub fn degenerate_fits(&self) -> usize {
        self.degenerate_fits
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    /// Advance the detector by one sample. Returns a detection event when
    /// the deviation exceeds delta with a full queue and no active cooldown.
    ///
    /// A degenerate window fit (stalled phasor, collinear arc) reuses the
    /// previous deviation and bumps a diagnostic counter instead of failing:
    /// a live detector must not halt on one bad window.
    pub fn step(&mut self, z: ComplexSample) -> Result<Option<DetectionEvent>> {
        let t = self.t;
        self.t += 1;
        if self.cooldown > 0 {
            self.cooldown -= 1;
        }
        self.window.advance(z)?;
        if !self.window.is_warm() {
            return Ok(None);
        }

        let d = match fit_circle_fast(&self.window.points()) {
            Ok(fit) => {
                self.last_center = Some(fit.center);
                (fit.center.0 - self.baseline_center.0).hypot(fit.center.1 - self.baseline_center.1)
            }
            Err(Error::DegenerateFit) => {
                self.degenerate_fits += 1;
                self.last_d
            }
            Err(e) => return Err(e),
        };
        self.last_d = d;
        self.queue.push(d)?;

        if !self.queue.is_full() {
            // Warm-up guard: no flag, no pattern until the queue holds tau
            // deviations.
            self.flag = false;
            return Ok(None);
        }
        self.flag = d > self.delta;
        if self.flag && self.cooldown == 0 {
            let pattern = self.queue.values();
            self.cooldown = self.params.tau;
            return Ok(Some(DetectionEvent { t, channel: self.channel_id, d_t: d, delta: self.delta, pattern }));
        }
        Ok(None)
    }
}

/// Calibrate one detector per channel on the first `train_len` samples of a
/// stream. Channels are independent, so calibration runs in parallel.
pub fn calibrate_channels(
    m: &MeasurementMatrix,
    train_len: usize,
    params: DetectorParams,
) -> Result<Vec<ChannelDetector>> {
    if train_len > m.n_samples() {
        return Err(Error::TrainingTooShort { got: m.n_samples(), need: train_len });
    }
    (0..m.n_channels())
        .into_par_iter()
        .map(|j| {
            let training: Vec<ComplexSample> = (0..train_len).map(|t| m.get(t, j)).collect();
            ChannelDetector::calibrate(j, &training, params)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Clean rotating phasor of unit radius at 0.5 Hz / 30 Hz sampling.
    fn clean_stream(n: usize) -> Vec<ComplexSample> {
        (0..n)
            .map(|t| {
                let theta = std::f64::consts::TAU * 0.5 * t as f64 / 30.0;
                ComplexSample { re: theta.cos(), im: theta.sin() }
            })
            .collect()
    }

    /// Clean stream plus a fixed-direction ramp starting at `onset`,
    /// growing by `inc` per sample.
    fn attacked_stream(n: usize, onset: usize, inc: f64) -> Vec<ComplexSample> {
        let dir = (0.8, 0.6);
        clean_stream(n)
            .into_iter()
            .enumerate()
            .map(|(t, z)| {
                if t >= onset {
                    let g = inc * (t - onset + 1) as f64;
                    ComplexSample { re: z.re + g * dir.0, im: z.im + g * dir.1 }
                } else {
                    z
                }
            })
            .collect()
    }

    #[test]
    fn noiseless_calibration_hits_floor() {
        let training = clean_stream(200);
        let det = ChannelDetector::calibrate(0, &training, DetectorParams::default()).unwrap();
        assert!(det.baseline_center().0.abs() < 1e-6);
        assert!(det.baseline_center().1.abs() < 1e-6);
        assert_abs_diff_eq!(det.delta(), DELTA_FLOOR);
    }

    #[test]
    fn training_shorter_than_window_is_an_error() {
        let training = clean_stream(40);
        let err = ChannelDetector::calibrate(0, &training, DetectorParams::default()).unwrap_err();
        assert!(matches!(err, Error::TrainingTooShort { need: 60, .. }));
    }

    #[test]
    fn clean_stream_raises_no_flags() {
        let stream = clean_stream(2400);
        let mut det = ChannelDetector::calibrate(0, &stream[..600], DetectorParams::default()).unwrap();
        for &z in &stream {
            let ev = det.step(z).unwrap();
            assert!(ev.is_none());
            assert!(!det.flag());
        }
    }

    #[test]
    fn noisy_training_is_self_consistent() {
        // sigma = 5% noise: re-running detection over the training stream
        // itself yields zero flags, at any margin >= 1.
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy: Vec<ComplexSample> = clean_stream(600)
            .into_iter()
            .map(|z| ComplexSample {
                re: z.re + 0.05 * rng.random_range(-1.0..1.0),
                im: z.im + 0.05 * rng.random_range(-1.0..1.0),
            })
            .collect();
        for margin in [1.0, 3.0] {
            let params = DetectorParams { margin, ..Default::default() };
            let mut det = ChannelDetector::calibrate(0, &noisy, params).unwrap();
            assert!(det.delta() > DELTA_FLOOR);
            for &z in &noisy {
                assert!(det.step(z).unwrap().is_none());
                assert!(!det.flag());
            }
        }
    }

    #[test]
    fn class4_ramp_detected_quickly() {
        let params = DetectorParams::default();
        let onset = 700;
        let stream = attacked_stream(1000, onset, 5.0e-3);
        let mut det = ChannelDetector::calibrate(0, &stream[..600], params).unwrap();
        let mut first = None;
        for &z in &stream {
            if let Some(ev) = det.step(z).unwrap() {
                first = Some(ev);
                break;
            }
        }
        let ev = first.expect("class-4 ramp must be detected");
        assert!(ev.t >= onset);
        assert!(
            ev.t - onset <= params.omega + params.tau + 20,
            "latency {} exceeds omega + tau + 20",
            ev.t - onset
        );
        assert_eq!(ev.pattern.len(), params.tau);
        assert!(ev.d_t > ev.delta);
    }

    #[test]
    fn queue_warmup_blocks_detection() {
        // Deviation exceeds delta immediately, but nothing may fire until
        // the queue holds tau deviations.
        let params = DetectorParams::default();
        let clean = clean_stream(600);
        let mut det = ChannelDetector::calibrate(0, &clean, params).unwrap();
        // Entire replay stream is attacked from the first sample.
        let attacked = attacked_stream(200, 0, 5.0e-3);
        let mut first_event_t = None;
        for &z in &attacked {
            if let Some(ev) = det.step(z).unwrap() {
                first_event_t = Some(ev.t);
                break;
            }
        }
        let earliest_possible = params.omega + params.tau - 2;
        assert_eq!(first_event_t, Some(earliest_possible));
    }

    #[test]
    fn stalled_phasor_does_not_halt_the_stream() {
        let params = DetectorParams::default();
        let clean = clean_stream(600);
        let mut det = ChannelDetector::calibrate(0, &clean, params).unwrap();
        // Phasor freezes: every window becomes a single repeated point.
        let frozen = ComplexSample { re: 1.0, im: 0.0 };
        for _ in 0..100 {
            let ev = det.step(frozen).unwrap();
            assert!(ev.is_none());
        }
        assert!(det.degenerate_fits() > 0);
        assert!(!det.flag());
    }

    #[test]
    fn cooldown_spaces_out_emissions() {
        let params = DetectorParams::default();
        let stream = attacked_stream(2000, 700, 5.0e-3);
        let mut det = ChannelDetector::calibrate(0, &stream[..600], params).unwrap();
        let mut times = Vec::new();
        for &z in &stream {
            if let Some(ev) = det.step(z).unwrap() {
                times.push(ev.t);
            }
        }
        assert!(times.len() > 3);
        for pair in times.windows(2) {
            assert!(pair[1] - pair[0] >= params.tau, "emissions {} and {} too close", pair[0], pair[1]);
        }
    }

    #[test]
    fn latency_decreases_with_class_magnitude() {
        // Median onset latency ordered class 4 <= 3 <= 2 <= 1.
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let params = DetectorParams::default();
        let incs = [0.1e-3, 0.5e-3, 1.0e-3, 5.0e-3];
        let mut medians = Vec::new();
        for inc in incs {
            let mut lats = Vec::new();
            for seed in 0..5u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let onset = 700;
                let stream: Vec<ComplexSample> = attacked_stream(4000, onset, inc)
                    .into_iter()
                    .map(|z| ComplexSample {
                        re: z.re + 0.02 * rng.random_range(-1.0..1.0),
                        im: z.im + 0.02 * rng.random_range(-1.0..1.0),
                    })
                    .collect();
                let mut det = ChannelDetector::calibrate(0, &stream[..600], params).unwrap();
                for &z in &stream {
                    if let Some(ev) = det.step(z).unwrap() {
                        lats.push(ev.t - onset);
                        break;
                    }
                }
            }
            lats.sort_unstable();
            medians.push(lats[lats.len() / 2]);
        }
        // incs ordered 1, 2, 3, 4: latency must be non-increasing in
        // magnitude, i.e. non-decreasing when read from class 4 to class 1.
        assert!(medians[3] <= medians[2]);
        assert!(medians[2] <= medians[1]);
        assert!(medians[1] <= medians[0]);
    }
}
