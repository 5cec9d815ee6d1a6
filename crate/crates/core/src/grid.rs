//! Synthetic power-system measurement generator and the conventional
//! residual-based bad-data detector.
//!
//! Measurements follow the linear model m_t = H s_t + eps_t, with H a real
//! full-column-rank measurement Jacobian acting on the complex bus-voltage
//! state (applying a real H to the real and imaginary parts independently is
//! the same as complex multiplication). Each generated channel traces a
//! circle centered at the complex-plane origin: the magnitude comes from
//! |row of H s_t| and the phase advances at a per-channel synthesized
//! rotation frequency, so a window of clean samples always fits a circle
//! through the origin regardless of radius changes.
//!
//! The residual-based detector is kept as an oracle: unobservable attacks
//! leave the residual r = m - H H^+ m unchanged, which the attack module's
//! tests verify against this implementation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelKind, ChannelMeta, ComplexSample, MeasurementMatrix, DEFAULT_RATE_HZ};

/// Singular values below `RANK_TOL * sigma_max` count as zero when checking
/// column rank and forming the pseudo-inverse.
const RANK_TOL: f64 = 1e-10;

/// A persistent step change in state magnitude, the desk-scale stand-in for
/// a generator-slip disturbance. From `at_sample` on, all bus magnitudes are
/// scaled by `1 + amplitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeStep {
    pub at_sample: usize,
    pub amplitude: f64,
}

/// Linear measurement model: Jacobian, base state, noise level, and the
/// per-channel rotation parameters used by the generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GridModelData", into = "GridModelData")]
pub struct GridModel {
    h: DMatrix<f64>,
    pinv: DMatrix<f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub rate_hz: f64,
    base_state: Vec<Complex64>,
    pub events: Vec<MagnitudeStep>,
    channel_freq_hz: Vec<f64>,
    channel_phase: Vec<f64>,
    pub channel_meta: Vec<ChannelMeta>,
}

/// Serialized form: H stored row-major with explicit dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridModelData {
    n_meas: usize,
    p: usize,
    h_row_major: Vec<f64>,
    noise_std: f64,
    seed: u64,
    rate_hz: f64,
    base_state_re: Vec<f64>,
    base_state_im: Vec<f64>,
    events: Vec<MagnitudeStep>,
    channel_freq_hz: Vec<f64>,
    channel_phase: Vec<f64>,
    channel_meta: Vec<ChannelMeta>,
}

impl From<GridModel> for GridModelData {
    fn from(m: GridModel) -> Self {
        let (n_meas, p) = (m.h.nrows(), m.h.ncols());
        let mut h_row_major = Vec::with_capacity(n_meas * p);
        for i in 0..n_meas {
            for j in 0..p {
                h_row_major.push(m.h[(i, j)]);
            }
        }
        GridModelData {
            n_meas,
            p,
            h_row_major,
            noise_std: m.noise_std,
            seed: m.seed,
            rate_hz: m.rate_hz,
            base_state_re: m.base_state.iter().map(|z| z.re).collect(),
            base_state_im: m.base_state.iter().map(|z| z.im).collect(),
            events: m.events,
            channel_freq_hz: m.channel_freq_hz,
            channel_phase: m.channel_phase,
            channel_meta: m.channel_meta,
        }
    }
}

impl TryFrom<GridModelData> for GridModel {
    type Error = Error;

    fn try_from(d: GridModelData) -> Result<Self> {
        if d.h_row_major.len() != d.n_meas * d.p {
            return Err(Error::DimensionMismatch(format!(
                "H buffer holds {} entries, expected {}x{}",
                d.h_row_major.len(),
                d.n_meas,
                d.p
            )));
        }
        let h = DMatrix::from_row_slice(d.n_meas, d.p, &d.h_row_major);
        let base_state = d
            .base_state_re
            .iter()
            .zip(&d.base_state_im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        GridModel::new(
            h,
            d.noise_std,
            d.seed,
            d.rate_hz,
            base_state,
            d.events,
            d.channel_freq_hz,
            d.channel_phase,
            d.channel_meta,
        )
    }
}

/// Parameters for synthesizing a bus-incidence structured model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSynthParams {
    pub n_pmus: usize,
    pub n_voltage: usize,
    pub n_current: usize,
    pub rate_hz: f64,
    pub noise_std: f64,
    /// Base rotation frequency of the reported phasors in Hz.
    pub base_freq_hz: f64,
    /// Per-channel detuning half-width in Hz, so windows sweep arcs.
    pub freq_jitter_hz: f64,
    pub events: Vec<MagnitudeStep>,
}

impl Default for GridSynthParams {
    fn default() -> Self {
        Self {
            n_pmus: 3,
            n_voltage: 6,
            n_current: 10,
            rate_hz: DEFAULT_RATE_HZ,
            noise_std: 0.0,
            base_freq_hz: 0.5,
            freq_jitter_hz: 0.1,
            events: Vec::new(),
        }
    }
}

impl GridModel {
    /// Build a model from an explicit Jacobian, checking full column rank.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h: DMatrix<f64>,
        noise_std: f64,
        seed: u64,
        rate_hz: f64,
        base_state: Vec<Complex64>,
        events: Vec<MagnitudeStep>,
        channel_freq_hz: Vec<f64>,
        channel_phase: Vec<f64>,
        channel_meta: Vec<ChannelMeta>,
    ) -> Result<Self> {
        let (n_meas, p) = (h.nrows(), h.ncols());
        if n_meas < p {
            return Err(Error::InvalidConfig(format!(
                "underdetermined model: {n_meas} measurements for {p} states"
            )));
        }
        for v in [&channel_freq_hz, &channel_phase] {
            if v.len() != n_meas {
                return Err(Error::DimensionMismatch(format!(
                    "per-channel parameter length {} does not match {n_meas} measurements",
                    v.len()
                )));
            }
        }
        if channel_meta.len() != n_meas {
            return Err(Error::DimensionMismatch(format!(
                "channel_meta has {} entries, expected {n_meas}",
                channel_meta.len()
            )));
        }
        if base_state.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "base state has {} entries, expected {p}",
                base_state.len()
            )));
        }
        let svd = h.clone().svd(false, false);
        let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * sigma_max).count();
        if rank < p {
            return Err(Error::RankDeficient { rank, p });
        }
        let pinv = h
            .clone()
            .svd(true, true)
            .pseudo_inverse(RANK_TOL * sigma_max)
            .map_err(|e| Error::InvalidConfig(format!("pseudo-inverse failed: {e}")))?;
        Ok(Self {
            h,
            pinv,
            noise_std,
            seed,
            rate_hz,
            base_state,
            events,
            channel_freq_hz,
            channel_phase,
            channel_meta,
        })
    }

    /// Synthesize a bus-incidence structured model: one bus per voltage
    /// channel (a near-unit diagonal block keeps H full rank), current
    /// channels as admittance-weighted branch differences. The sparsity is
    /// what restricts an attack's measurement footprint to the channels
    /// incident to the targeted buses.
    pub fn synth(params: &GridSynthParams, seed: u64) -> Result<Self> {
        if params.n_voltage == 0 {
            return Err(Error::InvalidConfig("need at least one voltage channel".into()));
        }
        let p = params.n_voltage;
        let n_meas = params.n_voltage + params.n_current;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = DMatrix::<f64>::zeros(n_meas, p);
        let mut meta = Vec::with_capacity(n_meas);

        for (row, bus) in (0..params.n_voltage).enumerate() {
            h[(row, bus)] = 1.0 + rng.random_range(-0.05..0.05);
            meta.push(ChannelMeta { pmu_id: row % params.n_pmus.max(1), kind: ChannelKind::Voltage });
        }
        for k in 0..params.n_current {
            let row = params.n_voltage + k;
            if p == 1 {
                h[(row, 0)] = rng.random_range(0.5..1.5);
            } else {
                let a = rng.random_range(0..p);
                let mut b = rng.random_range(0..p - 1);
                if b >= a {
                    b += 1;
                }
                let w = rng.random_range(0.5..1.5);
                h[(row, a)] = w * (1.0 + rng.random_range(-0.02..0.02));
                h[(row, b)] = -w * (1.0 + rng.random_range(-0.02..0.02));
            }
            meta.push(ChannelMeta { pmu_id: k % params.n_pmus.max(1), kind: ChannelKind::Current });
        }

        let base_state: Vec<Complex64> = (0..p)
            .map(|_| {
                let mag = rng.random_range(0.95..1.05);
                let ph = rng.random_range(0.0..std::f64::consts::TAU);
                Complex64::from_polar(mag, ph)
            })
            .collect();
        let channel_freq_hz: Vec<f64> = (0..n_meas)
            .map(|_| params.base_freq_hz + rng.random_range(-params.freq_jitter_hz..=params.freq_jitter_hz))
            .collect();
        let channel_phase: Vec<f64> = (0..n_meas).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();

        Self::new(
            h,
            params.noise_std,
            seed,
            params.rate_hz,
            base_state,
            params.events.clone(),
            channel_freq_hz,
            channel_phase,
            meta,
        )
    }

    /// Dense random Jacobian with standard-normal entries, used by the
    /// randomized unobservability trials.
    pub fn random_dense(n_meas: usize, p: usize, noise_std: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let h = DMatrix::from_fn(n_meas, p, |_, _| normal.sample(&mut rng));
        let base_state: Vec<Complex64> = (0..p)
            .map(|_| Complex64::from_polar(rng.random_range(0.9..1.1), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let channel_freq_hz: Vec<f64> = (0..n_meas).map(|_| rng.random_range(0.4..0.6)).collect();
        let channel_phase: Vec<f64> = (0..n_meas).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        Self::new(
            h,
            noise_std,
            seed,
            DEFAULT_RATE_HZ,
            base_state,
            Vec::new(),
            channel_freq_hz,
            channel_phase,
            vec![ChannelMeta::default(); n_meas],
        )
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn n_meas(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.h.ncols()
    }

    pub fn channel_freq_hz(&self) -> &[f64] {
        &self.channel_freq_hz
    }

    /// State vector at sample `t`: the base state scaled by any magnitude
    /// steps active at `t`.
    pub fn state_at(&self, t: usize) -> Vec<Complex64> {
        let factor: f64 = 1.0 + self.events.iter().filter(|e| t >= e.at_sample).map(|e| e.amplitude).sum::<f64>();
        self.base_state.iter().map(|s| s * factor).collect()
    }

    /// H applied to a complex state vector.
    pub fn measure(&self, state: &[Complex64]) -> Result<Vec<Complex64>> {
        if state.len() != self.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} entries, expected {}",
                state.len(),
                self.n_states()
            )));
        }
        Ok(real_mat_complex_vec(&self.h, state))
    }

    /// Least-squares state estimate s_hat = H^+ m for one measurement row.
    pub fn estimate_state(&self, row: &[ComplexSample]) -> Result<Vec<Complex64>> {
        if row.len() != self.n_meas() {
            return Err(Error::DimensionMismatch(format!(
                "measurement row has {} entries, expected {}",
                row.len(),
                self.n_meas()
            )));
        }
        let m: Vec<Complex64> = row.iter().map(|z| z.to_complex()).collect();
        Ok(real_mat_complex_vec(&self.pinv, &m))
    }

    /// Residual-based bad-data detector: r = m - H s_hat, flagged when
    /// ||r|| exceeds the threshold.
    pub fn residual_bdd(&self, row: &[ComplexSample], threshold: f64) -> Result<ResidualReport> {
        if threshold < 0.0 {
            return Err(Error::InvalidConfig(format!("BDD threshold must be non-negative, got {threshold}")));
        }
        let s_hat = self.estimate_state(row)?;
        let predicted = real_mat_complex_vec(&self.h, &s_hat);
        let residual: Vec<ComplexSample> = row
            .iter()
            .zip(&predicted)
            .map(|(m, p)| ComplexSample { re: m.re - p.re, im: m.im - p.im })
            .collect();
        let norm = residual.iter().map(|r| r.re * r.re + r.im * r.im).sum::<f64>().sqrt();
        Ok(ResidualReport { flagged: norm > threshold, norm, residual })
    }
}

/// BDD output for one measurement row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub residual: Vec<ComplexSample>,
    pub norm: f64,
    pub flagged: bool,
}

fn real_mat_complex_vec(m: &DMatrix<f64>, v: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); m.nrows()];
    for i in 0..m.nrows() {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..m.ncols() {
            acc += v[j] * m[(i, j)];
        }
        out[i] = acc;
    }
    out
}

/// Generate `n_samples` of clean measurements: per-channel rotating phasors
/// with magnitude |(H s_t)_j|, plus i.i.d. Gaussian noise of `noise_std` on
/// the real and imaginary parts independently. Deterministic given `seed`.
pub fn generate_clean(model: &GridModel, n_samples: usize, seed: u64) -> Result<MeasurementMatrix> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    let n_ch = model.n_meas();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if model.noise_std > 0.0 {
        Some(Normal::new(0.0, model.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };

    let mut cells = Vec::with_capacity(n_samples * n_ch);
    let omega: Vec<f64> =
        model.channel_freq_hz.iter().map(|f| std::f64::consts::TAU * f / model.rate_hz).collect();
    let mut magnitudes = vec![0.0f64; n_ch];
    let mut last_t: Option<usize> = None;
    for t in 0..n_samples {
        // Magnitudes change only at event boundaries; recompute lazily.
        let recompute = match last_t {
            None => true,
            Some(prev) => model.events.iter().any(|e| (prev < e.at_sample) && (t >= e.at_sample)),
        };
        if recompute {
            let m = model.measure(&model.state_at(t))?;
            for (j, z) in m.iter().enumerate() {
                magnitudes[j] = z.norm();
            }
        }
        last_t = Some(t);
        for j in 0..n_ch {
            let theta = omega[j] * t as f64 + model.channel_phase[j];
            let (sin, cos) = theta.sin_cos();
            let (mut re, mut im) = (magnitudes[j] * cos, magnitudes[j] * sin);
            if let Some(n) = &noise {
                re += n.sample(&mut rng);
                im += n.sample(&mut rng);
            }
            cells.push(ComplexSample { re, im });
        }
    }
    MeasurementMatrix::new(cells, n_samples, n_ch, model.rate_hz, model.channel_meta.clone())
}

/// Row-wise tiling of a measurement block. Phase continuity across the seam
/// is deliberately not enforced: the block is repeated as recorded.
pub fn repeat_cycles(m: &MeasurementMatrix, cycles: usize) -> Result<MeasurementMatrix> {
    if cycles == 0 {
        return Err(Error::InvalidConfig("cycle count must be at least 1".into()));
    }
    let mut cells = Vec::with_capacity(m.n_samples() * m.n_channels() * cycles);
    for _ in 0..cycles {
        cells.extend_from_slice(m.cells());
    }
    MeasurementMatrix::new(cells, m.n_samples() * cycles, m.n_channels(), m.rate_hz, m.channel_meta.clone())
}

/// Deterministically corrupt a seeded random half of the columns with
/// Gaussian noise of std `sigma * channel RMS magnitude`. `sigma == 0`
/// returns the input unchanged, bit for bit.
pub fn add_column_noise(m: &MeasurementMatrix, sigma: f64, seed: u64) -> Result<(MeasurementMatrix, Vec<usize>)> {
    if !(0.0..=0.25).contains(&sigma) {
        return Err(Error::InvalidConfig(format!("noise fraction must lie in [0, 0.25], got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok((m.clone(), Vec::new()));
    }
    let n_ch = m.n_channels();
    let n_noisy = n_ch.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<usize> = (0..n_ch).collect();
    cols.shuffle(&mut rng);
    let mut noisy: Vec<usize> = cols.into_iter().take(n_noisy).collect();
    noisy.sort_unstable();

    let mut out = m.clone();
    corrupt_columns(&mut out, m, &noisy, sigma, &mut rng)?;
    Ok((out, noisy))
}

/// Corrupt every column with Gaussian noise of std
/// `sigma * channel RMS magnitude`: the stream-wide relative noise level a
/// scenario's `noise_sigma` describes. `sigma == 0` is a bit-exact no-op.
pub fn add_relative_noise(m: &MeasurementMatrix, sigma: f64, seed: u64) -> Result<MeasurementMatrix> {
    if !(0.0..=0.25).contains(&sigma) {
        return Err(Error::InvalidConfig(format!("noise fraction must lie in [0, 0.25], got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(m.clone());
    }
    let cols: Vec<usize> = (0..m.n_channels()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = m.clone();
    corrupt_columns(&mut out, m, &cols, sigma, &mut rng)?;
    Ok(out)
}

fn corrupt_columns(
    out: &mut MeasurementMatrix,
    m: &MeasurementMatrix,
    cols: &[usize],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for &j in cols {
        let std = sigma * m.channel_rms(j);
        if std == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for t in 0..m.n_samples() {
            let z = m.get(t, j);
            out.set(
                t,
                j,
                ComplexSample { re: z.re + dist.sample(rng), im: z.im + dist.sample(rng) },
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::fit_circle;
    use approx::assert_abs_diff_eq;

    fn small_model(seed: u64) -> GridModel {
        GridModel::synth(&GridSynthParams::default(), seed).unwrap()
    }

    #[test]
    fn constant_state_traces_origin_circles() {
        let model = small_model(3);
        let m = generate_clean(&model, 120, 7).unwrap();
        assert_eq!(m.n_samples(), 120);
        for j in 0..m.n_channels() {
            let col = m.channel(j);
            let r0 = col[0].abs();
            for z in &col {
                assert_abs_diff_eq!(z.abs(), r0, epsilon = 1e-12);
            }
            let fit = fit_circle(&col[..30]).unwrap();
            assert!(fit.center_dist((0.0, 0.0)) < 1e-9, "channel {j} center {:?}", fit.center);
        }
    }

    #[test]
    fn clean_windows_stay_centered_at_origin() {
        // Every length-omega window of a noiseless stream fits a circle
        // within 1e-6 of the origin.
        let model = small_model(11);
        let m = generate_clean(&model, 240, 1).unwrap();
        let omega = 30;
        for j in 0..m.n_channels() {
            let col = m.channel(j);
            for start in 0..=(col.len() - omega) {
                let fit = fit_circle(&col[start..start + omega]).unwrap();
                assert!(fit.center_dist((0.0, 0.0)) < 1e-6);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let mut params = GridSynthParams::default();
        params.noise_std = 0.03;
        let model = GridModel::synth(&params, 5).unwrap();
        let a = generate_clean(&model, 90, 42).unwrap();
        let b = generate_clean(&model, 90, 42).unwrap();
        assert_eq!(a.cells(), b.cells());
        let c = generate_clean(&model, 90, 43).unwrap();
        assert_ne!(a.cells(), c.cells());
    }

    #[test]
    fn paper_scale_shape() {
        // 600 samples at 30 Hz over 37 channels.
        let params = GridSynthParams { n_pmus: 6, n_voltage: 12, n_current: 25, ..Default::default() };
        let model = GridModel::synth(&params, 1).unwrap();
        let m = generate_clean(&model, 600, 2).unwrap();
        assert_eq!(m.n_samples(), 600);
        assert_eq!(m.n_channels(), 37);
        assert_abs_diff_eq!(m.rate_hz, 30.0);
    }

    #[test]
    fn tiling_shape_and_identity() {
        let model = small_model(9);
        let m = generate_clean(&model, 600, 3).unwrap();
        let tiled = repeat_cycles(&m, 30).unwrap();
        assert_eq!(tiled.n_samples(), 18_000);
        let same = repeat_cycles(&m, 1).unwrap();
        assert_eq!(same.cells(), m.cells());
    }

    #[test]
    fn tiling_matches_index_oracle() {
        let model = small_model(13);
        let m = generate_clean(&model, 50, 4).unwrap();
        let tiled = repeat_cycles(&m, 4).unwrap();
        for t in 0..m.n_samples() {
            for rep in 1..4 {
                for j in 0..m.n_channels() {
                    assert_eq!(tiled.get(t + rep * m.n_samples(), j), m.get(t, j));
                }
            }
        }
    }

    #[test]
    fn magnitude_step_scales_state() {
        let mut model = small_model(2);
        model.events = vec![MagnitudeStep { at_sample: 10, amplitude: 0.05 }];
        let before = model.state_at(9);
        let after = model.state_at(10);
        for (b, a) in before.iter().zip(&after) {
            assert_abs_diff_eq!(a.norm(), b.norm() * 1.05, epsilon = 1e-12);
        }
    }

    #[test]
    fn estimate_recovers_consistent_state() {
        let model = small_model(21);
        let s = model.state_at(0);
        let m = model.measure(&s).unwrap();
        let row: Vec<ComplexSample> = m.iter().map(|z| ComplexSample::from_complex(*z)).collect();
        let s_hat = model.estimate_state(&row).unwrap();
        for (a, b) in s.iter().zip(&s_hat) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn identity_jacobian_echoes_measurements() {
        let p = 4;
        let model = GridModel::new(
            DMatrix::identity(p, p),
            0.0,
            0,
            30.0,
            vec![Complex64::new(1.0, 0.0); p],
            vec![],
            vec![0.5; p],
            vec![0.0; p],
            vec![ChannelMeta::default(); p],
        )
        .unwrap();
        let row: Vec<ComplexSample> =
            (0..p).map(|i| ComplexSample { re: i as f64, im: -(i as f64) * 0.5 }).collect();
        let s_hat = model.estimate_state(&row).unwrap();
        for (i, s) in s_hat.iter().enumerate() {
            assert_abs_diff_eq!(s.re, i as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(s.im, -(i as f64) * 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn estimate_matches_normal_equations_oracle() {
        let model = GridModel::random_dense(12, 5, 0.0, 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let row: Vec<ComplexSample> = (0..12)
            .map(|_| ComplexSample { re: rng.random_range(-1.0..1.0), im: rng.random_range(-1.0..1.0) })
            .collect();
        let s_hat = model.estimate_state(&row).unwrap();

        // Oracle: (H^T H)^{-1} H^T m on real and imaginary parts.
        let h = model.jacobian();
        let hth = h.transpose() * h;
        let inv = hth.try_inverse().unwrap();
        let m_re = nalgebra::DVector::from_iterator(12, row.iter().map(|z| z.re));
        let m_im = nalgebra::DVector::from_iterator(12, row.iter().map(|z| z.im));
        let o_re = &inv * h.transpose() * m_re;
        let o_im = &inv * h.transpose() * m_im;
        for i in 0..5 {
            assert_abs_diff_eq!(s_hat[i].re, o_re[i], epsilon = 1e-8);
            assert_abs_diff_eq!(s_hat[i].im, o_im[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn estimate_is_linear() {
        let model = GridModel::random_dense(10, 4, 0.0, 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<ComplexSample> {
            (0..10).map(|_| ComplexSample { re: rng.random_range(-1.0..1.0), im: rng.random_range(-1.0..1.0) }).collect()
        };
        let m1 = mk(&mut rng);
        let m2 = mk(&mut rng);
        let (a, b) = (0.7, -1.3);
        let combo: Vec<ComplexSample> = m1
            .iter()
            .zip(&m2)
            .map(|(x, y)| ComplexSample { re: a * x.re + b * y.re, im: a * x.im + b * y.im })
            .collect();
        let s1 = model.estimate_state(&m1).unwrap();
        let s2 = model.estimate_state(&m2).unwrap();
        let sc = model.estimate_state(&combo).unwrap();
        for i in 0..4 {
            let want = s1[i] * a + s2[i] * b;
            assert!((sc[i] - want).norm() < 1e-9);
        }
    }

    #[test]
    fn residual_small_on_consistent_rows() {
        let model = small_model(41);
        let s = model.state_at(0);
        let m = model.measure(&s).unwrap();
        let row: Vec<ComplexSample> = m.iter().map(|z| ComplexSample::from_complex(*z)).collect();
        let rep = model.residual_bdd(&row, 1e-6).unwrap();
        assert!(rep.norm <= 1e-10, "residual {}", rep.norm);
        assert!(!rep.flagged);
    }

    #[test]
    fn residual_grows_with_out_of_column_space_perturbation() {
        let model = GridModel::random_dense(10, 3, 0.0, 55).unwrap();
        let h = model.jacobian();
        // Projection oracle: (I - H H^+).
        let pinv = h.clone().svd(true, true).pseudo_inverse(1e-12).unwrap();
        let proj = DMatrix::identity(10, 10) - h * pinv;

        let s = model.state_at(0);
        let clean = model.measure(&s).unwrap();
        let mut prev_norm = 0.0;
        for scale in [0.1, 0.5, 1.0, 2.0] {
            let mut row: Vec<ComplexSample> =
                clean.iter().map(|z| ComplexSample::from_complex(*z)).collect();
            // Perturb one channel; a coordinate direction is outside col(H)
            // with probability one for a random H.
            row[0].re += scale;
            let rep = model.residual_bdd(&row, 0.0).unwrap();
            let expected = (proj.column(0) * scale).norm();
            assert_abs_diff_eq!(rep.norm, expected, epsilon = 1e-8);
            assert!(rep.norm > prev_norm);
            prev_norm = rep.norm;
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let model = GridModel::random_dense(14, 6, 0.0, 91).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let row: Vec<ComplexSample> = (0..14)
            .map(|_| ComplexSample { re: rng.random_range(-1.0..1.0), im: rng.random_range(-1.0..1.0) })
            .collect();
        let once = model.residual_bdd(&row, 0.0).unwrap();
        let twice = model.residual_bdd(&once.residual, 0.0).unwrap();
        for (a, b) in once.residual.iter().zip(&twice.residual) {
            assert!(a.dist(b) < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_jacobian_rejected() {
        let mut h = DMatrix::<f64>::zeros(5, 3);
        for i in 0..5 {
            h[(i, 0)] = 1.0;
            h[(i, 1)] = 2.0;
            h[(i, 2)] = 3.0 * h[(i, 0)] - h[(i, 1)]; // dependent column
        }
        let err = GridModel::new(
            h,
            0.0,
            0,
            30.0,
            vec![Complex64::new(1.0, 0.0); 3],
            vec![],
            vec![0.5; 5],
            vec![0.0; 5],
            vec![ChannelMeta::default(); 5],
        )
        .unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }), "got {err:?}");
    }

    #[test]
    fn model_json_round_trip() {
        let model = small_model(63);
        let js = serde_json::to_string(&model).unwrap();
        let back: GridModel = serde_json::from_str(&js).unwrap();
        assert_eq!(back.jacobian(), model.jacobian());
        assert_eq!(back.channel_freq_hz(), model.channel_freq_hz());
        let a = generate_clean(&model, 60, 5).unwrap();
        let b = generate_clean(&back, 60, 5).unwrap();
        assert_eq!(a.cells(), b.cells());
    }

    #[test]
    fn column_noise_hits_exactly_half_the_columns() {
        let model = small_model(70);
        let m = generate_clean(&model, 100, 6).unwrap();
        let (noisy, cols) = add_column_noise(&m, 0.1, 9).unwrap();
        assert_eq!(cols.len(), m.n_channels().div_ceil(2));
        for j in 0..m.n_channels() {
            let changed = (0..m.n_samples()).any(|t| noisy.get(t, j) != m.get(t, j));
            assert_eq!(changed, cols.contains(&j), "channel {j}");
        }
        // Zero sigma is a bit-exact no-op.
        let (same, cols0) = add_column_noise(&m, 0.0, 9).unwrap();
        assert!(cols0.is_empty());
        assert_eq!(same.cells(), m.cells());
    }
}
