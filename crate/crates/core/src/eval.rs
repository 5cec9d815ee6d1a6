//! Scenario runner and metrics engine.
//!
//! A run generates one clean cycle, tiles it, optionally corrupts half the
//! columns with extra Gaussian noise, injects the scheduled attack, then
//! drives detection, classification, and retrieval end-to-end against the
//! ground-truth labels. Identical config and seed give byte-identical
//! reports up to the wall-clock runtime field.
//!
//! Detection is scored per sample on the OR-over-channels flag with a
//! +-tau alignment tolerance around truth transitions. Classification is
//! scored over emitted patterns, both as pairwise same-class agreement
//! against ground truth and as mapped per-class accuracy / precision /
//! recall. Retrieval is scored as per-channel RMSE against the clean stream
//! over the attacked region, aggregated per 150-sample interval.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attack::{build_plan, class_increment, inject, LabelTrack};
use crate::classify::{calibrate_gamma, pairwise_agreement, Ensemble};
use crate::detect::{calibrate_channels, ChannelDetector, DetectionEvent, DetectorParams};
use crate::error::{Error, Result};
use crate::grid::{add_column_noise, add_relative_noise, generate_clean, repeat_cycles};
use crate::model::{AttackPattern, ComplexSample, MeasurementMatrix};
use crate::pipeline::{self, ClassificationRecord};
use crate::scenario::{subseed, ScenarioConfig};

/// Confusion-matrix counts over the scored samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Per-sample detection metrics. Rates with zero support are `None`
/// (serialized as null, reported as n/a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: Option<f64>,
    pub precision_safe: Option<f64>,
    pub recall_safe: Option<f64>,
    pub precision_intrusion: Option<f64>,
    pub recall_intrusion: Option<f64>,
    pub confusion: Confusion,
    /// Samples excluded by the +-tau tolerance around truth transitions.
    pub excluded_samples: usize,
    /// Flagged samples strictly before the first attacked sample.
    pub false_alarms_pre_attack: usize,
}

/// Score a predicted flag track against a truth track, per sample.
/// Samples within `tau` of a truth transition are excluded from the
/// confusion counts; pre-attack false alarms are counted without tolerance.
pub fn score_detection(pred: &[bool], truth: &[bool], tau: usize) -> Result<DetectionMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction track has {} samples, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = truth.len();
    let mut excluded = vec![false; n];
    for t in 1..n {
        if truth[t] != truth[t - 1] {
            let lo = t.saturating_sub(tau);
            let hi = (t + tau).min(n - 1);
            for e in &mut excluded[lo..=hi] {
                *e = true;
            }
        }
    }
    let mut c = Confusion::default();
    for t in 0..n {
        if excluded[t] {
            continue;
        }
        match (pred[t], truth[t]) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let first_attacked = truth.iter().position(|&a| a).unwrap_or(n);
    let false_alarms_pre_attack = pred[..first_attacked].iter().filter(|&&p| p).count();

    let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    Ok(DetectionMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision_safe: ratio(c.tn, c.tn + c.fn_),
        recall_safe: ratio(c.tn, c.tn + c.fp),
        precision_intrusion: ratio(c.tp, c.tp + c.fp),
        recall_intrusion: ratio(c.tp, c.tp + c.fn_),
        confusion: c,
        excluded_samples: excluded.iter().filter(|&&e| e).count(),
        false_alarms_pre_attack,
    })
}

/// Per-class classification quality after mapping ensemble labels to truth
/// classes by majority vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub class: u32,
    pub support: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// Fraction of pattern pairs on which the ensemble and the ground truth
    /// agree about same-class membership.
    pub agreement: Option<f64>,
    /// Fraction of patterns whose assigned ensemble class maps to the right
    /// truth class. The label-to-class mapping is fixed at offline training
    /// time: patterns landing in classes founded online count against
    /// accuracy, so fragmentation cannot inflate the score.
    pub accuracy: Option<f64>,
    /// Per-sample, per-channel multi-class accuracy with the safe class
    /// included: each cell predicts class 0 while the channel flag is down
    /// and the mapped class of the channel's latest pattern while it is up.
    /// This is the headline classification number and what noise sweeps
    /// track.
    pub sample_accuracy: Option<f64>,
    pub per_class: Vec<PerClassMetrics>,
    pub n_patterns: usize,
    pub n_classes_created: u32,
    /// Classes founded during the online phase (concept evolution).
    pub n_novel_classes: u32,
    pub gamma: f64,
}

/// Score emitted classifications against truth classes, given the
/// label-to-truth-class mapping established when the ensemble was trained.
pub fn score_classification(
    records: &[ClassificationRecord],
    truth: &[u32],
    label_map: &std::collections::BTreeMap<u32, u32>,
    n_classes_created: u32,
    gamma: f64,
) -> Result<ClassificationMetrics> {
    if records.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} classification records for {} truth labels",
            records.len(),
            truth.len()
        )));
    }
    let n = records.len();
    let n_novel_classes = n_classes_created.saturating_sub(label_map.len() as u32);
    if n == 0 {
        return Ok(ClassificationMetrics {
            agreement: None,
            accuracy: None,
            sample_accuracy: None,
            per_class: Vec::new(),
            n_patterns: 0,
            n_classes_created,
            n_novel_classes,
            gamma,
        });
    }
    let assigned: Vec<u32> = records.iter().map(|r| r.label).collect();
    let agreement = if n >= 2 { Some(pairwise_agreement(&assigned, truth)) } else { None };

    // Labels outside the trained mapping predict "unknown" (0), which never
    // matches a truth class.
    let predicted: Vec<u32> = assigned.iter().map(|a| label_map.get(a).copied().unwrap_or(0)).collect();
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();

    let classes: std::collections::BTreeSet<u32> = truth.iter().copied().collect();
    let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let per_class = classes
        .into_iter()
        .map(|c| {
            let tp = predicted.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count();
            let fp = predicted.iter().zip(truth).filter(|(p, t)| **p == c && **t != c).count();
            let fn_ = predicted.iter().zip(truth).filter(|(p, t)| **p != c && **t == c).count();
            let tn = n - tp - fp - fn_;
            PerClassMetrics {
                class: c,
                support: tp + fn_,
                accuracy: (tp + tn) as f64 / n as f64,
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
            }
        })
        .collect();

    Ok(ClassificationMetrics {
        agreement,
        accuracy: Some(correct as f64 / n as f64),
        sample_accuracy: None,
        per_class,
        n_patterns: n,
        n_classes_created,
        n_novel_classes,
        gamma,
    })
}

/// Per-sample multi-class accuracy over every (sample, channel) cell. Each
/// cell predicts class 0 while the channel's flag is down; while it is up,
/// the channel's prevailing classification: the class the trained ensemble
/// (queried read-only, the test-fold view of the trained model) has
/// recognized most often on that channel so far. Unrecognized patterns do
/// not move the readout, and a challenger class only takes over with a
/// strictly larger tally, so one stray match cannot flip the prediction. A
/// channel flagged before any recognized classification predicts an unknown
/// marker.
fn sample_classification_accuracy(
    flags: &[bool],
    events: &[DetectionEvent],
    trained: &Ensemble,
    labels: &LabelTrack,
    label_map: &std::collections::BTreeMap<u32, u32>,
) -> Result<f64> {
    const UNKNOWN: u32 = u32::MAX;
    let n = labels.n_samples();
    let n_ch = labels.n_channels();
    // Per-channel recognized-classification streams, in time order (events
    // are sorted by construction).
    let mut per_channel: Vec<Vec<(usize, u32)>> = vec![Vec::new(); n_ch];
    for ev in events {
        let pred = trained.predict(&ev.attack_pattern())?;
        if let Some(mapped) = pred.label.and_then(|l| label_map.get(&l)) {
            per_channel[ev.channel].push((ev.t, *mapped));
        }
    }
    let mut correct = 0usize;
    for (j, events) in per_channel.iter().enumerate() {
        let mut next_event = 0usize;
        let mut current = UNKNOWN;
        let mut current_count = 0usize;
        let mut tally: std::collections::BTreeMap<u32, usize> = Default::default();
        for t in 0..n {
            while next_event < events.len() && events[next_event].0 <= t {
                let class = events[next_event].1;
                let count = tally.entry(class).or_insert(0);
                *count += 1;
                if class == current {
                    current_count = *count;
                } else if *count > current_count || current == UNKNOWN {
                    current = class;
                    current_count = *count;
                }
                next_event += 1;
            }
            let predicted = if flags[t * n_ch + j] { current } else { 0 };
            if predicted == labels.get(t, j) as u32 {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / (n * n_ch) as f64)
}

/// Per-channel complex RMSE per interval, then channel-averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseTable {
    pub intervals: Vec<(usize, usize)>,
    /// Interval-major: `per_channel[k][j]` is channel j's RMSE in interval k.
    pub per_channel: Vec<Vec<f64>>,
    pub channel_avg: Vec<f64>,
}

/// Root-mean-square complex error between two equally shaped streams over
/// the given half-open sample intervals.
pub fn score_rmse(
    original: &MeasurementMatrix,
    retrieved: &MeasurementMatrix,
    intervals: &[(usize, usize)],
) -> Result<RmseTable> {
    if original.n_samples() != retrieved.n_samples() || original.n_channels() != retrieved.n_channels() {
        return Err(Error::DimensionMismatch(format!(
            "stream shapes differ: {}x{} vs {}x{}",
            original.n_samples(),
            original.n_channels(),
            retrieved.n_samples(),
            retrieved.n_channels()
        )));
    }
    let n_ch = original.n_channels();
    let mut per_channel = Vec::with_capacity(intervals.len());
    let mut channel_avg = Vec::with_capacity(intervals.len());
    for &(start, end) in intervals {
        if start >= end || end > original.n_samples() {
            return Err(Error::InvalidConfig(format!(
                "interval [{start}, {end}) out of bounds for {} samples",
                original.n_samples()
            )));
        }
        let len = (end - start) as f64;
        let mut row = Vec::with_capacity(n_ch);
        for j in 0..n_ch {
            let ss: f64 = (start..end)
                .map(|t| {
                    let d = original.get(t, j).dist(&retrieved.get(t, j));
                    d * d
                })
                .sum();
            row.push((ss / len).sqrt());
        }
        channel_avg.push(row.iter().sum::<f64>() / n_ch as f64);
        per_channel.push(row);
    }
    Ok(RmseTable { intervals: intervals.to_vec(), per_channel, channel_avg })
}

/// Retrieval quality for one attacked channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRetrieval {
    pub channel: usize,
    pub attacked_rmse: f64,
    pub retrieved_rmse: f64,
    pub ratio: Option<f64>,
    /// The channel detector's calibrated threshold.
    pub delta: f64,
    /// Largest injected magnitude the channel ever carries. An attack whose
    /// peak stays at the threshold's scale is below the detectability
    /// premise and cannot be retrieved.
    pub peak_injection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    /// One entry per channel that actually received an injection.
    pub per_channel: Vec<ChannelRetrieval>,
    /// Largest per-channel retrieved/attacked RMSE ratio.
    pub worst_ratio: Option<f64>,
    /// Largest ratio over channels whose peak injection clears twice their
    /// detection threshold, the detectability premise of center-deviation
    /// retrieval.
    pub worst_detectable_ratio: Option<f64>,
    /// Mean retrieved/attacked RMSE ratio per interval index within an
    /// attack episode, aggregated over episodes and attacked channels.
    pub interval_ratios: Vec<f64>,
    /// Channel-averaged retrieved-vs-original RMSE per 150-sample chunk of
    /// the attacked region.
    pub rmse_intervals: Vec<(usize, usize)>,
    pub rmse_channel_avg: Vec<f64>,
    pub eq9_eq10_max_divergence: f64,
    pub undefined_direction_samples: usize,
}

#[allow(clippy::too_many_arguments)]
fn score_retrieval(
    original: &MeasurementMatrix,
    attacked: &MeasurementMatrix,
    retrieved: &MeasurementMatrix,
    labels: &LabelTrack,
    deltas: &[f64],
    interval_len: usize,
    episode_intervals: usize,
    eq9_eq10_max_divergence: f64,
    undefined_direction_samples: usize,
) -> Result<RetrievalMetrics> {
    let n = original.n_samples();
    let n_ch = original.n_channels();
    let Some(region_start) = labels.first_attacked() else {
        return Ok(RetrievalMetrics {
            per_channel: Vec::new(),
            worst_ratio: None,
            worst_detectable_ratio: None,
            interval_ratios: Vec::new(),
            rmse_intervals: Vec::new(),
            rmse_channel_avg: Vec::new(),
            eq9_eq10_max_divergence,
            undefined_direction_samples,
        });
    };

    let region = (region_start, n);
    let att = score_rmse(original, attacked, &[region])?;
    let ret = score_rmse(original, retrieved, &[region])?;
    let mut per_channel = Vec::new();
    let mut worst: Option<f64> = None;
    for j in 0..n_ch {
        let a = att.per_channel[0][j];
        if a == 0.0 {
            continue; // channel never attacked
        }
        let r = ret.per_channel[0][j];
        let ratio = r / a;
        worst = Some(worst.map_or(ratio, |w: f64| w.max(ratio)));
        let peak_injection =
            (0..n).map(|t| original.get(t, j).dist(&attacked.get(t, j))).fold(0.0f64, f64::max);
        per_channel.push(ChannelRetrieval {
            channel: j,
            attacked_rmse: a,
            retrieved_rmse: r,
            ratio: Some(ratio),
            delta: deltas.get(j).copied().unwrap_or(f64::NAN),
            peak_injection,
        });
    }

    // Retrieval quality per interval index within an attack episode: the
    // retrieved/attacked error ratio of each (episode, interval) cell,
    // averaged over episodes. Averaging per episode keeps the onset episode
    // visible: pooled energy would let the late, large-error episodes drown
    // out the undetected head of the attack.
    let episode_len = interval_len * episode_intervals;
    let mut ratio_sum = vec![0.0f64; episode_intervals];
    let mut ratio_count = vec![0usize; episode_intervals];
    if episode_len > 0 {
        let mut episode_start = region_start;
        while episode_start < n {
            for k in 0..episode_intervals {
                let lo = episode_start + k * interval_len;
                let hi = (lo + interval_len).min(n);
                if lo >= hi {
                    break;
                }
                let mut att_energy = 0.0;
                let mut ret_energy = 0.0;
                for t in lo..hi {
                    for j in 0..n_ch {
                        let ea = original.get(t, j).dist(&attacked.get(t, j));
                        let er = original.get(t, j).dist(&retrieved.get(t, j));
                        att_energy += ea * ea;
                        ret_energy += er * er;
                    }
                }
                if att_energy > 0.0 {
                    ratio_sum[k] += (ret_energy / att_energy).sqrt();
                    ratio_count[k] += 1;
                }
            }
            episode_start += episode_len;
        }
    }
    let interval_ratios: Vec<f64> = ratio_sum
        .iter()
        .zip(&ratio_count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();

    // Channel-averaged retrieval RMSE per consecutive chunk of the region.
    let mut chunks = Vec::new();
    let mut t = region_start;
    while t < n {
        let end = (t + interval_len).min(n);
        chunks.push((t, end));
        t = end;
    }
    let table = score_rmse(original, retrieved, &chunks)?;

    let worst_detectable_ratio = per_channel
        .iter()
        .filter(|c| c.peak_injection >= 2.0 * c.delta)
        .filter_map(|c| c.ratio)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));

    Ok(RetrievalMetrics {
        per_channel,
        worst_ratio: worst,
        worst_detectable_ratio,
        interval_ratios,
        rmse_intervals: chunks,
        rmse_channel_avg: table.channel_avg,
        eq9_eq10_max_divergence,
        undefined_direction_samples,
    })
}

/// Full per-run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub detection: DetectionMetrics,
    pub classification: ClassificationMetrics,
    pub retrieval: RetrievalMetrics,
    /// Wall-clock seconds spent in the detect/classify/retrieve pipeline.
    pub runtime_seconds: f64,
    /// Extra column-noise fraction applied before injection (sweep runs).
    pub sweep_sigma: f64,
    pub noise_columns: Vec<usize>,
    /// Channels incident to the targeted buses.
    pub support_channels: Vec<usize>,
    pub config_echo: ScenarioConfig,
}

/// Run a scenario end-to-end: generate, inject, detect, classify, retrieve,
/// score. Deterministic given the config (runtime field aside).
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport> {
    run_scenario_with_sweep(cfg, 0.0)
}

/// [`run_scenario`] with extra Gaussian noise of fraction `sweep_sigma`
/// applied to a seeded random half of the columns before injection.
pub fn run_scenario_with_sweep(cfg: &ScenarioConfig, sweep_sigma: f64) -> Result<MetricsReport> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let cycle = generate_clean(&model, cfg.cycle_len, subseed(cfg.seed, 1))?;
    let cycle = add_relative_noise(&cycle, cfg.noise_sigma, subseed(cfg.seed, 4))?;
    let stream = repeat_cycles(&cycle, cfg.cycles)?;
    let (stream, noise_columns) = add_column_noise(&stream, sweep_sigma, subseed(cfg.seed, 2))?;

    let schedule = cfg.effective_schedule()?;
    let plan = build_plan(&model, cfg.strategy_enum()?, schedule, &cfg.targets, subseed(cfg.seed, 3))?;
    let (attacked, labels) = inject(&stream, &plan, &model)?;

    let mut detectors = calibrate_channels(&attacked, cfg.train_len, cfg.detector)?;

    // Offline training patterns come from low-noise labeled onset
    // simulations: the historical, curated attack archive the operator
    // calibrates against. Sweep noise corrupts the live stream, not the
    // archive.
    let pattern_sigma = cfg.noise_sigma.max(0.002);
    let (gamma, trained_ensemble, label_map) = pretrain_classifier(cfg, pattern_sigma)?;
    let mut ensemble = trained_ensemble.clone();

    let started = Instant::now();
    let out = pipeline::run(&attacked, &mut detectors, Some(&mut ensemble))?;
    let runtime_seconds = started.elapsed().as_secs_f64();

    let n_ch = attacked.n_channels();
    let pred_track = out.flag_track(n_ch);
    let truth_track: Vec<bool> = (0..attacked.n_samples()).map(|t| labels.any_attacked(t)).collect();
    let detection = score_detection(&pred_track, &truth_track, cfg.detector.tau)?;

    let truth_classes: Vec<u32> = out.classifications.iter().map(|c| labels.get(c.t, c.channel) as u32).collect();
    let mut classification =
        score_classification(&out.classifications, &truth_classes, &label_map, ensemble.classes_created(), gamma)?;
    classification.sample_accuracy =
        Some(sample_classification_accuracy(&out.flags, &out.events, &trained_ensemble, &labels, &label_map)?);

    let deltas: Vec<f64> = detectors.iter().map(|d| d.delta()).collect();
    let retrieval = score_retrieval(
        &stream,
        &attacked,
        &out.retrieved,
        &labels,
        &deltas,
        cfg.interval_len,
        4,
        out.eq9_eq10_max_divergence,
        out.retrieval_diagnostics.undefined_direction,
    )?;

    Ok(MetricsReport {
        detection,
        classification,
        retrieval,
        runtime_seconds,
        sweep_sigma,
        noise_columns,
        support_channels: plan.support.clone(),
        config_echo: cfg.clone(),
    })
}

/// One report per noise fraction, each over the same scenario and seed.
pub fn noise_sweep(cfg: &ScenarioConfig, sigmas: &[f64]) -> Result<Vec<MetricsReport>> {
    for &s in sigmas {
        if !(0.0..=0.25).contains(&s) {
            return Err(Error::InvalidConfig(format!("sweep sigma must lie in [0, 0.25], got {s}")));
        }
    }
    sigmas.iter().map(|&s| run_scenario_with_sweep(cfg, s)).collect()
}

/// Calibrate gamma (unless fixed) and pre-train the ensemble on synthetic
/// per-class onset patterns, the offline phase before online classification.
///
/// Returns the trained ensemble plus the label-to-truth-class mapping: each
/// trained class predicts the modal truth class of the training patterns it
/// absorbed. Online classes created later stay unmapped.
fn pretrain_classifier(
    cfg: &ScenarioConfig,
    pattern_sigma: f64,
) -> Result<(f64, Ensemble, std::collections::BTreeMap<u32, u32>)> {
    let schedule = cfg.effective_schedule()?;
    let mut class_ids: Vec<u8> = schedule.iter().map(|iv| iv.class_id).collect();
    class_ids.sort_unstable();
    class_ids.dedup();

    let mut patterns: Vec<AttackPattern> = Vec::new();
    let mut truth: Vec<u32> = Vec::new();
    for &class_id in &class_ids {
        let per_class =
            onset_patterns(class_id, 3, pattern_sigma, subseed(cfg.seed, 100 + class_id as u64), cfg.detector)?;
        for p in per_class {
            patterns.push(p);
            truth.push(class_id as u32);
        }
    }

    let gamma = match cfg.gamma {
        Some(g) => g,
        None => {
            if patterns.len() >= 2 {
                calibrate_gamma(&patterns, Some(&truth), &cfg.gamma_grid, cfg.lambda, cfg.mode)?
            } else {
                *cfg.gamma_grid.last().ok_or(Error::EmptyGrid)?
            }
        }
    };
    let mut ensemble = Ensemble::new(gamma, cfg.lambda, cfg.mode)?;
    let outcomes = ensemble.train(&patterns)?;

    let mut votes: std::collections::BTreeMap<u32, std::collections::BTreeMap<u32, usize>> = Default::default();
    for (outcome, &t) in outcomes.iter().zip(&truth) {
        *votes.entry(outcome.label).or_default().entry(t).or_default() += 1;
    }
    let label_map: std::collections::BTreeMap<u32, u32> = votes
        .iter()
        .map(|(label, per_truth)| {
            let best = per_truth.iter().max_by_key(|(truth_id, c)| (**c, std::cmp::Reverse(**truth_id))).unwrap();
            (*label, *best.0)
        })
        .collect();
    Ok((gamma, ensemble, label_map))
}

/// Simulate one single-channel attack onset and return the first detection
/// plus the onset sample; `None` when the ramp never crosses the calibrated
/// threshold within the horizon (heavy noise inflates the threshold faster
/// than a slow class accumulates error).
fn onset_sim(class_id: u8, sigma: f64, seed: u64, params: DetectorParams) -> Result<Option<(DetectionEvent, usize)>> {
    let inc = class_increment(class_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freq = 0.5 + rng.random_range(-0.1..0.1);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let radius = rng.random_range(0.95..1.05);
    let dir_angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dir_im, dir_re) = dir_angle.sin_cos();
    let noise = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };

    let train_len = 600usize;
    let onset = train_len;
    let total = train_len + 15_000;
    let mut stream = Vec::with_capacity(total);
    for t in 0..total {
        let theta = std::f64::consts::TAU * freq * t as f64 / 30.0 + phase;
        let (sin, cos) = theta.sin_cos();
        let (mut re, mut im) = (radius * cos, radius * sin);
        if t >= onset {
            let g = inc * (t - onset + 1) as f64;
            re += g * dir_re;
            im += g * dir_im;
        }
        if let Some(n) = &noise {
            re += n.sample(&mut rng);
            im += n.sample(&mut rng);
        }
        stream.push(ComplexSample { re, im });
    }

    let mut det = ChannelDetector::calibrate(0, &stream[..train_len], params)?;
    for &z in &stream {
        if let Some(ev) = det.step(z)? {
            return Ok(Some((ev, onset)));
        }
    }
    Ok(None)
}

/// First exported attack patterns from independent single-channel onset
/// simulations of one class. The queue shape at first detection encodes the
/// class magnitude: slow ramps fill the whole queue, fast ones leave a flat
/// head and a steep tail. Simulations that never detect contribute no
/// pattern, so the result may be shorter than `n_patterns`.
pub fn onset_patterns(
    class_id: u8,
    n_patterns: usize,
    sigma: f64,
    seed: u64,
    params: DetectorParams,
) -> Result<Vec<AttackPattern>> {
    let mut out = Vec::with_capacity(n_patterns);
    for k in 0..n_patterns {
        if let Some((ev, _)) = onset_sim(class_id, sigma, subseed(seed, k as u64), params)? {
            out.push(ev.attack_pattern());
        }
    }
    Ok(out)
}

/// Samples between attack onset and the first detection in a seeded
/// single-channel simulation; `None` when the attack is never detected
/// within the horizon.
pub fn detection_latency(class_id: u8, sigma: f64, seed: u64, params: DetectorParams) -> Result<Option<usize>> {
    Ok(onset_sim(class_id, sigma, seed, params)?.map(|(ev, onset)| ev.t - onset))
}

/// Idealized deviation queue at the moment a class-`class_id` ramp first
/// crosses a threshold `delta`: the newest entry sits at `delta`, earlier
/// entries walk the ramp back by the class increment and bottom out at a
/// jittered noise floor. This is the mechanical model of what the detector
/// exports at onset; slow classes fill the whole queue with ramp, fast ones
/// leave a flat head and a steep tail.
pub fn synthetic_class_patterns(
    class_id: u8,
    delta: f64,
    jitter: f64,
    n_patterns: usize,
    tau: usize,
    seed: u64,
) -> Result<Vec<AttackPattern>> {
    let inc = class_increment(class_id)?.abs();
    if delta <= 0.0 || tau == 0 {
        return Err(Error::InvalidConfig("synthetic patterns need delta > 0 and tau > 0".into()));
    }
    let mut out = Vec::with_capacity(n_patterns);
    for k in 0..n_patterns {
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, k as u64));
        let sequence: Vec<f64> = (0..tau)
            .map(|i| {
                let ramp = delta - inc * (tau - 1 - i) as f64;
                let noise = jitter * rng.random_range(-1.0..1.0);
                (ramp + noise).max(noise.abs())
            })
            .collect();
        out.push(AttackPattern::new(sequence, 0, k));
    }
    Ok(out)
}

/// Floors every sigma = 0, strategy-1 scenario run is expected to clear.
/// Returns human-readable violations; empty means all floors hold.
pub fn check_acceptance_floors(r: &MetricsReport) -> Vec<String> {
    let mut v = Vec::new();
    match r.detection.recall_intrusion {
        Some(x) if x >= 0.90 => {}
        Some(x) => v.push(format!("intrusion recall {x:.4} < 0.90")),
        None => v.push("intrusion recall undefined".into()),
    }
    match r.detection.precision_safe {
        Some(x) if x >= 0.90 => {}
        Some(x) => v.push(format!("safe precision {x:.4} < 0.90")),
        None => v.push("safe precision undefined".into()),
    }
    if r.detection.false_alarms_pre_attack != 0 {
        v.push(format!("{} false alarms on the pre-attack prefix", r.detection.false_alarms_pre_attack));
    }
    if r.runtime_seconds > 5.0 {
        v.push(format!("pipeline runtime {:.2}s > 5s", r.runtime_seconds));
    }
    if let Some(w) = r.retrieval.worst_detectable_ratio {
        let bound = if r.sweep_sigma == 0.0 && r.config_echo.noise_sigma == 0.0 { 0.1 } else { 0.2 };
        if w > bound {
            v.push(format!("retrieval RMSE ratio {w:.4} > {bound}"));
        }
    }
    v
}

/// Flatten reports into plot-ready CSV rows:
/// `scenario,sigma,seed,metric,value`.
pub fn write_metrics_csv<W: std::io::Write>(reports: &[MetricsReport], mut w: W) -> Result<()> {
    writeln!(w, "scenario,sigma,seed,metric,value")?;
    for r in reports {
        let scen = &r.config_echo.name;
        let sigma = r.sweep_sigma.max(r.config_echo.noise_sigma);
        let seed = r.config_echo.seed;
        let mut emit = |metric: &str, value: Option<f64>| -> std::io::Result<()> {
            match value {
                Some(v) => writeln!(w, "{scen},{sigma},{seed},{metric},{v}"),
                None => writeln!(w, "{scen},{sigma},{seed},{metric},n/a"),
            }
        };
        emit("detection_accuracy", r.detection.accuracy)?;
        emit("precision_safe", r.detection.precision_safe)?;
        emit("recall_safe", r.detection.recall_safe)?;
        emit("precision_intrusion", r.detection.precision_intrusion)?;
        emit("recall_intrusion", r.detection.recall_intrusion)?;
        emit("false_alarms_pre_attack", Some(r.detection.false_alarms_pre_attack as f64))?;
        emit("classification_agreement", r.classification.agreement)?;
        emit("classification_accuracy", r.classification.accuracy)?;
        emit("classification_sample_accuracy", r.classification.sample_accuracy)?;
        emit("n_patterns", Some(r.classification.n_patterns as f64))?;
        emit("retrieval_worst_ratio", r.retrieval.worst_ratio)?;
        emit("eq9_eq10_max_divergence", Some(r.retrieval.eq9_eq10_max_divergence))?;
        emit("runtime_seconds", Some(r.runtime_seconds))?;
    }
    Ok(())
}
