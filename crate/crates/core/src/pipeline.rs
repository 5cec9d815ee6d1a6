//! Lockstep detect / classify / retrieve loop over a full stream.
//!
//! Channels run independently and in parallel: each channel's detector is
//! stepped sample by sample, retrieval shadows it with zero lookahead, and
//! per-sample flags are recorded. Detection events from all channels are
//! then serialized in (t, channel) order and fed to the classifier, which is
//! a single-writer structure. The result is deterministic regardless of
//! thread scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::Ensemble;
use crate::detect::{ChannelDetector, DetectionEvent};
use crate::error::{Error, Result};
use crate::model::{ComplexSample, MeasurementMatrix};
use crate::retrieve::{retrieve_sample, retrieve_sample_simplified, RetrievalContext, RetrievalDiagnostics};

/// One classified detection, written to the classification log as
/// `t,channel,label,upsilon,new_class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub t: usize,
    pub channel: usize,
    pub label: u32,
    pub upsilon: f64,
    pub new_class: bool,
}

/// Everything one pass over a stream produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub retrieved: MeasurementMatrix,
    pub events: Vec<DetectionEvent>,
    /// Per-sample, per-channel intrusion flag, row-major like the stream.
    pub flags: Vec<bool>,
    pub classifications: Vec<ClassificationRecord>,
    pub retrieval_diagnostics: RetrievalDiagnostics,
    /// Largest per-sample distance between the two retrieval formulas.
    pub eq9_eq10_max_divergence: f64,
}

impl PipelineOutput {
    /// Stream-level intrusion flag at sample `t`: the OR over channels.
    pub fn any_flag(&self, t: usize, n_channels: usize) -> bool {
        self.flags[t * n_channels..(t + 1) * n_channels].iter().any(|&f| f)
    }

    /// Per-sample OR-over-channels flag track.
    pub fn flag_track(&self, n_channels: usize) -> Vec<bool> {
        (0..self.flags.len() / n_channels).map(|t| self.any_flag(t, n_channels)).collect()
    }
}

struct ChannelRun {
    retrieved: Vec<ComplexSample>,
    flags: Vec<bool>,
    events: Vec<DetectionEvent>,
    diagnostics: RetrievalDiagnostics,
    divergence: f64,
}

/// Run the stream through calibrated detectors, retrieving every sample and
/// optionally classifying each emitted pattern in arrival order.
pub fn run(
    m: &MeasurementMatrix,
    detectors: &mut [ChannelDetector],
    ensemble: Option<&mut Ensemble>,
) -> Result<PipelineOutput> {
    let n = m.n_samples();
    let n_ch = m.n_channels();
    if detectors.len() != n_ch {
        return Err(Error::DimensionMismatch(format!(
            "{} detectors for {} channels",
            detectors.len(),
            n_ch
        )));
    }

    let runs: Vec<Result<ChannelRun>> = detectors
        .par_iter_mut()
        .enumerate()
        .map(|(j, det)| {
            let mut retrieved = Vec::with_capacity(n);
            let mut flags = Vec::with_capacity(n);
            let mut events = Vec::new();
            let mut diagnostics = RetrievalDiagnostics::default();
            let mut scratch = RetrievalDiagnostics::default();
            let mut divergence = 0.0f64;
            for t in 0..n {
                let z = m.get(t, j);
                if let Some(ev) = det.step(z)? {
                    events.push(ev);
                }
                let ctx = RetrievalContext::from_detector(det);
                let r = retrieve_sample(z, &ctx, &mut diagnostics);
                if ctx.active {
                    let alt = retrieve_sample_simplified(z, &ctx, &mut scratch);
                    divergence = divergence.max(r.dist(&alt));
                }
                retrieved.push(r);
                flags.push(det.flag());
            }
            Ok(ChannelRun { retrieved, flags, events, diagnostics, divergence })
        })
        .collect();

    let mut per_channel = Vec::with_capacity(n_ch);
    for r in runs {
        per_channel.push(r?);
    }

    let mut cells = vec![ComplexSample::zero(); n * n_ch];
    let mut flags = vec![false; n * n_ch];
    for (j, run) in per_channel.iter().enumerate() {
        for t in 0..n {
            cells[t * n_ch + j] = run.retrieved[t];
            flags[t * n_ch + j] = run.flags[t];
        }
    }
    let retrieved = MeasurementMatrix::new(cells, n, n_ch, m.rate_hz, m.channel_meta.clone())?;

    let mut events: Vec<DetectionEvent> = per_channel.iter().flat_map(|r| r.events.iter().cloned()).collect();
    events.sort_by_key(|e| (e.t, e.channel));

    let mut classifications = Vec::new();
    if let Some(ens) = ensemble {
        for ev in &events {
            let outcome = ens.classify(&ev.attack_pattern())?;
            classifications.push(ClassificationRecord {
                t: ev.t,
                channel: ev.channel,
                label: outcome.label,
                upsilon: outcome.upsilon,
                new_class: outcome.new_class,
            });
        }
    }

    let retrieval_diagnostics = RetrievalDiagnostics {
        undefined_direction: per_channel.iter().map(|r| r.diagnostics.undefined_direction).sum(),
    };
    let eq9_eq10_max_divergence = per_channel.iter().map(|r| r.divergence).fold(0.0, f64::max);

    Ok(PipelineOutput { retrieved, events, flags, classifications, retrieval_diagnostics, eq9_eq10_max_divergence })
}
