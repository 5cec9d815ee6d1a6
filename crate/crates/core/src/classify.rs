//! Online semi-supervised ensemble classification of attack patterns.
//!
//! Similarity between two deviation sequences is the symmetry of their
//! cross-correlation: correlating similar shapes yields a near-palindromic
//! lag sequence, so the absolute difference between the two half-sums is
//! near zero. Each class keeps a bounded FIFO of exemplar patterns; an
//! incoming pattern joins its nearest class when the best similarity value
//! stays within the sensitivity threshold gamma, and founds a new class
//! otherwise (concept evolution). Class memories are never deleted, which is
//! what lets a recurring class reclaim its original label after any absence.
//!
//! Patterns are mean-subtracted and scaled to unit norm before correlation;
//! without that, the half-sum difference scales with raw pattern energy and
//! no single gamma works across attack magnitudes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AttackPattern;

/// How Eq.-style half sums treat the zero-lag element.
///
/// `Paper` counts the center element in the first half, which makes two
/// identical patterns score their full zero-lag energy (maximally
/// dissimilar under the "small is similar" rule). `Centered` excludes the
/// center so identical patterns score exactly zero; it is the default and
/// the mode every pipeline uses. `Paper` is kept for fidelity experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    Paper,
    Centered,
}

impl Default for SimilarityMode {
    fn default() -> Self {
        Self::Centered
    }
}

/// Full-lag cross-correlation of two equal-length real sequences.
///
/// With N the common length, the output has 2N-1 entries ordered by lag
/// from -(N-1) to N-1: out[i] = sum over overlapping samples of
/// a(j + lag) * b(j) with lag = i - (N-1).
pub fn cross_correlation(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::PatternLength { a: a.len(), b: b.len() });
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::InvalidConfig("cannot correlate empty sequences".into()));
    }
    let mut rho = vec![0.0; 2 * n - 1];
    for (i, r) in rho.iter_mut().enumerate() {
        let lag = i as isize - (n as isize - 1);
        let mut acc = 0.0;
        if lag >= 0 {
            let m = lag as usize;
            for j in 0..n - m {
                acc += a[j + m] * b[j];
            }
        } else {
            let m = (-lag) as usize;
            for j in 0..n - m {
                acc += b[j + m] * a[j];
            }
        }
        *r = acc;
    }
    Ok(rho)
}

/// Symmetry measure over a full-lag correlation sequence: the absolute
/// difference between the negative-lag and positive-lag half sums.
///
/// Both modes are evaluated as a sum of mirrored-pair differences, so a
/// palindromic input yields exactly zero in centered mode, with no float
/// ordering residue.
pub fn similarity(rho: &[f64], mode: SimilarityMode) -> Result<f64> {
    let len = rho.len();
    if len < 3 || len % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "correlation sequence must have odd length >= 3, got {len}"
        )));
    }
    let center = len / 2;
    let mut acc = 0.0;
    for i in 0..center {
        acc += rho[i] - rho[len - 1 - i];
    }
    if mode == SimilarityMode::Paper {
        acc += rho[center];
    }
    Ok(acc.abs())
}

/// Mean-subtract and scale to unit Euclidean norm. A constant sequence has
/// nothing left after centering and maps to all zeros.
pub fn normalize_pattern(seq: &[f64]) -> Vec<f64> {
    let n = seq.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = seq.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = seq.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return centered;
    }
    centered.iter().map(|v| v / norm).collect()
}

/// Similarity between two raw patterns: normalize, cross-correlate, and
/// measure the symmetry defect. Two degenerate (constant) patterns compare
/// equal; a degenerate pattern never matches a live one.
///
/// The half-sum difference collapses algebraically to prefix sums: the sum
/// of all negative-lag correlations is the sum of a(p) b(q) over p < q and
/// the positive-lag sum is its p > q mirror, so the whole statistic costs
/// O(N) instead of forming the 2N-1 lag sequence. Identical inputs take an
/// equality fast path so self-similarity is exactly zero, not rounding
/// residue.
pub fn pattern_similarity(a: &[f64], b: &[f64], mode: SimilarityMode) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::PatternLength { a: a.len(), b: b.len() });
    }
    let na = normalize_pattern(a);
    let nb = normalize_pattern(b);
    normalized_similarity(&na, &nb, mode)
}

/// [`pattern_similarity`] over already normalized sequences.
pub(crate) fn normalized_similarity(na: &[f64], nb: &[f64], mode: SimilarityMode) -> Result<f64> {
    if na.len() != nb.len() {
        return Err(Error::PatternLength { a: na.len(), b: nb.len() });
    }
    if na.is_empty() {
        return Err(Error::InvalidConfig("cannot compare empty sequences".into()));
    }
    let za = na.iter().all(|&v| v == 0.0);
    let zb = nb.iter().all(|&v| v == 0.0);
    if za && zb {
        return Ok(0.0);
    }
    if za != zb {
        return Ok(f64::INFINITY);
    }
    if na == nb {
        return Ok(match mode {
            SimilarityMode::Centered => 0.0,
            // Zero-lag energy of a unit-norm sequence.
            SimilarityMode::Paper => na.iter().map(|v| v * v).sum(),
        });
    }
    let n = na.len();
    let mut acc = 0.0;
    let mut before = 0.0; // sum of na[p] for p < q
    let mut after: f64 = na.iter().skip(1).sum(); // sum of na[p] for p > q
    for q in 0..n {
        acc += nb[q] * (before - after);
        before += na[q];
        if q + 1 < n {
            after -= na[q + 1];
        }
    }
    if mode == SimilarityMode::Paper {
        acc += na.iter().zip(nb).map(|(x, y)| x * y).sum::<f64>();
    }
    Ok(acc.abs())
}

/// One stored exemplar plus its lazily built normalized form, which the
/// classification hot loop reuses across comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredPattern {
    pattern: AttackPattern,
    #[serde(skip)]
    normalized: std::sync::OnceLock<Vec<f64>>,
}

impl StoredPattern {
    fn new(pattern: AttackPattern) -> Self {
        Self { pattern, normalized: std::sync::OnceLock::new() }
    }

    fn normalized(&self) -> &[f64] {
        self.normalized.get_or_init(|| normalize_pattern(&self.pattern.sequence))
    }
}

/// Bounded FIFO of exemplar patterns for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMemory {
    pub label: u32,
    patterns: VecDeque<StoredPattern>,
    pub created_at: usize,
}

impl ClassMemory {
    fn new(label: u32, first: AttackPattern) -> Self {
        let mut patterns = VecDeque::new();
        let created_at = first.t_detect;
        patterns.push_back(StoredPattern::new(first));
        Self { label, patterns, created_at }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> impl Iterator<Item = &AttackPattern> {
        self.patterns.iter().map(|s| &s.pattern)
    }

    /// Append a pattern, evicting the oldest one when at capacity.
    fn absorb(&mut self, pattern: AttackPattern, lambda: usize) {
        if self.patterns.len() >= lambda {
            self.patterns.pop_front();
        }
        self.patterns.push_back(StoredPattern::new(pattern));
    }
}

/// Outcome of classifying one pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOutcome {
    pub label: u32,
    /// Best similarity value against the existing ensemble; infinite for
    /// the seeding pattern of an empty ensemble.
    pub upsilon: f64,
    pub new_class: bool,
}

/// Read-only classification result: the nearest class when within gamma,
/// `None` when the pattern would found a new class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Option<u32>,
    pub upsilon: f64,
}

/// The ICON ensemble: an ordered set of class memories plus the sensitivity
/// threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ensemble {
    classes: Vec<ClassMemory>,
    pub gamma: f64,
    pub mode: SimilarityMode,
    /// Per-class memory capacity.
    pub lambda: usize,
    next_label: u32,
}

impl Ensemble {
    pub fn new(gamma: f64, lambda: usize, mode: SimilarityMode) -> Result<Self> {
        if gamma <= 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidConfig(format!("gamma must be a positive real, got {gamma}")));
        }
        if lambda == 0 {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        Ok(Self { classes: Vec::new(), gamma, mode, lambda, next_label: 0 })
    }

    pub fn classes(&self) -> &[ClassMemory] {
        &self.classes
    }

    /// Count of classes ever created.
    pub fn classes_created(&self) -> u32 {
        self.next_label
    }

    /// Best (smallest) similarity of `pattern` against one class, taken over
    /// its stored exemplars.
    pub fn class_similarity(&self, class: &ClassMemory, pattern: &AttackPattern) -> Result<f64> {
        let na = normalize_pattern(&pattern.sequence);
        class_similarity_normalized(class, &na, self.mode)
    }

    /// Classify one pattern and update the ensemble. An empty ensemble seeds
    /// its first class from the pattern; otherwise the pattern joins the
    /// class with the smallest similarity value when that value is within
    /// gamma, and founds a new class when it is not. Ties go to the oldest
    /// class.
    pub fn classify(&mut self, pattern: &AttackPattern) -> Result<ClassifyOutcome> {
        if self.classes.is_empty() {
            let label = self.fresh_label();
            self.classes.push(ClassMemory::new(label, pattern.clone()));
            return Ok(ClassifyOutcome { label, upsilon: f64::INFINITY, new_class: true });
        }
        let na = normalize_pattern(&pattern.sequence);
        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for (i, class) in self.classes.iter().enumerate() {
            let u = class_similarity_normalized(class, &na, self.mode)?;
            if u < best {
                best = u;
                best_idx = i;
                if best == 0.0 {
                    // An exact match cannot be beaten, and scanning in
                    // creation order already realizes the oldest-class
                    // tie-break.
                    break;
                }
            }
        }
        if best > self.gamma {
            let label = self.fresh_label();
            self.classes.push(ClassMemory::new(label, pattern.clone()));
            return Ok(ClassifyOutcome { label, upsilon: best, new_class: true });
        }
        let lambda = self.lambda;
        let class = &mut self.classes[best_idx];
        class.absorb(pattern.clone(), lambda);
        Ok(ClassifyOutcome { label: class.label, upsilon: best, new_class: false })
    }

    /// Fold [`Self::classify`] over an ordered training set.
    pub fn train(&mut self, patterns: &[AttackPattern]) -> Result<Vec<ClassifyOutcome>> {
        patterns.iter().map(|p| self.classify(p)).collect()
    }

    /// Query the ensemble without updating it: the label the pattern would
    /// be assigned, or `None` when it would found a new class.
    pub fn predict(&self, pattern: &AttackPattern) -> Result<Prediction> {
        if self.classes.is_empty() {
            return Ok(Prediction { label: None, upsilon: f64::INFINITY });
        }
        let na = normalize_pattern(&pattern.sequence);
        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for (i, class) in self.classes.iter().enumerate() {
            let u = class_similarity_normalized(class, &na, self.mode)?;
            if u < best {
                best = u;
                best_idx = i;
                if best == 0.0 {
                    break;
                }
            }
        }
        if best > self.gamma {
            Ok(Prediction { label: None, upsilon: best })
        } else {
            Ok(Prediction { label: Some(self.classes[best_idx].label), upsilon: best })
        }
    }

    fn fresh_label(&mut self) -> u32 {
        self.next_label += 1;
        self.next_label
    }
}

fn class_similarity_normalized(class: &ClassMemory, na: &[f64], mode: SimilarityMode) -> Result<f64> {
    let mut best = f64::INFINITY;
    for stored in &class.patterns {
        let u = normalized_similarity(na, stored.normalized(), mode)?;
        if u < best {
            best = u;
            if best == 0.0 {
                break;
            }
        }
    }
    Ok(best)
}

/// Pick gamma from a candidate grid.
///
/// Every candidate is scored by training a fresh ensemble over the patterns
/// and comparing the induced partition against ground-truth class ids when
/// available (pairwise same-class agreement) or against a silhouette score
/// over the pairwise similarity matrix otherwise. Among tied-best
/// candidates, the longest contiguous plateau wins: its midpoint-nearest
/// candidate when the plateau is interior, or the largest grid value when
/// the plateau reaches the top of the grid and nothing argues for a smaller,
/// more eager threshold.
pub fn calibrate_gamma(
    patterns: &[AttackPattern],
    truth: Option<&[u32]>,
    grid: &[f64],
    lambda: usize,
    mode: SimilarityMode,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if patterns.len() < 2 {
        return Err(Error::InvalidConfig("gamma calibration needs at least 2 patterns".into()));
    }
    if let Some(t) = truth {
        if t.len() != patterns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} truth ids for {} patterns",
                t.len(),
                patterns.len()
            )));
        }
    }
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();

    // The pairwise similarity matrix does not depend on gamma.
    let n = patterns.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let u = pattern_similarity(&patterns[i].sequence, &patterns[j].sequence, mode)?;
            dist[i * n + j] = u;
            dist[j * n + i] = u;
        }
    }

    let mut scores = Vec::with_capacity(grid.len());
    for &gamma in &grid {
        let mut ens = Ensemble::new(gamma, lambda, mode)?;
        let outcomes = ens.train(patterns)?;
        let assigned: Vec<u32> = outcomes.iter().map(|o| o.label).collect();
        let score = match truth {
            Some(t) => pairwise_agreement(&assigned, t),
            None => silhouette(&assigned, &dist, n),
        };
        scores.push(score);
    }

    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<bool> = scores.iter().map(|&s| (s - best).abs() <= 1e-12).collect();
    // Longest contiguous run of tied candidates.
    let (mut run_start, mut run_len) = (0usize, 0usize);
    let (mut cur_start, mut cur_len) = (0usize, 0usize);
    for (i, &t) in tied.iter().enumerate() {
        if t {
            if cur_len == 0 {
                cur_start = i;
            }
            cur_len += 1;
            if cur_len > run_len {
                run_start = cur_start;
                run_len = cur_len;
            }
        } else {
            cur_len = 0;
        }
    }
    let run_end = run_start + run_len - 1;
    if run_end == grid.len() - 1 {
        return Ok(grid[run_end]);
    }
    let mid = 0.5 * (grid[run_start] + grid[run_end]);
    let pick = grid[run_start..=run_end]
        .iter()
        .cloned()
        .min_by(|a, b| (a - mid).abs().total_cmp(&(b - mid).abs()))
        .expect("non-empty plateau");
    Ok(pick)
}

/// Fraction of pattern pairs on which two labelings agree about
/// same-class / different-class.
pub fn pairwise_agreement(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            total += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}

/// Mean silhouette over a partition with a precomputed distance matrix.
/// Single-cluster partitions score 0 so that splitting genuinely uniform
/// data (negative silhouette) never beats leaving it whole.
fn silhouette(labels: &[u32], dist: &[f64], n: usize) -> f64 {
    let unique: std::collections::BTreeSet<u32> = labels.iter().copied().collect();
    if unique.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut within_sum = 0.0;
        let mut within_count = 0usize;
        let mut between: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist[i * n + j];
            if labels[j] == labels[i] {
                within_sum += d;
                within_count += 1;
            } else {
                let e = between.entry(labels[j]).or_insert((0.0, 0));
                e.0 += d;
                e.1 += 1;
            }
        }
        if within_count == 0 {
            continue; // singleton: contributes 0
        }
        let a = within_sum / within_count as f64;
        let b = between
            .values()
            .map(|(s, c)| s / *c as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}
