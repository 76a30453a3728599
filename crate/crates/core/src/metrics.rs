//! Classification and early-recognition metrics for scored, binary-labeled
//! sets: AUROC, AUPRC, accuracy, BEDROC, and enrichment factors.
//!
//! Ranking is deterministic: descending score with ties broken by original
//! index (stable sort). AUROC uses the rank-sum formulation with tied
//! scores counted half. BEDROC follows the exponentially weighted rank sum,
//! min-max normalized between the discrete best and worst placements so the
//! endpoints are exactly 0 and 1.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("degenerate labels: need {need}, have {positives} positives / {negatives} negatives")]
    DegenerateLabels { need: &'static str, positives: usize, negatives: usize },
    #[error("scores must be finite (item {index})")]
    NonFiniteScore { index: usize },
    #[error("labels must be 0 or 1 (item {index} is {label})")]
    BadLabel { index: usize, label: u8 },
    #[error("scored set must be non-empty")]
    Empty,
    #[error("invalid fraction {fraction}; need 0 < fraction <= 1")]
    BadFraction { fraction: f64 },
    #[error("invalid alpha {alpha}; need alpha > 0")]
    BadAlpha { alpha: f64 },
}

/// Scored items with binary labels.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    items: Vec<(f64, u8)>,
    positives: usize,
}

impl ScoredSet {
    pub fn new(items: Vec<(f64, u8)>) -> Result<Self, MetricError> {
        if items.is_empty() {
            return Err(MetricError::Empty);
        }
        for (i, &(score, label)) in items.iter().enumerate() {
            if !score.is_finite() {
                return Err(MetricError::NonFiniteScore { index: i });
            }
            if label > 1 {
                return Err(MetricError::BadLabel { index: i, label });
            }
        }
        let positives = items.iter().filter(|(_, l)| *l == 1).count();
        Ok(Self { items, positives })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn positives(&self) -> usize {
        self.positives
    }

    pub fn negatives(&self) -> usize {
        self.items.len() - self.positives
    }

    pub fn items(&self) -> &[(f64, u8)] {
        &self.items
    }

    /// Labels in ranked order: descending score, ties by original index.
    fn ranked_labels(&self) -> Vec<u8> {
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        idx.sort_by(|&a, &b| self.items[b].0.total_cmp(&self.items[a].0).then(a.cmp(&b)));
        idx.into_iter().map(|i| self.items[i].1).collect()
    }
}

/// Area under the ROC curve via the rank-sum (Mann-Whitney) formulation;
/// tied scores count half.
pub fn auroc(set: &ScoredSet) -> Result<f64, MetricError> {
    let n_pos = set.positives();
    let n_neg = set.negatives();
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::DegenerateLabels {
            need: "at least one positive and one negative",
            positives: n_pos,
            negatives: n_neg,
        });
    }
    // Ascending by score; average ranks across tie groups.
    let mut idx: Vec<usize> = (0..set.items.len()).collect();
    idx.sort_by(|&a, &b| set.items[a].0.total_cmp(&set.items[b].0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && set.items[idx[j]].0 == set.items[idx[i]].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // ranks are 1-based
        for &item in &idx[i..j] {
            if set.items[item].1 == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Area under the precision-recall curve: step-wise integration of
/// precision over recall at the distinct score thresholds, descending.
pub fn auprc(set: &ScoredSet) -> Result<f64, MetricError> {
    let n_pos = set.positives();
    if n_pos == 0 {
        return Err(MetricError::DegenerateLabels {
            need: "at least one positive",
            positives: 0,
            negatives: set.negatives(),
        });
    }
    let mut idx: Vec<usize> = (0..set.items.len()).collect();
    idx.sort_by(|&a, &b| set.items[b].0.total_cmp(&set.items[a].0).then(a.cmp(&b)));
    let mut area = 0.0;
    let mut tp = 0usize;
    let mut taken = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < idx.len() {
        // Advance over one tie group: thresholds sit at distinct scores.
        let mut j = i;
        while j < idx.len() && set.items[idx[j]].0 == set.items[idx[i]].0 {
            tp += usize::from(set.items[idx[j]].1 == 1);
            taken += 1;
            j += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / taken as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// Fraction of items whose thresholded prediction (`score >= threshold` is
/// positive) matches the label.
pub fn accuracy(set: &ScoredSet, threshold: f64) -> f64 {
    let correct = set
        .items()
        .iter()
        .filter(|&&(score, label)| u8::from(score >= threshold) == label)
        .count();
    correct as f64 / set.len() as f64
}

/// BEDROC: exponentially early-weighted rank sum `sum_i exp(-alpha r_i / N)`
/// over active ranks, min-max normalized between the discrete best (actives
/// at ranks 1..n) and worst (actives at the bottom) placements.
pub fn bedroc(set: &ScoredSet, alpha: f64) -> Result<f64, MetricError> {
    if alpha <= 0.0 {
        return Err(MetricError::BadAlpha { alpha });
    }
    let n = set.positives();
    let total = set.len();
    if n == 0 || n == total {
        return Err(MetricError::DegenerateLabels {
            need: "both classes present",
            positives: n,
            negatives: total - n,
        });
    }
    let decay = |rank: usize| (-alpha * rank as f64 / total as f64).exp();
    let mut sum = 0.0;
    for (zero_rank, label) in set.ranked_labels().into_iter().enumerate() {
        if label == 1 {
            sum += decay(zero_rank + 1);
        }
    }
    let best: f64 = (1..=n).map(decay).sum();
    let worst: f64 = (total - n + 1..=total).map(decay).sum();
    Ok((sum - worst) / (best - worst))
}

/// Enrichment factor at a fraction: the active rate in the top
/// `ceil(fraction * N)` items relative to the overall active rate.
pub fn enrichment_factor(set: &ScoredSet, fraction: f64) -> Result<f64, MetricError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MetricError::BadFraction { fraction });
    }
    let n = set.positives();
    if n == 0 {
        return Err(MetricError::DegenerateLabels {
            need: "at least one positive",
            positives: 0,
            negatives: set.negatives(),
        });
    }
    let top = (fraction * set.len() as f64).ceil() as usize;
    let top = top.max(1).min(set.len());
    let hits = set.ranked_labels()[..top].iter().filter(|&&l| l == 1).count();
    Ok((hits as f64 / n as f64) / fraction)
}

/// Default BEDROC alpha; weights roughly the top 2% of the ranking.
pub const DEFAULT_BEDROC_ALPHA: f64 = 80.5;

/// Enrichment-factor fractions reported by default (0.5%, 1%, 5%).
pub const EF_FRACTIONS: [f64; 3] = [0.005, 0.01, 0.05];

/// Full evaluation report over one scored set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub auroc: f64,
    pub auprc: f64,
    pub accuracy: f64,
    pub bedroc_alpha: f64,
    pub bedroc: f64,
    /// (fraction, enrichment factor) at each of [`EF_FRACTIONS`].
    pub enrichment: Vec<(f64, f64)>,
}

impl MetricReport {
    pub fn compute(set: &ScoredSet, bedroc_alpha: f64) -> Result<Self, MetricError> {
        let enrichment = EF_FRACTIONS
            .iter()
            .map(|&f| enrichment_factor(set, f).map(|v| (f, v)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            auroc: auroc(set)?,
            auprc: auprc(set)?,
            accuracy: accuracy(set, 0.5),
            bedroc_alpha,
            bedroc: bedroc(set, bedroc_alpha)?,
            enrichment,
        })
    }

    /// Metric values in the order of [`MetricReport::tsv_header`]: the
    /// fraction-form metrics, then percentage-form AUROC and BEDROC.
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.auroc, self.auprc, self.accuracy, self.bedroc];
        v.extend(self.enrichment.iter().map(|&(_, ef)| ef));
        v.push(self.auroc * 100.0);
        v.push(self.bedroc * 100.0);
        v
    }

    /// Column names for TSV reports. AUROC and BEDROC appear twice: in
    /// fraction form and in percentage form.
    pub fn tsv_header() -> String {
        let mut cols = vec![
            "auroc".to_string(),
            "auprc".to_string(),
            "accuracy".to_string(),
            "bedroc".to_string(),
        ];
        for f in EF_FRACTIONS {
            cols.push(format!("ef_at_{}pct", f * 100.0));
        }
        cols.push("auroc_pct".to_string());
        cols.push("bedroc_pct".to_string());
        cols.join("\t")
    }

    pub fn tsv_row(&self) -> String {
        self.values().iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\t")
    }
}
