use serde::{Deserialize, Serialize};

use super::PredictionSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn f1(self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / d as f64
        }
    }

    fn precision(self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    fn recall(self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn label_counts(pred: &PredictionSet) -> Result<Vec<Counts>> {
    pred.validate()?;
    if pred.is_empty() {
        return Err(Error::Input("prediction set is empty".into()));
    }
    let mut counts = vec![Counts::default(); pred.num_labels()];
    for (d, y) in pred.decisions.iter().zip(&pred.labels) {
        for (j, c) in counts.iter_mut().enumerate() {
            match (d[j], y[j]) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_label: Vec<f64>,
}

/// Per-label, macro and micro F1. A label with `2TP + FP + FN = 0` scores 0.
pub fn f1_scores(pred: &PredictionSet) -> Result<F1Scores> {
    let counts = label_counts(pred)?;
    let per_label: Vec<f64> = counts.iter().map(|c| c.f1()).collect();
    let pooled = counts.iter().fold(Counts::default(), |a, &c| a.add(c));
    Ok(F1Scores {
        macro_f1: mean(&per_label),
        micro_f1: pooled.f1(),
        per_label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrDecomposition {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
}

pub fn precision_recall_decomposition(pred: &PredictionSet) -> Result<PrDecomposition> {
    let counts = label_counts(pred)?;
    let pooled = counts.iter().fold(Counts::default(), |a, &c| a.add(c));
    let p: Vec<f64> = counts.iter().map(|c| c.precision()).collect();
    let r: Vec<f64> = counts.iter().map(|c| c.recall()).collect();
    Ok(PrDecomposition {
        macro_precision: mean(&p),
        macro_recall: mean(&r),
        micro_precision: pooled.precision(),
        micro_recall: pooled.recall(),
    })
}

/// Rank-based AUC with midranks for ties; `None` without both classes.
fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucScores {
    pub macro_auc: f64,
    pub micro_auc: f64,
    /// Labels left out of the macro mean for lacking a positive or negative.
    pub skipped: Vec<usize>,
}

pub fn auc_scores(pred: &PredictionSet) -> Result<AucScores> {
    pred.validate()?;
    let mut per = Vec::new();
    let mut skipped = Vec::new();
    for j in 0..pred.num_labels() {
        let s: Vec<f64> = pred.scores.iter().map(|r| r[j]).collect();
        let y: Vec<u8> = pred.labels.iter().map(|r| r[j]).collect();
        match auc(&s, &y) {
            Some(a) => per.push(a),
            None => skipped.push(j),
        }
    }
    if per.is_empty() {
        return Err(Error::Input("no label has both classes; macro AUC undefined".into()));
    }
    let flat_s: Vec<f64> = pred.scores.iter().flatten().copied().collect();
    let flat_y: Vec<u8> = pred.labels.iter().flatten().copied().collect();
    let micro_auc = auc(&flat_s, &flat_y).expect("some label has both classes");
    Ok(AucScores {
        macro_auc: mean(&per),
        micro_auc,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub precision: f64,
    /// Mean over samples with at least one true label; `None` if there are none.
    pub recall: Option<f64>,
}

/// The `k` highest-scoring labels; ties go to the lower label index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn topk_metrics(pred: &PredictionSet, ks: &[usize]) -> Result<Vec<TopK>> {
    pred.validate()?;
    if pred.is_empty() {
        return Err(Error::Input("prediction set is empty".into()));
    }
    let l = pred.num_labels();
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 || k > l {
            return Err(Error::Config(format!("K = {k} must be in 1..={l}")));
        }
        let (mut p_sum, mut r_sum, mut r_n) = (0.0, 0.0, 0usize);
        for (s, y) in pred.scores.iter().zip(&pred.labels) {
            let hits = top_k_indices(s, k).iter().filter(|&&j| y[j] == 1).count();
            p_sum += hits as f64 / k as f64;
            let truth = y.iter().filter(|&&v| v == 1).count();
            if truth > 0 {
                r_sum += hits as f64 / truth as f64;
                r_n += 1;
            }
        }
        out.push(TopK {
            k,
            precision: p_sum / pred.len() as f64,
            recall: (r_n > 0).then(|| r_sum / r_n as f64),
        });
    }
    Ok(out)
}

/// HEAD/MID/TAIL sizes for `l` labels in the 16/16/18 proportion of a
/// 50-label space.
pub fn default_bin_sizes(l: usize) -> [usize; 3] {
    let head = (l as f64 * 16.0 / 50.0).round() as usize;
    let mid = (l as f64 * 16.0 / 50.0).round() as usize;
    [head.min(l), mid.min(l - head.min(l)), l.saturating_sub(head + mid)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinF1 {
    pub name: String,
    pub labels: Vec<usize>,
    /// Macro-F1 within the bin; `None` for an empty bin.
    pub macro_f1: Option<f64>,
}

/// Labels sorted by training positive count (descending, ties by index)
/// and cut into HEAD / MID / TAIL of the given sizes.
pub fn longtail_binned_f1(
    pred: &PredictionSet,
    train_label_counts: &[usize],
    bin_sizes: [usize; 3],
) -> Result<Vec<BinF1>> {
    let l = pred.num_labels();
    if train_label_counts.len() != l {
        return Err(Error::shape("longtail_binned_f1", "train counts length differs from L"));
    }
    if bin_sizes.iter().sum::<usize>() != l {
        return Err(Error::Config(format!("bin sizes {bin_sizes:?} do not sum to {l}")));
    }
    let f1 = f1_scores(pred)?;
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| train_label_counts[b].cmp(&train_label_counts[a]).then(a.cmp(&b)));
    let mut out = Vec::new();
    let mut start = 0;
    for (name, size) in ["HEAD", "MID", "TAIL"].into_iter().zip(bin_sizes) {
        let labels = order[start..start + size].to_vec();
        start += size;
        let macro_f1 =
            (!labels.is_empty()).then(|| labels.iter().map(|&j| f1.per_label[j]).sum::<f64>() / labels.len() as f64);
        out.push(BinF1 {
            name: name.into(),
            labels,
            macro_f1,
        });
    }
    Ok(out)
}

/// Scalar metrics usable in paired comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    MacroF1,
    MicroF1,
    MacroAuc,
    MicroAuc,
    MacroPrecision,
    MacroRecall,
    MicroPrecision,
    MicroRecall,
    PrecisionAt(usize),
    RecallAt(usize),
}

impl Metric {
    pub fn eval(self, pred: &PredictionSet) -> Result<f64> {
        Ok(match self {
            Metric::MacroF1 => f1_scores(pred)?.macro_f1,
            Metric::MicroF1 => f1_scores(pred)?.micro_f1,
            Metric::MacroAuc => auc_scores(pred)?.macro_auc,
            Metric::MicroAuc => auc_scores(pred)?.micro_auc,
            Metric::MacroPrecision => precision_recall_decomposition(pred)?.macro_precision,
            Metric::MacroRecall => precision_recall_decomposition(pred)?.macro_recall,
            Metric::MicroPrecision => precision_recall_decomposition(pred)?.micro_precision,
            Metric::MicroRecall => precision_recall_decomposition(pred)?.micro_recall,
            Metric::PrecisionAt(k) => topk_metrics(pred, &[k])?[0].precision,
            Metric::RecallAt(k) => topk_metrics(pred, &[k])?[0]
                .recall
                .ok_or_else(|| Error::Input("no sample has a true label".into()))?,
        })
    }

    pub fn name(self) -> String {
        match self {
            Metric::MacroF1 => "macro_f1".into(),
            Metric::MicroF1 => "micro_f1".into(),
            Metric::MacroAuc => "macro_auc".into(),
            Metric::MicroAuc => "micro_auc".into(),
            Metric::MacroPrecision => "macro_precision".into(),
            Metric::MacroRecall => "macro_recall".into(),
            Metric::MicroPrecision => "micro_precision".into(),
            Metric::MicroRecall => "micro_recall".into(),
            Metric::PrecisionAt(k) => format!("p@{k}"),
            Metric::RecallAt(k) => format!("r@{k}"),
        }
    }
}
