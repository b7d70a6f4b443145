//! Evaluation quantities: box IOU, mask Dice, accuracy, ROC AUC and mean IOU
//! over box sets.

use serde::{Deserialize, Serialize};

use crate::blobseg::BinaryMask;
use crate::error::{Error, Result};

/// Axis-aligned time-frequency rectangle. Coordinates are inclusive: frames
/// `t0..=t1`, frequency bins `f0..=f1` (bin 0 = lowest frequency).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub t0: usize,
    pub t1: usize,
    pub f0: usize,
    pub f1: usize,
}

impl BBox {
    pub fn new(t0: usize, t1: usize, f0: usize, f1: usize) -> Result<Self> {
        if t0 > t1 || f0 > f1 {
            return Err(Error::InvalidParameter(format!(
                "degenerate box t={t0}..{t1} f={f0}..{f1}"
            )));
        }
        Ok(Self { t0, t1, f0, f1 })
    }

    pub fn width(&self) -> usize {
        self.t1 - self.t0 + 1
    }

    pub fn height(&self) -> usize {
        self.f1 - self.f0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, t: usize, f: usize) -> bool {
        (self.t0..=self.t1).contains(&t) && (self.f0..=self.f1).contains(&f)
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let t0 = self.t0.max(other.t0);
        let t1 = self.t1.min(other.t1);
        let f0 = self.f0.max(other.f0);
        let f1 = self.f1.min(other.f1);
        (t0 <= t1 && f0 <= f1).then_some(BBox { t0, t1, f0, f1 })
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Set Dice `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn mask_dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_congruent(a, b)?;
    let (inter, total) = a
        .bits()
        .iter()
        .zip(b.bits())
        .fold((0usize, 0usize), |(i, t), (&x, &y)| {
            (i + (x && y) as usize, t + x as usize + y as usize)
        });
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Jaccard index over pixel sets; two empty masks score 1.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_congruent(a, b)?;
    let (inter, union) = a
        .bits()
        .iter()
        .zip(b.bits())
        .fold((0usize, 0usize), |(i, u), (&x, &y)| {
            (i + (x && y) as usize, u + (x || y) as usize)
        });
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

fn check_congruent(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

pub fn accuracy(labels: &[u8], predictions: &[u8]) -> Result<f64> {
    if labels.len() != predictions.len() {
        return Err(Error::shape(
            format!("{} predictions", labels.len()),
            predictions.len(),
        ));
    }
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = labels
        .iter()
        .zip(predictions)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mann–Whitney AUC from mid-ranks: ties between a positive and a negative
/// score earn half credit.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::shape(
            format!("{} scores", labels.len()),
            scores.len(),
        ));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs both positive and negative labels".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled mid-ranks of positives keeps the tie arithmetic integral.
    let mut pos_rank2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1, doubled mid-rank = i + j + 2
        let mid2 = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        pos_rank2 += mid2 * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let u2 = pos_rank2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Greedy one-to-one matching by descending IOU (ties broken by lower
/// predicted index, then lower reference index). Unmatched boxes on either
/// side score 0; the sum is divided by the larger list length. Two empty
/// lists score 1.
pub fn mean_iou(predicted: &[BBox], reference: &[BBox]) -> f64 {
    let denom = predicted.len().max(reference.len());
    if denom == 0 {
        return 1.0;
    }
    greedy_matches(predicted, reference)
        .iter()
        .map(|&(_, _, v)| v)
        .sum::<f64>()
        / denom as f64
}

/// Pairs `(predicted_idx, reference_idx, iou)` chosen by greedy matching;
/// only pairs with positive overlap are returned.
pub fn greedy_matches(predicted: &[BBox], reference: &[BBox]) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = predicted
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            reference
                .iter()
                .enumerate()
                .map(move |(j, r)| (i, j, iou(p, r)))
        })
        .filter(|&(_, _, v)| v > 0.0)
        .collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_p = vec![false; predicted.len()];
    let mut used_r = vec![false; reference.len()];
    let mut out = Vec::new();
    for (i, j, v) in pairs {
        if !used_p[i] && !used_r[j] {
            used_p[i] = true;
            used_r[j] = true;
            out.push((i, j, v));
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Aggregate evaluation. Metrics that do not apply to the evaluated kind are
/// `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub mean_iou: Option<f64>,
    pub mean_dice: Option<f64>,
    pub per_item: Vec<ItemMetrics>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per item: `id,iou,dice,label,score` with empty cells for
    /// metrics that do not apply.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "iou", "dice", "label", "score"])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for item in &self.per_item {
            w.write_record([
                item.id.clone(),
                fmt(item.iou),
                fmt(item.dice),
                item.label.map(|l| l.to_string()).unwrap_or_default(),
                fmt(item.score),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(t0: usize, t1: usize, f0: usize, f1: usize) -> BBox {
        BBox::new(t0, t1, f0, f1).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = b(0, 9, 0, 9);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20, 25, 0, 9)), 0.0);
        assert!((iou(&a, &b(5, 14, 5, 14)) - 25.0 / 175.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::new(3, 2, 0, 0).is_err());
    }

    #[test]
    fn dice_examples() {
        let mut x = BinaryMask::new(10, 20);
        let mut y = BinaryMask::new(10, 20);
        assert_eq!(mask_dice(&x, &y).unwrap(), 1.0);
        for c in 0..10 {
            for r in 0..10 {
                x.set(r, c, true);
                y.set(r, c + 5, true);
            }
        }
        assert_eq!(mask_dice(&x, &x).unwrap(), 1.0);
        assert_eq!(mask_dice(&x, &y).unwrap(), 0.5);
        let mut z = BinaryMask::new(10, 20);
        z.set(0, 19, true);
        let mut w = BinaryMask::new(10, 20);
        w.set(0, 0, true);
        assert_eq!(mask_dice(&z, &w).unwrap(), 0.0);
        assert!(mask_dice(&x, &BinaryMask::new(3, 3)).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 0, 0, 1]).unwrap(), 0.75);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0], &[1, 0]).unwrap(), 1.0);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.4, 0.35, 0.8]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0, 1], &[0.1, 0.9]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0, 1], &[0.9, 0.1]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0, 1], &[0.5, 0.5]).unwrap(), 0.5);
        assert!(roc_auc(&[1, 1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn mean_iou_examples() {
        let a = b(0, 9, 0, 9);
        assert_eq!(mean_iou(&[a], &[a]), 1.0);
        assert_eq!(mean_iou(&[], &[a]), 0.0);
        assert_eq!(mean_iou(&[], &[]), 1.0);
        assert_eq!(mean_iou(&[a, a], &[a]), 0.5);
    }

    #[test]
    fn report_csv_has_header_and_rows() {
        let report = EvalReport {
            mean_iou: Some(0.5),
            per_item: vec![ItemMetrics {
                id: "s1".into(),
                iou: Some(0.5),
                ..Default::default()
            }],
            ..Default::default()
        };
        let csv = report.to_csv().unwrap();
        assert_eq!(csv, "id,iou,dice,label,score\ns1,0.500000,,,\n");
        assert!(report.to_json().unwrap().contains("\"mean_iou\": 0.5"));
    }
}
