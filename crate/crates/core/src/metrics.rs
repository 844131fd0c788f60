//! Segmentation metrics: accuracy, precision, IoU and ranking average
//! precision, aggregated over classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevancy::{RelevancyMap, SegMask};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// A ratio whose denominator may be zero. Degenerate ratios read as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

impl Ratio {
    fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Ratio {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Ratio {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn iou(&self) -> Ratio {
        Ratio::of(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn precision(&self) -> Ratio {
        Ratio::of(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Ratio {
        Ratio::of(self.tp, self.tp + self.fn_)
    }

    pub fn accuracy(&self) -> Ratio {
        Ratio::of(self.tp + self.tn, self.total())
    }
}

fn check_shape(w: usize, h: usize, ow: usize, oh: usize) -> Result<()> {
    if (w, h) == (ow, oh) {
        Ok(())
    } else {
        Err(Error::invalid(format!("mask size {w}x{h} does not match {ow}x{oh}")))
    }
}

pub fn confusion(pred: &SegMask, gt: &SegMask) -> Result<ConfusionCounts> {
    check_shape(pred.width, pred.height, gt.width, gt.height)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.pixels.iter().zip(&gt.pixels) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Ranking AP over `(score, is_positive)` pairs listed in pixel order.
/// Ties keep pixel order.
fn ranking_ap(items: &[(f64, bool)]) -> Result<f64> {
    let positives = items.iter().filter(|(_, g)| *g).count();
    if positives == 0 {
        return Err(Error::invalid("average precision needs at least one positive pixel"));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[b].0.total_cmp(&items[a].0));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if items[i].1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

pub fn average_precision(scores: &RelevancyMap, gt: &SegMask) -> Result<f64> {
    check_shape(scores.width, scores.height, gt.width, gt.height)?;
    let items: Vec<(f64, bool)> = scores.scores.iter().copied().zip(gt.pixels.iter().copied()).collect();
    ranking_ap(&items)
}

/// One view of one class.
#[derive(Debug, Clone)]
pub struct ClassView {
    pub pred: SegMask,
    pub scores: RelevancyMap,
    pub gt: SegMask,
}

#[derive(Debug, Clone)]
pub struct ClassEval {
    pub name: String,
    pub views: Vec<ClassView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub iou: f64,
    pub precision: f64,
    pub ap: f64,
    pub degenerate: bool,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub miou: f64,
    pub map: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-class IoU / precision / AP over all views of the class, mean IoU and
/// mean AP across classes, accuracy and precision pooled over every pixel of
/// every class.
pub fn evaluate(classes: &[ClassEval]) -> Result<MetricsReport> {
    if classes.is_empty() {
        return Err(Error::invalid("evaluation needs at least one class"));
    }
    let mut pooled = ConfusionCounts::default();
    let mut per_class = Vec::with_capacity(classes.len());
    for class in classes {
        if class.views.is_empty() {
            return Err(Error::invalid(format!("class {:?} has no views", class.name)));
        }
        let mut counts = ConfusionCounts::default();
        let mut ranked = Vec::new();
        for v in &class.views {
            counts = counts + confusion(&v.pred, &v.gt)?;
            check_shape(v.scores.width, v.scores.height, v.gt.width, v.gt.height)?;
            ranked.extend(v.scores.scores.iter().copied().zip(v.gt.pixels.iter().copied()));
        }
        let ap = ranking_ap(&ranked).map_err(|e| Error::invalid(format!("class {:?}: {e}", class.name)))?;
        pooled = pooled + counts;
        let (iou, precision) = (counts.iou(), counts.precision());
        per_class.push(ClassMetrics {
            name: class.name.clone(),
            iou: iou.value,
            precision: precision.value,
            ap,
            degenerate: iou.degenerate || precision.degenerate,
            counts,
        });
    }
    let n = per_class.len() as f64;
    Ok(MetricsReport {
        accuracy: pooled.accuracy().value,
        precision: pooled.precision().value,
        miou: per_class.iter().map(|c| c.iou).sum::<f64>() / n,
        map: per_class.iter().map(|c| c.ap).sum::<f64>() / n,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> SegMask {
        let mut pixels = vec![false; w * h];
        for &(x, y) in on {
            pixels[y * w + x] = true;
        }
        SegMask {
            width: w,
            height: h,
            pixels,
        }
    }

    fn scores(w: usize, h: usize, s: Vec<f64>) -> RelevancyMap {
        RelevancyMap {
            width: w,
            height: h,
            no_evidence: vec![false; s.len()],
            scores: s,
        }
    }

    #[test]
    fn perfect_and_inverted_masks() {
        let all = SegMask {
            width: 3,
            height: 3,
            pixels: vec![true; 9],
        };
        let none = SegMask {
            width: 3,
            height: 3,
            pixels: vec![false; 9],
        };
        let c = confusion(&all, &all).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(c.iou().value, 1.0);
        assert_eq!(c.precision().value, 1.0);
        assert_eq!(c.accuracy().value, 1.0);
        let c = confusion(&all, &none).unwrap();
        assert_eq!(c.fp, 9);
        assert_eq!(c.iou().value, 0.0);
    }

    #[test]
    fn shifted_block_iou_is_one_third() {
        let pred = mask(4, 4, &[(0, 0), (1, 0), (0, 1), (1, 1)]);
        let gt = mask(4, 4, &[(1, 0), (2, 0), (1, 1), (2, 1)]);
        let c = confusion(&pred, &gt).unwrap();
        assert!((c.iou().value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_ratios_are_flagged() {
        let empty = mask(2, 2, &[]);
        let c = confusion(&empty, &empty).unwrap();
        assert!(c.iou().degenerate);
        assert!(c.precision().degenerate);
        assert_eq!(c.iou().value, 0.0);
        assert!(!c.accuracy().degenerate);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(confusion(&mask(2, 2, &[]), &mask(3, 2, &[])).is_err());
    }

    #[test]
    fn ap_separating_and_anti_separating() {
        let gt = mask(3, 2, &[(0, 0), (2, 1)]);
        let sep = scores(3, 2, vec![0.9, 0.1, 0.2, 0.3, 0.4, 0.8]);
        assert_eq!(average_precision(&sep, &gt).unwrap(), 1.0);
        let anti = scores(3, 2, vec![0.1, 0.9, 0.8, 0.7, 0.6, 0.2]);
        // P = 2, N = 6: (1/5 + 2/6) / 2
        let expected = (1.0 / 5.0 + 2.0 / 6.0) / 2.0;
        assert!((average_precision(&anti, &gt).unwrap() - expected).abs() < 1e-15);
        assert!(average_precision(&anti, &mask(3, 2, &[])).is_err());
    }

    #[test]
    fn evaluate_aggregates() {
        let gt = mask(2, 2, &[(0, 0), (1, 0)]);
        let s = scores(2, 2, vec![0.9, 0.8, 0.1, 0.2]);
        let good = ClassEval {
            name: "a".into(),
            views: vec![ClassView {
                pred: gt.clone(),
                scores: s.clone(),
                gt: gt.clone(),
            }],
        };
        let r = evaluate(std::slice::from_ref(&good)).unwrap();
        assert_eq!((r.accuracy, r.precision, r.miou, r.map), (1.0, 1.0, 1.0, 1.0));

        let bad = ClassEval {
            name: "b".into(),
            views: vec![ClassView {
                pred: mask(2, 2, &[(0, 1), (1, 1)]),
                scores: s,
                gt,
            }],
        };
        let r = evaluate(&[good, bad]).unwrap();
        assert_eq!(r.miou, 0.5);
        assert_eq!(r.accuracy, 0.5);
        assert!(evaluate(&[]).is_err());
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["accuracy", "precision", "miou", "map", "per_class"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
