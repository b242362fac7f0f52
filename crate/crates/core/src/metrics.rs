//! Confusion matrix, pixel accuracy and mean IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    /// `counts[gt * num_classes + pred]`.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds pixels; ground-truth pixels equal to `ignore_index` are skipped.
    pub fn accumulate(&mut self, pred: &[usize], gt: &[usize], ignore_index: usize) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predictions for {} labels",
                pred.len(),
                gt.len()
            )));
        }
        let k = self.num_classes;
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if g == ignore_index {
                continue;
            }
            if g >= k || p >= k {
                return Err(Error::InvalidArgument(format!(
                    "pixel {i}: label {g} / prediction {p} outside {k} classes"
                )));
            }
            self.counts[g * k + p] += 1;
        }
        Ok(())
    }

    /// Element-wise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

pub fn confusion(pred: &[usize], gt: &[usize], num_classes: usize, ignore_index: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(num_classes);
    cm.accumulate(pred, gt, ignore_index)?;
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

/// Pixel accuracy and mean IoU over classes with non-zero union.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let k = cm.num_classes;
    let diag: u64 = (0..k).map(|c| cm.get(c, c)).sum();
    let per_class_iou: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let row: u64 = (0..k).map(|p| cm.get(c, p)).sum();
            let col: u64 = (0..k).map(|g| cm.get(g, c)).sum();
            let union = row + col - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let fractions: Vec<(u64, u64)> = (0..k)
        .filter_map(|c| {
            let tp = cm.get(c, c);
            let row: u64 = (0..k).map(|p| cm.get(c, p)).sum();
            let col: u64 = (0..k).map(|g| cm.get(g, c)).sum();
            let union = row + col - tp;
            (union > 0).then_some((tp, union))
        })
        .collect();
    let miou = exact_mean(&fractions).unwrap_or_else(|| {
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        present.iter().sum::<f64>() / present.len() as f64
    });
    Ok(Metrics {
        accuracy: diag as f64 / total as f64,
        miou,
        per_class_iou,
    })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of `num / den` fractions summed in exact rational arithmetic and
/// rounded once; `None` if the intermediate values overflow.
fn exact_mean(fractions: &[(u64, u64)]) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for &(n, d) in fractions {
        let (n, d) = (n as u128, d as u128);
        let g = gcd(den, d);
        num = num.checked_mul(d / g)?.checked_add(n.checked_mul(den / g)?)?;
        den = den.checked_mul(d / g)?;
        let r = gcd(num, den).max(1);
        (num, den) = (num / r, den / r);
    }
    let den = den.checked_mul(fractions.len() as u128)?;
    let r = gcd(num, den).max(1);
    let (num, den) = (num / r, den / r);
    // Exact below 2^53; otherwise the quotient of two rounded values.
    Some(num as f64 / den as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let cm = confusion(&[0, 1, 1, 1], &[0, 1, 0, 1], 2, 255).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 1, 0, 2));
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.per_class_iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert_eq!(m.miou, 7.0 / 12.0);
        assert_eq!(exact_mean(&[(1, 3), (1, 6)]), Some(0.25));
    }

    #[test]
    fn ignored_and_absent_classes() {
        let cm = confusion(&[0, 1], &[255, 255], 2, 255).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(metrics(&cm).is_err());
        let cm = confusion(&[0, 0, 2], &[0, 0, 2], 3, 255).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.per_class_iou[1], None);
        assert_eq!((m.accuracy, m.miou), (1.0, 1.0));
        assert!(confusion(&[3], &[0], 3, 255).is_err());
    }
}
