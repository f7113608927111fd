//! Weighted accuracy (WA), unweighted accuracy (UA) and confusion matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Emotion, N_CLASSES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label lists differ in length ({truth} true vs {predicted} predicted)")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label code {0} is outside 0..7")]
    OutOfRange(usize),
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
}

/// Rows are true classes, columns predicted classes, both in code order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Per-class recall in percent; `None` for classes absent from the truth.
    pub fn recalls(&self) -> [Option<f64>; N_CLASSES] {
        let mut out = [None; N_CLASSES];
        for (c, slot) in out.iter_mut().enumerate() {
            let n = self.row_sum(c);
            if n > 0 {
                *slot = Some(100.0 * self.counts[c][c] as f64 / n as f64);
            }
        }
        out
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= N_CLASSES {
            return Err(MetricsError::OutOfRange(t));
        }
        if p >= N_CLASSES {
            return Err(MetricsError::OutOfRange(p));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// `100 * trace / total`.
pub fn weighted_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Undefined("weighted accuracy of an empty confusion matrix"));
    }
    Ok(100.0 * cm.trace() as f64 / total as f64)
}

/// Mean recall over classes present in the truth.
pub fn unweighted_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let present: Vec<f64> = cm.recalls().iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(MetricsError::Undefined("unweighted accuracy with no true samples"));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wa: f64,
    pub ua: f64,
    pub wa_plus_ua: f64,
    /// Recall per class in percent; `null` for classes absent from the truth.
    pub per_class_recall: [Option<f64>; N_CLASSES],
    /// Classes left out of the UA mean.
    pub excluded_classes: usize,
    pub confusion: ConfusionMatrix,
    pub n_samples: u64,
}

impl EvalReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self, MetricsError> {
        let wa = weighted_accuracy(&cm)?;
        let ua = unweighted_accuracy(&cm)?;
        let per_class_recall = cm.recalls();
        Ok(Self {
            wa,
            ua,
            wa_plus_ua: wa + ua,
            excluded_classes: per_class_recall.iter().filter(|r| r.is_none()).count(),
            per_class_recall,
            n_samples: cm.total(),
            confusion: cm,
        })
    }

    /// Text table in the `Classifier  WA  UA` layout, two decimals, followed
    /// by per-class recall and the confusion matrix.
    pub fn render_text(&self, model_name: &str) -> String {
        let mut out = format!("{:<32}{:>8}{:>8}{:>10}\n", "Classifier", "WA", "UA", "WA+UA");
        out.push_str(&format!(
            "{:<32}{:>8.2}{:>8.2}{:>10.2}\n\n",
            model_name, self.wa, self.ua, self.wa_plus_ua
        ));
        out.push_str(&format!("{:<12}{:>10}\n", "class", "recall"));
        for e in Emotion::ALL {
            match self.per_class_recall[e.code()] {
                Some(r) => out.push_str(&format!("{:<12}{:>10.2}\n", e.name(), r)),
                None => out.push_str(&format!("{:<12}{:>10}\n", e.name(), "-")),
            }
        }
        out.push_str(&format!("\n{:<12}", "true\\pred"));
        for e in Emotion::ALL {
            out.push_str(&format!("{:>10}", e.name()));
        }
        out.push('\n');
        for e in Emotion::ALL {
            out.push_str(&format!("{:<12}", e.name()));
            for c in self.confusion.counts[e.code()] {
                out.push_str(&format!("{c:>10}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn report(truth: &[usize], predicted: &[usize]) -> Result<EvalReport, MetricsError> {
    EvalReport::from_confusion(confusion(truth, predicted)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_class(a: [u64; 2], b: [u64; 2]) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        cm.counts[0][0] = a[0];
        cm.counts[0][1] = a[1];
        cm.counts[1][0] = b[0];
        cm.counts[1][1] = b[1];
        cm
    }

    #[test]
    fn perfect_predictions() {
        let labels = vec![0, 1, 2, 3, 4, 5, 6, 6, 2];
        let r = report(&labels, &labels).unwrap();
        assert_eq!(r.wa, 100.0);
        assert_eq!(r.ua, 100.0);
        assert_eq!(r.wa_plus_ua, 200.0);
        for c in 0..7 {
            for p in 0..7 {
                if c != p {
                    assert_eq!(r.confusion.counts[c][p], 0);
                }
            }
        }
    }

    #[test]
    fn empty_input() {
        let cm = confusion(&[], &[]).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(weighted_accuracy(&cm).is_err());
        assert!(unweighted_accuracy(&cm).is_err());
    }

    #[test]
    fn input_errors() {
        assert!(matches!(confusion(&[1], &[]), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(confusion(&[7], &[0]), Err(MetricsError::OutOfRange(7))));
    }

    #[test]
    fn two_class_arithmetic() {
        let cm = two_class([9, 1], [5, 5]);
        assert!((weighted_accuracy(&cm).unwrap() - 70.0).abs() < 1e-12);
        assert!((unweighted_accuracy(&cm).unwrap() - 70.0).abs() < 1e-12);
        let cm = two_class([99, 1], [5, 5]);
        assert!((weighted_accuracy(&cm).unwrap() - 100.0 * 104.0 / 110.0).abs() < 1e-12);
        assert!((unweighted_accuracy(&cm).unwrap() - 74.5).abs() < 1e-12);
        let r = EvalReport::from_confusion(cm).unwrap();
        assert_eq!(r.excluded_classes, 5);
    }

    #[test]
    fn single_class_truth() {
        let r = report(&[3, 3, 3, 3], &[3, 1, 3, 3]).unwrap();
        assert_eq!(r.ua, 75.0);
        assert_eq!(r.per_class_recall[3], Some(75.0));
    }

    #[test]
    fn render_contains_two_decimals() {
        let r = report(&[0, 1, 1], &[0, 1, 0]).unwrap();
        let text = r.render_text("KNN");
        assert!(text.contains("66.67"), "{text}");
        assert!(text.contains("75.00"));
        let json = serde_json::to_string(&r).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    fn labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..300).prop_flat_map(|n| (proptest::collection::vec(0usize..7, n), proptest::collection::vec(0usize..7, n)))
    }

    proptest! {
        #[test]
        fn row_sums_are_truth_histogram((t, p) in labels()) {
            let cm = confusion(&t, &p).unwrap();
            for c in 0..7 {
                prop_assert_eq!(cm.row_sum(c) as usize, t.iter().filter(|&&x| x == c).count());
            }
            let direct = 100.0 * t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64;
            prop_assert!((weighted_accuracy(&cm).unwrap() - direct).abs() < 1e-9);
        }

        #[test]
        fn joint_permutation_and_relabeling_invariance((t, p) in labels(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let base = report(&t, &p).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..t.len()).collect();
            idx.shuffle(&mut rng);
            let t2: Vec<usize> = idx.iter().map(|&i| t[i]).collect();
            let p2: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
            let shuffled = report(&t2, &p2).unwrap();
            prop_assert_eq!(&base, &shuffled);

            let mut perm: Vec<usize> = (0..7).collect();
            perm.shuffle(&mut rng);
            let t3: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
            let p3: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
            let relabeled = report(&t3, &p3).unwrap();
            prop_assert!((relabeled.wa - base.wa).abs() < 1e-12);
            prop_assert!((relabeled.ua - base.ua).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&base.wa) && (0.0..=100.0).contains(&base.ua));
            prop_assert_eq!(base.n_samples as usize, t.len());
        }

        #[test]
        fn balanced_classes_give_ua_equal_wa(per_class in 1u64..40, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut cm = ConfusionMatrix::default();
            for c in 0..7 {
                let mut left = per_class;
                for p in 0..6 {
                    let take = rng.random_range(0..=left);
                    cm.counts[c][p] = take;
                    left -= take;
                }
                cm.counts[c][6] = left;
            }
            let r = EvalReport::from_confusion(cm).unwrap();
            prop_assert!((r.ua - r.wa).abs() < 1e-9);
        }
    }
}
