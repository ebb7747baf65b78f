//! Confusion matrix and balanced accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::N_CATEGORIES;

/// Rows are true categories, columns predicted ones, both in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CATEGORIES]; N_CATEGORIES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    /// Recall of each category; `None` where the category has no true instance.
    pub fn recalls(&self) -> [Option<f64>; N_CATEGORIES] {
        std::array::from_fn(|c| {
            let n = self.row_sum(c);
            (n > 0).then(|| self.counts[c][c] as f64 / n as f64)
        })
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        let hits: u64 = (0..N_CATEGORIES).map(|c| self.counts[c][c]).sum();
        (total > 0).then(|| hits as f64 / total as f64)
    }
}

pub fn confusion_matrix(preds: &[usize], truths: &[usize]) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= N_CATEGORIES {
            return Err(Error::InvalidLabel(p));
        }
        if t >= N_CATEGORIES {
            return Err(Error::InvalidLabel(t));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Mean recall over categories that have at least one true instance.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let present: Vec<f64> = cm.recalls().into_iter().flatten().collect();
    if present.is_empty() {
        return Err(Error::Empty("confusion matrix has no counts".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    /// Written separately from `balanced_accuracy`: plain loops, no helpers.
    fn brute_force(counts: &[[u64; 7]; 7]) -> f64 {
        let mut sum = 0.0;
        let mut k = 0usize;
        for (i, row) in counts.iter().enumerate() {
            let mut n = 0u64;
            for v in row {
                n += v;
            }
            if n != 0 {
                sum += row[i] as f64 / n as f64;
                k += 1;
            }
        }
        sum / k as f64
    }

    #[test]
    fn hand_cases() {
        let cm = confusion_matrix(&[0, 1, 2, 3, 4, 5, 6], &[0, 1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(balanced_accuracy(&cm).unwrap(), 1.0);

        let cm = confusion_matrix(&[5], &[2]).unwrap();
        assert_eq!(cm.counts[2][5], 1);
        assert_eq!(cm.total(), 1);

        let mut cm = ConfusionMatrix::default();
        cm.counts[0] = [4, 1, 0, 0, 0, 0, 0];
        cm.counts[3] = [0, 0, 2, 3, 0, 0, 0];
        assert_eq!(balanced_accuracy(&cm).unwrap(), 0.7);
        assert_eq!(cm.recalls()[1], None);

        assert!(balanced_accuracy(&ConfusionMatrix::default()).is_err());
        assert!(confusion_matrix(&[0, 1], &[0]).is_err());
        assert!(confusion_matrix(&[7], &[0]).is_err());
    }

    #[test]
    fn total_counts_pairs() {
        let preds: Vec<usize> = (0..1512).map(|i| i % 7).collect();
        let truths: Vec<usize> = (0..1512).map(|i| (i / 3) % 7).collect();
        assert_eq!(confusion_matrix(&preds, &truths).unwrap().total(), 1512);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = stream_rng(2024, Stream::Init, &[]);
        for _ in 0..1000 {
            let mut cm = ConfusionMatrix::default();
            for row in cm.counts.iter_mut() {
                let empty = rng.random_bool(0.2);
                for v in row.iter_mut() {
                    *v = if empty { 0 } else { rng.random_range(0..50) };
                }
            }
            if cm.total() == 0 {
                continue;
            }
            let got = balanced_accuracy(&cm).unwrap();
            assert!((got - brute_force(&cm.counts)).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&got));
        }
    }
}
