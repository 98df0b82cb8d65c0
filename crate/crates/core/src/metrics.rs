//! Confusion matrices, accuracy and macro F-1.

use std::fmt::Write as _;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[pred][target]`: rows are predictions, columns are targets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    /// `None` for classes without support.
    pub per_class_recall: Vec<Option<f64>>,
    pub per_class_f1: Vec<Option<f64>>,
    /// Mean F-1 over supported classes.
    pub macro_f1: f64,
    /// Classes left out of the macro mean.
    pub unsupported: Vec<usize>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Samples whose target is `class`.
    pub fn support(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// Samples predicted as `class`.
    pub fn predicted(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn add_pairs(&mut self, preds: &[usize], targets: &[usize]) -> Result<()> {
        if preds.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} targets",
                preds.len(),
                targets.len()
            )));
        }
        let classes = self.classes();
        if let Some(&label) = preds.iter().chain(targets).find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        for (&p, &t) in preds.iter().zip(targets) {
            self.counts[p][t] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::Shape(format!(
                "cannot merge {} and {} classes",
                self.classes(),
                other.classes()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Applies the same label permutation to predictions and targets:
    /// label `i` becomes `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> ConfusionMatrix {
        let mut out = ConfusionMatrix::new(self.classes());
        for (p, row) in self.counts.iter().enumerate() {
            for (t, &c) in row.iter().enumerate() {
                out.counts[perm[p]][perm[t]] = c;
            }
        }
        out
    }

    /// Header of class names, then one row per prediction prefixed by its
    /// class name.
    pub fn to_csv(&self, names: &[String]) -> Result<String> {
        if names.len() != self.classes() {
            return Err(Error::Shape(format!(
                "{} class names for {} classes",
                names.len(),
                self.classes()
            )));
        }
        let mut s = String::from("pred\\target");
        for n in names {
            write!(s, ",{n}").expect("string write");
        }
        s.push('\n');
        for (name, row) in names.iter().zip(&self.counts) {
            s.push_str(name);
            for c in row {
                write!(s, ",{c}").expect("string write");
            }
            s.push('\n');
        }
        Ok(s)
    }
}

impl Add for &ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, other: &ConfusionMatrix) -> ConfusionMatrix {
        let mut out = self.clone();
        out.merge(other).expect("matching class counts");
        out
    }
}

pub fn accumulate(preds: &[usize], targets: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add_pairs(preds, targets)?;
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn summarize(cm: &ConfusionMatrix) -> Result<Summary> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut recall = Vec::new();
    let mut f1 = Vec::new();
    let mut unsupported = Vec::new();
    for c in 0..cm.classes() {
        let tp = cm.counts[c][c];
        let support = cm.support(c);
        if support == 0 {
            recall.push(None);
            f1.push(None);
            unsupported.push(c);
            continue;
        }
        let r = ratio(tp, support);
        let p = ratio(tp, cm.predicted(c));
        recall.push(Some(r));
        f1.push(Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 }));
    }
    let supported: Vec<f64> = f1.iter().flatten().copied().collect();
    Ok(Summary {
        accuracy: ratio(cm.trace(), total),
        per_class_recall: recall,
        per_class_f1: f1,
        macro_f1: supported.iter().sum::<f64>() / supported.len() as f64,
        unsupported,
        total,
    })
}

/// Summary JSON with class names attached to the per-class entries.
pub fn summary_json(summary: &Summary, names: &[String]) -> serde_json::Value {
    let per_class: Vec<serde_json::Value> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            serde_json::json!({
                "class": n,
                "recall": summary.per_class_recall.get(i).copied().flatten(),
                "f1": summary.per_class_f1.get(i).copied().flatten(),
            })
        })
        .collect();
    serde_json::json!({
        "accuracy": summary.accuracy,
        "macro_f1": summary.macro_f1,
        "total": summary.total,
        "unsupported_classes": summary.unsupported.iter().map(|&i| names[i].clone()).collect::<Vec<_>>(),
        "per_class": per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trivial_matrices() {
        let labels: Vec<usize> = (0..12).collect();
        let cm = accumulate(&labels, &labels, 12).unwrap();
        let s = summarize(&cm).unwrap();
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.macro_f1, 1.0);
        for (i, row) in cm.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                assert_eq!(c, u64::from(i == j));
            }
        }

        let cm = accumulate(&[3], &[5], 12).unwrap();
        assert_eq!(cm.counts[3][5], 1);
        assert_eq!(cm.total(), 1);

        let targets: Vec<usize> = (0..24).map(|i| i % 12).collect();
        let cm = accumulate(&[7; 24], &targets, 12).unwrap();
        let s = summarize(&cm).unwrap();
        for c in 0..12 {
            assert_eq!(s.per_class_recall[c], Some(if c == 7 { 1.0 } else { 0.0 }));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(accumulate(&[12], &[0], 12), Err(Error::LabelOutOfRange { label: 12, classes: 12 })));
        assert!(matches!(accumulate(&[0], &[0, 1], 12), Err(Error::Shape(_))));
        assert!(matches!(summarize(&ConfusionMatrix::new(12)), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn random_pairs_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let preds: Vec<usize> = (0..1000).map(|_| rng.random_range(0..12)).collect();
        let targets: Vec<usize> = (0..1000).map(|_| rng.random_range(0..12)).collect();
        let cm = accumulate(&preds, &targets, 12).unwrap();
        assert_eq!(cm.total(), 1000);
        for p in 0..12 {
            for t in 0..12 {
                let n = preds.iter().zip(&targets).filter(|&(&a, &b)| a == p && b == t).count();
                assert_eq!(cm.counts[p][t], n as u64);
            }
        }
        for t in 0..12 {
            assert_eq!(cm.support(t), targets.iter().filter(|&&x| x == t).count() as u64);
        }
    }

    #[test]
    fn uniform_guessing_is_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let targets: Vec<usize> = (0..4800).map(|i| i % 12).collect();
        let preds: Vec<usize> = (0..4800).map(|_| rng.random_range(0..12)).collect();
        let s = summarize(&accumulate(&preds, &targets, 12).unwrap()).unwrap();
        assert!((s.accuracy - 1.0 / 12.0).abs() <= 0.03);
    }

    #[test]
    fn f1_matches_hand_computation_and_skips_unsupported() {
        // targets: class 0 ×3, class 1 ×1; predictions: 0,0,1,1
        let cm = accumulate(&[0, 0, 1, 1], &[0, 0, 0, 1], 3).unwrap();
        let s = summarize(&cm).unwrap();
        // class 0: p = 1, r = 2/3 → 0.8; class 1: p = 1/2, r = 1 → 2/3
        let f0 = 0.8;
        let f1 = 2.0 / 3.0;
        assert!((s.macro_f1 - (f0 + f1) / 2.0).abs() < 1e-12);
        assert_eq!(s.unsupported, vec![2]);
        assert_eq!(s.per_class_f1[2], None);
        assert_eq!(s.accuracy, 0.75);
    }

    #[test]
    fn relabeling_preserves_scores_and_merging_adds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let preds: Vec<usize> = (0..300).map(|_| rng.random_range(0..12)).collect();
        let targets: Vec<usize> = (0..300).map(|i| if i % 3 == 0 { preds[i] } else { rng.random_range(0..12) }).collect();
        let cm = accumulate(&preds, &targets, 12).unwrap();
        let s = summarize(&cm).unwrap();
        let mut perm: Vec<usize> = (0..12).collect();
        for _ in 0..5 {
            perm.shuffle(&mut rng);
            let p: Vec<usize> = preds.iter().map(|&x| perm[x]).collect();
            let t: Vec<usize> = targets.iter().map(|&x| perm[x]).collect();
            let relabeled = accumulate(&p, &t, 12).unwrap();
            assert_eq!(relabeled, cm.relabel(&perm));
            let r = summarize(&relabeled).unwrap();
            assert_eq!(r.accuracy, s.accuracy);
            assert!((r.macro_f1 - s.macro_f1).abs() < 1e-12);
        }
        let a = accumulate(&preds[..100], &targets[..100], 12).unwrap();
        let b = accumulate(&preds[100..], &targets[100..], 12).unwrap();
        assert_eq!(&a + &b, cm);
    }

    #[test]
    fn csv_and_json_exports() {
        let names: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let cm = accumulate(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(cm.to_csv(&names).unwrap(), "pred\\target,a,b\na,1,0\nb,1,1\n");
        let j = summary_json(&summarize(&cm).unwrap(), &names);
        assert_eq!(j["per_class"][1]["class"], "b");
        assert_eq!(j["per_class"][0]["recall"], 0.5);
        assert!(cm.to_csv(&names[..1]).is_err());
    }
}
