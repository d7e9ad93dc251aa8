//! Exact binary-classification metrics: accuracy, positive-class F1, and
//! rank-based ROC AUC.
//!
//! AUC uses the pairwise (Mann-Whitney) statistic: the fraction of
//! positive/negative score pairs ranked correctly, ties counting half.
//! Tie groups are handled through average ranks, so the result matches a
//! brute-force enumeration over all pairs to within f64 rounding.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Metrics plus the confusion counts they were computed from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub auc: f64,
    pub f1_positive: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl EvalResult {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::Usage(format!(
            "prediction/gold length mismatch or empty: {a} vs {b}"
        )));
    }
    Ok(())
}

/// Exact-match fraction.
pub fn accuracy(pred: &[bool], gold: &[bool]) -> Result<f64> {
    check_lengths(pred.len(), gold.len())?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Harmonic mean of precision and recall for the positive class.
/// 0 when there are no true positives but positives exist somewhere;
/// 1 when prediction is perfect on a set with positives.
pub fn f1_positive(pred: &[bool], gold: &[bool]) -> Result<f64> {
    check_lengths(pred.len(), gold.len())?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64))
}

/// Rank-based ROC AUC with ties counted half.
///
/// Requires both classes in `gold`; a constant predictor on two-class gold
/// comes out at exactly 0.5 because every pair is a tie.
pub fn roc_auc(scores: &[f64], gold: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), gold.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("non-finite score".into()));
    }
    let n_pos = gold.iter().filter(|&&g| g).count();
    let n_neg = gold.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Usage(
            "roc_auc needs both classes present in gold".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of average ranks (1-based) over positives, tie groups averaged.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1..=j
        let pos_in_group = order[i..j].iter().filter(|&&k| gold[k]).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Labels, scores, and gold in one pass.
pub fn evaluate(pred: &[bool], scores: &[f64], gold: &[bool]) -> Result<EvalResult> {
    check_lengths(pred.len(), gold.len())?;
    check_lengths(scores.len(), gold.len())?;
    let mut tp = 0;
    let mut fp = 0;
    let mut tn = 0;
    let mut fn_ = 0;
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(EvalResult {
        accuracy: accuracy(pred, gold)?,
        auc: roc_auc(scores, gold)?,
        f1_positive: f1_positive(pred, gold)?,
        tp,
        fp,
        tn,
        fn_,
    })
}

/// One evaluation row for the report CSV.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub model: String,
    pub task: String,
    pub result: EvalResult,
}

/// Write `model,task,accuracy,auc,f1` with 4-decimal formatting.
pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "model,task,accuracy,auc,f1")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4}",
            row.model, row.task, row.result.accuracy, row.result.auc, row.result.f1_positive
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Brute-force pairwise AUC, O(n_pos * n_neg). Test oracle; kept here so
/// both the unit tests and the acceptance suite share one definition.
pub fn roc_auc_brute_force(scores: &[f64], gold: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), gold.len())?;
    let pos: Vec<f64> = scores
        .iter()
        .zip(gold)
        .filter(|(_, &g)| g)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(gold)
        .filter(|(_, &g)| !g)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Usage(
            "roc_auc needs both classes present in gold".into(),
        ));
    }
    let mut num = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                num += 1.0;
            } else if p == n {
                num += 0.5;
            }
        }
    }
    Ok(num / (pos.len() as f64 * neg.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn majority_setup(n_yes: usize, n_no: usize) -> (Vec<bool>, Vec<f64>, Vec<bool>) {
        let gold: Vec<bool> = (0..n_yes + n_no).map(|i| i < n_yes).collect();
        let pred = vec![true; gold.len()];
        let scores = vec![0.5; gold.len()];
        (pred, scores, gold)
    }

    #[test]
    fn accuracy_boundaries() {
        let gold = vec![true, false, true];
        assert_eq!(accuracy(&gold, &gold).unwrap(), 1.0);
        let flipped: Vec<bool> = gold.iter().map(|g| !g).collect();
        assert_eq!(accuracy(&flipped, &gold).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_of_all_yes_on_agency_distribution() {
        let (pred, _, gold) = majority_setup(7796, 2764);
        let acc = accuracy(&pred, &gold).unwrap();
        assert!((acc - 7796.0 / 10560.0).abs() < 1e-15);
        assert!((acc - 0.7382).abs() < 1e-3);
    }

    #[test]
    fn f1_of_all_yes_baselines() {
        let (pred, _, gold) = majority_setup(7796, 2764);
        let p = 7796.0 / 10560.0;
        let expected = 2.0 * p / (1.0 + p);
        let f1 = f1_positive(&pred, &gold).unwrap();
        assert!((f1 - expected).abs() < 1e-15);
        assert!((f1 - 0.8494).abs() < 1e-4);

        let (pred, _, gold) = majority_setup(5625, 4935);
        let f1 = f1_positive(&pred, &gold).unwrap();
        assert!((f1 - 0.6951).abs() < 1e-4);
    }

    #[test]
    fn f1_simple_case() {
        // tp=1, fp=1, fn=1 -> F1 = 0.5
        let pred = vec![true, true, false];
        let gold = vec![true, false, true];
        assert_eq!(f1_positive(&pred, &gold).unwrap(), 0.5);
    }

    #[test]
    fn f1_zero_when_no_true_positive() {
        let pred = vec![false, true];
        let gold = vec![true, false];
        assert_eq!(f1_positive(&pred, &gold).unwrap(), 0.0);
    }

    #[test]
    fn auc_perfect_separation() {
        let scores = vec![0.9, 0.8, 0.3, 0.1];
        let gold = vec![true, true, false, false];
        assert_eq!(roc_auc(&scores, &gold).unwrap(), 1.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        let scores = vec![0.7; 6];
        let gold = vec![true, false, true, false, true, false];
        assert_eq!(roc_auc(&scores, &gold).unwrap(), 0.5);
    }

    #[test]
    fn auc_hand_enumerated_cases() {
        let scores = vec![0.9, 0.4, 0.6, 0.1];
        let gold = vec![true, false, true, false];
        assert_eq!(roc_auc(&scores, &gold).unwrap(), 1.0);
        let gold = vec![true, true, false, false];
        assert_eq!(roc_auc(&scores, &gold).unwrap(), 0.75);
    }

    #[test]
    fn auc_single_class_is_usage_error() {
        let scores = vec![0.1, 0.2];
        assert!(matches!(
            roc_auc(&scores, &[true, true]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn evaluate_confusion_counts_sum() {
        let pred = vec![true, false, true, true];
        let gold = vec![true, true, false, true];
        let scores = vec![0.9, 0.2, 0.8, 0.7];
        let r = evaluate(&pred, &scores, &gold).unwrap();
        assert_eq!(r.total(), 4);
        assert_eq!((r.tp, r.fp, r.tn, r.fn_), (2, 1, 0, 1));
        assert_eq!(r.accuracy, 0.5);
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(
            scores in proptest::collection::vec(-3i32..3, 2..50),
            seed in 0u64..1000,
        ) {
            // Integer-derived scores force frequent ties.
            let n = scores.len();
            let mut gold: Vec<bool> = (0..n).map(|i| (i as u64 + seed) % 3 != 0).collect();
            if gold.iter().all(|&g| g) {
                gold[0] = false;
            }
            if gold.iter().all(|&g| !g) {
                gold[0] = true;
            }
            let scores: Vec<f64> = scores.iter().map(|&s| s as f64 / 2.0).collect();
            let fast = roc_auc(&scores, &gold).unwrap();
            let brute = roc_auc_brute_force(&scores, &gold).unwrap();
            prop_assert!((fast - brute).abs() <= 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            raw in proptest::collection::vec(-100i32..100, 4..40),
        ) {
            let n = raw.len();
            let gold: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            let scores: Vec<f64> = raw.iter().map(|&s| s as f64 / 10.0).collect();
            let transformed: Vec<f64> = scores.iter().map(|&s| (s / 7.0).exp() * 3.0 + 1.0).collect();
            let a = roc_auc(&scores, &gold).unwrap();
            let b = roc_auc(&transformed, &gold).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn auc_complement_symmetry(
            raw in proptest::collection::vec(-50i32..50, 4..40),
        ) {
            let n = raw.len();
            let gold: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            let scores: Vec<f64> = raw.iter().map(|&s| s as f64).collect();
            let negated: Vec<f64> = scores.iter().map(|&s| -s).collect();
            let a = roc_auc(&scores, &gold).unwrap();
            let b = roc_auc(&negated, &gold).unwrap();
            prop_assert!((a + b - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn metrics_stay_in_unit_interval(
            raw in proptest::collection::vec(-50i32..50, 4..40),
            flips in proptest::collection::vec(any::<bool>(), 4..40),
        ) {
            let n = raw.len().min(flips.len());
            let gold: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            let pred: Vec<bool> = flips[..n].to_vec();
            let scores: Vec<f64> = raw[..n].iter().map(|&s| s as f64).collect();
            let r = evaluate(&pred, &scores, &gold).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.accuracy));
            prop_assert!((0.0..=1.0).contains(&r.auc));
            prop_assert!((0.0..=1.0).contains(&r.f1_positive));
        }
    }

    #[test]
    fn eval_csv_has_four_decimals() {
        let row = EvalRow {
            model: "nb".into(),
            task: "agency".into(),
            result: EvalResult {
                accuracy: 0.738257,
                auc: 0.5,
                f1_positive: 0.849416,
                tp: 1,
                fp: 0,
                tn: 0,
                fn_: 0,
            },
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_eval_csv(f.path(), &[row]).unwrap();
        let content = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(
            content,
            "model,task,accuracy,auc,f1\nnb,agency,0.7383,0.5000,0.8494\n"
        );
    }
}
