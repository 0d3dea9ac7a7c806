//! Classifier evaluation and country × stance contingency analysis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Country;
use crate::Label;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("gold and predicted lists differ in length ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("no items to evaluate")]
    EmptyInput,
    #[error("contingency table has an empty row or column")]
    DegenerateMargin,
    #[error("only df = 1 is supported, got {0}")]
    UnsupportedDf(u32),
    #[error("chi-square statistic must be a non-negative number, got {0}")]
    InvalidStatistic(f64),
}

/// Rows are gold labels, columns predicted labels, both in [`Label::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

pub fn confusion(gold: &[Label], pred: &[Label]) -> Result<ConfusionMatrix, StatsError> {
    if gold.len() != pred.len() {
        return Err(StatsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut counts = [[0u64; 3]; 3];
    for (g, p) in gold.iter().zip(pred) {
        counts[g.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Per-class scores; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: BTreeMap<Label, PerClass>,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    /// Means over the classes whose score is defined.
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<ClassMetrics, StatsError> {
    let total = cm.total();
    if total == 0 {
        return Err(StatsError::EmptyInput);
    }
    let mut per_class = BTreeMap::new();
    for label in Label::ALL {
        let i = label.index();
        let tp = cm.counts[i][i];
        let (pred, gold) = (cm.col_sum(i), cm.row_sum(i));
        let precision = ratio(tp, pred);
        let recall = ratio(tp, gold);
        // Harmonic mean of P and R, written over counts: 2TP / (2TP + FP + FN).
        let f1 = match (precision, recall) {
            (Some(_), Some(_)) => ratio(2 * tp, pred + gold),
            _ => None,
        };
        per_class.insert(
            label,
            PerClass {
                precision,
                recall,
                f1,
                support: gold,
            },
        );
    }

    // Pooled over classes: TP = trace, TP + FP = TP + FN = total.
    let trace = cm.trace();
    let micro_precision = trace as f64 / total as f64;
    let micro_recall = trace as f64 / total as f64;
    let micro_f1 = (2 * trace) as f64 / (2 * total) as f64;
    let accuracy = trace as f64 / total as f64;

    Ok(ClassMetrics {
        macro_precision: mean_defined(per_class.values().map(|c| c.precision)),
        macro_recall: mean_defined(per_class.values().map(|c| c.recall)),
        macro_f1: mean_defined(per_class.values().map(|c| c.f1)),
        per_class,
        micro_precision,
        micro_recall,
        micro_f1,
        accuracy,
    })
}

pub const CONTINGENCY_ROWS: [Country; 2] = [Country::Au, Country::Uk];
pub const CONTINGENCY_COLS: [Label; 2] = [Label::Helpful, Label::Harmful];

/// Observed helpful/harmful counts for AU (row 0) and UK (row 1).
/// Neither-labeled sentences are not part of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub observed: [[u64; 2]; 2],
}

impl ContingencyTable2x2 {
    pub fn new(observed: [[u64; 2]; 2]) -> Self {
        Self { observed }
    }

    pub fn row_sums(&self) -> [u64; 2] {
        [
            self.observed[0][0] + self.observed[0][1],
            self.observed[1][0] + self.observed[1][1],
        ]
    }

    pub fn col_sums(&self) -> [u64; 2] {
        [
            self.observed[0][0] + self.observed[1][0],
            self.observed[0][1] + self.observed[1][1],
        ]
    }

    pub fn total(&self) -> u64 {
        self.row_sums().iter().sum()
    }
}

/// `E[r][c] = rowsum_r · colsum_c / total`.
pub fn expected_counts(t: &ContingencyTable2x2) -> Result<[[f64; 2]; 2], StatsError> {
    let (rows, cols) = (t.row_sums(), t.col_sums());
    if rows.contains(&0) || cols.contains(&0) {
        return Err(StatsError::DegenerateMargin);
    }
    let n = t.total() as f64;
    let mut e = [[0.0; 2]; 2];
    for (r, row) in e.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = (rows[r] as f64 * cols[c] as f64) / n;
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub expected: [[f64; 2]; 2],
    /// Some expected count is below 5; the asymptotic p-value is unreliable.
    pub low_expected_count: bool,
    pub yates_correction: bool,
}

/// Pearson's chi-square test of independence, without continuity correction.
pub fn pearson_chi_square(t: &ContingencyTable2x2) -> Result<ChiSquareResult, StatsError> {
    chi_square_test(t, false)
}

/// Pearson's chi-square, optionally with Yates' continuity correction
/// (`|O − E|` reduced by 0.5, floored at 0).
pub fn chi_square_test(
    t: &ContingencyTable2x2,
    yates: bool,
) -> Result<ChiSquareResult, StatsError> {
    let expected = expected_counts(t)?;
    let mut statistic = 0.0;
    for (obs_row, exp_row) in t.observed.iter().zip(&expected) {
        for (&o, &e) in obs_row.iter().zip(exp_row) {
            let mut d = (o as f64 - e).abs();
            if yates {
                d = (d - 0.5).max(0.0);
            }
            statistic += d * d / e;
        }
    }
    Ok(ChiSquareResult {
        statistic,
        df: 1,
        p_value: chi2_sf(statistic, 1)?,
        low_expected_count: expected.iter().flatten().any(|&e| e < 5.0),
        expected,
        yates_correction: yates,
    })
}

/// Survival function of the chi-square distribution; only `df = 1`,
/// where `P(X > x) = erfc(√(x/2))`.
pub fn chi2_sf(x: f64, df: u32) -> Result<f64, StatsError> {
    if df != 1 {
        return Err(StatsError::UnsupportedDf(df));
    }
    if x.is_nan() || x < 0.0 {
        return Err(StatsError::InvalidStatistic(x));
    }
    Ok(erfc((x / 2.0).sqrt()).clamp(0.0, 1.0))
}

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Complementary error function, relative error around 1e-14 or better.
///
/// For `x < 2`: `1 − erf(x)` with the positive-term series
/// `erf(x) = 2/√π · e^{−x²} · Σ 2ⁿ x^{2n+1} / (1·3·…·(2n+1))`, which has no
/// cancellation. For `x ≥ 2`: the Laplace continued fraction
/// `erfc(x) = e^{−x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))`,
/// evaluated with the modified Lentz method.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
            if term <= sum * 1e-17 {
                break;
            }
        }
        return 1.0 - FRAC_2_SQRT_PI * (-x2).exp() * sum;
    }

    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use Label::{Harmful as M, Helpful as H, Neither as N};

    #[test]
    fn confusion_counts() {
        let cm = confusion(&[H, M, N], &[H, M, N]).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        let cm = confusion(&[H], &[M]).unwrap();
        assert_eq!(cm.counts, [[0, 1, 0], [0, 0, 0], [0, 0, 0]]);
        assert_eq!(
            confusion(&[H, M, N], &[H, M]),
            Err(StatsError::LengthMismatch { gold: 3, pred: 2 })
        );
        assert_eq!(confusion(&[], &[]), Err(StatsError::EmptyInput));
    }

    #[test]
    fn perfect_diagonal() {
        let m = metrics(&ConfusionMatrix {
            counts: [[3, 0, 0], [0, 2, 0], [0, 0, 5]],
        })
        .unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.micro_f1, 1.0);
        assert_eq!(m.macro_f1, Some(1.0));
        for c in m.per_class.values() {
            assert_eq!(
                (c.precision, c.recall, c.f1),
                (Some(1.0), Some(1.0), Some(1.0))
            );
        }
    }

    #[test]
    fn hand_computed_class_scores() {
        let m = metrics(&ConfusionMatrix {
            counts: [[1, 1, 0], [0, 0, 0], [0, 0, 0]],
        })
        .unwrap();
        let h = m.per_class[&H];
        assert_eq!(h.precision, Some(1.0));
        assert_eq!(h.recall, Some(0.5));
        assert!((h.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // Harmful: predicted once, never gold.
        let m_ = m.per_class[&M];
        assert_eq!((m_.precision, m_.recall, m_.f1), (Some(0.0), None, None));
        let n = m.per_class[&N];
        assert_eq!((n.precision, n.recall), (None, None));
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn trace_180_of_200() {
        let m = metrics(&ConfusionMatrix {
            counts: [[30, 3, 3], [2, 30, 3], [4, 5, 120]],
        })
        .unwrap();
        assert_eq!(m.accuracy, 0.9);
        assert_eq!(m.micro_f1, 0.9);
    }

    #[test]
    fn empty_matrix() {
        assert_eq!(
            metrics(&ConfusionMatrix {
                counts: [[0; 3]; 3]
            }),
            Err(StatsError::EmptyInput)
        );
    }

    #[test]
    fn expected_count_examples() {
        let e = expected_counts(&ContingencyTable2x2::new([[102, 332], [288, 114]])).unwrap();
        let want = [[202.464, 231.536], [187.536, 214.464]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((e[r][c] - want[r][c]).abs() < 1e-3, "{r}{c}: {}", e[r][c]);
            }
        }
        assert_eq!(
            expected_counts(&ContingencyTable2x2::new([[5, 5], [5, 5]])).unwrap(),
            [[5.0; 2]; 2]
        );
        assert_eq!(
            expected_counts(&ContingencyTable2x2::new([[10, 0], [0, 10]])).unwrap(),
            [[5.0; 2]; 2]
        );
        assert_eq!(
            expected_counts(&ContingencyTable2x2::new([[3, 4], [0, 0]])),
            Err(StatsError::DegenerateMargin)
        );
    }

    #[test]
    fn chi_square_examples() {
        let r = pearson_chi_square(&ContingencyTable2x2::new([[5, 5], [5, 5]])).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = pearson_chi_square(&ContingencyTable2x2::new([[10, 0], [0, 10]])).unwrap();
        assert!((r.statistic - 20.0).abs() < 1e-12);
        assert!(!r.low_expected_count);
        let r = pearson_chi_square(&ContingencyTable2x2::new([[102, 332], [288, 114]])).unwrap();
        assert!((r.statistic - 194.3).abs() < 0.5);
        assert_eq!(r.df, 1);
        assert!(r.p_value < 1e-4);
        let small = pearson_chi_square(&ContingencyTable2x2::new([[1, 2], [3, 1]])).unwrap();
        assert!(small.low_expected_count);
    }

    #[test]
    fn yates_reduces_statistic() {
        let t = ContingencyTable2x2::new([[10, 0], [0, 10]]);
        let r = chi_square_test(&t, true).unwrap();
        // |O−E| = 5 → 4.5; 4 · 4.5² / 5 = 16.2.
        assert!((r.statistic - 16.2).abs() < 1e-12);
        assert!(r.yates_correction);
    }

    #[test]
    fn chi2_sf_values() {
        assert_eq!(chi2_sf(0.0, 1).unwrap(), 1.0);
        assert!((chi2_sf(3.841458821, 1).unwrap() - 0.05).abs() < 1e-6);
        assert!(chi2_sf(194.3, 1).unwrap() < 1e-40);
        assert_eq!(chi2_sf(1.0, 2), Err(StatsError::UnsupportedDf(2)));
        assert!(chi2_sf(-1.0, 1).is_err());
        assert!(chi2_sf(f64::NAN, 1).is_err());
    }

    #[test]
    fn erfc_reference_values() {
        // Reference values of erfc to 15+ significant digits.
        let cases = [
            (0.0, 1.0),
            (0.5, 0.479_500_122_186_953_5),
            (1.0, 0.157_299_207_050_285_13),
            (2.0, 0.004_677_734_981_047_266),
            (3.0, 2.209_049_699_858_544e-5),
            (5.0, 1.537_459_794_428_034_8e-12),
            (10.0, 2.088_487_583_762_545e-45),
        ];
        for (x, want) in cases {
            let got = erfc(x);
            assert!(
                ((got - want) / want).abs() < 1e-12,
                "erfc({x}) = {got}, want {want}"
            );
        }
        assert!((erfc(-1.0) - (2.0 - 0.157_299_207_050_285_13)).abs() < 1e-15);
    }

    #[test]
    fn chi2_sf_matches_statrs() {
        let dist = ChiSquared::new(1.0).unwrap();
        for i in 1..400 {
            let x = i as f64 * 0.25;
            let ours = chi2_sf(x, 1).unwrap();
            let theirs = dist.sf(x);
            assert!(
                ((ours - theirs) / theirs).abs() < 1e-9,
                "x={x}: {ours} vs {theirs}"
            );
        }
    }

    /// Textbook Pearson statistic via the 2×2 shortcut
    /// `N (ad − bc)² / ((a+b)(c+d)(a+c)(b+d))`, an independent route.
    fn shortcut_statistic(t: [[u64; 2]; 2]) -> f64 {
        let [[a, b], [c, d]] = t.map(|r| r.map(|v| v as f64));
        let n = a + b + c + d;
        n * (a * d - b * c).powi(2) / ((a + b) * (c + d) * (a + c) * (b + d))
    }

    #[test]
    fn brute_force_matches_shortcut_formula() {
        for a in 1..=6 {
            for b in 1..=6 {
                for c in 1..=6 {
                    for d in 1..=6 {
                        let t = [[a, b], [c, d]];
                        let ours = pearson_chi_square(&ContingencyTable2x2::new(t)).unwrap();
                        let want = shortcut_statistic(t);
                        let tol = 1e-9 * want.abs().max(1e-12);
                        assert!((ours.statistic - want).abs() <= tol, "{t:?}");
                    }
                }
            }
        }
    }

    fn matrix() -> impl Strategy<Value = [[u64; 3]; 3]> {
        prop::array::uniform3(prop::array::uniform3(0u64..500))
            .prop_filter("non-empty", |m| m.iter().flatten().sum::<u64>() > 0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn micro_identity(counts in matrix()) {
            let m = metrics(&ConfusionMatrix { counts }).unwrap();
            prop_assert_eq!(m.micro_precision, m.accuracy);
            prop_assert_eq!(m.micro_recall, m.accuracy);
            prop_assert_eq!(m.micro_f1, m.accuracy);
        }

        #[test]
        fn expected_preserves_margins(t in prop::array::uniform2(prop::array::uniform2(1u64..10_000))) {
            let table = ContingencyTable2x2::new(t);
            let e = expected_counts(&table).unwrap();
            let (rows, cols) = (table.row_sums(), table.col_sums());
            for i in 0..2 {
                let rs = e[i][0] + e[i][1];
                let cs = e[0][i] + e[1][i];
                prop_assert!((rs - rows[i] as f64).abs() <= 1e-9 * rows[i] as f64);
                prop_assert!((cs - cols[i] as f64).abs() <= 1e-9 * cols[i] as f64);
            }
        }

        #[test]
        fn chi_square_permutation_invariant(t in prop::array::uniform2(prop::array::uniform2(1u64..1000))) {
            let base = pearson_chi_square(&ContingencyTable2x2::new(t)).unwrap().statistic;
            let swapped_rows = [t[1], t[0]];
            let swapped_both = [[t[1][1], t[1][0]], [t[0][1], t[0][0]]];
            for p in [swapped_rows, swapped_both] {
                let s = pearson_chi_square(&ContingencyTable2x2::new(p)).unwrap().statistic;
                prop_assert!((s - base).abs() <= 1e-9 * base.max(1.0));
            }
        }

        #[test]
        fn chi2_sf_monotone(a in 0.0f64..400.0, b in 0.0f64..400.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(chi2_sf(lo, 1).unwrap() >= chi2_sf(hi, 1).unwrap());
        }
    }
}
