//! Chance-corrected agreement statistics over ordinal labels.
//!
//! The module covers pairwise agreement (Cohen's kappa and its quadratic
//! weighted variant over a [`ConfusionMatrix`]), group agreement (Fleiss'
//! kappa over an items-by-category count table), qualitative interpretation
//! bands, and the assembly of a multi-rater reliability table.
//!
//! Degenerate inputs (no paired items, marginals concentrated in one
//! category) yield typed errors rather than NaN so callers can distinguish
//! "no evidence" from "perfect agreement".

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, RaterKey, RatingTable};

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("label sequences have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("label {value} outside 0..{k}")]
    LabelOutOfRange { value: usize, k: usize },
    #[error("confusion matrix must be square and non-empty")]
    BadShape,
    #[error("no paired observations")]
    Empty,
    #[error("degenerate marginals: chance agreement is 1, kappa undefined")]
    DegenerateMarginals,
    #[error("rating table row {row} sums to {sum}, expected {expected}")]
    UnevenRow { row: usize, sum: u64, expected: u64 },
    #[error("fleiss kappa needs at least 2 ratings per item, got {got}")]
    TooFewRatingsPerItem { got: u64 },
}

/// K x K cross-tabulation of one rater's labels against another's.
///
/// `counts[i][j]` is the number of items rater A labeled `i` and rater B
/// labeled `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self, AgreementError> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|row| row.len() != k) {
            return Err(AgreementError::BadShape);
        }
        Ok(Self { counts })
    }

    /// Tabulate two aligned label sequences into a K x K matrix.
    pub fn from_labels(a: &[usize], b: &[usize], k: usize) -> Result<Self, AgreementError> {
        if a.len() != b.len() {
            return Err(AgreementError::LengthMismatch {
                a: a.len(),
                b: b.len(),
            });
        }
        if k == 0 {
            return Err(AgreementError::BadShape);
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (&la, &lb) in a.iter().zip(b.iter()) {
            for value in [la, lb] {
                if value >= k {
                    return Err(AgreementError::LabelOutOfRange { value, k });
                }
            }
            counts[la][lb] += 1;
        }
        Ok(Self { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i][j]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Row sums: how often rater A used each category.
    pub fn row_marginals(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    /// Column sums: how often rater B used each category.
    pub fn col_marginals(&self) -> Vec<u64> {
        let k = self.k();
        let mut cols = vec![0u64; k];
        for row in &self.counts {
            for (j, &c) in row.iter().enumerate() {
                cols[j] += c;
            }
        }
        cols
    }

    /// Fraction of items on the diagonal.
    pub fn observed_agreement(&self) -> Result<f64, AgreementError> {
        let n = self.total();
        if n == 0 {
            return Err(AgreementError::Empty);
        }
        let diag: u64 = (0..self.k()).map(|i| self.counts[i][i]).sum();
        Ok(diag as f64 / n as f64)
    }
}

/// Which chance correction produced a kappa value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaKind {
    Cohen,
    QuadraticWeighted,
    Fleiss,
}

impl fmt::Display for KappaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            KappaKind::Cohen => "cohen",
            KappaKind::QuadraticWeighted => "quadratic_weighted",
            KappaKind::Fleiss => "fleiss",
        };
        f.write_str(name)
    }
}

/// A kappa statistic together with its provenance and interpretation band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaValue {
    pub kind: KappaKind,
    pub value: f64,
    pub n_items: u64,
    pub band: Band,
}

impl KappaValue {
    fn new(kind: KappaKind, value: f64, n_items: u64) -> Self {
        Self {
            kind,
            value,
            n_items,
            band: interpret_kappa(value),
        }
    }

    /// Value rounded to 4 decimals, presentation only.
    pub fn rounded(&self) -> f64 {
        (self.value * 10_000.0).round() / 10_000.0
    }
}

/// Qualitative agreement bands over kappa, left-closed on each boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Band {
    WorseThanChance,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl Band {
    /// Hyphenated machine label, used in CSV/JSON output.
    pub fn label(self) -> &'static str {
        match self {
            Band::WorseThanChance => "worse-than-chance",
            Band::Slight => "slight",
            Band::Fair => "fair",
            Band::Moderate => "moderate",
            Band::Substantial => "substantial",
            Band::AlmostPerfect => "almost-perfect",
        }
    }

    /// Plain-English phrase for narrative text.
    pub fn phrase(self) -> &'static str {
        match self {
            Band::WorseThanChance => "worse than chance",
            Band::Slight => "slight",
            Band::Fair => "fair",
            Band::Moderate => "moderate",
            Band::Substantial => "substantial",
            Band::AlmostPerfect => "almost perfect",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Map a kappa value to its interpretation band.
///
/// Boundaries are left-closed: negative values are worse than chance,
/// `[0, 0.2)` slight, `[0.2, 0.4)` fair, `[0.4, 0.6)` moderate,
/// `[0.6, 0.8)` substantial, and `[0.8, 1]` almost perfect.
pub fn interpret_kappa(value: f64) -> Band {
    if value < 0.0 {
        Band::WorseThanChance
    } else if value < 0.2 {
        Band::Slight
    } else if value < 0.4 {
        Band::Fair
    } else if value < 0.6 {
        Band::Moderate
    } else if value < 0.8 {
        Band::Substantial
    } else {
        Band::AlmostPerfect
    }
}

/// Cohen's kappa: `(p_o - p_e) / (1 - p_e)` with multiplicative marginal
/// chance agreement.
pub fn cohen_kappa(matrix: &ConfusionMatrix) -> Result<KappaValue, AgreementError> {
    let n = matrix.total();
    if n == 0 {
        return Err(AgreementError::Empty);
    }
    let nf = n as f64;
    let p_o = matrix.observed_agreement()?;
    let rows = matrix.row_marginals();
    let cols = matrix.col_marginals();
    let p_e: f64 = rows
        .iter()
        .zip(cols.iter())
        .map(|(&r, &c)| (r as f64 / nf) * (c as f64 / nf))
        .sum();
    if p_e >= 1.0 - 1e-12 {
        // Both raters pinned to a single shared category: no room above chance.
        return Err(AgreementError::DegenerateMarginals);
    }
    Ok(KappaValue::new(
        KappaKind::Cohen,
        (p_o - p_e) / (1.0 - p_e),
        n,
    ))
}

/// Quadratic weighted kappa: `1 - sum(w*O) / sum(w*E)` with weights
/// `w_ij = (i-j)^2 / (K-1)^2` and expected counts from the marginal product.
///
/// Penalizes a 0-vs-2 disagreement four times as heavily as 0-vs-1, which is
/// the natural cost model for an ordinal rubric. On a 2x2 matrix it equals
/// Cohen's kappa because the single off-diagonal weight cancels.
pub fn quadratic_weighted_kappa(matrix: &ConfusionMatrix) -> Result<KappaValue, AgreementError> {
    let n = matrix.total();
    if n == 0 {
        return Err(AgreementError::Empty);
    }
    let k = matrix.k();
    if k < 2 {
        // One category cannot disagree; weights are all zero.
        return Err(AgreementError::DegenerateMarginals);
    }
    let nf = n as f64;
    let rows = matrix.row_marginals();
    let cols = matrix.col_marginals();
    let denom_scale = ((k - 1) * (k - 1)) as f64;
    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64) * (i as f64 - j as f64)) / denom_scale;
            observed += w * matrix.count(i, j) as f64;
            expected += w * (rows[i] as f64 * cols[j] as f64) / nf;
        }
    }
    if expected <= 1e-12 {
        return Err(AgreementError::DegenerateMarginals);
    }
    Ok(KappaValue::new(
        KappaKind::QuadraticWeighted,
        1.0 - observed / expected,
        n,
    ))
}

/// Fleiss' kappa over an items-by-category count table with a constant
/// number of ratings per item.
///
/// `P_i = (sum_k n_ik^2 - n) / (n (n-1))`, `P_bar` its mean over items,
/// `P_e = sum_k p_k^2` with `p_k` the pooled category proportions.
pub fn fleiss_kappa(table: &RatingTable) -> Result<KappaValue, AgreementError> {
    fleiss_kappa_rows(&table.rows)
}

/// Fleiss' kappa over raw count rows (each row one item, columns categories).
pub fn fleiss_kappa_rows(rows: &[Vec<u64>]) -> Result<KappaValue, AgreementError> {
    if rows.is_empty() {
        return Err(AgreementError::Empty);
    }
    let n_per_item: u64 = rows[0].iter().sum();
    for (idx, row) in rows.iter().enumerate() {
        let sum: u64 = row.iter().sum();
        if sum != n_per_item {
            return Err(AgreementError::UnevenRow {
                row: idx,
                sum,
                expected: n_per_item,
            });
        }
    }
    if n_per_item < 2 {
        return Err(AgreementError::TooFewRatingsPerItem { got: n_per_item });
    }
    let n_items = rows.len() as f64;
    let n = n_per_item as f64;
    let k = rows[0].len();

    let mut category_totals = vec![0.0f64; k];
    let mut p_bar = 0.0;
    for row in rows {
        let mut same_pairs = 0.0;
        for (j, &c) in row.iter().enumerate() {
            category_totals[j] += c as f64;
            same_pairs += (c * c) as f64;
        }
        p_bar += (same_pairs - n) / (n * (n - 1.0));
    }
    p_bar /= n_items;
    let total_ratings = n_items * n;
    let p_e: f64 = category_totals
        .iter()
        .map(|&t| (t / total_ratings) * (t / total_ratings))
        .sum();
    if p_e >= 1.0 - 1e-12 {
        return Err(AgreementError::DegenerateMarginals);
    }
    Ok(KappaValue::new(
        KappaKind::Fleiss,
        (p_bar - p_e) / (1.0 - p_e),
        rows.len() as u64,
    ))
}

/// Raw agreement profile of a confusion matrix: percent agreement plus the
/// off-diagonal disagreement histogram keyed by absolute label distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementProfile {
    pub n_items: u64,
    pub percent_agreement: f64,
    /// Count of disagreeing pairs at each absolute label distance >= 1.
    pub disagreement_by_distance: BTreeMap<usize, u64>,
    /// True when the profile came from zero items (percent fixed at 1.0).
    pub degenerate: bool,
}

/// Percent agreement and disagreement histogram for a confusion matrix.
///
/// Zero items is not an error here: the profile reports 1.0 agreement with
/// the `degenerate` flag set, so table assembly can proceed and flag it.
pub fn agreement_profile(matrix: &ConfusionMatrix) -> AgreementProfile {
    let n = matrix.total();
    if n == 0 {
        return AgreementProfile {
            n_items: 0,
            percent_agreement: 1.0,
            disagreement_by_distance: BTreeMap::new(),
            degenerate: true,
        };
    }
    let mut by_distance = BTreeMap::new();
    let mut diagonal = 0u64;
    for i in 0..matrix.k() {
        for j in 0..matrix.k() {
            let c = matrix.count(i, j);
            if c == 0 {
                continue;
            }
            if i == j {
                diagonal += c;
            } else {
                *by_distance.entry(i.abs_diff(j)).or_insert(0) += c;
            }
        }
    }
    AgreementProfile {
        n_items: n,
        percent_agreement: diagonal as f64 / n as f64,
        disagreement_by_distance: by_distance,
        degenerate: false,
    }
}

/// One pairwise row of a reliability table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub rater_a: String,
    pub rater_b: String,
    pub n_items: u64,
    pub percent_agreement: f64,
    pub qwk: Option<f64>,
    pub band: Option<Band>,
    /// Set when kappa was undefined (no items or degenerate marginals).
    pub note: Option<String>,
}

/// One group (Fleiss) row of a reliability table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub raters: Vec<String>,
    pub n_items: u64,
    pub fleiss_kappa: Option<f64>,
    pub band: Option<Band>,
    pub note: Option<String>,
}

/// Pairwise and group agreement over a rater set, ready for rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub k: usize,
    pub pairwise: Vec<PairwiseRow>,
    pub groups: Vec<GroupRow>,
}

/// Build the full reliability table for a rater set: QWK for every rater
/// pair with a non-empty item intersection noted per row, plus Fleiss' kappa
/// for each requested group.
///
/// Pairs with no shared items appear with `n_items = 0` and a note rather
/// than being silently dropped.
pub fn reliability_table(
    corpus: &Corpus,
    raters: &[RaterKey],
    groups: &[Vec<RaterKey>],
    k: usize,
) -> ReliabilityTable {
    let mut pairs = Vec::new();
    for (i, a) in raters.iter().enumerate() {
        for b in raters.iter().skip(i + 1) {
            pairs.push((a.clone(), b.clone()));
        }
    }
    reliability_table_pairs(corpus, &pairs, groups, k)
}

/// Like [`reliability_table`] but with the pairwise comparisons given
/// explicitly, one row per pair in input order. This lets a cross-epoch
/// self-comparison (intra-rater) sit beside same-epoch pairs without pairing
/// the earlier epoch against every other rater.
pub fn reliability_table_pairs(
    corpus: &Corpus,
    pairs: &[(RaterKey, RaterKey)],
    groups: &[Vec<RaterKey>],
    k: usize,
) -> ReliabilityTable {
    let mut pairwise = Vec::new();
    for (a, b) in pairs {
        let paired = corpus.paired_labels(a, b);
        let matrix = ConfusionMatrix::from_labels(&paired.labels_a, &paired.labels_b, k)
            .expect("labels validated on corpus entry");
        let profile = agreement_profile(&matrix);
        let (qwk, band, note) = match quadratic_weighted_kappa(&matrix) {
            Ok(value) => (Some(value.value), Some(value.band), None),
            Err(err) => (None, None, Some(err.to_string())),
        };
        pairwise.push(PairwiseRow {
            rater_a: a.to_string(),
            rater_b: b.to_string(),
            n_items: profile.n_items,
            percent_agreement: profile.percent_agreement,
            qwk,
            band,
            note: if profile.degenerate {
                Some("no shared items".to_string())
            } else {
                note
            },
        });
    }

    let mut group_rows = Vec::new();
    for group in groups {
        let row = match corpus.rating_table(group, k) {
            Ok(table) => match fleiss_kappa(&table) {
                Ok(value) => GroupRow {
                    raters: group.iter().map(|r| r.to_string()).collect(),
                    n_items: value.n_items,
                    fleiss_kappa: Some(value.value),
                    band: Some(value.band),
                    note: None,
                },
                Err(err) => GroupRow {
                    raters: group.iter().map(|r| r.to_string()).collect(),
                    n_items: table.items.len() as u64,
                    fleiss_kappa: None,
                    band: None,
                    note: Some(err.to_string()),
                },
            },
            Err(err) => GroupRow {
                raters: group.iter().map(|r| r.to_string()).collect(),
                n_items: 0,
                fleiss_kappa: None,
                band: None,
                note: Some(err.to_string()),
            },
        };
        group_rows.push(row);
    }

    ReliabilityTable {
        k,
        pairwise,
        groups: group_rows,
    }
}

/// Round to 4 decimals for presentation. Statistics are computed and stored
/// at full precision; rounding happens only at the rendering edge.
pub fn present(value: f64) -> f64 {
    (value * 10_000.0).round() / 10_000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn matrix(counts: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::new(counts.iter().map(|row| row.to_vec()).collect()).unwrap()
    }

    #[test]
    fn cohen_kappa_balanced_2x2() {
        // p_o = 90/100, p_e = 0.5 -> kappa = 0.8.
        let m = matrix(&[&[45, 5], &[5, 45]]);
        let kappa = cohen_kappa(&m).unwrap();
        assert_relative_eq!(kappa.value, 0.8, max_relative = 1e-12);
        assert_eq!(kappa.band, Band::AlmostPerfect);
    }

    #[test]
    fn qwk_exact_tridiagonal_3x3() {
        // All disagreements adjacent; exact value 5/6.
        let m = matrix(&[&[10, 2, 0], &[2, 10, 2], &[0, 2, 10]]);
        let kappa = quadratic_weighted_kappa(&m).unwrap();
        assert_relative_eq!(kappa.value, 5.0 / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn qwk_equals_cohen_on_2x2() {
        let m = matrix(&[&[30, 7], &[11, 52]]);
        let qwk = quadratic_weighted_kappa(&m).unwrap();
        let cohen = cohen_kappa(&m).unwrap();
        assert_relative_eq!(qwk.value, cohen.value, max_relative = 1e-12);
    }

    #[test]
    fn qwk_perfect_and_worst() {
        let perfect = matrix(&[&[10, 0, 0], &[0, 10, 0], &[0, 0, 10]]);
        assert_relative_eq!(
            quadratic_weighted_kappa(&perfect).unwrap().value,
            1.0,
            max_relative = 1e-12
        );
        // All mass at maximal distance with symmetric marginals.
        let worst = matrix(&[&[0, 0, 10], &[0, 0, 0], &[10, 0, 0]]);
        let kappa = quadratic_weighted_kappa(&worst).unwrap();
        assert!(kappa.value < 0.0);
        assert_eq!(kappa.band, Band::WorseThanChance);
    }

    #[test]
    fn degenerate_single_category_is_typed_error() {
        let m = matrix(&[&[12, 0], &[0, 0]]);
        assert_eq!(
            cohen_kappa(&m).unwrap_err(),
            AgreementError::DegenerateMarginals
        );
        assert_eq!(
            quadratic_weighted_kappa(&m).unwrap_err(),
            AgreementError::DegenerateMarginals
        );
    }

    #[test]
    fn empty_matrix_is_typed_error() {
        let m = matrix(&[&[0, 0], &[0, 0]]);
        assert_eq!(cohen_kappa(&m).unwrap_err(), AgreementError::Empty);
    }

    #[test]
    fn fleiss_unanimous_two_items() {
        // Items (3,0,0) and (0,3,0): P_bar = 1, P_e = 0.5 -> kappa = 1.
        let rows = vec![vec![3, 0, 0], vec![0, 3, 0]];
        let kappa = fleiss_kappa_rows(&rows).unwrap();
        assert_relative_eq!(kappa.value, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn fleiss_single_shared_category_degenerate() {
        let rows = vec![vec![3, 0], vec![3, 0]];
        assert_eq!(
            fleiss_kappa_rows(&rows).unwrap_err(),
            AgreementError::DegenerateMarginals
        );
    }

    #[test]
    fn fleiss_rejects_uneven_rows() {
        let rows = vec![vec![2, 1], vec![1, 1]];
        assert!(matches!(
            fleiss_kappa_rows(&rows).unwrap_err(),
            AgreementError::UnevenRow {
                row: 1,
                sum: 2,
                expected: 3
            }
        ));
    }

    #[test]
    fn fleiss_two_raters_worked_example() {
        // 5 items, 2 raters, categories 0/1.
        // Rows: (2,0) x2 agree, (0,2) x1 agree, (1,1) x2 disagree.
        // P_bar = 3/5; totals (6,4)/10 -> P_e = 0.36+0.16=0.52.
        // kappa = (0.6-0.52)/0.48 = 1/6.
        let rows = vec![vec![2, 0], vec![2, 0], vec![0, 2], vec![1, 1], vec![1, 1]];
        let kappa = fleiss_kappa_rows(&rows).unwrap();
        assert_relative_eq!(kappa.value, 1.0 / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn band_boundaries_left_closed() {
        assert_eq!(interpret_kappa(-0.01), Band::WorseThanChance);
        assert_eq!(interpret_kappa(0.0), Band::Slight);
        assert_eq!(interpret_kappa(0.2), Band::Fair);
        assert_eq!(interpret_kappa(0.4), Band::Moderate);
        assert_eq!(interpret_kappa(0.6), Band::Substantial);
        assert_eq!(interpret_kappa(0.7966), Band::Substantial);
        assert_eq!(interpret_kappa(0.8), Band::AlmostPerfect);
        assert_eq!(interpret_kappa(0.8342), Band::AlmostPerfect);
        assert_eq!(interpret_kappa(1.0), Band::AlmostPerfect);
    }

    #[test]
    fn profile_counts_distances() {
        // 3 agree at 0, 1 agree at 1, 2 agree at 2 -> percent 6/8? No:
        // diagonal 3+1+2=6? Use explicit matrix instead.
        let m = matrix(&[&[3, 1, 0], &[0, 4, 1], &[1, 0, 2]]);
        let profile = agreement_profile(&m);
        assert_eq!(profile.n_items, 12);
        assert_relative_eq!(profile.percent_agreement, 9.0 / 12.0, max_relative = 1e-12);
        assert_eq!(profile.disagreement_by_distance.get(&1), Some(&2));
        assert_eq!(profile.disagreement_by_distance.get(&2), Some(&1));
        assert!(!profile.degenerate);
    }

    #[test]
    fn profile_empty_flags_degenerate() {
        let m = matrix(&[&[0, 0], &[0, 0]]);
        let profile = agreement_profile(&m);
        assert_eq!(profile.n_items, 0);
        assert_relative_eq!(profile.percent_agreement, 1.0);
        assert!(profile.degenerate);
    }

    #[test]
    fn rounding_is_presentation_only() {
        let m = matrix(&[&[10, 2, 0], &[2, 10, 2], &[0, 2, 10]]);
        let kappa = quadratic_weighted_kappa(&m).unwrap();
        assert_relative_eq!(kappa.value, 5.0 / 6.0, max_relative = 1e-12);
        assert_relative_eq!(kappa.rounded(), 0.8333, max_relative = 1e-12);
        assert_relative_eq!(present(5.0 / 6.0), 0.8333, max_relative = 1e-12);
    }

    fn random_matrix_strategy(k: usize) -> impl Strategy<Value = ConfusionMatrix> {
        proptest::collection::vec(0u64..=50, k * k).prop_map(move |flat| {
            let counts: Vec<Vec<u64>> = flat.chunks(k).map(|c| c.to_vec()).collect();
            ConfusionMatrix::new(counts).unwrap()
        })
    }

    proptest! {
        #[test]
        fn prop_kappa_at_most_one(m in random_matrix_strategy(3)) {
            if let Ok(kappa) = cohen_kappa(&m) {
                prop_assert!(kappa.value <= 1.0 + 1e-12);
            }
            if let Ok(kappa) = quadratic_weighted_kappa(&m) {
                prop_assert!(kappa.value <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn prop_kappa_symmetric_under_transpose(m in random_matrix_strategy(3)) {
            let k = m.k();
            let transposed = ConfusionMatrix::new(
                (0..k).map(|i| (0..k).map(|j| m.count(j, i)).collect()).collect()
            ).unwrap();
            match (quadratic_weighted_kappa(&m), quadratic_weighted_kappa(&transposed)) {
                (Ok(a), Ok(b)) => prop_assert!((a.value - b.value).abs() < 1e-12),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                (a, b) => prop_assert!(false, "asymmetric outcome: {:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn prop_cohen_invariant_under_count_scaling(
            m in random_matrix_strategy(3),
            factor in 2u64..5
        ) {
            let k = m.k();
            let scaled = ConfusionMatrix::new(
                (0..k).map(|i| (0..k).map(|j| m.count(i, j) * factor).collect()).collect()
            ).unwrap();
            match (cohen_kappa(&m), cohen_kappa(&scaled)) {
                (Ok(a), Ok(b)) => prop_assert!((a.value - b.value).abs() < 1e-12),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                (a, b) => prop_assert!(false, "scaling changed outcome: {:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn prop_fleiss_permutation_invariant(
            rows in proptest::collection::vec(
                (0u64..=4, 0u64..=4, 0u64..=4), 2..20
            ),
            swap in any::<bool>()
        ) {
            // Pad each row to a constant 6 ratings across 3 categories.
            let rows: Vec<Vec<u64>> = rows.into_iter().map(|(a, b, c)| {
                let total = a + b + c;
                if total > 6 { vec![a.min(6), (b).min(6 - a.min(6)), 6 - a.min(6) - b.min(6 - a.min(6))] }
                else { vec![a, b, 6 - a - b - c + c] }
            }).map(|mut row| {
                let sum: u64 = row.iter().sum();
                row[2] += 6 - sum;
                row
            }).collect();
            let permuted: Vec<Vec<u64>> = rows.iter().map(|row| {
                if swap { vec![row[2], row[0], row[1]] } else { row.clone() }
            }).collect();
            match (fleiss_kappa_rows(&rows), fleiss_kappa_rows(&permuted)) {
                (Ok(a), Ok(b)) => prop_assert!((a.value - b.value).abs() < 1e-12),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                (a, b) => prop_assert!(false, "permutation changed outcome: {:?} vs {:?}", a, b),
            }
        }
    }
}
