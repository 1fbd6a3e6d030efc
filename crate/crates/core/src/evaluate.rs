//! The evaluation protocol: split generation, classification bookkeeping,
//! majority-normalized kappa, and aggregation into report tables.
//!
//! Kappa rescales accuracy against the static majority classifier, which
//! makes scores comparable across labels of very different prevalence: 1 is
//! perfect, 0 is no better than always answering the majority class, and
//! negative values are worse than that.

use std::collections::HashMap;
use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::classify::{
    self, ClassifyError, DistanceKind, Kernel, LabeledPoints, PAPER_SVM_C, PAPER_SVM_GAMMA,
};
use crate::ingest::LabelSet;
use crate::rng;
use crate::standardize::CoordinateSpace;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("too few items ({items}) for train {train} + test {test}")]
    TooFewItems {
        items: usize,
        train: usize,
        test: usize,
    },
    #[error("space {space:?} covers {space_items} items but the label set has {label_items}")]
    ItemUniverseMismatch {
        space: String,
        space_items: usize,
        label_items: usize,
    },
    #[error("split plan was built for {plan_items} items, spaces have {actual}")]
    PlanMismatch { plan_items: usize, actual: usize },
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fractions used for the reference experiments: 40% of all items train,
/// 10% of the remaining items test.
pub const PAPER_TRAIN_FRACTION: f64 = 0.40;
pub const PAPER_TEST_FRACTION: f64 = 0.10;
pub const PAPER_SPLIT_PAIRS: usize = 20;

/// Disjoint train/test item-index pairs, reused across every combination of
/// space, classifier and label in one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    items: usize,
    pairs: Vec<(Vec<u32>, Vec<u32>)>,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    pub fn items(&self) -> usize {
        self.items
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sorted train and test index sets of one pair.
    pub fn pair(&self, idx: usize) -> (&[u32], &[u32]) {
        let (train, test) = &self.pairs[idx];
        (train, test)
    }
}

/// Samples `n_pairs` disjoint train/test pairs. The train set holds
/// `round(train_fraction * items)` items; the test set holds
/// `round(test_fraction * remaining)` of the items left over.
pub fn make_splits(
    items: usize,
    n_pairs: usize,
    train_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitPlan, EvaluateError> {
    if !(0.0..1.0).contains(&train_fraction) || !(0.0..1.0).contains(&test_fraction) {
        return Err(EvaluateError::InvalidConfig(format!(
            "fractions must lie in [0, 1): {train_fraction}, {test_fraction}"
        )));
    }
    if n_pairs == 0 {
        return Err(EvaluateError::InvalidConfig("n_pairs must be positive".into()));
    }
    let train_n = (train_fraction * items as f64).round() as usize;
    let test_n = (test_fraction * (items - train_n.min(items)) as f64).round() as usize;
    if train_n == 0 || test_n == 0 || train_n + test_n > items {
        return Err(EvaluateError::TooFewItems {
            items,
            train: train_n,
            test: test_n,
        });
    }

    let mut pairs = Vec::with_capacity(n_pairs);
    for pair_idx in 0..n_pairs {
        use rand::Rng;
        let mut rng = rng::stream(seed, "splits", pair_idx as u64);
        let mut perm: Vec<u32> = (0..items as u32).collect();
        for i in (1..items).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let mut train: Vec<u32> = perm[..train_n].to_vec();
        let mut test: Vec<u32> = perm[train_n..train_n + test_n].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        pairs.push((train, test));
    }
    Ok(SplitPlan {
        items,
        pairs,
        train_fraction,
        test_fraction,
        seed,
    })
}

/// [`make_splits`] with the reference-protocol fractions and pair count.
pub fn make_paper_splits(items: usize, seed: u64) -> Result<SplitPlan, EvaluateError> {
    make_splits(
        items,
        PAPER_SPLIT_PAIRS,
        PAPER_TRAIN_FRACTION,
        PAPER_TEST_FRACTION,
        seed,
    )
}

/// Binary classification outcome, kept as integer counts so the fraction
/// identities are exact at the rational level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl Outcome {
    pub fn from_predictions(truth: &[bool], predicted: &[bool]) -> Self {
        assert_eq!(truth.len(), predicted.len());
        let mut o = Outcome {
            true_positive: 0,
            false_positive: 0,
            false_negative: 0,
            true_negative: 0,
        };
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => o.true_positive += 1,
                (false, true) => o.false_positive += 1,
                (true, false) => o.false_negative += 1,
                (false, false) => o.true_negative += 1,
            }
        }
        o
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    pub fn alpha_tp(&self) -> f64 {
        self.true_positive as f64 / self.total() as f64
    }

    pub fn alpha_fp(&self) -> f64 {
        self.false_positive as f64 / self.total() as f64
    }

    pub fn alpha_fn(&self) -> f64 {
        self.false_negative as f64 / self.total() as f64
    }

    pub fn alpha_tn(&self) -> f64 {
        self.true_negative as f64 / self.total() as f64
    }

    /// Fraction classified correctly.
    pub fn accuracy(&self) -> f64 {
        (self.true_positive + self.true_negative) as f64 / self.total() as f64
    }

    /// Accuracy of the static classifier that always answers the more
    /// frequent class of this test set.
    pub fn majority_accuracy(&self) -> f64 {
        let positives = self.true_positive + self.false_negative;
        let negatives = self.false_positive + self.true_negative;
        positives.max(negatives) as f64 / self.total() as f64
    }
}

/// Majority-normalized kappa: `(acc - acc_maj) / (1 - acc_maj)`.
///
/// Undefined (`None`) when the test set holds a single class (the majority
/// classifier is already perfect); such cells are excluded from aggregation.
pub fn kappa(o: &Outcome) -> Option<f64> {
    if o.total() == 0 {
        return None;
    }
    let acc_maj = o.majority_accuracy();
    if acc_maj >= 1.0 {
        return None;
    }
    Some((o.accuracy() - acc_maj) / (1.0 - acc_maj))
}

/// Spec-level distance choice, fitted per training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnKind {
    Euclidean,
    StandardizedEuclidean,
    NegativeScalarProduct,
    Cosine,
}

impl KnnKind {
    pub const ALL: [KnnKind; 4] = [
        KnnKind::Euclidean,
        KnnKind::StandardizedEuclidean,
        KnnKind::NegativeScalarProduct,
        KnnKind::Cosine,
    ];

    fn fit(&self, train: &Array2<f64>) -> DistanceKind {
        match self {
            KnnKind::Euclidean => DistanceKind::Euclidean,
            KnnKind::StandardizedEuclidean => DistanceKind::standardized_euclidean(train),
            KnnKind::NegativeScalarProduct => DistanceKind::NegativeScalarProduct,
            KnnKind::Cosine => DistanceKind::Cosine,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            KnnKind::Euclidean => "Eucl",
            KnnKind::StandardizedEuclidean => "sEucl",
            KnnKind::NegativeScalarProduct => "scal",
            KnnKind::Cosine => "cos",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierSpec {
    SvmLinear { c: f64 },
    SvmRbf { c: f64, gamma: f64 },
    Knn { kind: KnnKind, k: usize },
    /// Diagnostic baseline that always predicts the majority training label.
    MajorityTrain,
}

impl ClassifierSpec {
    pub fn id(&self) -> String {
        match self {
            ClassifierSpec::SvmLinear { .. } => "SVM-lin".into(),
            ClassifierSpec::SvmRbf { .. } => "SVM-RBF".into(),
            ClassifierSpec::Knn { kind, k } => format!("{k}NN-{}", kind.id()),
            ClassifierSpec::MajorityTrain => "majority".into(),
        }
    }

    /// The 14 classifiers of the reference protocol, in table order.
    pub fn paper_set() -> Vec<ClassifierSpec> {
        let mut set = vec![
            ClassifierSpec::SvmLinear { c: PAPER_SVM_C },
            ClassifierSpec::SvmRbf {
                c: PAPER_SVM_C,
                gamma: PAPER_SVM_GAMMA,
            },
        ];
        for kind in KnnKind::ALL {
            for k in [1, 3, 9] {
                set.push(ClassifierSpec::Knn { kind, k });
            }
        }
        set
    }

    pub fn validate(&self) -> Result<(), EvaluateError> {
        let fail = |m: String| Err(EvaluateError::InvalidConfig(m));
        match self {
            ClassifierSpec::SvmLinear { c } => {
                if !(*c > 0.0) {
                    return fail(format!("SVM C must be positive, got {c}"));
                }
            }
            ClassifierSpec::SvmRbf { c, gamma } => {
                if !(*c > 0.0) {
                    return fail(format!("SVM C must be positive, got {c}"));
                }
                if !(*gamma > 0.0) {
                    return fail(format!("RBF gamma must be positive, got {gamma}"));
                }
            }
            ClassifierSpec::Knn { k, .. } => {
                if *k == 0 || *k % 2 == 0 {
                    return fail(format!("k must be odd and positive, got {k}"));
                }
            }
            ClassifierSpec::MajorityTrain => {}
        }
        Ok(())
    }
}

/// One evaluated (space, classifier, label, split) combination. `kappa` is
/// `None` when the cell was excluded (single-class test set).
#[derive(Debug, Clone, PartialEq)]
pub struct KappaCell {
    pub space: String,
    pub d: usize,
    pub classifier: String,
    pub genre: String,
    pub split: usize,
    pub kappa: Option<f64>,
}

/// All kappa cells of one experiment plus the orderings needed to lay out
/// report tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    cells: Vec<KappaCell>,
    spaces: Vec<(String, usize)>,
    classifiers: Vec<String>,
    genres: Vec<String>,
    splits: usize,
}

impl EvalReport {
    pub fn cells(&self) -> &[KappaCell] {
        &self.cells
    }

    /// Space labels with their dimensionality, in experiment order.
    pub fn spaces(&self) -> &[(String, usize)] {
        &self.spaces
    }

    pub fn classifiers(&self) -> &[String] {
        &self.classifiers
    }

    pub fn genres(&self) -> &[String] {
        &self.genres
    }

    pub fn split_count(&self) -> usize {
        self.splits
    }

    fn mean<'a>(cells: impl Iterator<Item = &'a KappaCell>) -> Option<f64> {
        let values: Vec<f64> = cells.filter_map(|c| c.kappa).collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    /// Unweighted mean over labels and splits.
    pub fn mean_space_classifier(&self, space: &str, classifier: &str) -> Option<f64> {
        Self::mean(
            self.cells
                .iter()
                .filter(|c| c.space == space && c.classifier == classifier),
        )
    }

    /// Mean over splits for one (space, classifier, label) combination.
    pub fn mean_space_classifier_genre(
        &self,
        space: &str,
        classifier: &str,
        genre: &str,
    ) -> Option<f64> {
        Self::mean(self.cells.iter().filter(|c| {
            c.space == space && c.classifier == classifier && c.genre == genre
        }))
    }

    /// Raw cells as CSV; excluded cells carry an empty kappa field.
    pub fn write_cells_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "space,d,classifier,genre,split,kappa")?;
        for c in &self.cells {
            match c.kappa {
                Some(k) => writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    c.space, c.d, c.classifier, c.genre, c.split, k
                )?,
                None => writeln!(
                    w,
                    "{},{},{},{},{},",
                    c.space, c.d, c.classifier, c.genre, c.split
                )?,
            }
        }
        Ok(())
    }

    /// Per-(space, classifier) means as CSV.
    pub fn write_aggregate_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "space,d,classifier,mean_kappa")?;
        for (space, d) in &self.spaces {
            for classifier in &self.classifiers {
                match self.mean_space_classifier(space, classifier) {
                    Some(k) => writeln!(w, "{space},{d},{classifier},{k}")?,
                    None => writeln!(w, "{space},{d},{classifier},")?,
                }
            }
        }
        Ok(())
    }
}

/// Runs every (space, classifier, label, split) combination and assembles
/// the report. Deterministic: cells depend only on their own coordinates,
/// so adding or removing a space leaves all other cells bitwise identical.
pub fn run_experiment(
    spaces: &[CoordinateSpace],
    labels: &LabelSet,
    plan: &SplitPlan,
    classifiers: &[ClassifierSpec],
) -> Result<EvalReport, EvaluateError> {
    if spaces.is_empty() || classifiers.is_empty() {
        return Err(EvaluateError::InvalidConfig(
            "need at least one space and one classifier".into(),
        ));
    }
    for spec in classifiers {
        spec.validate()?;
    }
    let items = labels.item_count();
    for space in spaces {
        if space.item_count() != items {
            return Err(EvaluateError::ItemUniverseMismatch {
                space: space.provenance().to_owned(),
                space_items: space.item_count(),
                label_items: items,
            });
        }
    }
    if plan.items() != items {
        return Err(EvaluateError::PlanMismatch {
            plan_items: plan.items(),
            actual: items,
        });
    }
    {
        let mut seen = HashMap::new();
        for s in spaces {
            if seen.insert(s.provenance().to_owned(), ()).is_some() {
                return Err(EvaluateError::InvalidConfig(format!(
                    "duplicate space label {:?}",
                    s.provenance()
                )));
            }
        }
    }

    // Slice each space once per split; every classifier/label cell reuses
    // the same matrices.
    let slices: Vec<Vec<(Array2<f64>, Array2<f64>)>> = spaces
        .iter()
        .map(|space| {
            (0..plan.len())
                .map(|p| {
                    let (train, test) = plan.pair(p);
                    (
                        take_rows(space.coords(), train),
                        take_rows(space.coords(), test),
                    )
                })
                .collect()
        })
        .collect();

    let genre_count = labels.labels().len();
    let mut all_tasks =
        Vec::with_capacity(spaces.len() * classifiers.len() * genre_count * plan.len());
    for s in 0..spaces.len() {
        for c in 0..classifiers.len() {
            for g in 0..genre_count {
                for p in 0..plan.len() {
                    all_tasks.push((s, c, g, p));
                }
            }
        }
    }

    let cells: Vec<KappaCell> = all_tasks
        .par_iter()
        .map(|&(s, c, g, p)| {
            let (train_idx, test_idx) = plan.pair(p);
            let (train_pts, test_pts) = &slices[s][p];
            let train_labels: Vec<bool> = train_idx
                .iter()
                .map(|&i| labels.has_label(i as usize, g as u16))
                .collect();
            let truth: Vec<bool> = test_idx
                .iter()
                .map(|&i| labels.has_label(i as usize, g as u16))
                .collect();
            let predicted = classify_split(&classifiers[c], train_pts, &train_labels, test_pts);
            let outcome = Outcome::from_predictions(&truth, &predicted);
            let k = kappa(&outcome);
            if k.is_none() {
                log::warn!(
                    "excluded cell (single-class test set): {} / {} / {} / split {}",
                    spaces[s].provenance(),
                    classifiers[c].id(),
                    labels.labels()[g],
                    p
                );
            }
            KappaCell {
                space: spaces[s].provenance().to_owned(),
                d: spaces[s].dim(),
                classifier: classifiers[c].id(),
                genre: labels.labels()[g].clone(),
                split: p,
                kappa: k,
            }
        })
        .collect();

    Ok(EvalReport {
        cells,
        spaces: spaces
            .iter()
            .map(|s| (s.provenance().to_owned(), s.dim()))
            .collect(),
        classifiers: classifiers.iter().map(ClassifierSpec::id).collect(),
        genres: labels.labels().to_vec(),
        splits: plan.len(),
    })
}

fn take_rows(m: &Array2<f64>, idx: &[u32]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), m.ncols()));
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).assign(&m.row(i as usize));
    }
    out
}

fn classify_split(
    spec: &ClassifierSpec,
    train_pts: &Array2<f64>,
    train_labels: &[bool],
    test_pts: &Array2<f64>,
) -> Vec<bool> {
    match spec {
        ClassifierSpec::SvmLinear { c } | ClassifierSpec::SvmRbf { c, .. } => {
            let kernel = match spec {
                ClassifierSpec::SvmLinear { .. } => Kernel::Linear,
                ClassifierSpec::SvmRbf { gamma, .. } => Kernel::Rbf { gamma: *gamma },
                _ => unreachable!(),
            };
            let data = LabeledPoints::new(train_pts.clone(), train_labels.to_vec())
                .expect("split data is validated upstream");
            let model = classify::svm_train(&data, kernel, *c)
                .expect("parameters are validated upstream");
            test_pts
                .rows()
                .into_iter()
                .map(|row| classify::svm_predict(&model, row))
                .collect()
        }
        ClassifierSpec::Knn { kind, k } => {
            let data = LabeledPoints::new(train_pts.clone(), train_labels.to_vec())
                .expect("split data is validated upstream");
            let fitted = kind.fit(train_pts);
            test_pts
                .rows()
                .into_iter()
                .map(|row| classify::knn_classify(&data, &fitted, *k, row))
                .collect()
        }
        ClassifierSpec::MajorityTrain => {
            let positives = train_labels.iter().filter(|&&l| l).count();
            let answer = 2 * positives > train_labels.len();
            vec![answer; test_pts.nrows()]
        }
    }
}

/// One rendered table: aligned plain text plus a machine-readable TSV twin.
#[derive(Debug, Clone)]
pub struct RenderedTable {
    pub title: String,
    pub text: String,
    pub tsv: String,
}

#[derive(Debug, Clone)]
pub struct Tables {
    /// One table per space family: classifiers × dimensionalities.
    pub by_space: Vec<RenderedTable>,
    /// One table per classifier: labels × (largest space of each family).
    pub by_genre: Vec<RenderedTable>,
}

/// Rounds to two decimals, halves away from zero.
fn round2(x: f64) -> f64 {
    let r = (x.abs() * 100.0).round() / 100.0;
    if x < 0.0 {
        -r
    } else {
        r
    }
}

fn format_kappa(value: Option<f64>, bold_threshold: f64) -> String {
    match value {
        None => "NA".into(),
        Some(v) => {
            let r = round2(v);
            let r = if r == 0.0 { 0.0 } else { r };
            let plain = format!("{r:.2}");
            if r > bold_threshold {
                format!("*{plain}*")
            } else {
                plain
            }
        }
    }
}

fn layout(headers: &[String], rows: &[(String, Vec<String>)]) -> (String, String) {
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let mut widths: Vec<usize> = headers.iter().map(String::len).collect();
    for (_, cells) in rows {
        for (k, cell) in cells.iter().enumerate() {
            widths[k] = widths[k].max(cell.len());
        }
    }
    let mut text = String::new();
    text.push_str(&" ".repeat(label_width));
    for (h, w) in headers.iter().zip(&widths) {
        text.push_str(&format!("  {h:>w$}"));
    }
    text.push('\n');
    for (label, cells) in rows {
        text.push_str(&format!("{label:>label_width$}"));
        for (cell, w) in cells.iter().zip(&widths) {
            text.push_str(&format!("  {cell:>w$}"));
        }
        text.push('\n');
    }

    let mut tsv = String::new();
    tsv.push('\t');
    tsv.push_str(&headers.join("\t"));
    tsv.push('\n');
    for (label, cells) in rows {
        tsv.push_str(label);
        for cell in cells {
            tsv.push('\t');
            tsv.push_str(&cell.replace('*', ""));
        }
        tsv.push('\n');
    }
    (text, tsv)
}

/// Space label "SVD-10" -> family "SVD".
fn family_of(label: &str) -> &str {
    label.rsplit_once('-').map_or(label, |(head, _)| head)
}

/// Renders the report tables.
///
/// `space_bold` marks mean kappas in the per-family tables; `genre_bold`
/// marks entries of the per-label tables (the reference layouts use 0.10
/// and 0.20). Emphasis applies to values strictly above the threshold after
/// rounding.
pub fn render_tables(report: &EvalReport, space_bold: f64, genre_bold: f64) -> Tables {
    // Family -> member spaces ordered by dimensionality.
    let mut families: Vec<(String, Vec<(String, usize)>)> = Vec::new();
    for (space, d) in report.spaces() {
        let fam = family_of(space).to_owned();
        match families.iter_mut().find(|(f, _)| *f == fam) {
            Some((_, members)) => members.push((space.clone(), *d)),
            None => families.push((fam, vec![(space.clone(), *d)])),
        }
    }
    for (_, members) in &mut families {
        members.sort_by_key(|(_, d)| *d);
    }

    let by_space = families
        .iter()
        .map(|(family, members)| {
            let headers: Vec<String> = members.iter().map(|(s, _)| s.clone()).collect();
            let rows: Vec<(String, Vec<String>)> = report
                .classifiers()
                .iter()
                .map(|classifier| {
                    let cells = members
                        .iter()
                        .map(|(space, _)| {
                            format_kappa(
                                report.mean_space_classifier(space, classifier),
                                space_bold,
                            )
                        })
                        .collect();
                    (classifier.clone(), cells)
                })
                .collect();
            let (text, tsv) = layout(&headers, &rows);
            RenderedTable {
                title: format!("mean kappa by classifier ({family})"),
                text,
                tsv,
            }
        })
        .collect();

    // Per-label breakdown: the widest space of each family.
    let leads: Vec<String> = families
        .iter()
        .map(|(_, members)| members.last().expect("nonempty family").0.clone())
        .collect();
    let by_genre = report
        .classifiers()
        .iter()
        .map(|classifier| {
            let rows: Vec<(String, Vec<String>)> = report
                .genres()
                .iter()
                .map(|genre| {
                    let cells = leads
                        .iter()
                        .map(|space| {
                            format_kappa(
                                report.mean_space_classifier_genre(space, classifier, genre),
                                genre_bold,
                            )
                        })
                        .collect();
                    (genre.clone(), cells)
                })
                .collect();
            let (text, tsv) = layout(&leads, &rows);
            RenderedTable {
                title: format!("kappa by label ({classifier})"),
                text,
                tsv,
            }
        })
        .collect();

    Tables { by_space, by_genre }
}
