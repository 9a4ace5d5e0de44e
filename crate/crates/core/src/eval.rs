//! ROC curves, AUC, and the detection / localization evaluations.

use crate::dataset::{SizeClass, TestItem};
use crate::models::ModelWeights;
use crate::ocsvm::SvmModel;
use crate::pipeline::{compute_soft_mask, detection_score, Aggregation, SoftMask};
use crate::training::Stage;
use crate::{Error, Result};
use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Which end of the score scale marks the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    LowerIsPositive,
    HigherIsPositive,
}

impl Orientation {
    /// Order placing the most positive-looking score first.
    fn cmp(self, a: f64, b: f64) -> Ordering {
        match self {
            Orientation::LowerIsPositive => a.total_cmp(&b),
            Orientation::HigherIsPositive => b.total_cmp(&a),
        }
    }
}

/// ROC points from (0, 0) to (1, 1). `thresholds[k]` is the score whose
/// inclusion produced point `k`; the first point uses an infinite
/// threshold that flags nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub orientation: Orientation,
}

impl RocCurve {
    pub fn len(&self) -> usize {
        self.fpr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fpr.is_empty()
    }

    /// `fpr<TAB>tpr` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# fpr\ttpr\n");
        for (x, y) in self.fpr.iter().zip(&self.tpr) {
            let _ = writeln!(out, "{x}\t{y}");
        }
        out
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape("roc labels", scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("roc score {i}")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {l} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "roc needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Sweep a threshold over the distinct scores; tied scores enter together.
/// Label 1 is positive.
pub fn roc(scores: &[f64], labels: &[u8], orientation: Orientation) -> Result<RocCurve> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| orientation.cmp(scores[a], scores[b]));
    let start = match orientation {
        Orientation::LowerIsPositive => f64::NEG_INFINITY,
        Orientation::HigherIsPositive => f64::INFINITY,
    };
    let mut curve = RocCurve {
        fpr: vec![0.0],
        tpr: vec![0.0],
        thresholds: vec![start],
        orientation,
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        curve.fpr.push(fp as f64 / neg as f64);
        curve.tpr.push(tp as f64 / pos as f64);
        curve.thresholds.push(s);
    }
    Ok(curve)
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .fpr
        .windows(2)
        .zip(curve.tpr.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[1] + y[0]) / 2.0)
        .sum()
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// half. Quadratic; meant as a reference.
pub fn pair_count_auc(scores: &[f64], labels: &[u8], orientation: Orientation) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut credit = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0 {
                credit += match orientation.cmp(si, sj) {
                    Ordering::Less => 1.0,
                    Ordering::Equal => 0.5,
                    Ordering::Greater => 0.0,
                };
            }
        }
    }
    Ok(credit / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Detection,
    Localization,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Detection => "detection",
            Task::Localization => "localization",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Task::Detection => "Detection results in terms of AUC",
            Task::Localization => "Localization results in terms of AUC",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detection" => Ok(Task::Detection),
            "localization" => Ok(Task::Localization),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

/// One row of a result table. Counts are images for detection and
/// covered pixels for localization.
#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    pub task: Task,
    pub size_class: SizeClass,
    pub strategy: Stage,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// A report together with the curve it summarizes.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub report: AucReport,
    pub curve: RocCurve,
}

fn evaluated(
    task: Task,
    class: SizeClass,
    strategy: Stage,
    scores: &[f64],
    labels: &[u8],
) -> Result<Evaluated> {
    let curve = roc(scores, labels, Orientation::LowerIsPositive)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let report = AucReport {
        task,
        size_class: class,
        strategy,
        auc: auc(&curve),
        n_pos: pos,
        n_neg: labels.len() - pos,
    };
    Ok(Evaluated { report, curve })
}

/// Patch geometry used when scoring test images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub size: usize,
    pub stride: usize,
    pub aggregation: Aggregation,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            size: crate::pipeline::PATCH_SIZE,
            stride: crate::pipeline::DEFAULT_STRIDE,
            aggregation: Aggregation::Mean,
        }
    }
}

/// Soft mask of every test item, in order.
pub fn soft_masks(
    items: &[TestItem],
    encoder: &ModelWeights<f32>,
    svm: &SvmModel,
    geometry: Geometry,
) -> Result<Vec<SoftMask>> {
    items
        .iter()
        .map(|it| {
            compute_soft_mask(
                &it.image,
                encoder,
                svm,
                geometry.size,
                geometry.stride,
                geometry.aggregation,
            )
        })
        .collect()
}

fn check_aligned(items: &[TestItem], masks: &[SoftMask]) -> Result<()> {
    if items.len() != masks.len() {
        return Err(Error::shape(
            "soft masks per item",
            items.len(),
            masks.len(),
        ));
    }
    for (it, m) in items.iter().zip(masks) {
        if (it.mask.height, it.mask.width) != (m.height, m.width) {
            return Err(Error::shape(
                "ground truth vs soft mask",
                format!("{}x{}", it.mask.height, it.mask.width),
                format!("{}x{}", m.height, m.width),
            ));
        }
    }
    Ok(())
}

/// Image-level ROC per size class: the minimum patch score of each image,
/// every pristine test image against the forged images of that class.
pub fn detection_eval(
    items: &[TestItem],
    masks: &[SoftMask],
    classes: &[SizeClass],
    strategy: Stage,
) -> Result<Vec<Evaluated>> {
    check_aligned(items, masks)?;
    let mut pristine = Vec::new();
    for (it, m) in items.iter().zip(masks) {
        if it.size_class.is_none() {
            pristine.push(detection_score(m)?);
        }
    }
    if pristine.is_empty() {
        return Err(Error::Empty("pristine test images"));
    }
    classes
        .iter()
        .map(|&class| {
            let mut scores = pristine.clone();
            let mut labels = vec![0u8; pristine.len()];
            for (it, m) in items.iter().zip(masks) {
                if it.size_class == Some(class) {
                    scores.push(detection_score(m)?);
                    labels.push(1);
                }
            }
            if labels.len() == pristine.len() {
                return Err(Error::InvalidArgument(format!(
                    "no forged test images of class {class}"
                )));
            }
            evaluated(Task::Detection, class, strategy, &scores, &labels)
        })
        .collect()
}

/// Pixel-level ROC per size class over the forged images of that class.
/// Forged pixels are positive; pixels no patch covers are left out.
pub fn localization_eval(
    items: &[TestItem],
    masks: &[SoftMask],
    classes: &[SizeClass],
    strategy: Stage,
) -> Result<Vec<Evaluated>> {
    check_aligned(items, masks)?;
    classes
        .iter()
        .map(|&class| {
            let (mut scores, mut labels) = (Vec::new(), Vec::new());
            for (it, m) in items.iter().zip(masks) {
                if it.size_class != Some(class) {
                    continue;
                }
                for (i, (&s, &truth)) in m.scores.iter().zip(&it.mask.labels).enumerate() {
                    if m.covered(i) {
                        scores.push(s);
                        labels.push(u8::from(truth == 0));
                    }
                }
            }
            if scores.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no forged test images of class {class}"
                )));
            }
            evaluated(Task::Localization, class, strategy, &scores, &labels)
        })
        .collect()
}

/// Header of the machine-readable report.
pub const REPORT_HEADER: &str = "task\tsize\tstrategy\tauc\tn_pos\tn_neg";

/// Tab-separated records, one per report.
pub fn reports_to_tsv(reports: &[AucReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.task.as_str(),
            r.size_class,
            r.strategy,
            r.auc,
            r.n_pos,
            r.n_neg
        );
    }
    out
}

pub fn reports_from_tsv(text: &str, origin: &Path) -> Result<Vec<AucReport>> {
    let bad = |line: usize, why: String| Error::format(origin, format!("line {line}: {why}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == REPORT_HEADER => {}
        _ => return Err(bad(1, "missing report header".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(i + 1, format!("expected 6 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|e| bad(i + 1, e.to_string()));
            Ok(AucReport {
                task: f[0].parse().map_err(|e: Error| bad(i + 1, e.to_string()))?,
                size_class: f[1].parse().map_err(|e: Error| bad(i + 1, e.to_string()))?,
                strategy: f[2].parse().map_err(|e: Error| bad(i + 1, e.to_string()))?,
                auc: f[3]
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| bad(i + 1, e.to_string()))?,
                n_pos: num(f[4])?,
                n_neg: num(f[5])?,
            })
        })
        .collect()
}

/// Aligned table for one task: a row per size class, a column per
/// strategy, and a difference column when both strategies are present.
pub fn render_table(reports: &[AucReport], task: Task) -> String {
    let rows: Vec<&AucReport> = reports.iter().filter(|r| r.task == task).collect();
    let mut strategies: Vec<Stage> = rows.iter().map(|r| r.strategy).collect();
    strategies.sort();
    strategies.dedup();
    let mut classes: Vec<SizeClass> = rows.iter().map(|r| r.size_class).collect();
    classes.sort();
    classes.dedup();
    let both = strategies.len() == 2;

    let mut out = format!("{}\n", task.title());
    let _ = write!(out, "{:<8}", "Size");
    for s in &strategies {
        let _ = write!(out, "  {:>13}", format!("({})", s.label()));
    }
    if both {
        let _ = write!(out, "  {:>10}", "Difference");
    }
    let _ = write!(out, "  {:>8}  {:>8}", "n_pos", "n_neg");
    out.push('\n');
    for c in classes {
        let name = c.as_str();
        let _ = write!(
            out,
            "{:<8}",
            format!("{}{}", name[..1].to_uppercase(), &name[1..])
        );
        let find = |s: Stage| rows.iter().find(|r| r.size_class == c && r.strategy == s);
        for &s in &strategies {
            match find(s) {
                Some(r) => {
                    let _ = write!(out, "  {:>13.3}", r.auc);
                }
                None => {
                    let _ = write!(out, "  {:>13}", "-");
                }
            }
        }
        if both {
            match (find(Stage::Plain), find(Stage::Gan)) {
                (Some(p), Some(g)) => {
                    let _ = write!(out, "  {:>+10.3}", g.auc - p.auc);
                }
                _ => {
                    let _ = write!(out, "  {:>10}", "-");
                }
            }
        }
        let counts = strategies
            .iter()
            .find_map(|&s| find(s))
            .map(|r| (r.n_pos, r.n_neg))
            .unwrap_or((0, 0));
        let _ = write!(out, "  {:>8}  {:>8}", counts.0, counts.1);
        out.push('\n');
    }
    out
}

/// Write `<task>_<size>_<strategy>.roc` for each curve.
pub fn write_curves(dir: &Path, results: &[Evaluated]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in results {
        let p = dir.join(format!(
            "{}_{}_{}.roc",
            r.report.task.as_str(),
            r.report.size_class,
            r.report.strategy
        ));
        fs::write(&p, r.curve.to_text()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{BinaryMask, SatImage};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LOW: Orientation = Orientation::LowerIsPositive;

    #[test]
    fn perfect_and_inverted() {
        let s = [0.1, 0.2, 0.8, 0.9];
        let y = [1, 1, 0, 0];
        let c = roc(&s, &y, LOW).unwrap();
        assert!(c
            .fpr
            .iter()
            .zip(&c.tpr)
            .any(|(&x, &t)| x == 0.0 && t == 1.0));
        assert_eq!(auc(&c), 1.0);
        assert_eq!(auc(&roc(&s, &[0, 0, 1, 1], LOW).unwrap()), 0.0);
        assert_eq!(
            auc(&roc(&s, &y, Orientation::HigherIsPositive).unwrap()),
            0.0
        );
    }

    #[test]
    fn constant_scores_give_two_points() {
        let c = roc(&[3.0; 6], &[1, 0, 1, 0, 0, 1], LOW).unwrap();
        assert_eq!(c.fpr, vec![0.0, 1.0]);
        assert_eq!(c.tpr, vec![0.0, 1.0]);
        assert_eq!(auc(&c), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(roc(&[1.0, 2.0], &[1, 1], LOW).is_err());
        assert!(roc(&[1.0, 2.0], &[0, 0], LOW).is_err());
        assert!(roc(&[1.0], &[0, 1], LOW).is_err());
        assert!(roc(&[f64::NAN, 1.0], &[0, 1], LOW).is_err());
        assert!(roc(&[0.0, 1.0], &[0, 2], LOW).is_err());
    }

    #[test]
    fn random_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        let y: Vec<u8> = (0..10_000).map(|_| rng.gen_range(0..2)).collect();
        let c = roc(&s, &y, LOW).unwrap();
        assert!((auc(&c) - 0.5).abs() < 0.02);
        // Near the diagonal everywhere.
        let dev = c
            .fpr
            .iter()
            .zip(&c.tpr)
            .map(|(x, t)| (x - t).abs())
            .fold(0.0, f64::max);
        assert!(dev < 0.05, "{dev}");
    }

    #[test]
    fn ties_match_half_credit() {
        let s = [1.0, 1.0, 2.0, 2.0, 2.0, 3.0];
        let y = [1, 0, 1, 0, 0, 1];
        let a = auc(&roc(&s, &y, LOW).unwrap());
        assert!((a - pair_count_auc(&s, &y, LOW).unwrap()).abs() < 1e-15);
        // 3 positives x 3 negatives: (1.0 vs 1.0) half, (1.0 vs 2,2) 2, (2.0 vs 2,2) 1, (2.0 vs 1.0) 0, 3.0 none.
        assert!((a - 3.5 / 9.0).abs() < 1e-15);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..300).prop_flat_map(|n| {
            (
                prop::collection::vec((0i32..40).prop_map(|v| f64::from(v) * 0.25 - 3.0), n),
                prop::collection::vec(0u8..2, n),
            )
                .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
        })
    }

    proptest! {
        #[test]
        fn auc_equals_pair_counting((s, y) in instance()) {
            for o in [Orientation::LowerIsPositive, Orientation::HigherIsPositive] {
                let a = auc(&roc(&s, &y, o).unwrap());
                prop_assert!((a - pair_count_auc(&s, &y, o).unwrap()).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn curve_is_monotone((s, y) in instance()) {
            let c = roc(&s, &y, LOW).unwrap();
            prop_assert_eq!((c.fpr[0], c.tpr[0]), (0.0, 0.0));
            prop_assert_eq!((*c.fpr.last().unwrap(), *c.tpr.last().unwrap()), (1.0, 1.0));
            for k in 1..c.len() {
                prop_assert!(c.fpr[k] >= c.fpr[k - 1] && c.tpr[k] >= c.tpr[k - 1]);
            }
        }

        #[test]
        fn monotone_transform_invariant((s, y) in instance()) {
            let a = auc(&roc(&s, &y, LOW).unwrap());
            let t: Vec<f64> = s.iter().map(|v| (0.7 * v).exp() * 3.0 + 1.0).collect();
            prop_assert!((a - auc(&roc(&t, &y, LOW).unwrap())).abs() < 1e-12);
            let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
            let b = auc(&roc(&flipped, &y, Orientation::HigherIsPositive).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariant((s, y) in instance(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let ps: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            let py: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
            prop_assert_eq!(roc(&s, &y, LOW).unwrap(), roc(&ps, &py, LOW).unwrap());
        }
    }

    fn soft(
        h: usize,
        w: usize,
        scores: Vec<f64>,
        coverage: Vec<u32>,
        patch_scores: Vec<f64>,
    ) -> SoftMask {
        SoftMask {
            height: h,
            width: w,
            scores,
            coverage,
            patch_scores,
        }
    }

    fn item(id: &str, class: Option<SizeClass>, mask: BinaryMask) -> TestItem {
        TestItem {
            id: id.into(),
            size_class: class,
            image: SatImage::filled(mask.height, mask.width, [0; 3]),
            mask,
        }
    }

    #[test]
    fn ground_truth_as_score() {
        let mut m = BinaryMask::pristine(4, 4);
        for i in [5, 6, 9, 10] {
            m.labels[i] = 0;
        }
        let truth: Vec<f64> = m.labels.iter().map(|&l| f64::from(l)).collect();
        let items = vec![item("f", Some(SizeClass::Large), m.clone())];
        let cov = vec![1; 16];
        let good = vec![soft(4, 4, truth.clone(), cov.clone(), vec![0.0])];
        let r = localization_eval(&items, &good, &[SizeClass::Large], Stage::Gan).unwrap();
        assert_eq!(r[0].report.auc, 1.0);
        assert_eq!((r[0].report.n_pos, r[0].report.n_neg), (4, 12));
        let inverted = vec![soft(
            4,
            4,
            truth.iter().map(|v| 1.0 - v).collect(),
            cov,
            vec![0.0],
        )];
        let r = localization_eval(&items, &inverted, &[SizeClass::Large], Stage::Gan).unwrap();
        assert_eq!(r[0].report.auc, 0.0);
    }

    #[test]
    fn uncovered_pixels_excluded() {
        let mut m = BinaryMask::pristine(2, 2);
        m.labels[0] = 0;
        let items = vec![item("f", Some(SizeClass::Small), m)];
        // The uncovered pixel would invert the ranking if counted.
        let masks = vec![soft(
            2,
            2,
            vec![0.0, 1.0, 1.0, -5.0],
            vec![1, 1, 1, 0],
            vec![0.0],
        )];
        let r = localization_eval(&items, &masks, &[SizeClass::Small], Stage::Plain).unwrap();
        assert_eq!(r[0].report.auc, 1.0);
        assert_eq!(r[0].report.n_neg, 2);
    }

    #[test]
    fn detection_uses_minimum_patch_score() {
        let p = BinaryMask::pristine(2, 2);
        let items = vec![
            item("p0", None, p.clone()),
            item("p1", None, p.clone()),
            item("s0", Some(SizeClass::Small), p.clone()),
            item("l0", Some(SizeClass::Large), p.clone()),
        ];
        let m = |ps: Vec<f64>| soft(2, 2, vec![0.0; 4], vec![1; 4], ps);
        let masks = vec![
            m(vec![0.5, 0.3]),
            m(vec![0.4, 0.9]),
            m(vec![0.35, 1.0]),
            m(vec![2.0, -1.0]),
        ];
        let r = detection_eval(
            &items,
            &masks,
            &[SizeClass::Small, SizeClass::Large],
            Stage::Plain,
        )
        .unwrap();
        assert_eq!(r.len(), 2);
        // small: 0.35 vs pristine {0.3, 0.4} -> one of two pairs.
        assert_eq!(r[0].report.auc, 0.5);
        assert_eq!(r[1].report.auc, 1.0);
        assert_eq!((r[1].report.n_pos, r[1].report.n_neg), (1, 2));
        assert!(detection_eval(&items, &masks, &[SizeClass::Medium], Stage::Plain).is_err());
        assert!(
            detection_eval(&items[2..], &masks[2..], &[SizeClass::Small], Stage::Plain).is_err()
        );
        assert!(detection_eval(&items, &masks[1..], &[SizeClass::Small], Stage::Plain).is_err());
    }

    #[test]
    fn mismatched_mask_dims_rejected() {
        let items = vec![item(
            "f",
            Some(SizeClass::Small),
            BinaryMask::pristine(3, 3),
        )];
        let masks = vec![soft(2, 2, vec![0.0; 4], vec![1; 4], vec![0.0])];
        assert!(localization_eval(&items, &masks, &[SizeClass::Small], Stage::Gan).is_err());
    }

    #[test]
    fn report_round_trip_and_table() {
        let mut reports = Vec::new();
        for (k, class) in SizeClass::ALL.into_iter().enumerate() {
            for (j, strategy) in [Stage::Plain, Stage::Gan].into_iter().enumerate() {
                let auc = 0.7 + 0.1 * k as f64 + 0.01 * j as f64;
                reports.push(AucReport {
                    task: Task::Detection,
                    size_class: class,
                    strategy,
                    auc,
                    n_pos: 5,
                    n_neg: 5,
                });
            }
        }
        let text = reports_to_tsv(&reports);
        assert_eq!(reports_from_tsv(&text, Path::new("r")).unwrap(), reports);
        assert!(reports_from_tsv("bad\n", Path::new("r")).is_err());
        let table = render_table(&reports, Task::Detection);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2 + 3);
        assert!(lines[1].contains("(Without GAN)") && lines[1].contains("Difference"));
        assert!(
            lines[2].starts_with("Small")
                && lines[2].contains("0.700")
                && lines[2].contains("+0.010")
        );
        assert!(lines[4].starts_with("Large"));
    }

    #[test]
    fn curve_dump() {
        let dir = tempfile::tempdir().unwrap();
        let c = roc(&[0.0, 1.0], &[1, 0], LOW).unwrap();
        let report = AucReport {
            task: Task::Detection,
            size_class: SizeClass::Small,
            strategy: Stage::Gan,
            auc: 1.0,
            n_pos: 1,
            n_neg: 1,
        };
        write_curves(dir.path(), &[Evaluated { report, curve: c }]).unwrap();
        let text = fs::read_to_string(dir.path().join("detection_small_gan.roc")).unwrap();
        assert_eq!(
            text.lines().skip(1).collect::<Vec<_>>(),
            vec!["0\t0", "0\t1", "1\t1"]
        );
    }
}
