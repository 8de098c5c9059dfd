//! Detection and localization metrics.
//!
//! Wall distances are signed, in mm, positive where the automatic box
//! extends beyond the reference (oversegmentation).

use std::fmt::Write as _;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::fusion::ProfileRow;
use crate::slicing::Plane;
use crate::volume::BBox3D;

/// Wall order used by [`wall_distances`].
pub const WALL_NAMES: [&str; 6] = ["x_lo", "x_hi", "y_lo", "y_hi", "z_lo", "z_hi"];

/// Harmonic mean of precision and recall. `f1_score(0, 0, 0)` is 1.
pub fn f1_score(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp == 0 {
        return if fp == 0 && fn_ == 0 { 1.0 } else { 0.0 };
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Confusion counts of a binary detector.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DetectionReport {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
}

impl DetectionReport {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.true_positives += 1,
            (true, false) => self.false_positives += 1,
            (false, true) => self.false_negatives += 1,
            (false, false) => self.true_negatives += 1,
        }
    }

    pub fn merge(&mut self, other: &DetectionReport) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
        self.true_negatives += other.true_negatives;
    }

    /// `None` when there are no positive predictions.
    pub fn precision(&self) -> Option<f64> {
        let d = self.true_positives + self.false_positives;
        (d > 0).then(|| self.true_positives as f64 / d as f64)
    }

    /// `None` when there are no positive samples.
    pub fn recall(&self) -> Option<f64> {
        let d = self.true_positives + self.false_negatives;
        (d > 0).then(|| self.true_positives as f64 / d as f64)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.true_positives, self.false_positives, self.false_negatives)
    }
}

fn check_spacing(auto: &BBox3D, reference: &BBox3D) -> Result<()> {
    if auto.spacing != reference.spacing {
        return Err(Error::invalid(format!(
            "spacing mismatch for {}: {:?} vs {:?}",
            reference.name, auto.spacing, reference.spacing
        )));
    }
    Ok(())
}

/// Signed wall distances in [`WALL_NAMES`] order.
pub fn wall_distances(auto: &BBox3D, reference: &BBox3D) -> Result<[f64; 6]> {
    check_spacing(auto, reference)?;
    let mut out = [0.0; 6];
    for d in 0..3 {
        let sp = reference.spacing[d];
        out[2 * d] = (reference.lo[d] as f64 - auto.lo[d] as f64) * sp;
        out[2 * d + 1] = (auto.hi[d] as f64 - reference.hi[d] as f64) * sp;
    }
    Ok(out)
}

/// Euclidean distance between box centers, in mm.
pub fn centroid_distance(auto: &BBox3D, reference: &BBox3D) -> Result<f64> {
    check_spacing(auto, reference)?;
    let (a, r) = (auto.center(), reference.center());
    Ok((0..3)
        .map(|d| ((a[d] - r[d]) * reference.spacing[d]).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Localization errors of one automatic box against its reference.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationReport {
    pub structure: String,
    pub walls_mm: [f64; 6],
    pub centroid_mm: f64,
}

impl LocalizationReport {
    pub fn new(auto: &BBox3D, reference: &BBox3D) -> Result<Self> {
        Ok(LocalizationReport {
            structure: reference.name.clone(),
            walls_mm: wall_distances(auto, reference)?,
            centroid_mm: centroid_distance(auto, reference)?,
        })
    }

    pub fn mean_abs_wall_mm(&self) -> f64 {
        self.walls_mm.iter().map(|w| w.abs()).sum::<f64>() / 6.0
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-structure summary over scans: absolute wall distances of all six
/// walls of all scans are pooled.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    pub structure: String,
    pub scans: usize,
    pub wall_mean_mm: f64,
    pub wall_std_mm: f64,
    pub centroid_mean_mm: f64,
    pub centroid_std_mm: f64,
}

pub fn aggregate_report(reports: &[LocalizationReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("aggregate of zero reports"))?;
    let walls: Vec<f64> = reports.iter().flat_map(|r| r.walls_mm.map(f64::abs)).collect();
    let centroids: Vec<f64> = reports.iter().map(|r| r.centroid_mm).collect();
    let (wall_mean_mm, wall_std_mm) = mean_std(&walls);
    let (centroid_mean_mm, centroid_std_mm) = mean_std(&centroids);
    Ok(AggregateReport {
        structure: first.structure.clone(),
        scans: reports.len(),
        wall_mean_mm,
        wall_std_mm,
        centroid_mean_mm,
        centroid_std_mm,
    })
}

/// Groups reports by structure (first-appearance order) and aggregates each.
pub fn aggregate_by_structure(reports: &[LocalizationReport]) -> Vec<AggregateReport> {
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        if !names.contains(&r.structure.as_str()) {
            names.push(&r.structure);
        }
    }
    names
        .into_iter()
        .map(|n| {
            let group: Vec<_> = reports.iter().filter(|r| r.structure == n).cloned().collect();
            aggregate_report(&group).expect("group is non-empty")
        })
        .collect()
}

/// Outcome of McNemar's test on paired classifier correctness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McNemar {
    /// Pairs where only the first classifier is correct.
    pub b: u64,
    /// Pairs where only the second classifier is correct.
    pub c: u64,
    pub statistic: f64,
    pub p_value: f64,
}

/// Continuity-corrected McNemar test from discordant counts.
pub fn mcnemar_counts(b: u64, c: u64) -> McNemar {
    if b + c == 0 {
        return McNemar {
            b,
            c,
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
    let statistic = diff * diff / (b + c) as f64;
    let chi2 = ChiSquared::new(1.0).expect("one degree of freedom");
    McNemar {
        b,
        c,
        statistic,
        p_value: chi2.sf(statistic).clamp(0.0, 1.0),
    }
}

pub fn mcnemar(correct_a: &[bool], correct_b: &[bool]) -> Result<McNemar> {
    if correct_a.len() != correct_b.len() {
        return Err(Error::invalid(format!(
            "paired sequences differ in length: {} vs {}",
            correct_a.len(),
            correct_b.len()
        )));
    }
    let b = correct_a.iter().zip(correct_b).filter(|(&a, &b)| a && !b).count();
    let c = correct_a.iter().zip(correct_b).filter(|(&a, &b)| !a && b).count();
    Ok(mcnemar_counts(b as u64, c as u64))
}

type RowKey = (usize, usize, String);

fn keyed(rows: &[ProfileRow], what: &str) -> Result<std::collections::BTreeMap<RowKey, f64>> {
    let mut map = std::collections::BTreeMap::new();
    for r in rows {
        let key = (r.plane as usize, r.slice_index, r.structure.clone());
        if map.insert(key, r.probability).is_some() {
            return Err(Error::invalid(format!(
                "{what}: duplicate row {},{},{}",
                r.plane, r.slice_index, r.structure
            )));
        }
    }
    Ok(map)
}

fn show_key(k: &RowKey) -> String {
    format!("{},{},{}", Plane::ALL[k.0], k.1, k.2)
}

/// McNemar's test on two prediction profiles against a label profile, all
/// keyed by `(plane, slice_index, structure)`. A prediction is correct when
/// thresholding it at `threshold` agrees with the label (also thresholded).
pub fn compare_profiles(a: &[ProfileRow], b: &[ProfileRow], labels: &[ProfileRow], threshold: f64) -> Result<McNemar> {
    let (a, b, labels) = (keyed(a, "a")?, keyed(b, "b")?, keyed(labels, "labels")?);
    for (name, other) in [("a", &a), ("b", &b)] {
        let first = labels
            .keys()
            .filter(|k| !other.contains_key(*k))
            .chain(other.keys().filter(|k| !labels.contains_key(*k)))
            .min();
        if let Some(k) = first {
            return Err(Error::invalid(format!(
                "{name} and labels diverge at key {}",
                show_key(k)
            )));
        }
    }
    if labels.is_empty() {
        return Err(Error::invalid("no shared (plane, slice_index, structure) keys"));
    }
    let correct = |m: &std::collections::BTreeMap<RowKey, f64>| -> Vec<bool> {
        labels
            .iter()
            .map(|(k, &l)| (m[k] >= threshold) == (l >= threshold))
            .collect()
    };
    mcnemar(&correct(&a), &correct(&b))
}

/// Aligned plain-text report: one line per scan/structure, failure lines for
/// structures the prediction lacks, then per-structure aggregates.
pub fn format_report(reports: &[LocalizationReport], failures: &[String]) -> String {
    let mut out = String::new();
    let width = reports
        .iter()
        .map(|r| r.structure.len())
        .chain(failures.iter().map(String::len))
        .max()
        .unwrap_or(0)
        .max("structure".len());
    let _ = write!(out, "{:<width$}", "structure");
    for w in WALL_NAMES {
        let _ = write!(out, " {w:>8}");
    }
    let _ = writeln!(out, " {:>10} {:>10}", "mean_wall", "centroid");
    for r in reports {
        let _ = write!(out, "{:<width$}", r.structure);
        for w in r.walls_mm {
            let _ = write!(out, " {w:>8.2}");
        }
        let _ = writeln!(out, " {:>10.2} {:>10.2}", r.mean_abs_wall_mm(), r.centroid_mm);
    }
    for f in failures {
        let _ = writeln!(out, "{f:<width$} FAILED: not localized");
    }
    if !reports.is_empty() {
        let _ = writeln!(out);
        for a in aggregate_by_structure(reports) {
            let _ = writeln!(
                out,
                "{:<width$} wall {:.2} ± {:.2} mm, centroid {:.2} ± {:.2} mm (n={})",
                a.structure, a.wall_mean_mm, a.wall_std_mm, a.centroid_mean_mm, a.centroid_std_mm, a.scans
            );
        }
    }
    out
}

/// `structure,wall_mean_mm,wall_std_mm,centroid_mean_mm,centroid_std_mm`.
pub fn aggregates_to_csv(aggregates: &[AggregateReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(["structure", "wall_mean_mm", "wall_std_mm", "centroid_mean_mm", "centroid_std_mm"])
        .map_err(e)?;
    for a in aggregates {
        w.write_record([
            a.structure.clone(),
            format!("{:.6}", a.wall_mean_mm),
            format!("{:.6}", a.wall_std_mm),
            format!("{:.6}", a.centroid_mean_mm),
            format!("{:.6}", a.centroid_std_mm),
        ])
        .map_err(e)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bx(lo: [usize; 3], hi: [usize; 3], sp: [f64; 3]) -> BBox3D {
        BBox3D::new("b", lo, hi, sp).unwrap()
    }

    #[test]
    fn f1_examples() {
        assert_abs_diff_eq!(f1_score(3, 1, 1), 0.75, epsilon = 1e-12);
        assert_eq!(f1_score(0, 5, 0), 0.0);
        assert_eq!(f1_score(10, 0, 0), 1.0);
        assert_eq!(f1_score(0, 0, 0), 1.0);
        let mut r = DetectionReport::default();
        for (p, a) in [(true, true), (true, true), (true, true), (true, false), (false, true), (false, false)] {
            r.add(p, a);
        }
        assert_eq!(r.precision(), Some(0.75));
        assert_eq!(r.recall(), Some(0.75));
        assert_abs_diff_eq!(r.f1(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn wall_examples() {
        let sp = [1.5, 1.5, 2.0];
        let auto = bx([10, 0, 0], [20, 5, 5], sp);
        let reference = bx([12, 0, 0], [18, 5, 5], sp);
        let w = wall_distances(&auto, &reference).unwrap();
        assert_eq!(w, [3.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
        let under = bx([13, 0, 0], [17, 5, 5], sp);
        let w = wall_distances(&under, &reference).unwrap();
        assert_eq!(&w[..2], &[-1.5, -1.5]);
        assert_eq!(wall_distances(&reference, &reference).unwrap(), [0.0; 6]);
        assert!(wall_distances(&auto, &bx([12, 0, 0], [18, 5, 5], [1.0; 3])).is_err());
    }

    #[test]
    fn centroid_examples() {
        let sp = [1.5, 1.5, 2.0];
        let r = bx([10, 10, 10], [20, 20, 20], sp);
        assert_eq!(centroid_distance(&r, &r).unwrap(), 0.0);
        let shifted = bx([13, 10, 10], [23, 20, 20], sp);
        assert_abs_diff_eq!(centroid_distance(&shifted, &r).unwrap(), 4.5, epsilon = 1e-12);
        let z = bx([10, 10, 12], [20, 20, 22], sp);
        assert_abs_diff_eq!(centroid_distance(&z, &r).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn mcnemar_examples() {
        let m = mcnemar_counts(10, 2);
        assert_abs_diff_eq!(m.statistic, 49.0 / 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.p_value, 0.0433, epsilon = 1e-3);
        let m = mcnemar_counts(5, 5);
        assert_eq!((m.statistic, m.p_value), (0.0, 1.0));
        let same = [true, false, true];
        assert_eq!(mcnemar(&same, &same).unwrap().p_value, 1.0);
        assert!(mcnemar(&same, &same[..2]).is_err());
    }

    #[test]
    fn compare_fixture() {
        let row = |i: usize, p: f64| ProfileRow {
            plane: Plane::Axial,
            slice_index: i,
            structure: "s".into(),
            probability: p,
        };
        // Slices 0..10: only a correct; 10..12: only b correct; 12..20: both.
        let labels: Vec<_> = (0..20).map(|i| row(i, 1.0)).collect();
        let a: Vec<_> = (0..20).map(|i| row(i, if (10..12).contains(&i) { 0.2 } else { 0.9 })).collect();
        let b: Vec<_> = (0..20).map(|i| row(i, if i < 10 { 0.1 } else { 0.7 })).collect();
        let m = compare_profiles(&a, &b, &labels, 0.5).unwrap();
        assert_eq!((m.b, m.c), (10, 2));
        assert_abs_diff_eq!(m.p_value, 0.0433, epsilon = 1e-3);
        assert_eq!(compare_profiles(&a, &a, &labels, 0.5).unwrap().p_value, 1.0);
        let err = compare_profiles(&a[..19], &b, &labels, 0.5).unwrap_err();
        assert!(err.to_string().contains("axial,19,s"), "{err}");
        assert!(compare_profiles(&[], &[], &[], 0.5).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let r = |c: f64| LocalizationReport {
            structure: "s".into(),
            walls_mm: [1.0, -1.0, 2.0, -2.0, 0.0, 0.0],
            centroid_mm: c,
        };
        let one = aggregate_report(&[r(2.0)]).unwrap();
        assert_eq!((one.centroid_std_mm, one.centroid_mean_mm), (0.0, 2.0));
        assert_abs_diff_eq!(one.wall_mean_mm, 1.0, epsilon = 1e-12);
        let two = aggregate_report(&[r(2.0), r(4.0)]).unwrap();
        assert_eq!((two.centroid_mean_mm, two.centroid_std_mm), (3.0, 1.0));
        assert!(aggregate_report(&[]).is_err());
    }

    #[test]
    fn report_outputs() {
        let r = LocalizationReport::new(&bx([1, 1, 1], [4, 4, 4], [1.0; 3]), &bx([1, 1, 1], [4, 4, 4], [1.0; 3])).unwrap();
        let text = format_report(&[r.clone()], &["aorta".into()]);
        assert!(text.lines().any(|l| l.starts_with("aorta") && l.ends_with("FAILED: not localized")), "{text}");
        let csv = aggregates_to_csv(&aggregate_by_structure(&[r])).unwrap();
        assert_eq!(
            csv,
            "structure,wall_mean_mm,wall_std_mm,centroid_mean_mm,centroid_std_mm\nb,0.000000,0.000000,0.000000,0.000000\n"
        );
    }
}
