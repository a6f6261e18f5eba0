//! Detection-impact harness: runs error detectors over dirty tables and
//! scores their flags against ground-truth annotations with per-type
//! weighted precision/recall/F1.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::annotation::{numeric_prefix, AnnotationCollection, ErrorType};
use crate::table::{diff_tables, write_csv, CellRef, Table, TableError};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("unknown detector `{0}`")]
    UnknownDetector(String),
    #[error("detector config: {0}")]
    Config(String),
    #[error("flag references unknown cell {0}")]
    UnknownCell(CellRef),
    #[error("detector timed out after {0:?}")]
    TimedOut(Duration),
    #[error("detector exited with {status}: {stderr}")]
    Failed { status: i32, stderr: String },
    #[error("malformed flags file: {0}")]
    MalformedFlags(String),
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One flagged cell, with the detector's predicted error type when it emits
/// one.
#[derive(Debug, Clone, PartialEq)]
pub struct FlaggedCell {
    pub cell: CellRef,
    pub predicted_type: Option<ErrorType>,
}

/// A detector's output: a set of flagged cells validated against the table
/// it was run on. Duplicate flags collapse to the first occurrence.
#[derive(Debug, Clone)]
pub struct FlagSet {
    flags: Vec<FlaggedCell>,
}

impl FlagSet {
    pub fn new(flags: Vec<FlaggedCell>, table: &Table) -> Result<Self, DetectError> {
        let mut seen = HashSet::new();
        let mut validated = Vec::with_capacity(flags.len());
        for flag in flags {
            table
                .value(&flag.cell)
                .map_err(|_| DetectError::UnknownCell(flag.cell.clone()))?;
            if seen.insert(flag.cell.clone()) {
                validated.push(flag);
            }
        }
        Ok(FlagSet { flags: validated })
    }

    pub fn flags(&self) -> &[FlaggedCell] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }
}

/// The built-in detectors. They are deliberately simple stand-ins for real
/// detection systems, which run through the external adapter instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinDetector {
    /// Flags null cells and configured placeholder strings.
    Null,
    /// Flags cells failing a per-column regular expression.
    Pattern,
    /// Flags numeric cells whose |z| exceeds the threshold within their
    /// column.
    Outlier,
    /// Flags exactly the cells that differ from the clean table.
    Oracle,
}

impl BuiltinDetector {
    pub fn parse(name: &str) -> Result<Self, DetectError> {
        match name {
            "null" => Ok(BuiltinDetector::Null),
            "pattern" => Ok(BuiltinDetector::Pattern),
            "outlier" => Ok(BuiltinDetector::Outlier),
            "oracle" => Ok(BuiltinDetector::Oracle),
            other => Err(DetectError::UnknownDetector(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    /// Strings the null detector treats as missing-value manifestations.
    pub placeholders: HashSet<String>,
    /// Column name to regular expression the whole cell must match.
    pub patterns: BTreeMap<String, String>,
    pub z_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            placeholders: ["N/A", "NULL", "9999-999999"]
                .into_iter()
                .map(str::to_owned)
                .collect(),
            patterns: BTreeMap::new(),
            z_threshold: 3.0,
        }
    }
}

pub fn run_builtin_detector(
    which: BuiltinDetector,
    dirty: &Table,
    config: &DetectorConfig,
    clean: Option<&Table>,
) -> Result<FlagSet, DetectError> {
    let mut flags = Vec::new();
    match which {
        BuiltinDetector::Null => {
            for row in dirty.rows() {
                for (col, value) in row.cells().iter().enumerate() {
                    if value.is_null() || config.placeholders.contains(value.text()) {
                        flags.push(FlaggedCell {
                            cell: CellRef::new(row.row_id(), dirty.schema()[col].clone()),
                            predicted_type: Some(ErrorType::MissingValue),
                        });
                    }
                }
            }
        }
        BuiltinDetector::Pattern => {
            if config.patterns.is_empty() {
                return Err(DetectError::Config(
                    "pattern detector needs at least one per-column regex".into(),
                ));
            }
            for (column, pattern) in &config.patterns {
                let col = dirty
                    .column_index(column)
                    .ok_or_else(|| DetectError::Config(format!("unknown column `{column}`")))?;
                let regex = regex::Regex::new(&format!("^(?:{pattern})$"))
                    .map_err(|e| DetectError::Config(e.to_string()))?;
                for row in dirty.rows() {
                    if !regex.is_match(row.cells()[col].text()) {
                        flags.push(FlaggedCell {
                            cell: CellRef::new(row.row_id(), column.clone()),
                            predicted_type: Some(ErrorType::PatternViolation),
                        });
                    }
                }
            }
        }
        BuiltinDetector::Outlier => {
            for (col, column) in dirty.schema().iter().enumerate() {
                let values: Vec<(u64, f64)> = dirty
                    .rows()
                    .iter()
                    .filter_map(|r| {
                        numeric_prefix(r.cells()[col].text()).map(|v| (r.row_id(), v))
                    })
                    .collect();
                if values.len() < 2 {
                    continue;
                }
                let n = values.len() as f64;
                let mean = values.iter().map(|(_, v)| v).sum::<f64>() / n;
                let std =
                    (values.iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if std == 0.0 {
                    continue;
                }
                for (row_id, value) in values {
                    if ((value - mean) / std).abs() > config.z_threshold {
                        flags.push(FlaggedCell {
                            cell: CellRef::new(row_id, column.clone()),
                            predicted_type: Some(ErrorType::Outlier),
                        });
                    }
                }
            }
        }
        BuiltinDetector::Oracle => {
            let clean = clean.ok_or_else(|| {
                DetectError::Config("oracle detector requires the clean table".into())
            })?;
            for delta in diff_tables(clean, dirty)? {
                flags.push(FlaggedCell {
                    cell: delta.cell,
                    predicted_type: None,
                });
            }
        }
    }
    FlagSet::new(flags, dirty)
}

/// An external detector invoked as a subprocess: the dirty table is written
/// as CSV into the working directory, the command receives the CSV path as
/// its final argument, and the detector must leave a `flags.csv` file
/// (header `row_id,column[,predicted_type]`) behind and exit 0.
#[derive(Debug, Clone)]
pub struct ExternalDetector {
    pub command: Vec<String>,
    pub timeout: Duration,
}

pub fn run_external_detector(
    detector: &ExternalDetector,
    dirty: &Table,
    workdir: &Path,
) -> Result<FlagSet, DetectError> {
    if detector.command.is_empty() {
        return Err(DetectError::Config("external detector command is empty".into()));
    }
    std::fs::create_dir_all(workdir)?;
    let input_path = workdir.join("input.csv");
    write_csv(dirty, &input_path)?;

    let mut child = Command::new(&detector.command[0])
        .args(&detector.command[1..])
        .arg(&input_path)
        .current_dir(workdir)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .stdin(Stdio::null())
        .spawn()
        .map_err(|e| DetectError::Config(format!("cannot spawn detector: {e}")))?;

    let started = Instant::now();
    let status = loop {
        match child.try_wait()? {
            Some(status) => break status,
            None => {
                if started.elapsed() > detector.timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(DetectError::TimedOut(detector.timeout));
                }
                std::thread::sleep(Duration::from_millis(10));
            }
        }
    };
    let output = child.wait_with_output()?;
    if !status.success() {
        return Err(DetectError::Failed {
            status: status.code().unwrap_or(-1),
            stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
        });
    }

    let flags_path = workdir.join("flags.csv");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(&flags_path)
        .map_err(|e| DetectError::MalformedFlags(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| DetectError::MalformedFlags(e.to_string()))?
        .clone();
    if headers.get(0) != Some("row_id") || headers.get(1) != Some("column") {
        return Err(DetectError::MalformedFlags(
            "flags.csv must start with `row_id,column`".into(),
        ));
    }
    let mut flags = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DetectError::MalformedFlags(e.to_string()))?;
        let row_id: u64 = record
            .get(0)
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| DetectError::MalformedFlags(format!("bad row_id in {record:?}")))?;
        let column = record
            .get(1)
            .ok_or_else(|| DetectError::MalformedFlags(format!("missing column in {record:?}")))?
            .to_owned();
        let predicted_type = match record.get(2).filter(|f| !f.is_empty()) {
            Some(name) => Some(
                ErrorType::parse(name).map_err(DetectError::MalformedFlags)?,
            ),
            None => None,
        };
        flags.push(FlaggedCell {
            cell: CellRef::new(row_id, column),
            predicted_type,
        });
    }
    FlagSet::new(flags, dirty)
}

/// How false positives are charged to error types when the detector's flags
/// carry no type predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FpApportionment {
    /// Split false positives across types in proportion to each type's
    /// ground-truth weight.
    #[default]
    ByWeight,
    /// Charge every false positive to every type.
    ChargeAll,
}

#[derive(Debug, Clone, Serialize)]
pub struct TypeMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weight: f64,
    pub support: usize,
    pub true_positives: usize,
    pub false_positives: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores for one detector run: per-type metrics over types with support,
/// their weighted combination, and plain cell-level metrics.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionReport {
    pub per_type: BTreeMap<ErrorType, TypeMetrics>,
    pub weighted: Prf,
    pub overall: Prf,
    pub total_cells: usize,
    pub total_errors: usize,
    pub flag_count: usize,
    /// Set when the detector flagged nothing; precision is defined as 0.
    pub zero_flags: bool,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores a flag set against ground truth.
///
/// Recall per type counts flagged cells whose ground-truth type matches,
/// regardless of the detector's predicted type. Precision per type uses the
/// predicted types when every flag carries one; otherwise false positives
/// are apportioned according to `apportionment`. Weights are the relative
/// ground-truth frequencies of the types with support.
pub fn score_detection(
    flags: &FlagSet,
    ground_truth: &AnnotationCollection,
    total_cells: usize,
    apportionment: FpApportionment,
) -> Result<DetectionReport, DetectError> {
    if ground_truth.is_empty() {
        return Err(DetectError::EmptyGroundTruth);
    }
    let truth: HashMap<&CellRef, ErrorType> = ground_truth
        .iter()
        .map(|a| (&a.cell, a.error_type))
        .collect();
    let total_errors = truth.len();

    let mut tp_by_type = [0usize; 4];
    let mut predicted_fp_by_type = [0usize; 4];
    let mut false_flags = 0usize;
    for flag in flags.flags() {
        match truth.get(&flag.cell) {
            Some(ty) => tp_by_type[ty.index()] += 1,
            None => {
                false_flags += 1;
                if let Some(ty) = flag.predicted_type {
                    predicted_fp_by_type[ty.index()] += 1;
                }
            }
        }
    }
    let tp_total: usize = tp_by_type.iter().sum();

    let mut support = [0usize; 4];
    for a in ground_truth.iter() {
        support[a.error_type.index()] += 1;
    }

    let typed = !flags.is_empty() && flags.flags().iter().all(|f| f.predicted_type.is_some());

    let mut per_type = BTreeMap::new();
    let mut weighted = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for ty in ErrorType::ALL {
        let idx = ty.index();
        if support[idx] == 0 {
            continue;
        }
        let weight = support[idx] as f64 / total_errors as f64;
        let tp = tp_by_type[idx] as f64;
        let fp = if typed {
            predicted_fp_by_type[idx] as f64
        } else {
            match apportionment {
                FpApportionment::ByWeight => weight * false_flags as f64,
                FpApportionment::ChargeAll => false_flags as f64,
            }
        };
        let recall = tp / support[idx] as f64;
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let f1 = harmonic(precision, recall);
        weighted.precision += weight * precision;
        weighted.recall += weight * recall;
        weighted.f1 += weight * f1;
        per_type.insert(
            ty,
            TypeMetrics {
                precision,
                recall,
                f1,
                weight,
                support: support[idx],
                true_positives: tp_by_type[idx],
                false_positives: fp,
            },
        );
    }

    let overall_precision = if flags.is_empty() {
        0.0
    } else {
        tp_total as f64 / flags.len() as f64
    };
    let overall_recall = tp_total as f64 / total_errors as f64;
    let overall = Prf {
        precision: overall_precision,
        recall: overall_recall,
        f1: harmonic(overall_precision, overall_recall),
    };

    Ok(DetectionReport {
        per_type,
        weighted,
        overall,
        total_cells,
        total_errors,
        flag_count: flags.len(),
        zero_flags: flags.is_empty(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{ErrorAnnotation, TypingRules};
    use crate::table::CellValue;

    fn cell(text: &str) -> CellValue {
        CellValue::new(text)
    }

    fn annotation(row: u64, column: &str, ty: ErrorType) -> ErrorAnnotation {
        ErrorAnnotation::new(
            CellRef::new(row, column),
            ty,
            cell(&format!("bad {row}")),
            cell(&format!("good {row}")),
            None,
        )
        .unwrap()
    }

    fn flagset(table: &Table, cells: &[(u64, &str, Option<ErrorType>)]) -> FlagSet {
        FlagSet::new(
            cells
                .iter()
                .map(|(row, col, ty)| FlaggedCell {
                    cell: CellRef::new(*row, *col),
                    predicted_type: *ty,
                })
                .collect(),
            table,
        )
        .unwrap()
    }

    fn simple_table(rows: usize) -> Table {
        let cells = (0..rows)
            .map(|i| vec![cell(&format!("good {}", i + 1)), cell(&format!("{}", 100 + i))])
            .collect();
        Table::from_rows("t", vec!["a".into(), "b".into()], cells).unwrap()
    }

    #[test]
    fn null_detector_counts_placeholders() {
        let table = Table::from_rows(
            "t",
            vec!["a".into()],
            vec![
                vec![cell("N/A")],
                vec![cell("x")],
                vec![cell("N/A")],
                vec![CellValue::null()],
            ],
        )
        .unwrap();
        let flags =
            run_builtin_detector(BuiltinDetector::Null, &table, &DetectorConfig::default(), None)
                .unwrap();
        assert_eq!(flags.len(), 3);
    }

    #[test]
    fn pattern_detector_needs_config() {
        let table = simple_table(2);
        let err = run_builtin_detector(
            BuiltinDetector::Pattern,
            &table,
            &DetectorConfig::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, DetectError::Config(_)));
    }

    #[test]
    fn pattern_detector_flags_regex_failures() {
        let table = Table::from_rows(
            "t",
            vec!["phone".into()],
            vec![
                vec![cell("212-555-0100")],
                vec![cell("not a phone")],
            ],
        )
        .unwrap();
        let mut config = DetectorConfig::default();
        config
            .patterns
            .insert("phone".into(), r"\d{3}-\d{3}-\d{4}".into());
        let flags =
            run_builtin_detector(BuiltinDetector::Pattern, &table, &config, None).unwrap();
        assert_eq!(flags.len(), 1);
        assert_eq!(flags.flags()[0].cell, CellRef::new(2, "phone"));
    }

    #[test]
    fn outlier_detector_flags_extreme_duration() {
        let mut rows: Vec<Vec<CellValue>> = (0..20)
            .map(|i| vec![cell(&format!("{} min", 100 + 4 * i))])
            .collect();
        rows.push(vec![cell("521 min")]);
        let table = Table::from_rows("t", vec!["duration".into()], rows).unwrap();
        let flags = run_builtin_detector(
            BuiltinDetector::Outlier,
            &table,
            &DetectorConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(flags.len(), 1);
        assert_eq!(flags.flags()[0].cell.row_id, 21);
    }

    #[test]
    fn oracle_detector_flags_exactly_the_diff() {
        let clean = simple_table(5);
        let dirty = clean
            .with_cell(&CellRef::new(2, "a"), cell("bad 2"))
            .unwrap()
            .with_cell(&CellRef::new(4, "b"), cell("999"))
            .unwrap();
        let flags = run_builtin_detector(
            BuiltinDetector::Oracle,
            &dirty,
            &DetectorConfig::default(),
            Some(&clean),
        )
        .unwrap();
        assert_eq!(flags.len(), 2);
    }

    #[test]
    fn oracle_scores_perfectly() {
        let clean = simple_table(6);
        let annotations = AnnotationCollection::new(
            "t",
            vec![
                annotation(1, "a", ErrorType::MissingValue),
                annotation(3, "a", ErrorType::PatternViolation),
                annotation(5, "a", ErrorType::Outlier),
            ],
        )
        .unwrap();
        let mut dirty = clean.clone();
        for a in annotations.iter() {
            dirty = dirty.with_cell(&a.cell, a.error_value.clone()).unwrap();
        }
        let flags = run_builtin_detector(
            BuiltinDetector::Oracle,
            &dirty,
            &DetectorConfig::default(),
            Some(&clean),
        )
        .unwrap();
        let report =
            score_detection(&flags, &annotations, dirty.cell_count(), FpApportionment::ByWeight)
                .unwrap();
        assert_eq!(report.weighted.precision, 1.0);
        assert_eq!(report.weighted.recall, 1.0);
        assert_eq!(report.weighted.f1, 1.0);
        assert_eq!(report.overall.f1, 1.0);
    }

    #[test]
    fn empty_flags_score_zero_with_marker() {
        let table = simple_table(4);
        let annotations =
            AnnotationCollection::new("t", vec![annotation(1, "a", ErrorType::Outlier)]).unwrap();
        let flags = flagset(&table, &[]);
        let report =
            score_detection(&flags, &annotations, table.cell_count(), FpApportionment::ByWeight)
                .unwrap();
        assert!(report.zero_flags);
        assert_eq!(report.weighted.recall, 0.0);
        assert_eq!(report.overall.precision, 0.0);
    }

    #[test]
    fn weighted_recall_hand_case() {
        // 10 errors: 6 missing, 4 pattern. Detector finds 3 missing and all
        // 4 pattern, no false flags. R_w = 0.6*0.5 + 0.4*1.0 = 0.70.
        let table = simple_table(10);
        let mut annotations = Vec::new();
        for row in 1..=6 {
            annotations.push(annotation(row, "a", ErrorType::MissingValue));
        }
        for row in 7..=10 {
            annotations.push(annotation(row, "a", ErrorType::PatternViolation));
        }
        let ground_truth = AnnotationCollection::new("t", annotations).unwrap();
        let flags = flagset(
            &table,
            &[
                (1, "a", Some(ErrorType::MissingValue)),
                (2, "a", Some(ErrorType::MissingValue)),
                (3, "a", Some(ErrorType::MissingValue)),
                (7, "a", Some(ErrorType::PatternViolation)),
                (8, "a", Some(ErrorType::PatternViolation)),
                (9, "a", Some(ErrorType::PatternViolation)),
                (10, "a", Some(ErrorType::PatternViolation)),
            ],
        );
        let report =
            score_detection(&flags, &ground_truth, table.cell_count(), FpApportionment::ByWeight)
                .unwrap();
        assert!((report.weighted.recall - 0.70).abs() < 1e-12);
        assert_eq!(report.weighted.precision, 1.0);
    }

    #[test]
    fn untyped_false_flags_apportioned_by_weight() {
        let table = simple_table(10);
        let ground_truth = AnnotationCollection::new(
            "t",
            vec![
                annotation(1, "a", ErrorType::MissingValue),
                annotation(2, "a", ErrorType::MissingValue),
                annotation(3, "a", ErrorType::PatternViolation),
            ],
        )
        .unwrap();
        // All three true cells flagged plus three false flags, untyped.
        let flags = flagset(
            &table,
            &[
                (1, "a", None),
                (2, "a", None),
                (3, "a", None),
                (4, "a", None),
                (5, "a", None),
                (6, "a", None),
            ],
        );
        let report =
            score_detection(&flags, &ground_truth, table.cell_count(), FpApportionment::ByWeight)
                .unwrap();
        let missing = &report.per_type[&ErrorType::MissingValue];
        // fp share = w * 3 = (2/3)*3 = 2; precision = 2/(2+2) = 0.5.
        assert!((missing.false_positives - 2.0).abs() < 1e-12);
        assert!((missing.precision - 0.5).abs() < 1e-12);

        let charged = score_detection(
            &flags,
            &ground_truth,
            table.cell_count(),
            FpApportionment::ChargeAll,
        )
        .unwrap();
        assert!((charged.per_type[&ErrorType::MissingValue].precision - 0.4).abs() < 1e-12);
    }

    #[test]
    fn weighted_f1_is_bounded_by_per_type_f1() {
        let table = simple_table(12);
        let ground_truth = AnnotationCollection::new(
            "t",
            vec![
                annotation(1, "a", ErrorType::MissingValue),
                annotation(2, "a", ErrorType::MissingValue),
                annotation(3, "a", ErrorType::Outlier),
                annotation(4, "a", ErrorType::Outlier),
                annotation(5, "a", ErrorType::Outlier),
            ],
        )
        .unwrap();
        let flags = flagset(
            &table,
            &[
                (1, "a", Some(ErrorType::MissingValue)),
                (3, "a", Some(ErrorType::Outlier)),
                (4, "a", Some(ErrorType::Outlier)),
                (7, "a", Some(ErrorType::Outlier)),
            ],
        );
        let report =
            score_detection(&flags, &ground_truth, table.cell_count(), FpApportionment::ByWeight)
                .unwrap();
        let f1s: Vec<f64> = report.per_type.values().map(|m| m.f1).collect();
        let lo = f1s.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(report.weighted.f1 >= lo - 1e-12 && report.weighted.f1 <= hi + 1e-12);
    }

    #[test]
    fn removing_a_true_positive_never_raises_recall() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let table = simple_table(30);
        for _ in 0..50 {
            let mut annotations = Vec::new();
            for row in 1..=12u64 {
                let ty = ErrorType::ALL[rng.gen_range(0..4)];
                annotations.push(annotation(row, "a", ty));
            }
            let ground_truth = AnnotationCollection::new("t", annotations).unwrap();
            let mut flagged: Vec<(u64, &str, Option<ErrorType>)> = Vec::new();
            for row in 1..=20u64 {
                if rng.gen_bool(0.5) {
                    flagged.push((row, "a", None));
                }
            }
            let flags = flagset(&table, &flagged);
            let base = score_detection(
                &flags,
                &ground_truth,
                table.cell_count(),
                FpApportionment::ByWeight,
            )
            .unwrap();
            // Drop one true positive, if any.
            let truth_cells: HashSet<u64> =
                ground_truth.iter().map(|a| a.cell.row_id).collect();
            let Some(pos) = flagged.iter().position(|(row, _, _)| truth_cells.contains(row))
            else {
                continue;
            };
            let mut fewer = flagged.clone();
            fewer.remove(pos);
            let reduced = score_detection(
                &flagset(&table, &fewer),
                &ground_truth,
                table.cell_count(),
                FpApportionment::ByWeight,
            )
            .unwrap();
            for (ty, metrics) in &reduced.per_type {
                assert!(metrics.recall <= base.per_type[ty].recall + 1e-12);
            }
            assert!(reduced.overall.recall <= base.overall.recall + 1e-12);
        }
    }

    #[test]
    fn detection_from_diff_annotations() {
        // End to end: type a dirty table, run the null detector, score it.
        let clean = Table::from_rows(
            "t",
            vec!["a".into()],
            vec![vec![cell("x")], vec![cell("y")], vec![cell("z")]],
        )
        .unwrap();
        let dirty = clean
            .with_cell(&CellRef::new(1, "a"), cell("N/A"))
            .unwrap()
            .with_cell(&CellRef::new(2, "a"), cell("yy"))
            .unwrap();
        let ground_truth =
            crate::annotation::annotations_from_diff(&clean, &dirty, &TypingRules::default())
                .unwrap();
        let flags =
            run_builtin_detector(BuiltinDetector::Null, &dirty, &DetectorConfig::default(), None)
                .unwrap();
        let report =
            score_detection(&flags, &ground_truth, dirty.cell_count(), FpApportionment::ByWeight)
                .unwrap();
        assert_eq!(report.per_type[&ErrorType::MissingValue].recall, 1.0);
        assert_eq!(report.per_type[&ErrorType::PatternViolation].recall, 0.0);
    }
}
