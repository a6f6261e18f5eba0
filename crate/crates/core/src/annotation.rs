//! Error taxonomy, labeled-error records, and annotation-collection I/O.
//!
//! An annotation names one erroneous cell: where it is, which of the four
//! error classes it belongs to, the wrong value, and the ground-truth value.
//! Collections of annotations are the unit of exchange between the triplet
//! builder, the injector, the evaluator and the detection harness.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::Distribution;
use crate::table::{diff_tables, CellRef, CellValue, Table, TableError};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("duplicate annotation for cell {0}")]
    DuplicateCell(CellRef),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("annotation at {0}: error_value equals correct_value")]
    NotAnError(CellRef),
    #[error("row must be a positive integer, got {0}")]
    BadRow(i64),
    #[error("invalid annotation file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The four error classes, in canonical order. The order is total and fixed;
/// it drives deterministic tie-breaking wherever types compete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    Outlier,
    MissingValue,
    RuleViolation,
    PatternViolation,
}

impl ErrorType {
    pub const ALL: [ErrorType; 4] = [
        ErrorType::Outlier,
        ErrorType::MissingValue,
        ErrorType::RuleViolation,
        ErrorType::PatternViolation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ErrorType::Outlier => "outlier",
            ErrorType::MissingValue => "missing_value",
            ErrorType::RuleViolation => "rule_violation",
            ErrorType::PatternViolation => "pattern_violation",
        }
    }

    /// Position in canonical order.
    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|t| t == self).unwrap()
    }

    pub fn parse(name: &str) -> Result<ErrorType, String> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == name)
            .ok_or_else(|| {
                format!(
                    "unknown error_type `{name}`, expected one of outlier, missing_value, \
                     rule_violation, pattern_violation"
                )
            })
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One labeled error cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorAnnotation {
    pub cell: CellRef,
    pub error_type: ErrorType,
    pub error_value: CellValue,
    pub correct_value: CellValue,
    /// Constraint text (for example a functional dependency) when the error
    /// is a rule violation against a known constraint.
    pub constraint: Option<String>,
}

impl ErrorAnnotation {
    pub fn new(
        cell: CellRef,
        error_type: ErrorType,
        error_value: CellValue,
        correct_value: CellValue,
        constraint: Option<String>,
    ) -> Result<Self, AnnotationError> {
        if error_value == correct_value {
            return Err(AnnotationError::NotAnError(cell));
        }
        Ok(ErrorAnnotation {
            cell,
            error_type,
            error_value,
            correct_value,
            constraint,
        })
    }
}

/// Wire format for one annotation. `row` is the 1-based stable row id; null
/// values serialize as JSON null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub row: u64,
    pub column: String,
    pub error_type: ErrorType,
    pub error_value: Option<String>,
    pub correct_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
}

impl AnnotationRecord {
    pub fn into_annotation(self) -> Result<ErrorAnnotation, AnnotationError> {
        ErrorAnnotation::new(
            CellRef::new(self.row, self.column),
            self.error_type,
            CellValue::from_option(self.error_value),
            CellValue::from_option(self.correct_value),
            self.constraint,
        )
    }

    pub fn from_annotation(a: &ErrorAnnotation) -> AnnotationRecord {
        AnnotationRecord {
            row: a.cell.row_id,
            column: a.cell.column.clone(),
            error_type: a.error_type,
            error_value: a.error_value.as_option().map(str::to_owned),
            correct_value: a.correct_value.as_option().map(str::to_owned),
            constraint: a.constraint.clone(),
        }
    }
}

/// An ordered set of annotations for one dataset. No two annotations may
/// address the same cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationCollection {
    dataset_name: String,
    annotations: Vec<ErrorAnnotation>,
}

impl AnnotationCollection {
    pub fn new(
        dataset_name: impl Into<String>,
        annotations: Vec<ErrorAnnotation>,
    ) -> Result<Self, AnnotationError> {
        let mut seen = HashSet::new();
        for a in &annotations {
            if !seen.insert(a.cell.clone()) {
                return Err(AnnotationError::DuplicateCell(a.cell.clone()));
            }
        }
        Ok(AnnotationCollection {
            dataset_name: dataset_name.into(),
            annotations,
        })
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn annotations(&self) -> &[ErrorAnnotation] {
        &self.annotations
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ErrorAnnotation> {
        self.annotations.iter()
    }
}

/// Loads an annotation file: a JSON array of records validated against the
/// given schema. Rejects duplicate cells, unknown columns and records whose
/// error value equals the correct value; unknown `error_type` strings fail
/// with a message listing the four legal names.
pub fn load_annotations(
    path: &Path,
    schema: &[String],
) -> Result<AnnotationCollection, AnnotationError> {
    let text = std::fs::read_to_string(path)?;
    let records: Vec<AnnotationRecord> = serde_json::from_str(&text)?;
    let mut annotations = Vec::with_capacity(records.len());
    for record in records {
        if !schema.iter().any(|c| c == &record.column) {
            return Err(AnnotationError::UnknownColumn(record.column));
        }
        annotations.push(record.into_annotation()?);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AnnotationCollection::new(name, annotations)
}

/// Writes a collection as a JSON array of records (the inverse of
/// [`load_annotations`]).
pub fn save_annotations(
    collection: &AnnotationCollection,
    path: &Path,
) -> Result<(), AnnotationError> {
    let records: Vec<AnnotationRecord> = collection
        .iter()
        .map(AnnotationRecord::from_annotation)
        .collect();
    let mut text = serde_json::to_string_pretty(&records)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// A functional dependency `lhs -> rhs`: rows agreeing on every left-hand
/// attribute must agree on the right-hand attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDependency {
    pub lhs: Vec<String>,
    pub rhs: String,
}

impl FunctionalDependency {
    /// Parses the textual form `"a, b -> c"`.
    pub fn parse(text: &str) -> Result<FunctionalDependency, String> {
        let (lhs, rhs) = text
            .split_once("->")
            .ok_or_else(|| format!("expected `lhs -> rhs`, got `{text}`"))?;
        let lhs: Vec<String> = lhs
            .split(',')
            .map(|s| s.trim().to_owned())
            .filter(|s| !s.is_empty())
            .collect();
        let rhs = rhs.trim().to_owned();
        if lhs.is_empty() || rhs.is_empty() {
            return Err(format!("expected `lhs -> rhs`, got `{text}`"));
        }
        Ok(FunctionalDependency { lhs, rhs })
    }
}

impl fmt::Display for FunctionalDependency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.lhs.join(", "), self.rhs)
    }
}

/// User-supplied integrity constraints; there is no constraint discovery.
#[derive(Debug, Clone, Default)]
pub struct ConstraintConfig {
    pub fds: Vec<FunctionalDependency>,
}

impl ConstraintConfig {
    /// Dependencies whose right-hand side is the given column.
    pub fn fds_over<'a>(
        &'a self,
        column: &'a str,
    ) -> impl Iterator<Item = &'a FunctionalDependency> + 'a {
        self.fds.iter().filter(move |fd| fd.rhs == column)
    }
}

/// Rules for classifying a differing cell into one of the four error types.
#[derive(Debug, Clone)]
pub struct TypingRules {
    /// Strings treated as missing-value manifestations.
    pub placeholders: HashSet<String>,
    pub constraints: ConstraintConfig,
    /// |z| threshold on the numeric prefix of a cell, measured against the
    /// clean column.
    pub z_threshold: f64,
}

impl Default for TypingRules {
    fn default() -> Self {
        TypingRules {
            placeholders: ["N/A", "NULL", "9999-999999"]
                .into_iter()
                .map(str::to_owned)
                .collect(),
            constraints: ConstraintConfig::default(),
            z_threshold: 3.0,
        }
    }
}

/// Longest numeric prefix of a cell after leading whitespace: an optional
/// sign, digits, and at most one decimal point. `"521 min"` parses as 521.
pub fn numeric_prefix(text: &str) -> Option<f64> {
    numeric_prefix_span(text).map(|(value, _, _)| value)
}

/// Like [`numeric_prefix`], but also returns the byte span of the numeric
/// part so callers can rewrite it in place.
pub fn numeric_prefix_span(text: &str) -> Option<(f64, usize, usize)> {
    let offset = text.len() - text.trim_start().len();
    let trimmed = &text[offset..];
    let mut end = 0;
    let mut seen_digit = false;
    let mut seen_dot = false;
    for (i, c) in trimmed.char_indices() {
        match c {
            '+' | '-' if i == 0 => end = i + c.len_utf8(),
            '0'..='9' => {
                seen_digit = true;
                end = i + c.len_utf8();
            }
            '.' if !seen_dot => {
                seen_dot = true;
                end = i + c.len_utf8();
            }
            _ => break,
        }
    }
    if !seen_digit {
        return None;
    }
    while trimmed[..end].ends_with('.') {
        end -= 1;
    }
    let value: f64 = trimmed[..end].parse().ok()?;
    Some((value, offset, offset + end))
}

/// Mean and population standard deviation of the numeric prefixes in one
/// column. `None` unless at least two values parse.
fn column_numeric_stats(table: &Table, col: usize) -> Option<(f64, f64)> {
    let values: Vec<f64> = table
        .rows()
        .iter()
        .filter_map(|r| numeric_prefix(r.cells()[col].text()))
        .collect();
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, variance.sqrt()))
}

/// True when the dirty value at `cell` breaks a dependency: some other dirty
/// row agrees with it on the left-hand side but disagrees on the right.
fn violates_fd(dirty: &Table, cell: &CellRef, fd: &FunctionalDependency) -> bool {
    let Some(rhs_idx) = dirty.column_index(&fd.rhs) else {
        return false;
    };
    let lhs_idx: Option<Vec<usize>> = fd.lhs.iter().map(|c| dirty.column_index(c)).collect();
    let Some(lhs_idx) = lhs_idx else {
        return false;
    };
    let Some(row) = dirty.row(cell.row_id) else {
        return false;
    };
    let own_lhs: Vec<&CellValue> = lhs_idx.iter().map(|&i| &row.cells()[i]).collect();
    let own_rhs = &row.cells()[rhs_idx];
    dirty.rows().iter().any(|other| {
        other.row_id() != cell.row_id
            && lhs_idx
                .iter()
                .zip(&own_lhs)
                .all(|(&i, own)| &other.cells()[i] == *own)
            && &other.cells()[rhs_idx] != own_rhs
    })
}

/// Derives annotations from an aligned clean/dirty pair: one annotation per
/// differing cell, typed by the first matching rule in priority order
/// missing > rule > outlier > pattern. Placeholders are unambiguous, rules
/// are explicit, outliers need numerics, and pattern is the residual class.
pub fn annotations_from_diff(
    clean: &Table,
    dirty: &Table,
    rules: &TypingRules,
) -> Result<AnnotationCollection, AnnotationError> {
    let deltas = diff_tables(clean, dirty)?;
    let mut stats_cache: HashMap<usize, Option<(f64, f64)>> = HashMap::new();
    let mut annotations = Vec::with_capacity(deltas.len());
    for delta in deltas {
        let dirty_value = &delta.dirty;
        let col = clean
            .column_index(&delta.cell.column)
            .expect("diffed column exists");

        let mut constraint = None;
        let error_type = if dirty_value.is_null()
            || rules.placeholders.contains(dirty_value.text())
        {
            ErrorType::MissingValue
        } else if let Some(fd) = rules
            .constraints
            .fds_over(&delta.cell.column)
            .find(|fd| violates_fd(dirty, &delta.cell, fd))
        {
            constraint = Some(fd.to_string());
            ErrorType::RuleViolation
        } else if is_numeric_outlier(dirty_value, clean, col, rules, &mut stats_cache) {
            ErrorType::Outlier
        } else {
            ErrorType::PatternViolation
        };

        annotations.push(ErrorAnnotation::new(
            delta.cell,
            error_type,
            dirty_value.clone(),
            delta.clean,
            constraint,
        )?);
    }
    AnnotationCollection::new(clean.name(), annotations)
}

fn is_numeric_outlier(
    dirty_value: &CellValue,
    clean: &Table,
    col: usize,
    rules: &TypingRules,
    cache: &mut HashMap<usize, Option<(f64, f64)>>,
) -> bool {
    // Non-parseable cells never classify as outliers.
    let Some(value) = numeric_prefix(dirty_value.text()) else {
        return false;
    };
    let stats = cache
        .entry(col)
        .or_insert_with(|| column_numeric_stats(clean, col));
    let Some((mean, std)) = *stats else {
        return false;
    };
    std > 0.0 && ((value - mean) / std).abs() > rules.z_threshold
}

/// Probability of errors per schema column, in schema order. Flagged empty
/// for an empty collection.
pub fn column_error_distribution(
    annotations: &AnnotationCollection,
    schema: &[String],
) -> Distribution {
    let mut counts = vec![0usize; schema.len()];
    for a in annotations.iter() {
        if let Some(i) = schema.iter().position(|c| c == &a.cell.column) {
            counts[i] += 1;
        }
    }
    Distribution::from_counts(schema.to_vec(), &counts)
}

/// Probability of errors per error type, in canonical type order. Flagged
/// empty for an empty collection.
pub fn type_error_distribution(annotations: &AnnotationCollection) -> Distribution {
    let mut counts = [0usize; 4];
    for a in annotations.iter() {
        counts[a.error_type.index()] += 1;
    }
    Distribution::from_counts(
        ErrorType::ALL.iter().map(|t| t.name().to_owned()).collect(),
        &counts,
    )
}
