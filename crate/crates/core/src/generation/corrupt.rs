//! Rule-based baseline corrupter: deterministic, seeded single-cell edits in
//! the style of classic constraint-driven error generators (character edits
//! within a word, value swaps within an attribute, numeric scaling,
//! placeholder substitution).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::annotation::{numeric_prefix_span, ConstraintConfig, ErrorType};
use crate::generation::{ErrorProposal, GenerationError};
use crate::table::{CellRef, CellValue, Table};

const MISSING_PLACEHOLDERS: [&str; 4] = ["", "N/A", "NULL", "9999-999999"];

/// Corrupts one cell with an error of the requested type. Deterministic
/// under the caller's seed; the produced value always differs from the
/// current cell value. Cells that cannot host the requested type (for
/// example an outlier on non-numeric text with no substitute value in the
/// column) fail with [`GenerationError::UnsatisfiableCell`].
pub fn rule_corrupt(
    table: &Table,
    cell: &CellRef,
    error_type: ErrorType,
    rules: &ConstraintConfig,
    rng: &mut impl Rng,
) -> Result<ErrorProposal, GenerationError> {
    let current = table.value(cell)?.clone();
    let mut constraint = None;
    let error_value = match error_type {
        ErrorType::Outlier => outlier_value(table, cell, &current, rng)?,
        ErrorType::MissingValue => missing_value(&current, rng),
        ErrorType::RuleViolation => {
            let (value, fd_text) = rule_value(table, cell, &current, rules, rng)?;
            constraint = fd_text;
            value
        }
        ErrorType::PatternViolation => pattern_value(cell, error_type, &current, rng)?,
    };
    debug_assert_ne!(error_value, current);
    Ok(ErrorProposal {
        cell: cell.clone(),
        error_type,
        error_value,
        correct_value: current,
        constraint,
    })
}

fn unsatisfiable(cell: &CellRef, error_type: ErrorType) -> GenerationError {
    GenerationError::UnsatisfiableCell {
        cell: cell.clone(),
        error_type,
    }
}

fn format_scaled(value: f64) -> String {
    if value == value.trunc() && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value}")
    }
}

/// Numeric cells get their prefix scaled by x10 or /10 on a coin flip; cells
/// without a numeric prefix fall back to the rarest other value in the same
/// column.
fn outlier_value(
    table: &Table,
    cell: &CellRef,
    current: &CellValue,
    rng: &mut impl Rng,
) -> Result<CellValue, GenerationError> {
    if let Some((value, start, end)) = numeric_prefix_span(current.text()) {
        let scaled = if rng.gen_bool(0.5) {
            value * 10.0
        } else {
            value / 10.0
        };
        let text = current.text();
        let candidate = format!(
            "{}{}{}",
            &text[..start],
            format_scaled(scaled),
            &text[end..]
        );
        if candidate != text {
            return Ok(CellValue::new(candidate));
        }
    }
    rare_column_value(table, cell, current).ok_or_else(|| unsatisfiable(cell, ErrorType::Outlier))
}

/// Least frequent non-null value in the cell's column, differing from the
/// current value; ties go to the earliest row.
fn rare_column_value(table: &Table, cell: &CellRef, current: &CellValue) -> Option<CellValue> {
    let col = table.column_index(&cell.column)?;
    let mut counts: Vec<(&CellValue, usize, usize)> = Vec::new();
    for (pos, row) in table.rows().iter().enumerate() {
        let value = &row.cells()[col];
        if value.is_null() || value == current {
            continue;
        }
        match counts.iter_mut().find(|(v, _, _)| *v == value) {
            Some((_, n, _)) => *n += 1,
            None => counts.push((value, 1, pos)),
        }
    }
    counts
        .into_iter()
        .min_by_key(|&(_, n, pos)| (n, pos))
        .map(|(v, _, _)| v.clone())
}

fn missing_value(current: &CellValue, rng: &mut impl Rng) -> CellValue {
    let start = rng.gen_range(0..MISSING_PLACEHOLDERS.len());
    for offset in 0..MISSING_PLACEHOLDERS.len() {
        let candidate =
            CellValue::new(MISSING_PLACEHOLDERS[(start + offset) % MISSING_PLACEHOLDERS.len()]);
        if &candidate != current {
            return candidate;
        }
    }
    unreachable!("placeholders are distinct; at most one equals the current value")
}

/// Copies another row's value in the same attribute. Donor rows sharing the
/// left-hand side of a configured dependency over the column are preferred;
/// any other row's differing value is the fallback.
fn rule_value(
    table: &Table,
    cell: &CellRef,
    current: &CellValue,
    rules: &ConstraintConfig,
    rng: &mut impl Rng,
) -> Result<(CellValue, Option<String>), GenerationError> {
    let col = table
        .column_index(&cell.column)
        .ok_or_else(|| unsatisfiable(cell, ErrorType::RuleViolation))?;
    let own_row = table
        .row(cell.row_id)
        .ok_or_else(|| unsatisfiable(cell, ErrorType::RuleViolation))?;

    let fd = rules.fds_over(&cell.column).next();
    let constraint = fd.map(|fd| fd.to_string());

    let mut candidates: Vec<&CellValue> = Vec::new();
    if let Some(fd) = fd {
        if let Some(lhs_idx) = fd
            .lhs
            .iter()
            .map(|c| table.column_index(c))
            .collect::<Option<Vec<usize>>>()
        {
            candidates = table
                .rows()
                .iter()
                .filter(|r| {
                    r.row_id() != cell.row_id
                        && lhs_idx
                            .iter()
                            .all(|&i| r.cells()[i] == own_row.cells()[i])
                })
                .map(|r| &r.cells()[col])
                .filter(|v| !v.is_null() && *v != current)
                .collect();
        }
    }
    if candidates.is_empty() {
        candidates = table
            .rows()
            .iter()
            .filter(|r| r.row_id() != cell.row_id)
            .map(|r| &r.cells()[col])
            .filter(|v| !v.is_null() && *v != current)
            .collect();
    }
    if candidates.is_empty() {
        return Err(unsatisfiable(cell, ErrorType::RuleViolation));
    }
    let pick = candidates[rng.gen_range(0..candidates.len())];
    Ok((pick.clone(), constraint))
}

#[derive(Clone, Copy)]
enum EditOp {
    Insert,
    Delete,
    Transpose,
    CaseFlip,
}

/// One character-level edit: insert, delete, transpose adjacent, or flip
/// case, at a random position. Ops are tried in shuffled order until one
/// applies; inserting always applies, so any non-empty text can be edited.
fn pattern_value(
    cell: &CellRef,
    error_type: ErrorType,
    current: &CellValue,
    rng: &mut impl Rng,
) -> Result<CellValue, GenerationError> {
    if current.is_null() {
        return Err(unsatisfiable(cell, error_type));
    }
    let chars: Vec<char> = current.text().chars().collect();
    let mut ops = [
        EditOp::Insert,
        EditOp::Delete,
        EditOp::Transpose,
        EditOp::CaseFlip,
    ];
    ops.shuffle(rng);
    for op in ops {
        match op {
            EditOp::Insert => {
                let pos = rng.gen_range(0..=chars.len());
                let extra = char::from(rng.sample(rand::distributions::Alphanumeric));
                let mut edited = chars.clone();
                edited.insert(pos, extra);
                return Ok(CellValue::new(edited.into_iter().collect::<String>()));
            }
            EditOp::Delete => {
                // Deleting the only character would turn the cell null.
                if chars.len() >= 2 {
                    let pos = rng.gen_range(0..chars.len());
                    let mut edited = chars.clone();
                    edited.remove(pos);
                    return Ok(CellValue::new(edited.into_iter().collect::<String>()));
                }
            }
            EditOp::Transpose => {
                let spots: Vec<usize> = (0..chars.len().saturating_sub(1))
                    .filter(|&i| chars[i] != chars[i + 1])
                    .collect();
                if !spots.is_empty() {
                    let pos = spots[rng.gen_range(0..spots.len())];
                    let mut edited = chars.clone();
                    edited.swap(pos, pos + 1);
                    return Ok(CellValue::new(edited.into_iter().collect::<String>()));
                }
            }
            EditOp::CaseFlip => {
                let spots: Vec<(usize, char)> = chars
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &c)| flip_case(c).map(|f| (i, f)))
                    .collect();
                if !spots.is_empty() {
                    let (pos, flipped) = spots[rng.gen_range(0..spots.len())];
                    let mut edited = chars.clone();
                    edited[pos] = flipped;
                    return Ok(CellValue::new(edited.into_iter().collect::<String>()));
                }
            }
        }
    }
    Err(unsatisfiable(cell, error_type))
}

fn flip_case(c: char) -> Option<char> {
    let flipped = if c.is_lowercase() {
        c.to_uppercase().next()
    } else if c.is_uppercase() {
        c.to_lowercase().next()
    } else {
        None
    }?;
    (flipped != c).then_some(flipped)
}
