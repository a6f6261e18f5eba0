//! Tabular data model plus the CSV and Markdown serializations used
//! throughout the pipeline.
//!
//! Tables are immutable after construction; every mutation constructs a new
//! table, so shared read access across threads is safe.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("duplicate column name `{0}` in header")]
    DuplicateColumn(String),
    #[error("empty column name in header")]
    EmptyColumnName,
    #[error("row {row_id} has {found} cells, expected {expected}")]
    RaggedRow {
        row_id: u64,
        found: usize,
        expected: usize,
    },
    #[error("duplicate row_id {0}")]
    DuplicateRowId(u64),
    #[error("row_id must be a positive integer")]
    ZeroRowId,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown row_id {0}")]
    UnknownRowId(u64),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("row_id sets differ: {0}")]
    RowIdMismatch(String),
    #[error("markdown parse error at line {line}: {message}")]
    MarkdownParse { line: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single cell. The empty string and null are one canonical value: any
/// constructor that receives empty text produces the null cell, so equality,
/// diffing and round-trips never have to distinguish the two.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellValue {
    text: String,
    is_null: bool,
}

impl CellValue {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        if text.is_empty() {
            Self::null()
        } else {
            CellValue {
                text,
                is_null: false,
            }
        }
    }

    pub fn null() -> Self {
        CellValue {
            text: String::new(),
            is_null: true,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn is_null(&self) -> bool {
        self.is_null
    }

    /// `None` for the null cell, `Some(text)` otherwise.
    pub fn as_option(&self) -> Option<&str> {
        if self.is_null {
            None
        } else {
            Some(&self.text)
        }
    }

    pub fn from_option(value: Option<String>) -> Self {
        match value {
            Some(text) => CellValue::new(text),
            None => CellValue::null(),
        }
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl From<&str> for CellValue {
    fn from(text: &str) -> Self {
        CellValue::new(text)
    }
}

/// Addresses one cell by stable row id and column name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellRef {
    pub row_id: u64,
    pub column: String,
}

impl CellRef {
    pub fn new(row_id: u64, column: impl Into<String>) -> Self {
        CellRef {
            row_id,
            column: column.into(),
        }
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(row {}, {})", self.row_id, self.column)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    row_id: u64,
    cells: Vec<CellValue>,
}

impl Row {
    pub fn row_id(&self) -> u64 {
        self.row_id
    }

    pub fn cells(&self) -> &[CellValue] {
        &self.cells
    }
}

/// Schema-ordered grid of string cells with stable 1-based row identifiers.
/// Row ids survive sampling and shuffling, so outputs that name a row can be
/// mapped back to the original table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    name: String,
    schema: Vec<String>,
    rows: Vec<Row>,
}

impl Table {
    /// Builds a table from explicit `(row_id, cells)` pairs, validating every
    /// structural invariant.
    pub fn new(
        name: impl Into<String>,
        schema: Vec<String>,
        rows: Vec<(u64, Vec<CellValue>)>,
    ) -> Result<Self, TableError> {
        let mut seen_columns = HashSet::new();
        for column in &schema {
            if column.is_empty() {
                return Err(TableError::EmptyColumnName);
            }
            if !seen_columns.insert(column.clone()) {
                return Err(TableError::DuplicateColumn(column.clone()));
            }
        }
        let mut seen_ids = HashSet::new();
        let mut built = Vec::with_capacity(rows.len());
        for (row_id, cells) in rows {
            if row_id == 0 {
                return Err(TableError::ZeroRowId);
            }
            if !seen_ids.insert(row_id) {
                return Err(TableError::DuplicateRowId(row_id));
            }
            if cells.len() != schema.len() {
                return Err(TableError::RaggedRow {
                    row_id,
                    found: cells.len(),
                    expected: schema.len(),
                });
            }
            built.push(Row { row_id, cells });
        }
        Ok(Table {
            name: name.into(),
            schema,
            rows: built,
        })
    }

    /// Builds a table from row-major cells, assigning row ids 1..n in order.
    pub fn from_rows(
        name: impl Into<String>,
        schema: Vec<String>,
        rows: Vec<Vec<CellValue>>,
    ) -> Result<Self, TableError> {
        let numbered = rows
            .into_iter()
            .enumerate()
            .map(|(i, cells)| (i as u64 + 1, cells))
            .collect();
        Table::new(name, schema, numbered)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.schema.len()
    }

    pub fn cell_count(&self) -> usize {
        self.rows.len() * self.schema.len()
    }

    pub fn column_index(&self, column: &str) -> Option<usize> {
        self.schema.iter().position(|c| c == column)
    }

    pub fn row(&self, row_id: u64) -> Option<&Row> {
        self.rows.iter().find(|r| r.row_id == row_id)
    }

    pub fn row_ids(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.row_id).collect()
    }

    pub fn value(&self, cell: &CellRef) -> Result<&CellValue, TableError> {
        let col = self
            .column_index(&cell.column)
            .ok_or_else(|| TableError::UnknownColumn(cell.column.clone()))?;
        let row = self
            .row(cell.row_id)
            .ok_or(TableError::UnknownRowId(cell.row_id))?;
        Ok(&row.cells[col])
    }

    /// Returns a copy of the table with one cell replaced.
    pub fn with_cell(&self, cell: &CellRef, value: CellValue) -> Result<Table, TableError> {
        let col = self
            .column_index(&cell.column)
            .ok_or_else(|| TableError::UnknownColumn(cell.column.clone()))?;
        let idx = self
            .rows
            .iter()
            .position(|r| r.row_id == cell.row_id)
            .ok_or(TableError::UnknownRowId(cell.row_id))?;
        let mut copy = self.clone();
        copy.rows[idx].cells[col] = value;
        Ok(copy)
    }

    /// Sub-table containing the given rows in the given order, original
    /// row ids preserved.
    pub fn subset(&self, row_ids: &[u64]) -> Result<Table, TableError> {
        let mut rows = Vec::with_capacity(row_ids.len());
        for &id in row_ids {
            let row = self.row(id).ok_or(TableError::UnknownRowId(id))?;
            rows.push((id, row.cells.clone()));
        }
        Table::new(self.name.clone(), self.schema.clone(), rows)
    }

    /// Sub-table keeping only the given columns, in the order given.
    pub fn project(&self, columns: &[String]) -> Result<Table, TableError> {
        let mut indices = Vec::with_capacity(columns.len());
        for column in columns {
            indices.push(
                self.column_index(column)
                    .ok_or_else(|| TableError::UnknownColumn(column.clone()))?,
            );
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                (
                    r.row_id,
                    indices.iter().map(|&i| r.cells[i].clone()).collect(),
                )
            })
            .collect();
        Table::new(self.name.clone(), columns.to_vec(), rows)
    }
}

/// Loads a CSV file (RFC 4180 quoting, UTF-8, header row required) into a
/// table with row ids 1..n in file order. Raw fields contained in
/// `null_markers` load as the null cell; the empty string is always null.
pub fn load_csv(path: &Path, null_markers: &HashSet<String>) -> Result<Table, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let schema: Vec<String> = headers.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let cells = record
            .iter()
            .map(|raw| {
                if null_markers.contains(raw) {
                    CellValue::null()
                } else {
                    CellValue::new(raw)
                }
            })
            .collect();
        rows.push(cells);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Table::from_rows(name, schema, rows)
}

pub fn default_null_markers() -> HashSet<String> {
    HashSet::from([String::new()])
}

/// Writes the table as CSV. Null cells become empty fields; reloading the
/// file reproduces the table cell-for-cell with row ids reassigned 1..n.
pub fn write_csv(table: &Table, path: &Path) -> Result<(), TableError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(table.schema())?;
    for row in table.rows() {
        writer.write_record(row.cells().iter().map(|c| c.text()))?;
    }
    writer.flush()?;
    Ok(())
}

fn escape_field(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape_field(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('|') => out.push('|'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Serializes the table as a pipe-delimited Markdown table. The first column
/// is the literal `row_id` header followed by each row's stable id, so a
/// consumer can address rows of the original table even after sampling.
/// Pipes, backslashes and line breaks inside cells are backslash-escaped;
/// null cells render as empty fields.
pub fn serialize_markdown(table: &Table) -> String {
    let mut lines = Vec::with_capacity(table.row_count() + 2);
    let mut header = vec!["row_id".to_owned()];
    header.extend(table.schema().iter().map(|c| escape_field(c)));
    lines.push(format!("| {} |", header.join(" | ")));
    lines.push(format!(
        "| {} |",
        vec!["---"; table.column_count() + 1].join(" | ")
    ));
    for row in table.rows() {
        let mut fields = vec![row.row_id().to_string()];
        fields.extend(row.cells().iter().map(|c| escape_field(c.text())));
        lines.push(format!("| {} |", fields.join(" | ")));
    }
    lines.join("\n")
}

/// Splits a markdown table line into raw (still escaped) fields.
fn split_fields(line: &str, line_no: usize) -> Result<Vec<String>, TableError> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                current.push(c);
                if let Some(&next) = chars.peek() {
                    current.push(next);
                    chars.next();
                }
            }
            '|' => {
                fields.push(current);
                current = String::new();
            }
            _ => current.push(c),
        }
    }
    fields.push(current);
    if fields.len() < 3 || !fields[0].trim().is_empty() || !fields[fields.len() - 1].trim().is_empty()
    {
        return Err(TableError::MarkdownParse {
            line: line_no,
            message: "line must start and end with `|`".into(),
        });
    }
    // Interior fields are padded with one space on each side; strip exactly
    // that padding so leading/trailing spaces inside cells survive.
    Ok(fields[1..fields.len() - 1]
        .iter()
        .map(|f| {
            let f = f.strip_prefix(' ').unwrap_or(f);
            let f = f.strip_suffix(' ').unwrap_or(f);
            f.to_owned()
        })
        .collect())
}

/// Parses text in the format emitted by [`serialize_markdown`] back into a
/// table, restoring the original row ids.
pub fn parse_markdown(text: &str) -> Result<Table, TableError> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(TableError::MarkdownParse {
        line: 1,
        message: "empty input".into(),
    })?;
    let header = split_fields(header_line, 1)?;
    if header.first().map(String::as_str) != Some("row_id") {
        return Err(TableError::MarkdownParse {
            line: 1,
            message: "first column must be `row_id`".into(),
        });
    }
    let schema: Vec<String> = header[1..].iter().map(|f| unescape_field(f)).collect();

    let (_, separator_line) = lines.next().ok_or(TableError::MarkdownParse {
        line: 2,
        message: "missing separator row".into(),
    })?;
    let separator = split_fields(separator_line, 2)?;
    if separator.len() != header.len()
        || separator
            .iter()
            .any(|f| f.is_empty() || !f.chars().all(|c| c == '-'))
    {
        return Err(TableError::MarkdownParse {
            line: 2,
            message: "malformed separator row".into(),
        });
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields = split_fields(line, line_no)?;
        if fields.len() != header.len() {
            return Err(TableError::MarkdownParse {
                line: line_no,
                message: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
        }
        let row_id: u64 = fields[0].parse().map_err(|_| TableError::MarkdownParse {
            line: line_no,
            message: format!("invalid row_id `{}`", fields[0]),
        })?;
        let cells = fields[1..]
            .iter()
            .map(|f| CellValue::new(unescape_field(f)))
            .collect();
        rows.push((row_id, cells));
    }
    Table::new("", schema, rows)
}

/// One differing cell between an aligned clean/dirty table pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDelta {
    pub cell: CellRef,
    pub clean: CellValue,
    pub dirty: CellValue,
}

/// Returns exactly the cells where the dirty value differs from the clean
/// value. Both tables must share the same schema and row_id set; rows are
/// aligned by row_id, not position.
pub fn diff_tables(clean: &Table, dirty: &Table) -> Result<Vec<CellDelta>, TableError> {
    if clean.schema() != dirty.schema() {
        return Err(TableError::SchemaMismatch(format!(
            "{:?} vs {:?}",
            clean.schema(),
            dirty.schema()
        )));
    }
    let clean_ids: HashSet<u64> = clean.row_ids().into_iter().collect();
    let dirty_ids: HashSet<u64> = dirty.row_ids().into_iter().collect();
    if clean_ids != dirty_ids {
        let mut only_clean: Vec<u64> = clean_ids.difference(&dirty_ids).copied().collect();
        let mut only_dirty: Vec<u64> = dirty_ids.difference(&clean_ids).copied().collect();
        only_clean.sort_unstable();
        only_dirty.sort_unstable();
        return Err(TableError::RowIdMismatch(format!(
            "only in clean {:?}, only in dirty {:?}",
            only_clean, only_dirty
        )));
    }
    let mut deltas = Vec::new();
    for row in clean.rows() {
        let other = dirty.row(row.row_id()).expect("row id checked above");
        for (col, (a, b)) in row.cells().iter().zip(other.cells()).enumerate() {
            if a != b {
                deltas.push(CellDelta {
                    cell: CellRef::new(row.row_id(), clean.schema()[col].clone()),
                    clean: a.clone(),
                    dirty: b.clone(),
                });
            }
        }
    }
    Ok(deltas)
}
