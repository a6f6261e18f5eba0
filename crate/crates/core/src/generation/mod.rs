//! Error generation: the backend abstraction, the rule-based baseline
//! corrupter, model-output parsing, and the budgeted injection loop.
//!
//! The injector owns the budget arithmetic (how many cells of which type to
//! corrupt) and the acceptance rules (no cell twice, value must actually
//! change, proposed ground truth must match the table). Backends only turn
//! an (instruction, sub-table) prompt into raw text.

mod backend;
mod corrupt;

pub use backend::{
    request_fingerprint, GeneratorBackend, LlmBackend, LlmConfig, ReplayBackend, RuleBackend,
};
pub use corrupt::rule_corrupt;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{
    AnnotationCollection, AnnotationError, AnnotationRecord, ErrorAnnotation, ErrorType,
};
use crate::prompt::{generate_instruction, PromptError, PromptTemplateCatalog, TableTask};
use crate::table::{serialize_markdown, CellRef, CellValue, Table, TableError};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("backend requires an instruction with an error type")]
    MissingErrorType,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("no recorded response for request fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("cannot parse model output: {message}")]
    Parse { message: String, raw: String },
    #[error("cell {cell} cannot host a {error_type} error")]
    UnsatisfiableCell { cell: CellRef, error_type: ErrorType },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Normalized non-negative weights over the four error types, in canonical
/// type order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeWeights([f64; 4]);

impl TypeWeights {
    pub fn new(weights: [f64; 4]) -> Result<Self, GenerationError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GenerationError::Config(
                "type weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(GenerationError::Config(
                "type weights must not all be zero".into(),
            ));
        }
        Ok(TypeWeights(weights.map(|w| w / total)))
    }

    pub fn uniform() -> Self {
        TypeWeights([0.25; 4])
    }

    pub fn get(&self, ty: ErrorType) -> f64 {
        self.0[ty.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

/// Allocates an integer error budget across the four types by largest
/// remainder: every type gets the floor of its quota, and the leftover units
/// go to the largest fractional remainders, ties broken by canonical order.
pub fn distribute(target: usize, weights: &TypeWeights) -> [usize; 4] {
    let quotas: [f64; 4] = weights.as_array().map(|w| w * target as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut leftover = target.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for idx in order {
        if leftover == 0 {
            break;
        }
        counts[idx] += 1;
        leftover -= 1;
    }
    counts
}

/// A parsed error proposal: the same shape as an annotation, but not yet
/// accepted by the injector.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorProposal {
    pub cell: CellRef,
    pub error_type: ErrorType,
    pub error_value: CellValue,
    pub correct_value: CellValue,
    pub constraint: Option<String>,
}

impl ErrorProposal {
    pub fn into_annotation(self) -> ErrorAnnotation {
        ErrorAnnotation::new(
            self.cell,
            self.error_type,
            self.error_value,
            self.correct_value,
            self.constraint,
        )
        .expect("proposal invariant: error_value differs from correct_value")
    }

    pub fn to_record(&self) -> AnnotationRecord {
        AnnotationRecord {
            row: self.cell.row_id,
            column: self.cell.column.clone(),
            error_type: self.error_type,
            error_value: self.error_value.as_option().map(str::to_owned),
            correct_value: self.correct_value.as_option().map(str::to_owned),
            constraint: self.constraint.clone(),
        }
    }
}

/// Byte span of the first balanced `{...}` starting at or after `from`;
/// brace matching is string-aware.
fn find_json_object(raw: &str, from: usize) -> Option<(usize, usize)> {
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw[from..].char_indices() {
        let pos = from + i;
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' if depth > 0 => in_string = true,
            '{' => {
                if depth == 0 {
                    start = Some(pos);
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    return Some((start.unwrap(), pos + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts the first JSON annotation object from raw model output,
/// tolerating surrounding prose and code fences, and validates it. The
/// parse error keeps the raw text for logging.
pub fn parse_model_output(raw: &str) -> Result<ErrorProposal, GenerationError> {
    let mut cursor = 0;
    let mut last_schema_error: Option<String> = None;
    while let Some((start, end)) = find_json_object(raw, cursor) {
        let candidate = &raw[start..end];
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(candidate) {
            match serde_json::from_value::<AnnotationRecord>(value) {
                Ok(record) => {
                    if record.row == 0 {
                        last_schema_error = Some("row must be a positive integer".into());
                    } else {
                        return match record.into_annotation() {
                            Ok(a) => Ok(ErrorProposal {
                                cell: a.cell,
                                error_type: a.error_type,
                                error_value: a.error_value,
                                correct_value: a.correct_value,
                                constraint: a.constraint,
                            }),
                            Err(AnnotationError::NotAnError(cell)) => Err(GenerationError::Parse {
                                message: format!(
                                    "proposal at {cell} is not an error: error_value equals correct_value"
                                ),
                                raw: raw.to_owned(),
                            }),
                            Err(e) => Err(GenerationError::Parse {
                                message: e.to_string(),
                                raw: raw.to_owned(),
                            }),
                        };
                    }
                }
                Err(e) => last_schema_error = Some(e.to_string()),
            }
        }
        cursor = start + 1;
    }
    Err(GenerationError::Parse {
        message: last_schema_error.unwrap_or_else(|| "no JSON annotation object found".into()),
        raw: raw.to_owned(),
    })
}

/// Uniformly samples up to `rows` distinct rows into a sub-table, preserving
/// original row ids.
pub fn sample_sub_table(
    table: &Table,
    rows: usize,
    rng: &mut impl Rng,
) -> Result<Table, GenerationError> {
    if table.row_count() == 0 {
        return Err(GenerationError::Config(
            "cannot sample a sub-table from an empty table".into(),
        ));
    }
    let k = rows.clamp(1, table.row_count());
    let ids = table.row_ids();
    let picked = rand::seq::index::sample(rng, ids.len(), k);
    let chosen: Vec<u64> = picked.iter().map(|i| ids[i]).collect();
    Ok(table.subset(&chosen)?)
}

#[derive(Debug, Clone)]
pub struct InjectionConfig {
    /// Fraction of all cells to corrupt; the target is `floor(rho * cells)`.
    pub rho: f64,
    pub type_ratio: TypeWeights,
    /// Rows per sampled sub-table shown to the backend.
    pub sub_table_rows: usize,
    /// Attempt cap; defaults to 20x the error budget so the loop always
    /// terminates even against an uncooperative backend.
    pub max_attempts: Option<usize>,
}

/// Budget state after a run, serializable as the budget summary artifact.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationBudget {
    pub rho: f64,
    pub type_ratio: BTreeMap<String, f64>,
    pub total_cells: usize,
    pub target: usize,
    pub per_type_targets: BTreeMap<String, usize>,
    pub per_type_done: BTreeMap<String, usize>,
    pub used_cells: Vec<UsedCell>,
    pub attempts: usize,
    pub max_attempts: usize,
    pub completed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct UsedCell {
    pub row: u64,
    pub column: String,
}

/// One backend exchange from the injection loop. The log doubles as a replay
/// recording: `request_fingerprint` plus `raw_response` is all the replay
/// backend needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_fingerprint: String,
    pub instruction: String,
    pub input: String,
    pub raw_response: String,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
}

pub fn write_audit_log(records: &[AuditRecord], path: &Path) -> Result<(), GenerationError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InjectionStatus {
    /// Budget fully met.
    Completed,
    /// Attempt cap reached with the budget unmet; partial results returned.
    Partial,
    /// Backend failed fatally; partial results returned.
    Aborted { reason: String },
}

#[derive(Debug)]
pub struct InjectionOutcome {
    pub table: Table,
    pub annotations: AnnotationCollection,
    pub budget: GenerationBudget,
    pub exchanges: Vec<AuditRecord>,
    pub status: InjectionStatus,
}

fn check_proposal(
    table: &Table,
    used: &HashSet<CellRef>,
    targets: &[usize; 4],
    done: &[usize; 4],
    proposal: &ErrorProposal,
) -> Result<(), String> {
    let current = match table.value(&proposal.cell) {
        Ok(v) => v,
        Err(_) => return Err(format!("unknown cell {}", proposal.cell)),
    };
    if used.contains(&proposal.cell) {
        return Err(format!("cell {} already modified", proposal.cell));
    }
    let idx = proposal.error_type.index();
    if done[idx] >= targets[idx] {
        return Err(format!("quota met for {}", proposal.error_type));
    }
    if current != &proposal.correct_value {
        return Err(format!(
            "correct_value mismatch at {}: table holds `{}`",
            proposal.cell,
            current.text()
        ));
    }
    Ok(())
}

/// Runs the budgeted injection loop over a clean table.
///
/// Each iteration samples a sub-table, asks the backend to generate an error
/// of the next under-quota type (round-robin in canonical order), parses the
/// response, and accepts the proposal only if the cell was never modified
/// before, the erroneous value differs from the correct one, and the
/// proposal's correct value matches what the table currently holds. Accepted
/// proposals are written into the working copy; every exchange is recorded.
///
/// The loop stops when the budget is met, the attempt cap is reached
/// (`Partial`), or the backend fails fatally (`Aborted`, with partial
/// results). Unmodified cells stay byte-identical to the input.
pub fn inject_errors(
    clean: &Table,
    config: &InjectionConfig,
    backend: &dyn GeneratorBackend,
    catalog: &PromptTemplateCatalog,
    rng: &mut impl Rng,
) -> Result<InjectionOutcome, GenerationError> {
    if !config.rho.is_finite() || !(0.0..=1.0).contains(&config.rho) {
        return Err(GenerationError::Config(format!(
            "rho must be in [0, 1], got {}",
            config.rho
        )));
    }
    let total_cells = clean.cell_count();
    let target = (config.rho * total_cells as f64).floor() as usize;
    let targets = distribute(target, &config.type_ratio);
    let max_attempts = config.max_attempts.unwrap_or(20 * target);
    if max_attempts < target {
        return Err(GenerationError::Config(format!(
            "max_attempts {max_attempts} is below the error budget {target}"
        )));
    }

    let mut table = clean.clone();
    let mut used: HashSet<CellRef> = HashSet::new();
    let mut done = [0usize; 4];
    let mut cursor = 0usize;
    let mut attempts = 0usize;
    let mut annotations: Vec<ErrorAnnotation> = Vec::with_capacity(target);
    let mut exchanges: Vec<AuditRecord> = Vec::new();
    let mut abort_reason: Option<String> = None;

    while done.iter().sum::<usize>() < target && attempts < max_attempts {
        attempts += 1;
        let ty_idx = (0..4)
            .map(|off| (cursor + off) % 4)
            .find(|&i| done[i] < targets[i])
            .expect("budget unmet implies an under-quota type");
        cursor = (ty_idx + 1) % 4;
        let ty = ErrorType::ALL[ty_idx];

        let sub_table = sample_sub_table(clean, config.sub_table_rows, rng)?;
        let instruction = generate_instruction(catalog, TableTask::ErrorGeneration, Some(ty))?;
        let markdown = serialize_markdown(&sub_table);
        let fingerprint = request_fingerprint(&instruction.text, &markdown);

        let raw = match backend.generate(&instruction, &sub_table) {
            Ok(raw) => raw,
            Err(e) => {
                abort_reason = Some(e.to_string());
                break;
            }
        };

        let (accepted, reject_reason) = match parse_model_output(&raw) {
            Err(GenerationError::Parse { message, .. }) => (false, Some(message)),
            Err(e) => (false, Some(e.to_string())),
            Ok(proposal) => match check_proposal(&table, &used, &targets, &done, &proposal) {
                Err(reason) => (false, Some(reason)),
                Ok(()) => {
                    table = table.with_cell(&proposal.cell, proposal.error_value.clone())?;
                    used.insert(proposal.cell.clone());
                    done[proposal.error_type.index()] += 1;
                    annotations.push(proposal.into_annotation());
                    (true, None)
                }
            },
        };
        exchanges.push(AuditRecord {
            request_fingerprint: fingerprint,
            instruction: instruction.text,
            input: markdown,
            raw_response: raw,
            accepted,
            reject_reason,
        });
    }

    let completed = done.iter().sum::<usize>() == target;
    let status = match abort_reason {
        Some(reason) => InjectionStatus::Aborted { reason },
        None if completed => InjectionStatus::Completed,
        None => InjectionStatus::Partial,
    };

    let mut used_cells: Vec<UsedCell> = used
        .iter()
        .map(|c| UsedCell {
            row: c.row_id,
            column: c.column.clone(),
        })
        .collect();
    used_cells.sort_by(|a, b| (a.row, &a.column).cmp(&(b.row, &b.column)));

    let type_names = ErrorType::ALL.map(|t| t.name().to_owned());
    let budget = GenerationBudget {
        rho: config.rho,
        type_ratio: type_names
            .iter()
            .cloned()
            .zip(config.type_ratio.as_array())
            .collect(),
        total_cells,
        target,
        per_type_targets: type_names.iter().cloned().zip(targets).collect(),
        per_type_done: type_names.iter().cloned().zip(done).collect(),
        used_cells,
        attempts,
        max_attempts,
        completed,
    };

    Ok(InjectionOutcome {
        table,
        annotations: AnnotationCollection::new(clean.name(), annotations)?,
        budget,
        exchanges,
        status,
    })
}
