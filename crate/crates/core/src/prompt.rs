//! Instruction assembly, sub-table construction, and triplet emission.
//!
//! A training record is a triplet: an instruction, a serialized input
//! sub-table, and a structured output. Instructions are assembled from three
//! catalog fragments (task description, error-type description, suffix)
//! joined by single newlines; the fragments are kept on the instruction so
//! the assembly is losslessly decomposable.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotationCollection, AnnotationError, ErrorAnnotation, ErrorType};
use crate::table::{serialize_markdown, Table, TableError};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no template for `{key}` in the catalog")]
    MissingTemplate { key: String },
    #[error("template fragment `{key}` must not be empty")]
    EmptyFragment { key: String },
    #[error("task {0} does not take an error type")]
    ErrorTypeNotApplicable(TableTask),
    #[error("task {0} is not error-related")]
    NotErrorRelated(TableTask),
    #[error("task {0} is error-related; use the triplet builder")]
    NotAuxiliary(TableTask),
    #[error("row_id {0} is not in the dataset")]
    UnknownRow(u64),
    #[error("{what}: need {needed}, table has {available}")]
    Capacity {
        what: String,
        needed: usize,
        available: usize,
    },
    #[error("invalid catalog: {0}")]
    Catalog(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("jsonl line {line}: {source}")]
    JsonLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The eight table tasks. Tasks 1-3 are error-related; the rest exercise
/// structural awareness and are used as auxiliary training data only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableTask {
    ErrorGeneration,
    ErrorDetection,
    ErrorCorrection,
    RowColumnAugmentation,
    RowColumnSwapping,
    RowColumnFiltering,
    HeaderMatching,
    TableSummarization,
}

impl TableTask {
    pub const ALL: [TableTask; 8] = [
        TableTask::ErrorGeneration,
        TableTask::ErrorDetection,
        TableTask::ErrorCorrection,
        TableTask::RowColumnAugmentation,
        TableTask::RowColumnSwapping,
        TableTask::RowColumnFiltering,
        TableTask::HeaderMatching,
        TableTask::TableSummarization,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TableTask::ErrorGeneration => "error_generation",
            TableTask::ErrorDetection => "error_detection",
            TableTask::ErrorCorrection => "error_correction",
            TableTask::RowColumnAugmentation => "row_column_augmentation",
            TableTask::RowColumnSwapping => "row_column_swapping",
            TableTask::RowColumnFiltering => "row_column_filtering",
            TableTask::HeaderMatching => "header_matching",
            TableTask::TableSummarization => "table_summarization",
        }
    }

    pub fn parse(name: &str) -> Result<TableTask, String> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == name)
            .ok_or_else(|| format!("unknown task `{name}`"))
    }

    pub fn is_error_related(&self) -> bool {
        matches!(
            self,
            TableTask::ErrorGeneration | TableTask::ErrorDetection | TableTask::ErrorCorrection
        )
    }
}

impl fmt::Display for TableTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An assembled instruction. `text` is always the newline join of the
/// non-empty stored fragments, so `d_task`/`d_error`/`d_suffix` reassemble
/// to it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub task: TableTask,
    pub error_type: Option<ErrorType>,
    pub d_task: String,
    pub d_error: String,
    pub d_suffix: String,
    pub text: String,
}

impl Instruction {
    fn assemble(
        task: TableTask,
        error_type: Option<ErrorType>,
        d_task: String,
        d_error: String,
        d_suffix: String,
    ) -> Instruction {
        let text = join_fragments(&d_task, &d_error, &d_suffix);
        Instruction {
            task,
            error_type,
            d_task,
            d_error,
            d_suffix,
            text,
        }
    }
}

pub fn join_fragments(d_task: &str, d_error: &str, d_suffix: &str) -> String {
    [d_task, d_error, d_suffix]
        .iter()
        .filter(|f| !f.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Deserialize)]
struct TaskEntry {
    d_task: String,
    d_suffix: String,
}

#[derive(Debug, Clone, Deserialize)]
struct ErrorEntry {
    d_error: String,
}

#[derive(Debug, Deserialize)]
struct CatalogFile {
    tasks: BTreeMap<String, TaskEntry>,
    error_types: BTreeMap<String, ErrorEntry>,
}

/// Text fragments for every (task, error type) combination, loaded from a
/// TOML file. Wording is configuration, not code; `builtin()` returns the
/// defaults shipped with the crate.
#[derive(Debug, Clone)]
pub struct PromptTemplateCatalog {
    tasks: BTreeMap<TableTask, TaskEntry>,
    error_types: BTreeMap<ErrorType, String>,
}

pub const DEFAULT_CATALOG_TOML: &str = include_str!("../templates/default_catalog.toml");

impl PromptTemplateCatalog {
    pub fn builtin() -> PromptTemplateCatalog {
        Self::from_toml_str(DEFAULT_CATALOG_TOML).expect("builtin catalog is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<PromptTemplateCatalog, PromptError> {
        let file: CatalogFile =
            toml::from_str(text).map_err(|e| PromptError::Catalog(e.to_string()))?;
        let mut tasks = BTreeMap::new();
        for (name, entry) in file.tasks {
            let task = TableTask::parse(&name).map_err(PromptError::Catalog)?;
            if entry.d_task.is_empty() {
                return Err(PromptError::EmptyFragment {
                    key: format!("tasks.{name}.d_task"),
                });
            }
            if entry.d_suffix.is_empty() {
                return Err(PromptError::EmptyFragment {
                    key: format!("tasks.{name}.d_suffix"),
                });
            }
            tasks.insert(task, entry);
        }
        let mut error_types = BTreeMap::new();
        for (name, entry) in file.error_types {
            let ty = ErrorType::parse(&name).map_err(PromptError::Catalog)?;
            error_types.insert(ty, entry.d_error);
        }
        Ok(PromptTemplateCatalog { tasks, error_types })
    }

    pub fn from_file(path: &Path) -> Result<PromptTemplateCatalog, PromptError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn task_entry(&self, task: TableTask) -> Result<&TaskEntry, PromptError> {
        self.tasks.get(&task).ok_or_else(|| PromptError::MissingTemplate {
            key: format!("tasks.{}", task.name()),
        })
    }

    fn error_fragment(&self, ty: ErrorType) -> Result<&str, PromptError> {
        self.error_types
            .get(&ty)
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingTemplate {
                key: format!("error_types.{}", ty.name()),
            })
    }
}

/// Assembles the instruction for a task, optionally specialized to an error
/// type. Deterministic: the text is the ordered concatenation of the three
/// retrieved fragments.
pub fn generate_instruction(
    catalog: &PromptTemplateCatalog,
    task: TableTask,
    error_type: Option<ErrorType>,
) -> Result<Instruction, PromptError> {
    if error_type.is_some() && !task.is_error_related() {
        return Err(PromptError::ErrorTypeNotApplicable(task));
    }
    let entry = catalog.task_entry(task)?;
    let d_error = match error_type {
        Some(ty) => catalog.error_fragment(ty)?.to_owned(),
        None => String::new(),
    };
    Ok(Instruction::assemble(
        task,
        error_type,
        entry.d_task.clone(),
        d_error,
        entry.d_suffix.clone(),
    ))
}

/// Builds the input sub-table for one annotation: the annotated row plus
/// `context_rows` distinct rows sampled uniformly without replacement from
/// the rest of the dataset, merged and shuffled. Original row ids are kept.
pub fn construct_input_table(
    dataset: &Table,
    annotation: &ErrorAnnotation,
    context_rows: usize,
    rng: &mut impl Rng,
) -> Result<Table, PromptError> {
    let target = annotation.cell.row_id;
    let ids = dataset.row_ids();
    let target_pos = ids
        .iter()
        .position(|&id| id == target)
        .ok_or(PromptError::UnknownRow(target))?;
    if context_rows + 1 > ids.len() {
        return Err(PromptError::Capacity {
            what: "context rows".into(),
            needed: context_rows + 1,
            available: ids.len(),
        });
    }
    let others: Vec<u64> = ids
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target_pos)
        .map(|(_, &id)| id)
        .collect();
    let sampled = rand::seq::index::sample(rng, others.len(), context_rows);
    let mut chosen: Vec<u64> = vec![target];
    chosen.extend(sampled.iter().map(|i| others[i]));
    chosen.shuffle(rng);
    Ok(dataset.subset(&chosen)?)
}

/// One training record: instruction, serialized input table, structured
/// output. Output cells always reference row ids present in the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub instruction: Instruction,
    pub input_table: String,
    pub output: String,
}

impl Triplet {
    pub fn to_record(&self) -> TripletRecord {
        TripletRecord {
            instruction: self.instruction.text.clone(),
            input: self.input_table.clone(),
            output: self.output.clone(),
        }
    }
}

/// Flat JSONL row for a triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

fn render_error_output(task: TableTask, a: &ErrorAnnotation) -> Result<String, PromptError> {
    let mut object = serde_json::Map::new();
    object.insert("row".into(), serde_json::json!(a.cell.row_id));
    object.insert("column".into(), serde_json::json!(a.cell.column));
    object.insert("error_type".into(), serde_json::json!(a.error_type.name()));
    match task {
        TableTask::ErrorGeneration => {
            object.insert("error_value".into(), serde_json::json!(a.error_value.as_option()));
            object.insert(
                "correct_value".into(),
                serde_json::json!(a.correct_value.as_option()),
            );
            if let Some(constraint) = &a.constraint {
                object.insert("constraint".into(), serde_json::json!(constraint));
            }
        }
        TableTask::ErrorDetection => {}
        TableTask::ErrorCorrection => {
            object.insert(
                "correct_value".into(),
                serde_json::json!(a.correct_value.as_option()),
            );
        }
        other => return Err(PromptError::NotErrorRelated(other)),
    }
    Ok(serde_json::to_string(&vec![serde_json::Value::Object(object)])?)
}

/// Builds one triplet per annotation, in annotation order. Error generation
/// draws its input from the clean table and labels the full annotation;
/// detection and correction draw from the dirty table (erroneous value in
/// place) and label the location/type or the correction respectively.
pub fn build_triplets(
    dataset_clean: &Table,
    dataset_dirty: &Table,
    annotations: &AnnotationCollection,
    task: TableTask,
    catalog: &PromptTemplateCatalog,
    context_rows: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Triplet>, PromptError> {
    if !task.is_error_related() {
        return Err(PromptError::NotErrorRelated(task));
    }
    let source = match task {
        TableTask::ErrorGeneration => dataset_clean,
        _ => dataset_dirty,
    };
    let mut triplets = Vec::with_capacity(annotations.len());
    for annotation in annotations.iter() {
        let instruction = generate_instruction(catalog, task, Some(annotation.error_type))?;
        let sub_table = construct_input_table(source, annotation, context_rows, rng)?;
        let output = render_error_output(task, annotation)?;
        triplets.push(Triplet {
            instruction,
            input_table: serialize_markdown(&sub_table),
            output,
        });
    }
    Ok(triplets)
}

/// Writes triplets as JSONL, one `{"instruction","input","output"}` object
/// per line.
pub fn emit_jsonl(triplets: &[Triplet], path: &Path) -> Result<(), PromptError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for triplet in triplets {
        serde_json::to_writer(&mut file, &triplet.to_record())?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Vec<TripletRecord>, PromptError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|source| PromptError::JsonLine {
                line: idx + 1,
                source,
            })?,
        );
    }
    Ok(records)
}

fn require_rows(table: &Table, needed: usize, what: &str) -> Result<(), PromptError> {
    if table.row_count() < needed {
        return Err(PromptError::Capacity {
            what: what.into(),
            needed,
            available: table.row_count(),
        });
    }
    Ok(())
}

/// Synthesizes one self-verifiable instance of an error-unrelated task over
/// the given table. The chosen parameters (which rows to swap, which columns
/// to keep, ...) are appended to the stored task fragment so the instruction
/// still decomposes losslessly.
pub fn build_auxiliary_task(
    dataset: &Table,
    task: TableTask,
    catalog: &PromptTemplateCatalog,
    rng: &mut impl Rng,
) -> Result<Triplet, PromptError> {
    if task.is_error_related() {
        return Err(PromptError::NotAuxiliary(task));
    }
    let base = catalog.task_entry(task)?.clone();
    let input_serialized = serialize_markdown(dataset);

    let (d_task, input, output) = match task {
        TableTask::RowColumnAugmentation => {
            require_rows(dataset, 2, "row augmentation")?;
            let ids = dataset.row_ids();
            let held = ids[rng.gen_range(0..ids.len())];
            let visible: Vec<u64> = ids.iter().copied().filter(|&id| id != held).collect();
            let input_table = dataset.subset(&visible)?;
            let mut augmented = visible;
            augmented.push(held);
            let output_table = dataset.subset(&augmented)?;
            (
                format!("{} Append one more row that fits the table.", base.d_task),
                serialize_markdown(&input_table),
                serialize_markdown(&output_table),
            )
        }
        TableTask::RowColumnSwapping => {
            require_rows(dataset, 2, "row swapping")?;
            let ids = dataset.row_ids();
            let i = rng.gen_range(0..ids.len());
            let j = loop {
                let j = rng.gen_range(0..ids.len());
                if j != i {
                    break j;
                }
            };
            let (a, b) = (i.min(j), i.max(j));
            let mut swapped = ids.clone();
            swapped.swap(a, b);
            (
                format!(
                    "{} Swap the row with row_id {} and the row with row_id {}.",
                    base.d_task, ids[a], ids[b]
                ),
                input_serialized,
                serialize_markdown(&dataset.subset(&swapped)?),
            )
        }
        TableTask::RowColumnFiltering => {
            let columns = dataset.schema();
            let keep_count = rng.gen_range(1..=columns.len());
            let picked = rand::seq::index::sample(rng, columns.len(), keep_count);
            let mut keep_idx: Vec<usize> = picked.iter().collect();
            keep_idx.sort_unstable();
            let keep: Vec<String> = keep_idx.iter().map(|&i| columns[i].clone()).collect();
            (
                format!("{} Keep only the columns: {}.", base.d_task, keep.join(", ")),
                input_serialized,
                serialize_markdown(&dataset.project(&keep)?),
            )
        }
        TableTask::HeaderMatching => {
            require_rows(dataset, 1, "header matching")?;
            if dataset.column_count() < 2 {
                return Err(PromptError::Capacity {
                    what: "header matching columns".into(),
                    needed: 2,
                    available: dataset.column_count(),
                });
            }
            let mut shuffled = dataset.schema().to_vec();
            shuffled.shuffle(rng);
            let rows = dataset
                .rows()
                .iter()
                .map(|r| (r.row_id(), r.cells().to_vec()))
                .collect();
            let display = Table::new(dataset.name(), shuffled.clone(), rows)?;
            let mut assignment = serde_json::Map::new();
            for header in &shuffled {
                let original = dataset.column_index(header).expect("permuted header") + 1;
                assignment.insert(header.clone(), serde_json::json!(original));
            }
            (
                base.d_task.clone(),
                serialize_markdown(&display),
                serde_json::to_string(&serde_json::Value::Object(assignment))?,
            )
        }
        TableTask::TableSummarization => {
            let summary = format!(
                "The table has {} rows and {} columns: {}.",
                dataset.row_count(),
                dataset.column_count(),
                dataset.schema().join(", ")
            );
            (base.d_task.clone(), input_serialized, summary)
        }
        _ => unreachable!("error-related tasks rejected above"),
    };

    Ok(Triplet {
        instruction: Instruction::assemble(task, None, d_task, String::new(), base.d_suffix),
        input_table: input,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::AnnotationCollection;
    use crate::table::{parse_markdown, CellRef, CellValue};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(text: &str) -> CellValue {
        CellValue::new(text)
    }

    fn movie_table(rows: usize) -> Table {
        let cells = (0..rows)
            .map(|i| vec![cell(&format!("title {i}")), cell(&format!("{} min", 100 + i))])
            .collect();
        Table::from_rows("movies", vec!["title".into(), "duration".into()], cells).unwrap()
    }

    fn annotation(row: u64) -> ErrorAnnotation {
        ErrorAnnotation::new(
            CellRef::new(row, "title"),
            ErrorType::PatternViolation,
            cell("The Truman Show"),
            cell(&format!("title {}", row - 1)),
            None,
        )
        .unwrap()
    }

    #[test]
    fn instruction_contains_task_description() {
        let catalog = PromptTemplateCatalog::builtin();
        let instruction =
            generate_instruction(&catalog, TableTask::ErrorGeneration, Some(ErrorType::Outlier))
                .unwrap();
        assert!(instruction
            .text
            .contains("Select a cell in the given table and modify its value"));
        assert!(!instruction.d_error.is_empty());
    }

    #[test]
    fn error_unrelated_task_has_empty_d_error() {
        let catalog = PromptTemplateCatalog::builtin();
        let instruction =
            generate_instruction(&catalog, TableTask::TableSummarization, None).unwrap();
        assert!(instruction.d_error.is_empty());
        assert_eq!(
            instruction.text,
            format!("{}\n{}", instruction.d_task, instruction.d_suffix)
        );
    }

    #[test]
    fn instruction_is_deterministic() {
        let catalog = PromptTemplateCatalog::builtin();
        let a = generate_instruction(&catalog, TableTask::ErrorDetection, Some(ErrorType::MissingValue))
            .unwrap();
        let b = generate_instruction(&catalog, TableTask::ErrorDetection, Some(ErrorType::MissingValue))
            .unwrap();
        assert_eq!(a.text, b.text);
    }

    #[test]
    fn missing_template_names_key() {
        let catalog = PromptTemplateCatalog::from_toml_str(
            "[tasks.error_generation]\nd_task = \"x\"\nd_suffix = \"y\"\n[error_types]\n",
        )
        .unwrap();
        let err = generate_instruction(&catalog, TableTask::ErrorGeneration, Some(ErrorType::Outlier))
            .unwrap_err();
        assert!(err.to_string().contains("error_types.outlier"), "{err}");
    }

    #[test]
    fn zero_context_rows_gives_single_row_table() {
        let dataset = movie_table(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sub = construct_input_table(&dataset, &annotation(4), 0, &mut rng).unwrap();
        assert_eq!(sub.row_ids(), [4]);
    }

    #[test]
    fn context_rows_sampled_without_replacement() {
        let dataset = movie_table(10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sub = construct_input_table(&dataset, &annotation(4), 4, &mut rng).unwrap();
        let mut ids = sub.row_ids();
        assert_eq!(ids.len(), 5);
        assert!(ids.contains(&4));
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn same_seed_same_sub_table() {
        let dataset = movie_table(10);
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let sub_a = construct_input_table(&dataset, &annotation(4), 4, &mut a).unwrap();
        let sub_b = construct_input_table(&dataset, &annotation(4), 4, &mut b).unwrap();
        assert_eq!(sub_a, sub_b);
    }

    #[test]
    fn capacity_error_when_context_too_large() {
        let dataset = movie_table(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = construct_input_table(&dataset, &annotation(1), 3, &mut rng).unwrap_err();
        assert!(matches!(err, PromptError::Capacity { .. }));
    }

    fn fixture() -> (Table, Table, AnnotationCollection) {
        let clean = movie_table(12);
        let annotations: Vec<ErrorAnnotation> = (1..=5).map(annotation).collect();
        let mut dirty = clean.clone();
        for a in &annotations {
            dirty = dirty.with_cell(&a.cell, a.error_value.clone()).unwrap();
        }
        (clean, dirty, AnnotationCollection::new("movies", annotations).unwrap())
    }

    #[test]
    fn one_triplet_per_annotation() {
        let (clean, dirty, annotations) = fixture();
        let catalog = PromptTemplateCatalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let triplets = build_triplets(
            &clean,
            &dirty,
            &annotations,
            TableTask::ErrorGeneration,
            &catalog,
            3,
            &mut rng,
        )
        .unwrap();
        assert_eq!(triplets.len(), 5);
        for t in &triplets {
            assert_eq!(t.instruction.task, TableTask::ErrorGeneration);
        }
    }

    #[test]
    fn generation_input_holds_clean_value_and_output_the_error() {
        let (clean, dirty, annotations) = fixture();
        let catalog = PromptTemplateCatalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let triplets = build_triplets(
            &clean,
            &dirty,
            &annotations,
            TableTask::ErrorGeneration,
            &catalog,
            3,
            &mut rng,
        )
        .unwrap();
        let first = &triplets[0];
        assert!(first.input_table.contains("title 0"));
        assert!(!first.input_table.contains("The Truman Show"));
        assert!(first.output.contains("The Truman Show"));
    }

    #[test]
    fn detection_input_holds_erroneous_value() {
        let (clean, dirty, annotations) = fixture();
        let catalog = PromptTemplateCatalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let triplets = build_triplets(
            &clean,
            &dirty,
            &annotations,
            TableTask::ErrorDetection,
            &catalog,
            3,
            &mut rng,
        )
        .unwrap();
        let first = &triplets[0];
        assert!(first.input_table.contains("The Truman Show"));
        let parsed: Vec<serde_json::Value> = serde_json::from_str(&first.output).unwrap();
        assert_eq!(parsed[0]["row"], 1);
        assert_eq!(parsed[0]["column"], "title");
        assert_eq!(parsed[0]["error_type"], "pattern_violation");
        assert!(parsed[0].get("error_value").is_none());
    }

    #[test]
    fn output_row_is_present_in_input() {
        let (clean, dirty, annotations) = fixture();
        let catalog = PromptTemplateCatalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for task in [
            TableTask::ErrorGeneration,
            TableTask::ErrorDetection,
            TableTask::ErrorCorrection,
        ] {
            let triplets =
                build_triplets(&clean, &dirty, &annotations, task, &catalog, 4, &mut rng).unwrap();
            for t in &triplets {
                let input = parse_markdown(&t.input_table).unwrap();
                let output: Vec<serde_json::Value> = serde_json::from_str(&t.output).unwrap();
                let row = output[0]["row"].as_u64().unwrap();
                assert!(input.row_ids().contains(&row));
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let (clean, dirty, annotations) = fixture();
        let catalog = PromptTemplateCatalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let triplets = build_triplets(
            &clean,
            &dirty,
            &annotations,
            TableTask::ErrorCorrection,
            &catalog,
            2,
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        emit_jsonl(&triplets, &path).unwrap();
        let lines = std::fs::read_to_string(&path).unwrap();
        assert_eq!(lines.trim_end().lines().count(), triplets.len());
        let records = load_jsonl(&path).unwrap();
        let expected: Vec<TripletRecord> = triplets.iter().map(Triplet::to_record).collect();
        assert_eq!(records, expected);
    }

    #[test]
    fn jsonl_escapes_newlines_in_instruction() {
        let triplet = Triplet {
            instruction: Instruction::assemble(
                TableTask::ErrorGeneration,
                None,
                "line one".into(),
                "line two".into(),
                "line three".into(),
            ),
            input_table: "| row_id | a |".into(),
            output: "[]".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        emit_jsonl(&[triplet], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.trim_end().lines().count(), 1);
    }

    #[test]
    fn swapping_output_exchanges_rows() {
        let dataset = movie_table(2);
        let catalog = PromptTemplateCatalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let triplet =
            build_auxiliary_task(&dataset, TableTask::RowColumnSwapping, &catalog, &mut rng)
                .unwrap();
        let output = parse_markdown(&triplet.output).unwrap();
        assert_eq!(output.row_ids(), [2, 1]);
    }

    #[test]
    fn filtering_output_keeps_named_columns() {
        let dataset = movie_table(3);
        let catalog = PromptTemplateCatalog::builtin();
        // Sweep seeds until the single-column subset is picked.
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let triplet =
                build_auxiliary_task(&dataset, TableTask::RowColumnFiltering, &catalog, &mut rng)
                    .unwrap();
            let output = parse_markdown(&triplet.output).unwrap();
            if output.column_count() == 1 {
                assert!(triplet
                    .instruction
                    .d_task
                    .contains(&format!("Keep only the columns: {}.", output.schema()[0])));
                return;
            }
        }
        panic!("no seed produced a single-column filter");
    }

    #[test]
    fn header_matching_output_is_the_permutation() {
        let dataset = Table::from_rows(
            "t",
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![cell("1"), cell("x"), cell("p")]],
        )
        .unwrap();
        let catalog = PromptTemplateCatalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let triplet =
            build_auxiliary_task(&dataset, TableTask::HeaderMatching, &catalog, &mut rng).unwrap();
        let shown = parse_markdown(&triplet.input_table).unwrap();
        let mapping: BTreeMap<String, usize> = serde_json::from_str(&triplet.output).unwrap();
        for header in shown.schema() {
            let original = dataset.column_index(header).unwrap() + 1;
            assert_eq!(mapping[header], original);
        }
    }

    #[test]
    fn summarization_reports_shape() {
        let dataset = movie_table(4);
        let catalog = PromptTemplateCatalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let triplet =
            build_auxiliary_task(&dataset, TableTask::TableSummarization, &catalog, &mut rng)
                .unwrap();
        assert_eq!(
            triplet.output,
            "The table has 4 rows and 2 columns: title, duration."
        );
    }

    #[test]
    fn augmentation_output_extends_input() {
        let dataset = movie_table(5);
        let catalog = PromptTemplateCatalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let triplet = build_auxiliary_task(
            &dataset,
            TableTask::RowColumnAugmentation,
            &catalog,
            &mut rng,
        )
        .unwrap();
        let input = parse_markdown(&triplet.input_table).unwrap();
        let output = parse_markdown(&triplet.output).unwrap();
        assert_eq!(output.row_count(), input.row_count() + 1);
        assert_eq!(&output.row_ids()[..input.row_count()], input.row_ids());
    }

    #[test]
    fn zero_row_table_rejected_for_swapping() {
        let dataset = Table::from_rows("t", vec!["a".into()], vec![]).unwrap();
        let catalog = PromptTemplateCatalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let err =
            build_auxiliary_task(&dataset, TableTask::RowColumnSwapping, &catalog, &mut rng)
                .unwrap_err();
        assert!(matches!(err, PromptError::Capacity { .. }));
    }

    #[test]
    fn instruction_decomposition_is_lossless() {
        let catalog = PromptTemplateCatalog::builtin();
        for task in TableTask::ALL {
            let error_type = task.is_error_related().then_some(ErrorType::RuleViolation);
            let instruction = generate_instruction(&catalog, task, error_type).unwrap();
            assert_eq!(
                instruction.text,
                join_fragments(
                    &instruction.d_task,
                    &instruction.d_error,
                    &instruction.d_suffix
                )
            );
        }
    }
}
