//! Subcommand implementations. Every command validates its inputs up front
//! (exit 2), runs the pipeline stage (domain failures exit 1), writes its
//! artifacts under the out dir, and records them in the manifest.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use taberr_core::annotation::{load_annotations, save_annotations, AnnotationCollection};
use taberr_core::detect::{
    run_builtin_detector, run_external_detector, score_detection, BuiltinDetector, DetectError,
    DetectorConfig, ExternalDetector, FlagSet, FpApportionment,
};
use taberr_core::evaluation::{metric_report, HashedEmbedder, MetricReport, RemoteEmbedder};
use taberr_core::generation::{
    inject_errors, sample_sub_table, write_audit_log, GeneratorBackend, InjectionConfig,
    InjectionStatus, LlmBackend, ReplayBackend, RuleBackend,
};
use taberr_core::prompt::{
    build_auxiliary_task, build_triplets as build_task_triplets, emit_jsonl,
    PromptTemplateCatalog, TableTask, Triplet,
};
use taberr_core::seeding::{derive_rng, derive_seed};
use taberr_core::table::{default_null_markers, load_csv, write_csv, Table};

use crate::config::{DetectorEntry, RunConfig};
use crate::manifest;
use crate::CliError;

fn require_file<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    let path = path
        .as_ref()
        .ok_or_else(|| CliError::usage(format!("config is missing the {what} path")))?;
    if !path.is_file() {
        return Err(CliError::usage(format!(
            "{what} file not found: {}",
            path.display()
        )));
    }
    Ok(path)
}

fn null_markers(config: &RunConfig) -> HashSet<String> {
    let mut markers = default_null_markers();
    markers.extend(config.dataset.null_markers.iter().cloned());
    markers
}

fn load_clean(config: &RunConfig) -> Result<Table, CliError> {
    let path = require_file(&config.dataset.clean, "dataset.clean")?;
    load_csv(path, &null_markers(config)).map_err(|e| CliError::domain(e.to_string()))
}

fn load_catalog(config: &RunConfig) -> Result<PromptTemplateCatalog, CliError> {
    match &config.templates.path {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::usage(format!(
                    "template catalog not found: {}",
                    path.display()
                )));
            }
            PromptTemplateCatalog::from_file(path).map_err(|e| CliError::usage(e.to_string()))
        }
        None => Ok(PromptTemplateCatalog::builtin()),
    }
}

fn load_annotation_file(
    path: &Path,
    table: &Table,
    what: &str,
) -> Result<AnnotationCollection, CliError> {
    load_annotations(path, table.schema())
        .map_err(|e| CliError::domain(format!("{what} ({}): {e}", path.display())))
}

/// Applies annotations' erroneous values to a copy of the clean table; used
/// when no dirty table file is configured.
fn derive_dirty(clean: &Table, annotations: &AnnotationCollection) -> Result<Table, CliError> {
    let mut dirty = clean.clone();
    for a in annotations.iter() {
        dirty = dirty
            .with_cell(&a.cell, a.error_value.clone())
            .map_err(|e| CliError::domain(format!("annotation does not fit the table: {e}")))?;
    }
    Ok(dirty)
}

fn write_split(
    mut triplets: Vec<Triplet>,
    fraction: Option<f64>,
    out_dir: &Path,
    task: TableTask,
    seed: u64,
) -> Result<Vec<PathBuf>, CliError> {
    match fraction {
        None => {
            let path = out_dir.join(format!("triplets_{}.jsonl", task.name()));
            emit_jsonl(&triplets, &path).map_err(|e| CliError::domain(e.to_string()))?;
            println!("{}: {} triplets -> {}", task.name(), triplets.len(), path.display());
            Ok(vec![path])
        }
        Some(fraction) => {
            if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
                return Err(CliError::usage(format!(
                    "split must be in (0, 1), got {fraction}"
                )));
            }
            let mut rng = derive_rng(seed, &format!("split:{}", task.name()));
            triplets.shuffle(&mut rng);
            let train_len = (fraction * triplets.len() as f64).floor() as usize;
            let test = triplets.split_off(train_len);
            let train_path = out_dir.join(format!("triplets_{}_train.jsonl", task.name()));
            let test_path = out_dir.join(format!("triplets_{}_test.jsonl", task.name()));
            emit_jsonl(&triplets, &train_path).map_err(|e| CliError::domain(e.to_string()))?;
            emit_jsonl(&test, &test_path).map_err(|e| CliError::domain(e.to_string()))?;
            println!(
                "{}: {} train / {} test triplets -> {}, {}",
                task.name(),
                triplets.len(),
                test.len(),
                train_path.display(),
                test_path.display()
            );
            Ok(vec![train_path, test_path])
        }
    }
}

pub fn build_triplets(
    config: &RunConfig,
    seed: u64,
    out_dir: &Path,
    split_flag: Option<f64>,
) -> Result<(), CliError> {
    let clean = load_clean(config)?;
    let annotations_path = require_file(&config.dataset.annotations, "dataset.annotations")?;
    let annotations = load_annotation_file(annotations_path, &clean, "annotations")?;
    let dirty = match &config.dataset.dirty {
        Some(_) => {
            let path = require_file(&config.dataset.dirty, "dataset.dirty")?;
            load_csv(path, &null_markers(config)).map_err(|e| CliError::domain(e.to_string()))?
        }
        None => derive_dirty(&clean, &annotations)?,
    };
    let catalog = load_catalog(config)?;
    let tasks = config.parse_tasks()?;
    let split = split_flag.or(config.triplets.split);
    let context_rows = config.triplets.context_rows;

    let mut artifacts: Vec<PathBuf> = Vec::new();
    let mut rng = derive_rng(seed, "triplets");
    let mut aux_rng = derive_rng(seed, "aux");
    for task in tasks {
        let triplets = if task.is_error_related() {
            build_task_triplets(
                &clean,
                &dirty,
                &annotations,
                task,
                &catalog,
                context_rows,
                &mut rng,
            )
            .map_err(|e| CliError::domain(e.to_string()))?
        } else {
            let instances = if config.triplets.aux_instances == 0 {
                annotations.len()
            } else {
                config.triplets.aux_instances
            };
            let mut built = Vec::with_capacity(instances);
            for _ in 0..instances {
                let sub = sample_sub_table(&clean, context_rows + 1, &mut aux_rng)
                    .map_err(|e| CliError::domain(e.to_string()))?;
                built.push(
                    build_auxiliary_task(&sub, task, &catalog, &mut aux_rng)
                        .map_err(|e| CliError::domain(e.to_string()))?,
                );
            }
            built
        };
        artifacts.extend(write_split(triplets, split, out_dir, task, seed)?);
    }
    let artifact_refs: Vec<&Path> = artifacts.iter().map(PathBuf::as_path).collect();
    manifest::update(out_dir, &artifact_refs)?;
    Ok(())
}

fn build_backend(
    config: &RunConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Box<dyn GeneratorBackend>, CliError> {
    match config.generation.backend.as_str() {
        "rule" => Ok(Box::new(RuleBackend::new(
            config.typing.constraints()?,
            derive_seed(seed, "corruption"),
        ))),
        "replay" => {
            let recording = require_file(
                &config.generation.replay.recording,
                "generation.replay.recording",
            )?;
            Ok(Box::new(
                ReplayBackend::from_path(recording).map_err(|e| CliError::domain(e.to_string()))?,
            ))
        }
        "llm" => {
            let backend = LlmBackend::new(config.generation.llm.llm_config()?)
                .map_err(|e| CliError::usage(e.to_string()))?
                .with_audit_log(&out_dir.join("transport.jsonl"))
                .map_err(|e| CliError::domain(e.to_string()))?;
            Ok(Box::new(backend))
        }
        other => Err(CliError::usage(format!(
            "unknown backend `{other}` (expected rule, replay, or llm)"
        ))),
    }
}

pub fn generate(config: &RunConfig, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    let clean = load_clean(config)?;
    let backend = build_backend(config, seed, out_dir)?;
    let catalog = load_catalog(config)?;
    let injection = InjectionConfig {
        rho: config.generation.rho,
        type_ratio: config.generation.type_weights()?,
        sub_table_rows: config.generation.sub_table_rows,
        max_attempts: config.generation.max_attempts,
    };
    let mut rng = derive_rng(seed, "sampling");
    let outcome = inject_errors(&clean, &injection, backend.as_ref(), &catalog, &mut rng)
        .map_err(|e| CliError::domain(e.to_string()))?;

    let table_path = out_dir.join("generated.csv");
    let annotations_path = out_dir.join("annotations.json");
    let audit_path = out_dir.join("audit.jsonl");
    let budget_path = out_dir.join("budget.json");
    write_csv(&outcome.table, &table_path).map_err(|e| CliError::domain(e.to_string()))?;
    save_annotations(&outcome.annotations, &annotations_path)
        .map_err(|e| CliError::domain(e.to_string()))?;
    write_audit_log(&outcome.exchanges, &audit_path)
        .map_err(|e| CliError::domain(e.to_string()))?;
    let budget_json = serde_json::json!({
        "status": outcome.status,
        "backend": backend.fingerprint(),
        "budget": outcome.budget,
    });
    let mut budget_text =
        serde_json::to_string_pretty(&budget_json).map_err(|e| CliError::domain(e.to_string()))?;
    budget_text.push('\n');
    std::fs::write(&budget_path, budget_text).map_err(|e| CliError::domain(e.to_string()))?;
    manifest::update(
        out_dir,
        &[&table_path, &annotations_path, &audit_path, &budget_path],
    )?;

    let done: usize = outcome.budget.per_type_done.values().sum();
    match &outcome.status {
        InjectionStatus::Completed => {
            println!(
                "injected {done}/{} cells in {} attempts",
                outcome.budget.target, outcome.budget.attempts
            );
            Ok(())
        }
        InjectionStatus::Partial => {
            println!(
                "injected {done}/{} cells in {} attempts",
                outcome.budget.target, outcome.budget.attempts
            );
            eprintln!(
                "warning: budget unmet at the attempt cap; achieved counts: {:?}",
                outcome.budget.per_type_done
            );
            Ok(())
        }
        InjectionStatus::Aborted { reason } => Err(CliError::domain(format!(
            "generation aborted after {done}/{} cells: {reason} (partial results written)",
            outcome.budget.target
        ))),
    }
}

pub fn evaluate(config: &RunConfig, jobs: usize, out_dir: &Path) -> Result<(), CliError> {
    let clean = load_clean(config)?;
    let real_path = require_file(&config.dataset.annotations, "dataset.annotations")?;
    let real = load_annotation_file(real_path, &clean, "real annotations")?;
    let generated_path = config
        .evaluation
        .generated_annotations
        .clone()
        .unwrap_or_else(|| out_dir.join("annotations.json"));
    if !generated_path.is_file() {
        return Err(CliError::usage(format!(
            "generated annotations not found: {} (run `generate` first or set evaluation.generated_annotations)",
            generated_path.display()
        )));
    }
    let generated = load_annotation_file(&generated_path, &clean, "generated annotations")?;
    if real.is_empty() || generated.is_empty() {
        return Err(CliError::domain(
            "evaluation requires non-empty real and generated annotation sets",
        ));
    }

    let options = config.evaluation.metric_options();
    let compute = |provider: &dyn taberr_core::evaluation::EmbeddingProvider| {
        metric_report(&real, &generated, clean.schema(), provider, &options)
    };
    let run = || -> Result<MetricReport, CliError> {
        match config.evaluation.provider.as_str() {
            "hashed" => {
                let provider = HashedEmbedder::new(
                    config.evaluation.hashed.dimension,
                    config.evaluation.hashed.seed,
                )
                .map_err(|e| CliError::usage(e.to_string()))?;
                compute(&provider).map_err(|e| CliError::domain(e.to_string()))
            }
            "remote" => {
                let provider = RemoteEmbedder::new(config.evaluation.remote.remote_config()?)
                    .map_err(|e| CliError::usage(e.to_string()))?;
                compute(&provider).map_err(|e| CliError::domain(e.to_string()))
            }
            other => Err(CliError::usage(format!(
                "unknown embedding provider `{other}` (expected hashed or remote)"
            ))),
        }
    };
    let report = if jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::domain(e.to_string()))?;
        pool.install(run)?
    } else {
        run()?
    };

    let metrics_path = out_dir.join("metrics.json");
    let mut text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::domain(e.to_string()))?;
    text.push('\n');
    std::fs::write(&metrics_path, text).map_err(|e| CliError::domain(e.to_string()))?;
    manifest::update(out_dir, &[&metrics_path])?;

    for (k, score) in &report.s_epa {
        println!("s_epa k={k}: {score:.6}");
    }
    println!("column jaccard: {:.6}", report.jaccard);
    println!("js divergence (percent): {:.6}", report.js_divergence_percent);
    Ok(())
}

fn run_one_detector(
    entry: &DetectorEntry,
    dirty: &Table,
    clean: &Table,
    detector_config: &DetectorConfig,
    timeout_secs: u64,
    workdir: &Path,
) -> Result<FlagSet, DetectError> {
    if entry.kind == "external" {
        let detector = ExternalDetector {
            command: entry.command.clone(),
            timeout: std::time::Duration::from_secs(timeout_secs),
        };
        run_external_detector(&detector, dirty, workdir)
    } else {
        let which = BuiltinDetector::parse(&entry.kind)?;
        run_builtin_detector(which, dirty, detector_config, Some(clean))
    }
}

pub fn detect(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let clean = load_clean(config)?;
    let markers = null_markers(config);

    let real_dirty_path = require_file(&config.dataset.dirty, "dataset.dirty")?;
    let real_dirty =
        load_csv(real_dirty_path, &markers).map_err(|e| CliError::domain(e.to_string()))?;
    let real_annotations_path = require_file(&config.dataset.annotations, "dataset.annotations")?;
    let real_truth = load_annotation_file(real_annotations_path, &real_dirty, "real annotations")?;

    let generated_table_path = config
        .detection
        .generated_table
        .clone()
        .unwrap_or_else(|| out_dir.join("generated.csv"));
    let generated_annotations_path = config
        .detection
        .generated_annotations
        .clone()
        .unwrap_or_else(|| out_dir.join("annotations.json"));
    for (path, what) in [
        (&generated_table_path, "generated table"),
        (&generated_annotations_path, "generated annotations"),
    ] {
        if !path.is_file() {
            return Err(CliError::usage(format!(
                "{what} not found: {} (run `generate` first or set it under [detection])",
                path.display()
            )));
        }
    }
    let generated_dirty =
        load_csv(&generated_table_path, &markers).map_err(|e| CliError::domain(e.to_string()))?;
    let generated_truth = load_annotation_file(
        &generated_annotations_path,
        &generated_dirty,
        "generated annotations",
    )?;

    let typing = config.typing.typing_rules()?;
    let detector_config = DetectorConfig {
        placeholders: typing.placeholders.clone(),
        patterns: config.detection.pattern_regexes.clone(),
        z_threshold: typing.z_threshold,
    };
    let default_detectors = vec![
        DetectorEntry {
            name: "oracle".into(),
            kind: "oracle".into(),
            command: vec![],
        },
        DetectorEntry {
            name: "null".into(),
            kind: "null".into(),
            command: vec![],
        },
        DetectorEntry {
            name: "outlier".into(),
            kind: "outlier".into(),
            command: vec![],
        },
    ];
    let detectors = if config.detection.detectors.is_empty() {
        &default_detectors
    } else {
        &config.detection.detectors
    };

    let sides: [(&str, &Table, &AnnotationCollection); 2] = [
        ("generated", &generated_dirty, &generated_truth),
        ("real", &real_dirty, &real_truth),
    ];
    let mut detector_reports = serde_json::Map::new();
    let mut weights = serde_json::Map::new();
    for (side, _, truth) in &sides {
        let mut by_type = serde_json::Map::new();
        let total = truth.len() as f64;
        for ty in taberr_core::ErrorType::ALL {
            let count = truth.iter().filter(|a| a.error_type == ty).count();
            if count > 0 {
                by_type.insert(
                    ty.name().to_owned(),
                    serde_json::json!(count as f64 / total),
                );
            }
        }
        weights.insert((*side).to_owned(), serde_json::Value::Object(by_type));
    }

    for entry in detectors {
        let mut cells = serde_json::Map::new();
        for (side, dirty, truth) in &sides {
            let workdir = out_dir.join("detect").join(&entry.name).join(side);
            let outcome = run_one_detector(
                entry,
                dirty,
                &clean,
                &detector_config,
                config.detection.timeout_secs,
                &workdir,
            )
            .and_then(|flags| score_detection(&flags, truth, dirty.cell_count(), FpApportionment::ByWeight));
            let value = match outcome {
                Ok(report) => serde_json::json!({
                    "p_w": report.weighted.precision,
                    "r_w": report.weighted.recall,
                    "f_w": report.weighted.f1,
                    "overall": report.overall,
                    "zero_flags": report.zero_flags,
                }),
                Err(DetectError::TimedOut(t)) => {
                    serde_json::json!({"na": format!("timeout after {t:?}")})
                }
                Err(e) => serde_json::json!({"na": e.to_string()}),
            };
            cells.insert((*side).to_owned(), value);
        }
        detector_reports.insert(entry.name.clone(), serde_json::Value::Object(cells));
    }

    let report = serde_json::json!({
        "detectors": detector_reports,
        "weights": weights,
    });
    let detection_path = out_dir.join("detection.json");
    let mut text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::domain(e.to_string()))?;
    text.push('\n');
    std::fs::write(&detection_path, text).map_err(|e| CliError::domain(e.to_string()))?;
    manifest::update(out_dir, &[&detection_path])?;

    for (name, cells) in report["detectors"].as_object().unwrap() {
        for (side, value) in cells.as_object().unwrap() {
            match value.get("na") {
                Some(reason) => println!("{name} on {side}: n/a ({reason})"),
                None => println!(
                    "{name} on {side}: P_w={:.4} R_w={:.4} F_w={:.4}",
                    value["p_w"].as_f64().unwrap(),
                    value["r_w"].as_f64().unwrap(),
                    value["f_w"].as_f64().unwrap()
                ),
            }
        }
    }
    Ok(())
}

pub fn report(out_dir: &Path) -> Result<(), CliError> {
    let mut combined = serde_json::Map::new();
    let mut found = false;
    for (key, file) in [
        ("generation", "budget.json"),
        ("evaluation", "metrics.json"),
        ("detection", "detection.json"),
    ] {
        let path = out_dir.join(file);
        let value = match std::fs::read_to_string(&path) {
            Ok(text) => {
                found = true;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::domain(format!("corrupt {file}: {e}")))?
            }
            Err(_) => serde_json::Value::Null,
        };
        combined.insert(key.to_owned(), value);
    }
    if !found {
        return Err(CliError::domain(format!(
            "nothing to report: no stage artifacts in {}",
            out_dir.display()
        )));
    }
    let report_path = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(combined))
        .map_err(|e| CliError::domain(e.to_string()))?;
    text.push('\n');
    std::fs::write(&report_path, text).map_err(|e| CliError::domain(e.to_string()))?;
    manifest::update(out_dir, &[&report_path])?;
    println!("combined report -> {}", report_path.display());
    Ok(())
}
