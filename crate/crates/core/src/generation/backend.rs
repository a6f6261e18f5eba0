//! Generator backends: a chat-completion HTTP endpoint, a deterministic
//! replay of recorded exchanges, and the seeded rule-based baseline.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::ConstraintConfig;
use crate::generation::{rule_corrupt, GenerationError};
use crate::http::{post_json_with_retry, HttpFailure};
use crate::prompt::Instruction;
use crate::table::{serialize_markdown, CellRef, Table};

/// Turns an (instruction, sub-table) prompt into raw text. Implementations
/// never touch the caller's tables.
pub trait GeneratorBackend: Send + Sync {
    fn generate(&self, instruction: &Instruction, sub_table: &Table)
        -> Result<String, GenerationError>;

    /// Backend name plus a digest of its configuration, recorded in reports
    /// so results can be traced to the exact setup that produced them.
    fn fingerprint(&self) -> String;
}

/// Stable digest of one request: the instruction text and the serialized
/// sub-table. Keys audit logs and replay recordings.
pub fn request_fingerprint(instruction_text: &str, serialized_table: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(instruction_text.as_bytes());
    hasher.update([0x1f]);
    hasher.update(serialized_table.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub auth_token: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub retries: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: String::new(),
            model: String::new(),
            auth_token: None,
            temperature: 0.7,
            max_tokens: 256,
            timeout: Duration::from_secs(30),
            retries: 3,
        }
    }
}

/// One HTTP attempt, as logged to the transport audit file.
#[derive(Debug, Serialize)]
struct TransportAuditLine<'a> {
    request_fingerprint: &'a str,
    attempt: u32,
    status: Option<u16>,
    raw_response: &'a str,
}

/// Chat-style JSON-over-HTTP backend. The instruction rides as the system
/// message, the Markdown sub-table as the user message; 429/5xx/transport
/// failures are retried with backoff, and every attempt can be logged to an
/// audit file.
pub struct LlmBackend {
    config: LlmConfig,
    client: reqwest::blocking::Client,
    audit: Option<Mutex<BufWriter<File>>>,
}

impl LlmBackend {
    pub fn new(config: LlmConfig) -> Result<Self, GenerationError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GenerationError::Config(e.to_string()))?;
        Ok(LlmBackend {
            config,
            client,
            audit: None,
        })
    }

    pub fn with_audit_log(mut self, path: &Path) -> Result<Self, GenerationError> {
        self.audit = Some(Mutex::new(BufWriter::new(File::create(path)?)));
        Ok(self)
    }

    fn log_attempt(&self, fingerprint: &str, attempt: u32, status: Option<u16>, body: &str) {
        if let Some(audit) = &self.audit {
            let mut writer = audit.lock().expect("audit writer poisoned");
            let line = TransportAuditLine {
                request_fingerprint: fingerprint,
                attempt,
                status,
                raw_response: body,
            };
            if serde_json::to_writer(&mut *writer, &line).is_ok() {
                let _ = writer.write_all(b"\n");
                let _ = writer.flush();
            }
        }
    }
}

impl GeneratorBackend for LlmBackend {
    fn generate(
        &self,
        instruction: &Instruction,
        sub_table: &Table,
    ) -> Result<String, GenerationError> {
        let markdown = serialize_markdown(sub_table);
        let fingerprint = request_fingerprint(&instruction.text, &markdown);
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": instruction.text},
                {"role": "user", "content": markdown},
            ],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let text = post_json_with_retry(
            &self.client,
            &self.config.endpoint,
            self.config.auth_token.as_deref(),
            &body,
            self.config.retries,
            |attempt, a| self.log_attempt(&fingerprint, attempt, a.status, &a.body),
        )
        .map_err(|failure| match failure {
            HttpFailure::Transport { attempts, message } => {
                GenerationError::Transport { attempts, message }
            }
            HttpFailure::Status { status, body } => GenerationError::Http { status, body },
        })?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| GenerationError::MalformedResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| {
                GenerationError::MalformedResponse(
                    "response lacks choices[0].message.content".into(),
                )
            })
    }

    fn fingerprint(&self) -> String {
        format!(
            "llm:{}@{}:temperature={}:max_tokens={}",
            self.config.model, self.config.endpoint, self.config.temperature, self.config.max_tokens
        )
    }
}

#[derive(Debug, Deserialize)]
struct RecordedExchange {
    request_fingerprint: String,
    raw_response: String,
}

/// Replays recorded responses keyed by request fingerprint. Repeated
/// fingerprints are served in recording order; an unknown request is a
/// replay miss.
pub struct ReplayBackend {
    responses: Mutex<HashMap<String, VecDeque<String>>>,
    digest: String,
}

impl ReplayBackend {
    pub fn from_path(path: &Path) -> Result<Self, GenerationError> {
        let bytes = std::fs::read(path)?;
        let digest = hex::encode(Sha256::digest(&bytes));
        let mut responses: HashMap<String, VecDeque<String>> = HashMap::new();
        let reader = BufReader::new(&bytes[..]);
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let exchange: RecordedExchange = serde_json::from_str(&line)?;
            responses
                .entry(exchange.request_fingerprint)
                .or_default()
                .push_back(exchange.raw_response);
        }
        Ok(ReplayBackend {
            responses: Mutex::new(responses),
            digest,
        })
    }
}

impl GeneratorBackend for ReplayBackend {
    fn generate(
        &self,
        instruction: &Instruction,
        sub_table: &Table,
    ) -> Result<String, GenerationError> {
        let fingerprint =
            request_fingerprint(&instruction.text, &serialize_markdown(sub_table));
        let mut responses = self.responses.lock().expect("replay map poisoned");
        responses
            .get_mut(&fingerprint)
            .and_then(VecDeque::pop_front)
            .ok_or(GenerationError::ReplayMiss { fingerprint })
    }

    fn fingerprint(&self) -> String {
        format!("replay:sha256:{}", self.digest)
    }
}

/// The rule-based baseline as a backend: picks a cell of the sampled
/// sub-table at random and corrupts it with the instruction's error type.
pub struct RuleBackend {
    rules: ConstraintConfig,
    seed: u64,
    rng: Mutex<ChaCha8Rng>,
}

impl RuleBackend {
    pub fn new(rules: ConstraintConfig, seed: u64) -> Self {
        RuleBackend {
            rules,
            seed,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl GeneratorBackend for RuleBackend {
    fn generate(
        &self,
        instruction: &Instruction,
        sub_table: &Table,
    ) -> Result<String, GenerationError> {
        let error_type = instruction
            .error_type
            .ok_or(GenerationError::MissingErrorType)?;
        let mut rng = self.rng.lock().expect("rule rng poisoned");
        let mut cells: Vec<CellRef> = sub_table
            .rows()
            .iter()
            .flat_map(|row| {
                sub_table
                    .schema()
                    .iter()
                    .map(move |col| CellRef::new(row.row_id(), col.clone()))
            })
            .collect();
        cells.shuffle(&mut *rng);
        for cell in cells {
            match rule_corrupt(sub_table, &cell, error_type, &self.rules, &mut *rng) {
                Ok(proposal) => return Ok(serde_json::to_string(&proposal.to_record())?),
                Err(GenerationError::UnsatisfiableCell { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        // Plain prose; the injector counts the unparseable reply as a
        // rejected attempt and moves on.
        Ok(format!(
            "no cell in the sub-table supports a {error_type} error"
        ))
    }

    fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for fd in &self.rules.fds {
            hasher.update(fd.to_string().as_bytes());
            hasher.update([0x1f]);
        }
        format!(
            "rule:seed={}:fds={}",
            self.seed,
            hex::encode(&hasher.finalize()[..8])
        )
    }
}
