//! Pluggable external interpretation of task descriptions.
//!
//! An [`ExternalInterpreter`] turns a prompt into candidate requirements.
//! [`interpret`] bounds the call with a deadline, validates the answer
//! against the description and falls back to the rule parser on any
//! failure.

use std::collections::BTreeSet;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::{ParseError, RequirementParser, TaskDescription};
use crate::requirements::TaskRequirements;

/// Prompt sent to external interpreters. `{known_types}` and
/// `{description}` are substituted.
pub const DEFAULT_PROMPT: &str = "Interpret the task description below. Answer with one JSON object with the fields \
task_type (one of: {known_types}), history_window (seconds), history_dimensions (subset of \
[\"processing_speed\", \"completion_accuracy\"]) and resources (list of {\"kind\":\"storage\",\"min_mb\":n} \
or {\"kind\":\"cpu\",\"min_class\":\"low\"|\"moderate\"|\"high\"}). Include only requirements stated or \
directly implied by the text.\n\nDescription: {description}";

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("interpreter endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("interpreter timed out after {0:?}")]
    Timeout(Duration),
    #[error("interpreter returned an unusable answer: {0}")]
    BadAnswer(String),
}

pub trait ExternalInterpreter: Send + Sync {
    fn interpret(&self, prompt: &str) -> Result<TaskRequirements, InterpretError>;
}

pub fn render_prompt(template: &str, desc: &TaskDescription, known_types: &BTreeSet<String>) -> String {
    let types = known_types.iter().map(String::as_str).collect::<Vec<_>>().join(", ");
    template.replace("{known_types}", &types).replace("{description}", &desc.text)
}

/// JSON-over-HTTP interpreter: POSTs `{"prompt": ...}` and expects the
/// requirements object as the response body.
#[derive(Debug, Clone)]
pub struct HttpInterpreter {
    pub endpoint: String,
    pub timeout: Duration,
}

impl HttpInterpreter {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
        }
    }
}

impl ExternalInterpreter for HttpInterpreter {
    fn interpret(&self, prompt: &str) -> Result<TaskRequirements, InterpretError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut resp = agent
            .post(&self.endpoint)
            .send_json(serde_json::json!({ "prompt": prompt }))
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => InterpretError::Timeout(self.timeout),
                other => InterpretError::Unreachable(other.to_string()),
            })?;
        resp.body_mut()
            .read_json::<TaskRequirements>()
            .map_err(|e| InterpretError::BadAnswer(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", content = "reason", rename_all = "snake_case")]
pub enum InterpretSource {
    External,
    /// Rule parser result, with why the external answer was not used.
    Fallback(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub requirements: TaskRequirements,
    pub source: InterpretSource,
}

/// Asks `client` first and accepts its answer only if it validates against
/// the text; otherwise returns the rule parser's result.
pub fn interpret(
    desc: &TaskDescription,
    known_types: &BTreeSet<String>,
    parser: &RequirementParser,
    client: &Arc<dyn ExternalInterpreter>,
    prompt_template: &str,
    deadline: Duration,
) -> Result<Interpretation, ParseError> {
    let prompt = render_prompt(prompt_template, desc, &parser.vocabulary(known_types));
    let (tx, rx) = mpsc::channel();
    let worker = Arc::clone(client);
    // Detached on purpose: a hung client must not hold up the caller.
    std::thread::spawn(move || {
        let _ = tx.send(worker.interpret(&prompt));
    });
    let outcome = match rx.recv_timeout(deadline) {
        Ok(Ok(req)) => parser
            .validate(&req, &desc.text, known_types)
            .map(|()| req)
            .map_err(|e| format!("validation failed: {e}")),
        Ok(Err(e)) => Err(e.to_string()),
        Err(_) => Err(InterpretError::Timeout(deadline).to_string()),
    };
    match outcome {
        Ok(requirements) => Ok(Interpretation {
            requirements,
            source: InterpretSource::External,
        }),
        Err(reason) => {
            log::warn!("external interpreter not used: {reason}");
            Ok(Interpretation {
                requirements: parser.parse(desc, known_types)?,
                source: InterpretSource::Fallback(reason),
            })
        }
    }
}
