//! Optimizable prompt programs and the output grammars they request.
//!
//! A [`PromptProgram`] is an instruction plus typed input/output fields and
//! few-shot demos. [`PromptProgram::render`] appends the output-format
//! contract itself, so the parsers in [`grammar`] and the prompts cannot
//! drift apart when the optimizer rewrites the instruction.

pub mod defaults;
pub mod grammar;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use grammar::{
    format_st2, format_st4, parse_labeled_field, parse_st2, parse_st4, SentenceVerdict,
    St2Parse, St4Parse, VerdictLabel,
};

use crate::error::{ModelError, RenderError};
use crate::gateway::ChatMessage;

/// Output field requested first when chain-of-thought is on.
pub const REASONING_FIELD: &str = "reasoning";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub description: String,
}

impl Field {
    pub fn new(name: &str, description: &str) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Demo {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptProgram {
    pub name: String,
    pub instruction: String,
    pub input_fields: Vec<Field>,
    pub output_fields: Vec<Field>,
    #[serde(default)]
    pub demos: Vec<Demo>,
    #[serde(default)]
    pub chain_of_thought: bool,
}

pub type Inputs = BTreeMap<String, String>;

impl PromptProgram {
    pub fn validate(&self) -> Result<(), RenderError> {
        let invalid = |reason: String| RenderError::InvalidProgram {
            program: self.name.clone(),
            reason,
        };
        if self.instruction.trim().is_empty() {
            return Err(invalid("empty instruction".into()));
        }
        let mut names = BTreeSet::new();
        for f in self.input_fields.iter().chain(&self.output_fields) {
            if f.name.is_empty() || !names.insert(f.name.as_str()) {
                return Err(invalid(format!("duplicate or empty field name `{}`", f.name)));
            }
        }
        if self.chain_of_thought && names.contains(REASONING_FIELD) {
            return Err(invalid("`reasoning` is reserved when chain_of_thought is on".into()));
        }
        let inputs: BTreeSet<&str> = self.input_fields.iter().map(|f| f.name.as_str()).collect();
        let outputs: BTreeSet<&str> = self.output_names().collect();
        for (i, demo) in self.demos.iter().enumerate() {
            if let Some(k) = demo.inputs.keys().find(|k| !inputs.contains(k.as_str())) {
                return Err(invalid(format!("demo {i} has undeclared input `{k}`")));
            }
            if let Some(k) = demo.outputs.keys().find(|k| !outputs.contains(k.as_str())) {
                return Err(invalid(format!("demo {i} has undeclared output `{k}`")));
            }
        }
        Ok(())
    }

    /// Output labels in response order, `reasoning` first under chain-of-thought.
    pub fn output_names(&self) -> impl Iterator<Item = &str> {
        self.chain_of_thought
            .then_some(REASONING_FIELD)
            .into_iter()
            .chain(self.output_fields.iter().map(|f| f.name.as_str()))
    }

    fn format_contract(&self) -> String {
        let mut out = String::from("---\n\nYour input fields are:\n");
        for f in &self.input_fields {
            out.push_str(&format!("- {}: {}\n", f.name, f.description));
        }
        out.push_str(
            "\nRespond with exactly the following labeled fields, in this order, \
             each label at the start of a new line:\n",
        );
        if self.chain_of_thought {
            out.push_str(&format!(
                "{REASONING_FIELD}: Think step by step in order to produce the remaining fields.\n"
            ));
        }
        for f in &self.output_fields {
            out.push_str(&format!("{}: {}\n", f.name, f.description));
        }
        out.trim_end().to_string()
    }

    /// Deterministic message list: system (instruction + format contract),
    /// one user/assistant pair per demo, then the user turn with `inputs`.
    pub fn render(&self, inputs: &Inputs) -> Result<Vec<ChatMessage>, RenderError> {
        self.validate()?;
        if let Some(missing) = self.input_fields.iter().find(|f| !inputs.contains_key(&f.name)) {
            return Err(RenderError::MissingInput(missing.name.clone()));
        }
        let mut messages = Vec::with_capacity(2 + 2 * self.demos.len());
        messages.push(ChatMessage::system(format!(
            "{}\n\n{}",
            self.instruction.trim_end(),
            self.format_contract()
        )));
        for demo in &self.demos {
            messages.push(ChatMessage::user(labeled_block(
                self.input_fields.iter().map(|f| f.name.as_str()),
                &demo.inputs,
            )));
            messages.push(ChatMessage::assistant(labeled_block(
                self.output_names(),
                &demo.outputs,
            )));
        }
        messages.push(ChatMessage::user(labeled_block(
            self.input_fields.iter().map(|f| f.name.as_str()),
            inputs,
        )));
        Ok(messages)
    }

    /// Extracts one output field from a raw completion.
    pub fn extract(&self, raw: &str, field: &str) -> String {
        let labels: Vec<&str> = self.output_names().collect();
        parse_labeled_field(raw, field, &labels)
    }

    /// Hex SHA-256 of the serialized program.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("program serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn with_instruction(&self, instruction: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            ..self.clone()
        }
    }

    pub fn with_demos(&self, demos: Vec<Demo>) -> Self {
        Self {
            demos,
            ..self.clone()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ModelError::Parse {
                path: path.display().to_string(),
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut text = serde_json::to_string_pretty(self).expect("program serializes");
        text.push('\n');
        crate::dataset::write_atomic(path.as_ref(), text.as_bytes())
    }
}

fn labeled_block<'a>(names: impl Iterator<Item = &'a str>, values: &BTreeMap<String, String>) -> String {
    names
        .filter_map(|n| values.get(n).map(|v| format!("{n}: {}", v.trim())))
        .collect::<Vec<_>>()
        .join("\n\n")
}
