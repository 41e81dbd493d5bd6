//! Grounded clinical question answering over EHR note excerpts.
//!
//! Four subtasks share one LLM gateway: question interpretation, evidence
//! identification, answer generation and answer-evidence alignment.

pub mod consensus;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gateway;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod pipelines;
pub mod programs;

pub use error::{GatewayError, MetricError, ModelError, ParseError, PipelineError, RenderError};
pub use gateway::{ChatBackend, ChatMessage, ChatRequest, ChatResponse, Gateway};
pub use model::{AlignmentLink, CaseRecord, GoldAnnotations, PredictionBundle, Subtask};
pub use programs::{defaults::ProgramSet, PromptProgram};
