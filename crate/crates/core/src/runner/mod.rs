//! Generation and judgment: drives a completion endpoint over original and
//! mutated prompts, runs both oracles on every completion and appends the
//! labelled outcomes to an append-only ledger.

mod campaign;
mod endpoint;
mod ledger;
mod oracle;
mod stub;

pub use campaign::{
    evaluate_generations, generate, run_campaign, CampaignItem, CampaignOptions, CampaignSummary,
    TemperatureProfile,
};
pub use endpoint::{
    complete, CompletionBackend, FinishReason, GenerationRequest, GenerationResult, HttpEndpoint,
    RetryPolicy,
};
pub use ledger::{
    append_jsonl, read_jsonl, GenerationRecord, Ledger, LedgerPaths, OracleLogRefs, OutcomeRecord,
    PromptRef, RequestRecord,
};
pub use oracle::{run_oracles, OracleRun, OracleVerdict, SandboxPolicy};
pub use stub::{StubBackend, StubServer};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("endpoint {endpoint} unreachable after {attempts} attempts: {reason}")]
    EndpointUnreachable {
        endpoint: String,
        attempts: u32,
        reason: String,
    },
    #[error("model `{0}` unknown to endpoint")]
    ModelUnknown(String),
    #[error("prompt exceeds the model context: {0}")]
    ContextOverflow(String),
    #[error("generation failed: {0}")]
    GenerationError(String),
    #[error("sandbox setup failed: {0}")]
    SandboxSetupFailure(String),
    #[error("ledger {path}: line {line}: {reason}")]
    MalformedLedger {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("ledger inconsistency: {0}")]
    Inconsistent(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Mutator(#[from] crate::mutator::MutatorError),
}

impl RunnerError {
    /// Whether the failure came from the completion endpoint.
    pub fn is_endpoint_failure(&self) -> bool {
        matches!(
            self,
            Self::EndpointUnreachable { .. }
                | Self::ModelUnknown(_)
                | Self::ContextOverflow(_)
                | Self::GenerationError(_)
        )
    }
}
