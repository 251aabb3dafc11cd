//! Export verified tools as Python sources, an OpenAPI document, or a running
//! list/describe/invoke service.

mod openapi;
mod service;
mod source;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{ToolSpec, ToolStatus};

pub use openapi::{check_openapi, emit_openapi, openapi_structure, split_server, OperationShape};
pub use service::{router, serve_tools, ServiceHandle};
pub use source::{
    digest_text, emit_executable_tool, harness_digest, harness_region, parse_call_args, parse_py_literal, parse_tool_source, py_ident, py_str,
    SourceParseError, HARNESS_BEGIN, HARNESS_BODY, HARNESS_END, REQUEST_TIMEOUT_SECS,
};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("tool name {0} is used more than once")]
    NameCollision(String),
    #[error("tool {0} is not verified")]
    NotVerified(String),
    #[error("tool set is empty")]
    EmptySet,
    #[error("path {path} {method} is produced by more than one tool")]
    PathCollision { path: String, method: String },
    #[error("cannot bind {addr}: {reason}")]
    Bind { addr: String, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub sources: usize,
    pub tools_validated: usize,
    pub pass_rate: f64,
}

/// Verified tools with unique names.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSet {
    tools: Vec<ToolSpec>,
    pub metadata: CorpusMetadata,
}

impl ToolSet {
    pub fn new(tools: Vec<ToolSpec>, metadata: CorpusMetadata) -> Result<Self, ExportError> {
        if tools.is_empty() {
            return Err(ExportError::EmptySet);
        }
        let mut seen = BTreeSet::new();
        for t in &tools {
            if t.status != ToolStatus::Passed {
                return Err(ExportError::NotVerified(t.tool_id.clone()));
            }
            if !seen.insert(t.name.as_str()) {
                return Err(ExportError::NameCollision(t.name.clone()));
            }
        }
        Ok(Self { tools, metadata })
    }

    /// Keep only verified tools; later duplicates of a name are dropped.
    pub fn from_verified(tools: impl IntoIterator<Item = ToolSpec>, metadata: CorpusMetadata) -> Result<Self, ExportError> {
        let mut seen = BTreeSet::new();
        let kept: Vec<ToolSpec> = tools.into_iter().filter(|t| t.status == ToolStatus::Passed).filter(|t| seen.insert(t.name.clone())).collect();
        Self::new(kept, metadata)
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}
