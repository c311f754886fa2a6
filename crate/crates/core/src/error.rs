// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the analysis stages.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("duplicate function `{0}`")]
    DuplicateFunction(String),
    #[error("function `{function}` jumps to undefined label `{label}`")]
    DanglingLabel { function: String, label: String },
    #[error("alias chain is cyclic: {}", .0.join(" -> "))]
    CyclicAlias(Vec<String>),
    #[error("alias `{alias}` points at unknown name `{target}`")]
    DanglingAlias { alias: String, target: String },
    #[error("`{caller}` calls `{callee}`, which is neither defined, aliased nor declared extern")]
    UnknownCallee { caller: String, callee: String },
    #[error("API `{0}` is not a function of the library")]
    UnknownApi(String),
    #[error("argument {index} at {site} is pointer-typed and cannot be filtered")]
    PointerArgument { site: String, index: usize },
    #[error("unknown architecture `{0}`")]
    UnknownArch(String),
    #[error("architecture mismatch: expected {expected}, found {found}")]
    ArchMismatch { expected: String, found: String },
    #[error("syscall number {0} appears twice in the table")]
    DuplicateNumber(i64),
    #[error("syscall name `{0}` appears twice in the table")]
    DuplicateName(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("trace line {line}: {reason}")]
    TraceParse { line: usize, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },
}

impl Error {
    pub(crate) fn syntax(line: usize, reason: impl Into<String>) -> Self {
        Error::Syntax {
            line,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            reason: err.to_string(),
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
