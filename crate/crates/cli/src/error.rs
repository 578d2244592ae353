//! Error classes and the process exit-code contract.

use std::path::PathBuf;

use kgaug_core::assembler::AssembleError;
use kgaug_core::cleaner::CleanError;
use kgaug_core::corpus::CorpusError;
use kgaug_core::embed::EmbedError;
use kgaug_core::eval::EvalError;
use kgaug_core::prompt::PromptError;
use kgaug_core::router::RouteError;
use kgaug_core::tokenizer::VocabError;
use kgaug_gateway::GatewayError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("reading config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what} not found: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Raised when every augmentation request of a batch failed at the
/// transport level, which points at an unreachable endpoint.
#[derive(Debug, Error)]
#[error("all {failed} augmentation requests failed; first error: {first}")]
pub struct EndpointUnavailable {
    pub failed: usize,
    pub first: String,
}

#[derive(Debug, Error)]
#[error("run directory {0} is locked by another process (remove the .lock file if it is stale)")]
pub struct RunLocked(pub PathBuf);

#[derive(Debug, Error)]
#[error("stage `{stage}` failed")]
pub struct StageFailed {
    pub stage: &'static str,
}

/// Process exit codes, one per error class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitClass {
    Other = 1,
    Config = 2,
    Parse = 3,
    Network = 4,
    Divergence = 5,
    Io = 6,
}

impl ExitClass {
    pub fn code(self) -> i32 {
        self as i32
    }
}

fn classify_one(e: &(dyn std::error::Error + 'static)) -> Option<ExitClass> {
    use ExitClass::*;
    if e.is::<ConfigError>() || e.is::<RouteError>() || e.is::<toml::de::Error>() {
        return Some(Config);
    }
    if e.is::<EndpointUnavailable>() {
        return Some(Network);
    }
    if let Some(e) = e.downcast_ref::<GatewayError>() {
        return Some(match e {
            GatewayError::Params(_) => Config,
            GatewayError::Cache(_) => Io,
            _ => Network,
        });
    }
    if let Some(e) = e.downcast_ref::<EmbedError>() {
        return Some(match e {
            EmbedError::Divergence { .. } => Divergence,
            EmbedError::Config(_) => Config,
            EmbedError::Io(_) => Io,
            _ => Parse,
        });
    }
    if let Some(e) = e.downcast_ref::<CorpusError>() {
        return Some(match e {
            CorpusError::Io { .. } | CorpusError::MissingFile(_) => Io,
            CorpusError::BadLayoutName(_) | CorpusError::UnknownLayout(_) => Config,
            _ => Parse,
        });
    }
    if let Some(e) = e.downcast_ref::<VocabError>() {
        return Some(match e {
            VocabError::Io(_) => Io,
            _ => Parse,
        });
    }
    if let Some(e) = e.downcast_ref::<PromptError>() {
        return Some(match e {
            PromptError::Io(_) => Io,
            PromptError::UnknownTemplate(_) => Config,
            _ => Parse,
        });
    }
    if let Some(e) = e.downcast_ref::<CleanError>() {
        return Some(match e {
            CleanError::Io(_) => Io,
            CleanError::EmptyOutcomes => Other,
            _ => Parse,
        });
    }
    if let Some(e) = e.downcast_ref::<AssembleError>() {
        return match e {
            AssembleError::Io(_) => Some(Io),
            AssembleError::BadFormat(_) => Some(Config),
            AssembleError::Corpus(inner) => classify_one(inner),
            _ => Some(Parse),
        };
    }
    if e.is::<EvalError>() {
        return Some(Parse);
    }
    if e.is::<serde_json::Error>() {
        return Some(Parse);
    }
    if e.is::<std::io::Error>() {
        return Some(Io);
    }
    None
}

/// The class of the first recognized error in the chain.
pub fn classify(err: &anyhow::Error) -> ExitClass {
    err.chain().find_map(classify_one).unwrap_or(ExitClass::Other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classes_follow_the_chain() {
        let e = anyhow::Error::new(EmbedError::Divergence {
            epoch: 1,
            batch: 2,
            loss: f64::NAN,
        })
        .context(StageFailed { stage: "train" });
        assert_eq!(classify(&e), ExitClass::Divergence);
        let e = anyhow::Error::new(ConfigError::Invalid("x".into()));
        assert_eq!(classify(&e).code(), 2);
        let e: anyhow::Error = Err::<(), _>(std::io::Error::other("disk"))
            .context("writing")
            .unwrap_err();
        assert_eq!(classify(&e), ExitClass::Io);
        let e = anyhow::Error::new(GatewayError::Exhausted {
            attempts: 4,
            last: Box::new(GatewayError::RateLimited),
        });
        assert_eq!(classify(&e), ExitClass::Network);
        assert_eq!(classify(&anyhow::anyhow!("other")), ExitClass::Other);
    }
}
