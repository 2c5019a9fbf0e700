use std::path::PathBuf;

use lensprobe_core::analysis::AnalysisError;
use lensprobe_core::archive::ArchiveError;
use lensprobe_core::checkpoint::CheckpointError;
use lensprobe_core::corpus::CorpusError;
use lensprobe_core::lens::LensError;
use lensprobe_core::model::ModelError;
use lensprobe_core::tokenizer::TokenizerError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Archive {
        path: PathBuf,
        #[source]
        source: ArchiveError,
    },
    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{}: {source}", path.display())]
    Vocab {
        path: PathBuf,
        #[source]
        source: TokenizerError,
    },
    #[error("{}: line {line}: {message}", path.display())]
    CorpusFormat { path: PathBuf, line: usize, message: String },
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("lens: {0}")]
    Lens(#[from] LensError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty corpus: nothing to report")]
    EmptyCorpus,
    #[error("report: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
