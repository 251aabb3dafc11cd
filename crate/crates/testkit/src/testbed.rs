//! Wiring for tests: the corpus mock, executors pointed at it, and oracle
//! gateways backed by the script author or by recorded fixtures.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use doc2tool_core::compiler::MethodPolicy;
use doc2tool_core::executor::{Executor, ExecutorConfig, MAX_BODY_BYTES};
use doc2tool_core::oracles::{HashingEmbedder, OracleError, OracleGateway, ScriptedBackend};
use doc2tool_core::paramkb::KB_FILE;
use doc2tool_core::pipeline::{open_kb, GenerationMode, Layout, Pipeline, StageError};
use doc2tool_core::refiner::DEFAULT_MAX_ROUNDS;
use doc2tool_core::validator::{RuleJudge, Validator};
use thiserror::Error;

use crate::author::{RecordingBackend, ScriptAuthor};
use crate::corpus::{build_corpus, docs_dir, Corpus, CorpusError};
use crate::mock::{start_mock, MockError, MockServer};

/// Executor timeout used against the mock.
pub const MOCK_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Mock(#[from] MockError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("{0}")]
    Other(String),
}

/// The corpus plus a running mock serving every documented service.
pub struct Testbed {
    pub corpus: Corpus,
    pub mock: MockServer,
}

impl Testbed {
    pub async fn start() -> Result<Self, TestbedError> {
        let corpus = build_corpus()?;
        let mock = start_mock(corpus.mock_routes()).await?;
        Ok(Self { corpus, mock })
    }

    pub fn executor_config(&self) -> ExecutorConfig {
        ExecutorConfig {
            timeout: MOCK_TIMEOUT,
            courtesy_delay: Duration::ZERO,
            max_body_bytes: MAX_BODY_BYTES,
            policy: MethodPolicy::default(),
            rewrites: self.corpus.rewrites(&self.mock.base_url()),
        }
    }

    pub fn executor(&self) -> Arc<Executor> {
        Arc::new(Executor::new(self.executor_config()).expect("http client"))
    }

    pub fn validator(&self) -> Validator {
        Validator::new(self.executor(), Arc::new(RuleJudge))
    }

    pub fn pipeline(&self, gateway: OracleGateway, mode: GenerationMode) -> Pipeline {
        let executor = self.executor();
        Pipeline {
            gateway,
            validator: Validator::new(executor.clone(), Arc::new(RuleJudge)),
            executor,
            policy: MethodPolicy::default(),
            jobs: 4,
            max_rounds: DEFAULT_MAX_ROUNDS,
            mode,
        }
    }

    /// Full pipeline over the corpus pages into `out`; the KB lives at
    /// `out/paramkb.jsonl`.
    pub async fn run_pipeline(&self, gateway: OracleGateway, mode: GenerationMode, out: &Path) -> Result<serde_json::Value, TestbedError> {
        let pipeline = self.pipeline(gateway.clone(), mode);
        let layout = Layout::new(out);
        let mut kb = open_kb(&out.join(KB_FILE), &gateway).await?;
        Ok(pipeline.run_all(&docs_dir(), &layout, &mut kb).await?)
    }
}

/// Gateway answering from the script author.
pub fn author_gateway(corpus: &Corpus) -> OracleGateway {
    OracleGateway::new(Arc::new(ScriptAuthor::new(corpus.clone())), Arc::new(HashingEmbedder))
}

/// Gateway answering only from the recorded fixtures in `dir`.
pub fn scripted_gateway(dir: &Path) -> Result<OracleGateway, TestbedError> {
    Ok(OracleGateway::scripted(ScriptedBackend::load_dir(dir)?))
}

/// Run the pipeline in every generation mode with the script author and
/// collect the answers it gave. The result keys exactly the prompts the
/// pipeline issues over the corpus.
pub async fn record_fixtures() -> Result<ScriptedBackend, TestbedError> {
    let mut all = ScriptedBackend::new();
    for mode in [GenerationMode::Direct, GenerationMode::Both] {
        let bed = Testbed::start().await?;
        let recorder = Arc::new(RecordingBackend::new(Arc::new(ScriptAuthor::new(bed.corpus.clone()))));
        let gateway = OracleGateway::new(recorder.clone(), Arc::new(HashingEmbedder));
        let out = tempfile::tempdir().map_err(|e| TestbedError::Other(e.to_string()))?;
        bed.run_pipeline(gateway, mode, out.path()).await?;
        all.merge(recorder.recorded());
    }
    Ok(all)
}

/// Replace the fixture directory with a fresh recording.
pub async fn regenerate_fixtures(dir: &Path) -> Result<usize, TestbedError> {
    let recorded = record_fixtures().await?;
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| TestbedError::Other(format!("{}: {e}", dir.display())))?;
    }
    recorded.write_dir(dir)?;
    Ok(recorded.len())
}
