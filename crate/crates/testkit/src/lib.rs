//! Offline test substrate: a mock API server, a corpus of degraded
//! documentation pages with authored oracle answers, and helpers that wire
//! the pipeline to both.

pub mod author;
pub mod corpus;
pub mod mock;
pub mod testbed;

pub use author::{RecordingBackend, ScriptAuthor};
pub use corpus::{build_corpus, docs_dir, oracle_dir, Corpus, Degradation, FixtureDoc, MockService};
pub use mock::{start_mock, FaultMode, LoggedRequest, MockError, MockRoute, MockServer, RequestLog};
pub use testbed::{author_gateway, record_fixtures, regenerate_fixtures, scripted_gateway, Testbed, TestbedError};
