//! Turn REST API documentation into validated, executable tools.
//!
//! Stages: [`docingest`] (documents to API JSON), [`compiler`] (API JSON to
//! tool IR), [`executor`] and [`validator`] (invoke and label), [`paramkb`]
//! and [`refiner`] (repair failing tools), [`exporter`] (Python sources,
//! OpenAPI, tool service). [`pipeline`] strings them together.

pub mod compiler;
pub mod docingest;
pub mod executor;
pub mod exporter;
pub mod oracles;
pub mod paramkb;
pub mod pipeline;
pub mod prompts;
pub mod refiner;
pub mod validator;
