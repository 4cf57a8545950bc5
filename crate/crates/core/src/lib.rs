//! Core of the GenOnet workbench: natural-language scenario extraction,
//! retrieval-augmented ns-3 code generation, sandboxed execution and result
//! interpretation, tied together by a conversational orchestrator.

pub mod clock;
pub mod codegen;
pub mod config;
pub mod digest;
pub mod intent;
pub mod interpret;
pub mod llm;
pub mod orchestrator;
pub mod retrieval;
pub mod sandbox;
pub mod scenario;
pub mod units;

pub use digest::Digest;
pub use llm::{LlmGateway, LlmRequest, ProviderMode};
pub use scenario::ScenarioSpec;
