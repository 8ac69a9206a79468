//! Logic-unit knowledge bases for multi-turn how-to question answering.
//!
//! Documents are converted into logic units (LUs) — header, body,
//! prerequisite and an outcome-driven linker — indexed by header, and served
//! through a session loop that follows linker branches from step to step.
//! Chunk- and document-retrieval baselines and the evaluation metrics share
//! the same retrieval and transcript machinery.

pub mod baselines;
pub mod corpus;
pub mod gateway;
pub mod kb;
pub mod lu;
pub mod markdown;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod selector;
pub mod session;
pub mod text;

/// Default scalar: embeddings are unit-norm to within 1e-9 and rankings are
/// compared exactly, which needs double precision.
pub type Real = f64;

pub type Embedding = gateway::Embedding<Real>;
pub type KnowledgeBase = kb::KnowledgeBase<Real>;
pub type Pipeline = pipeline::Pipeline<Real>;
pub type Engine = session::Engine<Real>;
pub type MetricsReport = metrics::MetricsReport<Real>;

pub use gateway::{Gateway, GatewayConfig, GatewayError};
pub use kb::KbError;
pub use lu::{LinkerBranch, LinkerToken, LogicUnit, LuError, LuType, MetaData, SourceDocument};
pub use pipeline::PipelineError;
pub use session::SessionError;
