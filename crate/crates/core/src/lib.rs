//! Emotion-cause pair extraction data pipeline: corpus handling, knowledge
//! annotation, instruction templating, causal blending and evaluation.

pub mod blend;
pub mod clients;
pub mod corpus;
pub mod eval;
pub mod knowledge;
pub mod pipeline;
pub mod template;

pub use blend::{BlendDataset, BlendStats, CausalRecord, MixRatio, Selection, Shortfall};
pub use clients::{
    ClientError, Clients, Completer, Decode, Embedder, EmbeddingVector, HttpClient,
    InferenceEndpoint, MockClient, MockConfig, Polarity, PolarityClassifier, PolarityVerdict,
    ReactionGenerator,
};
pub use corpus::{Clause, Corpus, CorpusFormat, Document, Pair, PairSet, SplitTag};
pub use eval::{MatchCounts, Metrics, RunReport};
pub use knowledge::{AnnotatedDocument, EmotionLabel, Knowledge, LabelDistribution, LabelScore};
pub use pipeline::{Pipeline, PipelineError, RunConfig};
pub use template::{InstructionRecord, TemplateConfig};
