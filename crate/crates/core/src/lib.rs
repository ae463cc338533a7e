//! Query routing for networks of bibliographic databases.
//!
//! Each remote library catalogue is sampled with training queries. The
//! returned records are summarized into per-database term statistics, and
//! incoming conjunctive queries are routed to the databases estimated to hold
//! the most matching records.

pub mod dictionary;
pub mod error;
pub mod gateway;
pub mod knowledge;
pub mod maintenance;
pub mod model;
pub mod protocol;
pub mod query_filter;
pub mod ranker;
pub mod registry;
pub mod sampler;
pub mod service;
pub mod sim;

pub use dictionary::{GlobalTermDictionary, TermId};
pub use error::*;
pub use gateway::{RemoteDatabase, SearchTarget};
pub use knowledge::{ContentKnowledge, RecordIdStore};
pub use model::{Attribute, BibRecord, ConjunctiveQuery, Stoplist, Term};
pub use query_filter::{Timestamp, TrainingQueryLibrary, UserQueryLog};
pub use ranker::{rank, DbStatus, RankCandidate, RankedDatabase};
pub use registry::{DatabaseEntry, Registry};
pub use sampler::{generate_synthetic_queries, Sampler, SamplingReport};
pub use service::{BrokerConfig, BrokerService};
pub use sim::LibraryCorpus;
