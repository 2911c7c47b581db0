//! Prompt construction, completion backends, response parsing and text
//! encoding for the two intent channels (node behavior, edge connection).

pub mod client;
pub mod encoder;
pub mod mock;
pub mod prompt;
pub mod report;

pub use client::{
    CacheEntry, CacheOnlyBackend, CompletionCache, CountingBackend, HttpConfig, LlmBackend,
    LlmClient, LlmError, RemoteBackend, RetryPolicy,
};
pub use encoder::{cosine, Embedding, HashingEncoder, RemoteEncoder, TextEncoder};
pub use mock::{MockBackend, MOCK_MODEL_ID};
pub use prompt::{
    build_audit_prompt, build_profile_prompt, AuditEndpoint, ContextBuilder, ProfileInput, Prompt,
    PromptContext, PromptKind, RelationContext, TraceStats,
};
pub use report::{parse_audit_report, AuditReport, Verdict, VerdictFields};

pub const DEFAULT_EMBED_DIM: usize = 256;
