//! Entity-indexed sparse latent memory for multi-shot video generation.
//!
//! The crate models a story as a script of shots that reference entities
//! (characters, objects, scenes). An [`EntityBank`] keeps sparse latent patches
//! for each entity, shots are conditioned only on the tokens of the entities
//! they reference, and the bank is refreshed from keyframes after every shot.
//! The video backbone is replaced by deterministic mocks so every stage can
//! be checked exactly.

pub mod bank;
pub mod codec;
pub mod conditioning;
pub mod control;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod script;
pub mod tensor;

pub use bank::{
    build_entry, AcceptDecision, AcceptOutcome, BankConfig, DescriptorProvider, EntityBank,
    EntityEntry, EntryOrigin, LatentPatch, SyntheticDescriptor,
};
pub use codec::{vae_decode, vae_encode, Patchifier, SparseToken, TokenGrid, VaeMock};
pub use conditioning::{
    cost_report, denoise_shot, prune_tokens, retrieve_memory, scatter_to_dense,
    scatter_tokens_back, ConditioningState, CostReport, MockDit, PatchItem, PatchSet, Retrieval,
    TokenMask,
};
pub use error::{Error, Result};
pub use rng::{derive_seed, SplitMix64};
pub use script::{
    extract_entity_refs, parse_script, validate_script, EntityCategory, EntityId, StoryScript,
};
pub use tensor::{Frame, LatentGrid, MemoryLayout, PatchCoord, PatchMask, PixelMask, Tensor};
