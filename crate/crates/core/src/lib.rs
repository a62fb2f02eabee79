//! Budget-bounded KV-cache management for frame-structured autoregressive
//! generation.
//!
//! The cache keeps the text prompt and conditioning image as permanent
//! anchors and holds a window of `W` history frames whose combined size never
//! exceeds one frame's token count `B_one`. Older frames get geometrically
//! fewer tokens (`2^{-min(d, W-1)}` of the budget by default), masked tokens
//! are removed outright, and temporal positions are rebased as the window
//! slides so that rotary phases stay continuous.
//!
//! | module | role |
//! |---|---|
//! | [`cache`] | cache state, regions, snapshot format |
//! | [`alloc`] | decay kernel, allocation plans, integer budgets |
//! | [`rope`] | 3D rotary embedding, rebase |
//! | [`attention`] | masked-cache attention, region statistics |
//! | [`packer`] | full / sliding-window / PackCache policies |
//! | [`sim`] | deterministic toy generation loop |
//! | [`cost`] | analytic attended-key model |
//! | [`cli`] | `packcache` command line |

pub mod alloc;
pub mod attention;
pub mod cache;
pub mod cli;
pub mod cost;
pub mod error;
pub mod packer;
pub mod rope;
pub mod sim;

pub use alloc::{AllocationPlan, DecayParams, Fraction, PlanSource, QuotaRule};
pub use cache::{CacheEntry, FrameCache, KvCache, Position3D, Region};
pub use error::{Error, Result};
pub use packer::{CachePolicy, MassMode, PackReport, PolicyKind};
pub use rope::{RebaseMode, RopeConfig};
pub use sim::{GenerationTrace, SimConfig};
