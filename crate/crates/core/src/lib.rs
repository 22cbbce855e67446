//! Conflict-free real-time collaborative notebooks.
//!
//! Three mechanisms keep collaborators from stepping on each other:
//!
//! * **cell locks** ([`access`]): per-user read/edit flags on cells; hidden
//!   cells are redacted on the wire and rendered as blurred blocks;
//! * **variable locks** ([`effects`], [`access`]): every execution is
//!   statically analysed before it runs and halted if it would write,
//!   mutate, delete or read a protected runtime variable;
//! * **parallel cell groups** ([`kernel`]): indented groups of tabs, each
//!   with its own execution scope layered over a snapshot of the global
//!   runtime, with sync, mark-as-main merge and `_group.name`
//!   cross-references.
//!
//! Sessions are driven through a sequenced, replayable event log
//! ([`protocol`], [`session`]); scripted multi-user scenarios live in
//! [`scenario`].

pub mod access;
pub mod codes;
pub mod effects;
pub mod kernel;
pub mod lang;
pub mod model;
pub mod protocol;
pub mod report;
pub mod scenario;
pub mod session;

pub use model::{CellId, Notebook, TabId, UserId};
