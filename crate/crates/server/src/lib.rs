//! Network session server and command-line front end for `nbcollab`.

pub mod cli;
pub mod hub;
pub mod server;

pub use server::{Server, ServerConfig};
