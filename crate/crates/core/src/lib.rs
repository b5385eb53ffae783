//! Reconfigurable atomic shared memory over a deterministic simulated network.

pub mod client;
pub mod codec;
pub mod consensus;
pub mod dap;
pub mod fragment;
pub mod history;
pub mod message;
pub mod netsim;
pub mod runner;
pub mod scenario;
pub mod server;
pub mod trace;
pub mod types;
pub mod verify;
