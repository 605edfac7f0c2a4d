//! Hybrid task/stream runtime: a stream server hosting an embedded log broker
//! and directory monitors, a client library for distributed streams, and a
//! dependency-driven task runtime that uses both.

pub mod broker;
pub mod client;
pub mod codec;
pub mod monitor;
pub mod protocol;
pub mod registry;
pub mod server;
pub mod stream;
pub mod types;
pub mod runtime;
pub mod wire;
