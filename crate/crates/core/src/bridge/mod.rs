//! Newline-delimited JSON bridge for environments running in another
//! process, reached over a child's stdio or a TCP socket.

mod client;
mod protocol;
mod server;

pub use client::{BridgeConfig, BridgeEndpoint, BridgeEnvironment, BridgeError, BridgeSession};
pub use protocol::{encode, Request, Response, WireObservation, PROTOCOL_VERSION};
pub use server::{serve, serve_tcp, spawn_loopback, BridgeHandler, CraftHandler, EchoHandler};
