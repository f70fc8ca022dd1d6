//! Bridge between an OPC-DA-style item server and a miniature virtual-sensor
//! stream node.
//!
//! The crate is organised around the data path:
//!
//! * [`model`] — item values, qualities and the `StreamElement` data unit.
//! * [`protocol`] — the line-oriented "OPC-lite" wire codec.
//! * [`server`] — a standalone item server with per-item generators.
//! * [`client`] — client sessions used by wrappers (TCP or in-process).
//! * [`wrapper`] — the polling converter with periodic and change-based
//!   production modes and a runtime-adjustable update period.
//! * [`vsn`] — the virtual-sensor node: SQL-like selection, windowed
//!   aggregation, processors, hot deployment from a watched directory.
//! * [`control`] — the TCP control surface for live wrappers.
//! * [`demo`] — the bundled surface-treatment error-detection scenario.
//!
//! Everything time-sensitive runs against the [`clock::Clock`] abstraction so
//! the whole stack can execute on the deterministic scheduler in [`sim`].

pub mod clock;
pub mod client;
pub mod control;
pub mod demo;
pub mod model;
pub mod protocol;
pub mod server;
pub mod sim;
pub mod vsn;
pub mod wrapper;

/// Protocol version negotiated by `HELLO`.
pub const PROTOCOL_VERSION: i64 = 1;

/// Default OPC-lite listen port.
pub const DEFAULT_OPC_PORT: u16 = 4840;

/// Default control-plane listen port.
pub const DEFAULT_CONTROL_PORT: u16 = 4850;
