//! Continuous key agreement as the key-establishment layer for
//! delay-tolerant links.
//!
//! - [`cka`]: ratchet-tree group key agreement with an exporter.
//! - [`bundle`]: bundle model and its deterministic codec.
//! - [`bpsec`]: integrity and confidentiality blocks keyed from the exporter.
//! - [`keyservice`]: a directory node for pre-key bundles.
//! - [`baseline`]: a timed model of a session handshake, for comparison.

pub mod baseline;
pub mod bpsec;
pub mod bundle;
pub mod cka;
pub mod codec;
pub mod crypto;
pub mod keyservice;
pub mod time;

pub use time::SimTime;
