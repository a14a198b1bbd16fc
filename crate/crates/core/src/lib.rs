//! Agent-based simulator of flash crashes and fire-sale contagion across a
//! network of leveraged funds and limit order book markets.

pub mod agents;
#[cfg(feature = "cli")]
pub mod cli;
pub mod engine;
pub mod macrofin;
pub mod metrics;
pub mod netgen;
pub mod orderbook;
