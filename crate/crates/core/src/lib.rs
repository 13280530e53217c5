//! Two-party secure inference over additively shared fixed-point values.

pub mod gadgets;
pub mod he;
pub mod layers;
pub mod model;
pub mod ot;
pub mod report;
pub mod ring;
pub mod runtime;
pub mod sharing;
pub mod testkit;
pub mod transport;
