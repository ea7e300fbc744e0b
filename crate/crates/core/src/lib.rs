//! Revealed-preference tests of stable marriage with collective households.
//!
//! Couples choose private and public goods and split private consumption
//! between the spouses. A matching is stable when no group of agents prefers
//! to leave its households and rematch. This crate decides whether observed
//! data can be rationalized by a stable matching under three divorce
//! regimes, measures how far they are from it, and bounds the intrahousehold
//! sharing rule.
//!
//! Start with [`io::read_market`] and [`rationalize::check_rationalizable`].

pub mod cli;
pub mod exec;
pub mod graph;
pub mod identify;
pub mod io;
pub mod lp;
pub mod market;
pub mod oracle;
pub mod rationalize;
pub mod simulate;
pub mod stats;
