//! Test-only support: reference models that recompute expected results from
//! raw inputs without going through the code under test, plus harnesses that
//! drive the server and agents in-process.

pub mod acl;
pub mod durability;
pub mod episode;
pub mod gauntlet;
pub mod graph_model;
pub mod oracle;
pub mod redaction;
pub mod scenarios;
pub mod strategies;
pub mod world;
