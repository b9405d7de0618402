//! Fact mining, relation discovery, story organization and slide export for
//! data-driven storytelling.

pub mod export;
pub mod gateway;
pub mod ingest;
pub mod meta;
pub mod miner;
pub mod model;
pub mod organizer;
pub mod payload;
pub mod relations;
