pub mod container;
pub mod corpus;
pub mod mutator;
pub mod stats;
pub mod runner;
pub mod analysis;
pub mod probe;
pub mod report;
