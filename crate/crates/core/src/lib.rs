//! Progressive knowledge extraction for low-resource code generation, with a
//! mini-ALPG test-program dialect as the target language.

pub mod corpus;
pub mod difficulty;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod minialpg;
pub mod pipeline;
pub mod retrieval;
mod template;
