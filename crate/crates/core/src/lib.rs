pub mod classify;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod hdl_extract;
pub mod pipeline;
pub mod prompts;
pub mod retrieve;
pub mod selfverify;
pub mod vindex;
