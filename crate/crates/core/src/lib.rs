pub mod agent;
pub mod cli;
pub mod corpus;
pub mod demo;
pub mod eval;
pub mod extraction;
pub mod graph;
pub mod indexing;
pub mod llm;
pub mod prompts;
pub mod retrieval;
pub mod text;
pub mod vector;
