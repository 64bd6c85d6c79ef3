//! IntOpt: intent-driven LLVM IR optimization.
//!
//! Builds a knowledge base of transform passes from LLVM sources, retrieves
//! passes per optimization intent, collects the compiler analyses those
//! passes need, and drives a three-stage prompting pipeline (formulate,
//! refine, realize). Candidates are checked with Alive2 or differential
//! fuzzing.

pub mod ir;
pub mod kb;
pub mod toolchain;
pub mod verify;
pub mod analysis;
pub mod batch;
pub mod bench;
pub mod config;
pub mod llm;
pub mod retrieval;
pub mod strategy;
pub mod pipeline;
pub mod report;
