//! Teacher-student reinforcement learning for mapless rover navigation.

pub mod exec;
pub mod nnkernel;
pub mod noise;
pub mod obs;
pub mod reward;
pub mod simkin;
pub mod terrain;
pub mod teacher;
pub mod vecenv;
pub mod dataset;
pub mod student;
pub mod eval;
