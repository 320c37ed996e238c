//! Multi-cell RAN slicing simulator with multi-agent reinforcement learning
//! controllers (DQN and A2C, with and without graph attention).

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod neural;
pub mod plotdata;
pub mod radio;
pub mod rng;
pub mod scenario;
pub mod selftest;
pub mod slice;
pub mod sweep;
pub mod tensor;
pub mod toy;
pub mod trainer;
pub mod traffic;

pub use error::{Error, Result};
