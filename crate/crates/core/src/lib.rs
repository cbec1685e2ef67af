//! Generative flow network training on small discrete spaces.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod flow;
pub mod mdp;
pub mod nn;
pub mod objectives;
pub mod par;
pub mod replay;
pub mod reward;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use mdp::{Action, Dag, Edge, Env, EnvKind, State, Trajectory};
pub use par::Exec;
