//! Visually explainable recommendation: regional image attention, a
//! visually gated review GRU, joint training and the evaluation protocol.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod gru;
pub mod numerics;
pub mod params;
pub mod trainer;
pub mod vecf;

pub use error::{Error, Result, ShapeError};
