//! Test beds: a character stream for sequence learning and a gridworld
//! operant-conditioning box.

pub mod charlm;
pub mod skinner;
