//! Fisher information on finite and Gaussian local data, zero-bias transforms,
//! certified asymptotic tangent simulation plans, monotone channel metrics,
//! and the linear programs comparing finite experiments.

pub mod channels;
pub mod cli;
pub mod deficiency;
pub mod fisher;
pub mod harness;
pub mod lp;
pub mod measures;
pub mod numeric;
pub mod tangent_sim;
pub mod zerobias;
