//! Numerical core for two-component Gross–Pitaevskii ground states with
//! attractive intra-species and repulsive inter-species interactions.

pub mod grid;
pub mod ode;
pub mod par;
pub mod townes;
pub mod gpe;
pub mod trial;
pub mod asymptotics;
pub mod io;
