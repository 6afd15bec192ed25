//! Semi-infinite-programming collision avoidance for a padded-polygon robot
//! among point obstacles, with nominal and robust (ellipsoidal-uncertainty)
//! solvers, a closed-loop MPC simulator and a small benchmark harness.

pub mod bench;
pub mod cli;
pub mod constraint_lin;
pub mod distance_field;
pub mod dynamics;
pub mod geometry;
pub mod lower_level;
pub mod map_io;
pub mod ocp_core;
pub mod simulator;
pub mod svg;
pub mod sip_solver;
pub mod uncertainty;
