//! Learned clearance fields, local safety balls and relaxed discrete-time
//! high-order control barrier functions for shape-aware navigation.

pub mod cbf;
pub mod control;
pub mod dataset;
pub mod geometry;
pub mod mapfile;
pub mod net;
pub mod sim;
