//! Numerical laboratory for convex billiards, invariant circles, Liouville
//! tables, boundary spectral invariants and a small KAM engine.

pub mod billiard;
pub mod circles;
pub mod geometry;
pub mod kam;
pub mod liouville;
pub mod melrose;
pub mod numerics;
pub mod orbits;
pub mod quantize;
