pub mod bundles;
pub mod cohomology;
pub mod conjugacy;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod foliation;
pub mod model;
pub mod orbits;
pub mod torus;
