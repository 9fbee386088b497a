//! Terrain-aware trajectory planning for ground robots.
//!
//! The pipeline turns a raw point cloud into a smooth, time-parameterized
//! 3D trajectory whose height can be actively controlled:
//!
//! 1. [`vgf`] keeps only the points a robot of a given size can stand on.
//! 2. [`gridmap`] voxelizes the cloud and builds an exact distance field.
//! 3. [`penalty_field`] estimates local planes per voxel, derives a travel
//!    penalty and diffuses it horizontally.
//! 4. [`path_search`] runs A* over standable voxels.
//! 5. [`minco`], [`objective`] and [`solver`] optimize a piecewise-quintic
//!    trajectory against safety, time, smoothness, dynamics and height costs.
//!
//! [`planner`] wires these together, [`bench`] generates synthetic scenes and
//! runs randomized trials, and [`cli`] exposes everything as subcommands.

pub mod bench;
pub mod cli;
pub mod cloud_io;
pub mod error;
pub mod gridmap;
pub mod minco;
pub mod objective;
pub mod path_search;
pub mod penalty_field;
pub mod planner;
pub mod solver;
pub mod vgf;

pub use cloud_io::{Point3, PointCloud};
pub use error::{Error, Result};
