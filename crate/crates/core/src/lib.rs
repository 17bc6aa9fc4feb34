//! Boltzmann planar maps through their peeling processes.

pub mod error;
pub mod halfplane;
pub mod hp;
pub mod peel;
pub mod percolation;
pub mod rng;
pub mod series;
pub mod stats;
pub mod walks;
pub mod weights;

pub use error::{Error, Result};
pub use series::SimpleDiskData;
pub use weights::{DiskData, NuMeasure, WeightSequence};
