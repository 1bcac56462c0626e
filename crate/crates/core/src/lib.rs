//! Energy-based diffusion motion planning guided by point clouds and
//! artificial potential fields.

pub mod apf;
pub mod autodiff;
pub mod bench;
pub mod datagen;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod kdtree;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod planner;
pub mod pursuit;
pub mod seed;
pub mod svg;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
