//! Simulation, evaluation and training-data generation for active visual
//! search on 360° panoramas.
//!
//! A searcher controls only the yaw and pitch of a narrow field-of-view
//! camera. At each step an *imaginator* predicts where the target probably
//! is, the prediction is converted into an ego-centric suggestion, and an
//! *actor* either rotates or submits the current view.

pub mod actor;
pub mod bench;
pub mod convert;
pub mod datagen;
pub mod episode;
pub mod geometry;
pub mod imagination;
pub mod mock;
pub mod panorama;
pub mod plots;
pub mod seeding;
pub mod synthetic;
pub mod wire;

pub use geometry::{Direction, FoVSpec, ViewPose};
