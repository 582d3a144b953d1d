//! Travelling officer problem: parking-violation capture planning, labelled
//! imitation datasets and a small neural policy that learns the planners.

pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod labeling;
pub mod model;
pub mod neural;
pub mod optimizers;
pub mod seed;

pub use error::{Error, Result};
pub use features::{
    build_feature_vector, extract_state_vector, FeatureVector, StateVector, TimeSlicing,
};
pub use model::{
    Budget, EventSet, Fine, NodeId, ParkingEvent, PathSolution, ProblemGraph, Seconds,
};
