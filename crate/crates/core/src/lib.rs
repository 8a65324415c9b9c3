//! Randomized informationally complete Pauli measurements on product states:
//! POVM frames, readout noise, shot sampling, repeated-settings estimation,
//! parallel detector tomography and blended scheduling.
#![no_std]
// NaN-rejecting checks are written as `!(x < bound)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod estimator;
pub mod noise;
pub mod pauli;
pub mod povm;
pub mod qdt;
pub mod rng;
pub mod schedule;
pub mod sim;

pub use error::{Error, ParseErrorKind, Result};
pub use estimator::{estimate, EstimateReport, MomentAccumulator, Moments};
pub use noise::{AssignmentMatrix, DetectorModel, TelegraphProcess};
pub use pauli::{Basis, Observable, Pauli, PauliString, ProductState};
pub use povm::{BasisDistribution, DualFrame, LocalPovm, ProductPovm};
pub use qdt::{InputState, Recovery, RecoverySettings, TomographyData};
pub use schedule::{Caps, Schedule};
pub use sim::{MeasurementSetting, Outcome, SettingBlock};
