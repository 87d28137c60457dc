//! Harmonic heat flow on flat complex vector bundles over the circle and
//! the square 2-torus, with Jordan–Hölder semisimplification of the
//! input monodromy and an isomorphism check against the flow limit.
//!
//! Layout, bottom-up:
//! - [`matcore`]: small dense complex matrices and metric-relative algebra
//! - [`bundle`]: periodic grids, connection and gauge fields, holonomy
//! - [`flow`]: tension, energy, time stepping and monitors
//! - [`jholder`]: filtrations and graded objects of commuting families
//! - [`verify`]: semisimplicity, isomorphism verdicts, subbundle diagnostics
//! - [`experiment`]: config-driven runs and on-disk artifacts

pub mod bundle;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod jholder;
pub mod matcore;
mod serde_mat;
pub mod verify;

pub use bundle::{BaseGrid, ConnectionField, DecompositionField, GaugeField, Monodromy};
pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowState, Integrator, MonitorSeries, Termination};
pub use jholder::{Filtration, GradedObject, RepFamily, TieBreak, Tolerances};
pub use matcore::{BackgroundMetric, CMat, C64};
pub use verify::{IsoVerdict, SubbundleTrace, Verdict};
