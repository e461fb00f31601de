//! Particle-filter reconstruction of cardiac activation from body-surface
//! potentials.
//!
//! The state of a particle is a handful of activation centers on a surface
//! mesh, a geodesic radius per center and a discrete mode choosing between
//! candidate conduction metrics. See [`filter::run_filter`] for the driver and
//! [`maps`] for the estimators computed from its trace.
//!
//! Works without `std` (the `alloc` crate is required); the default `parallel`
//! feature spreads per-particle work over a rayon pool without changing results.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod filter;
pub mod forward;
pub mod geodesic;
pub mod maps;
pub mod mesh;
mod par;
pub mod synth;
pub mod template;

pub use error::{Error, Result};
pub use filter::{
    run_filter, Direction, Ensemble, FilterConfig, FilterTrace, Mode, Model, Particle, ResamplingScheme,
};
pub use forward::{build_dipole_layer, zero_mean, TransferOperator};
pub use geodesic::{build_table, Backend, GeodesicTable};
pub use maps::{ActivationMap, ScalarMap};
pub use mesh::{make_test_mesh, ElectrodeSet, MeshKind, TriMesh};
pub use template::FrontTemplate;
