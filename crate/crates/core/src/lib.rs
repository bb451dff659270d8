//! Active channel-gain mapping with UAV swarms.
//!
//! A synthetic urban world ([`grid`]) carries a ground-truth gain field
//! ([`channel`]); UAVs follow paths from one of the [`planners`], measure the
//! gain along the way, and a Kriging predictor ([`kriging`]) reconstructs the
//! field. [`mission`] runs that loop and [`metrics`] scores the result.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod kriging;
pub mod linalg;
pub mod metrics;
pub mod mission;
pub mod par;
pub mod planners;
pub mod rng;

pub use error::{Error, Result};
