//! Temporal recommendation with recurrent Poisson factorization: a shared
//! latent-factor Poisson process per (user, item) pair whose intensity
//! combines time-modulated preference factors with socially triggered
//! self-excitation, plus simulation, variational inference, prediction,
//! and diagnostics on top.

pub mod config;
pub mod domain;
pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod simulate;
pub mod special;

pub mod commands;

pub use error::{Result, RpfError};
