//! Cycle-approximate simulator and bit-exact INT8 functional engine for a
//! multi-PU systolic-array GEMM accelerator that streams weights from HBM
//! into URAM-backed tiles.
//!
//! The crate is organised bottom-up:
//!
//! * [`workload`] lowers Conv/FC/pool layers to GEMM shapes and tiles them.
//! * [`functional`] is the INT8 reference datapath (im2col, GEMM, rescale,
//!   activation, residual add, max-pool).
//! * [`hbm`] models AXI port bandwidth and the IM2COL address/length bundles.
//! * [`putiming`] is the per-PU cycle model and bound classification.
//! * [`scheduler`] implements baseline + adaptive weight-transfer scheduling
//!   under URAM capacity, with a brute-force oracle and a sweep-line validator.
//! * [`niu`] emulates per-round noise injection into weights.
//! * [`system`] and [`cli`] glue everything into multi-PU reports.
//!
//! [`oracle`] holds slow, independent reference implementations used by the
//! `verify` command and by the test suites.

pub mod cli;
pub mod config;
pub mod error;
pub mod functional;
pub mod hbm;
pub mod niu;
pub mod oracle;
pub mod putiming;
pub mod scheduler;
pub mod system;
pub mod verify;
pub mod workload;
pub mod zoo;

pub use error::{Error, Result};
