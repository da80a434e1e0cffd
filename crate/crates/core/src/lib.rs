//! Window shifting for contrast-enhanced CT.
//!
//! The crate bundles everything needed to go from calibrated CT volumes to
//! augmented, normalized training slices:
//!
//! * [`volume_io`]: NIfTI-1 and raw sidecar volumes, NPY slice export.
//! * [`stats`]: dataset foreground statistics, base window and shift bounds.
//! * [`windowing`]: clipping, rescaling, normalization and window-level sampling.
//! * [`augment`]: baseline intensity and geometric augmentations, policies.
//! * [`pipeline`]: per-slice augmentation driver with an audit trail.
//! * [`metrics`]: dice, liver/tumor contrast and difficult-case detection.
//! * [`phantom`]: synthetic abdominal phantoms with known statistics.
//! * [`cli`]: the batch commands behind the `winshift` binary.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise.

pub mod augment;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod volume_io;
pub mod windowing;

pub use error::{Error, Result};
pub use par::Execution;
pub use rng::RngStream;
pub use stats::ForegroundStats;
pub use volume_io::{HuVolume, Plane, SegmentationMask};
pub use windowing::{Normalization, ViewingWindow, WindowShiftPolicy};

/// Version tag written into every JSON document the crate emits.
pub const SCHEMA_VERSION: u32 = 1;
