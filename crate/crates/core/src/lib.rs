//! Traffic-style spatiotemporal forecasting that stays usable when the
//! spatial dependency structure drifts between data collection periods.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`]: dense f64 matrices, a reverse-mode autodiff tape, Adam.
//! - [`dataio`]: signal series / road graph containers, CSV and binary
//!   formats, z-scoring, sliding windows, chronological splits.
//! - [`shiftmetrics`]: rank-correlation (Kendall tau) and DTW diagnostics
//!   that separate *relational* drift from *temporal-profile* drift.
//! - [`msgd`]: partitions the daily cycle into maximally dissimilar time
//!   intervals, which become the expert domains.
//! - [`moe`]: per-domain expert graphons, a gate that mixes them from input
//!   windows, Gumbel reparameterized sampling, episodic training step.
//! - [`backbones`]: compact ST-GNN forecasting heads (graphon mixture,
//!   single static graphon, temporal-only control).
//! - [`trainkit`]: training loop with early stopping, masked metrics,
//!   checkpoint format.
//! - [`synthbench`]: seeded synthetic benchmark with planted regimes and
//!   edge rewiring for out-of-distribution evaluation.

pub mod backbones;
pub mod dataio;
pub mod moe;
pub mod msgd;
pub mod shiftmetrics;
pub mod synthbench;
pub mod tensor;
pub mod trainkit;
