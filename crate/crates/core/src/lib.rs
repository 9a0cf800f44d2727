//! Edge-assisted adaptive streaming simulator.
//!
//! The crate models an edge node that rewrites the segment requests of
//! mobile video clients. Its pieces:
//!
//! * [`model`]: bitrate ladder, screen resolutions, radio traces and the
//!   ECAS parameter tuple.
//! * [`ecas`]: the ECAS candidate scoring and quality selection.
//! * [`baselines`]: TBA, BBA, SARA, GBBA and EADAS for comparison.
//! * [`sim`]: the trace-driven session engine and its event log.
//! * [`qoe`]: session metrics, the composite QoE score and a P.1203-style
//!   export.
//! * [`oracle`]: brute-force parameter labels for throughput prefixes.
//! * [`predictor`]: static parameters or precomputed prediction tables.
//! * [`config`]: the TOML experiment configuration.
//!
//! ```
//! use ecas_core::ecas::{select_quality, PlayerView};
//! use ecas_core::model::{BitrateLadder, EcasParams, ScreenResolution};
//!
//! let ladder = BitrateLadder::default_ladder();
//! let view = PlayerView {
//!     buffer_s: 6.0,
//!     window_mean_kbps: 3000.0,
//!     window_fill: 5,
//!     resolution: ScreenResolution::R1080p,
//!     next_segment_index: 40,
//! };
//! let q = select_quality(&view, &ladder, &EcasParams::default(), 4, 6000.0);
//! // 8000 kbps would leave less than 6 s of buffer; the stall penalty of
//! // the medium-risk levels then favours the current mean
//! assert_eq!(ladder.bitrate(q), 3000.0);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod ecas;
pub mod error;
pub mod model;
pub mod oracle;
pub mod predictor;
pub mod qoe;
pub mod sim;

pub use error::{Error, Result};
