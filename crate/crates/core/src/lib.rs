//! Exemplar-guided illumination transfer.
//!
//! Moves the global illumination of an exemplar image onto a source image
//! while keeping the source's local structure, without decomposing either
//! image into illumination and reflectance. The output minimizes
//!
//! ```text
//! E(o) = α‖K o − K c‖² + β‖M o‖² + γ‖o − s‖²
//! ```
//!
//! where `K` is a row-stochastic smoothing operator ([`kernels`]), `M = I − W`
//! holds locally linear reconstruction weights of the source ([`lle`]), `s`
//! is the source and `c` the exemplar. The minimizer is one sparse symmetric
//! positive-definite solve per plane ([`solve`]).
//!
//! ```no_run
//! use iit::{exemplar, io, pipeline};
//!
//! let source = io::load_image("dark.png")?;
//! let ex = exemplar::clahe(&source, &exemplar::ClaheParams::default())?;
//! let (out, diag) = pipeline::iit_transfer(&source, &ex, &pipeline::IitParams::default())?;
//! io::save_image("out.png", &out, io::BitDepth::Eight)?;
//! println!("{}", pipeline::run_report(&diag).to_json()?);
//! # Ok::<(), iit::Error>(())
//! ```

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod exemplar;
pub mod io;
pub mod kernels;
pub mod lle;
pub mod oracle;
pub mod pipeline;
pub mod raster;
pub mod solve;
pub mod sparse;

pub use error::{Error, Result};
pub use raster::RasterImage;
