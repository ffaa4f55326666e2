//! Patch-based photo-to-sketch synthesis.
//!
//! The pipeline has three stages:
//!
//! 1. **Crude sketch** ([`mrf`]) — each small photo patch retrieves candidate
//!    photo/sketch pairs from the training set; a grid MRF solved by loopy
//!    belief propagation picks compatible sketch patches, which are averaged
//!    into a crude sketch.
//! 2. **Retraining** ([`nmf`]) — larger patches of the crude sketch are
//!    re-expressed through per-location nonnegative dictionaries learned
//!    from the training sketches, recovering longer-range strokes.
//! 3. **Recombination** ([`blend`]) — the retrained patches are placed in
//!    three passes (corners, edges, centers) and merged with a
//!    multiresolution spline ([`pyramid`]), so no pass ever blends against
//!    an empty canvas.
//!
//! [`dataset`] generates deterministic synthetic photo/sketch pairs for
//! desk-scale experiments, and [`pipeline`] wires the stages together.

pub mod blend;
pub mod dataset;
pub mod error;
pub mod image;
pub mod mrf;
pub mod nmf;
pub mod patching;
pub mod pipeline;
pub mod pyramid;

pub use error::{Error, Result};
pub use image::GrayImage;
pub use pipeline::{synthesize, PipelineConfig, SynthesisOutput};
