//! Two-stream single-shot video object detector: a feature pyramid per frame,
//! temporal aggregation by flow-guided warping (motion stream) and by
//! deformable self-guided sampling (sampling stream), shared anchor heads,
//! late fusion and optional Seq-NMS, plus a synthetic video generator and a
//! VID-style evaluator.

pub mod backbone;
pub mod boxes;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod flow;
pub mod heads;
pub mod image_io;
pub mod losses;
pub mod motion;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod postprocess;
pub mod sampling;
pub mod selfcheck;
pub mod synth;
pub mod tensor;
pub mod viz;
pub mod weights;

pub use error::{Error, Result};
