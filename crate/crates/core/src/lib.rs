//! Toolkit for turning asynchronous event-camera streams into dense
//! image-like tensors and validating them end to end.
//!
//! The pipeline stages map onto the modules below:
//!
//! * [`event`] — event/stream domain types, CSV and EVS1 binary formats,
//!   time-window slicing.
//! * [`synth`] — synthetic event generation from moving 2-D scenes with
//!   exact per-pixel ground-truth labels.
//! * [`repr`] — dense window encodings (polarity histograms, most-recent
//!   timestamps, timestamp mean/std), batch and streaming paths, RPT1
//!   container I/O.
//! * [`dataset`] — label maps, sequence-interval manifests, bottom
//!   cropping, sample pairing and geometric augmentation.
//! * [`metrics`] — confusion-matrix accuracy and mean IoU with
//!   ignore-pixel masking.
//! * [`classifier`] — a per-pixel linear softmax model, its loss and
//!   analytic gradient, and a small deterministic training loop.

pub mod classifier;
pub mod dataset;
pub mod event;
pub mod metrics;
pub mod pgm;
pub mod repr;
pub mod synth;
