//! Procedural underwater scene simulation with a dynamic-vision-sensor
//! (DVS) event model.
//!
//! The pipeline runs in stages, each a module here:
//!
//! * [`scene`]: seeded seabed, rocks, suspended particles and camera path.
//! * [`render`]: ray-cast luminance frames, rock label masks and boxes.
//! * [`events`]: log-intensity threshold crossings into an event stream.
//! * [`streamio`]: CSV / binary event codecs and event-frame accumulation.
//! * [`detect`]: YOLO dataset export, blob detector and mAP evaluation.
//! * [`pipeline`]: artifact-directory orchestration and the particle sweep.
//!
//! Per-pixel work is data parallel (rayon, behind the `parallel` feature)
//! and every stage is bit-identical regardless of the worker count.

pub mod config;
pub mod detect;
pub mod error;
pub mod events;
pub mod imageio;
pub mod math;
pub mod par;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod scene;
pub mod streamio;

pub use error::{Error, Result};
