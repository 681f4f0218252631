//! Layers of the convolutional feature extractor and the parameter store they live in.

mod backbone;
mod layers;
mod params;

pub use backbone::{BackboneConfig, CnnBackbone, CnnCell};
pub use layers::{BatchNorm1d, Conv1d, Dense, CONV_KERNEL, CONV_PADDING};
pub use params::{fan_in_uniform, Forward, Mode, ParamEntry, ParamId, ParamStore};
