//! Audio-spectrogram vision transformer (AS-ViT) for respiratory sound
//! classification on the ICBHI 2017 corpus.

pub mod audio;
pub mod dataset;
pub mod features;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod training;
