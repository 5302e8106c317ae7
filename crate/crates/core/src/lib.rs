//! Skeletal motion to language: motion-image encoding, weighted multi-class
//! labels, a compact vision-language transformer trained on mixed
//! detection/counting questions, and the evaluation metrics.

pub mod labels;
pub mod metrics;
pub mod model;
pub mod motion_image;
pub mod pipeline;
pub mod plot;
pub mod skeleton;
pub mod synthgen;
pub mod training;
