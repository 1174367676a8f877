//! Local, composition-preserving augmentation for artistic images.

pub mod imgcore;
pub mod augment;
pub mod inpaint;
pub mod metrics;
pub mod pipeline;
pub mod segments;
pub mod toy;
mod util;
