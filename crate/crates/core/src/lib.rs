//! Illuminated decision trees: a small CNN trained on cell crops serves as
//! a feature extractor, a CART tree is fit over its spatial activations, and
//! every split feature is rendered by activation maximization.

pub mod cellcrop;
pub mod color;
pub mod dtree;
pub mod error;
pub mod model;
pub mod render;
pub mod featviz;
pub mod illuminate;
pub mod bestchannel;

pub use error::{Error, Result};
