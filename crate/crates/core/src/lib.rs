//! Diverse unpaired image-to-image translation through disentangled content
//! and attribute representations.

pub mod analytic;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod inference;
pub mod losses;
pub mod networks;
pub mod training;

pub use config::{ArchConfig, DatasetSpec, TrainConfig, Variant};
pub use error::{Error, Result};
pub use image::{Domain, Image};
pub use losses::{LossReport, LossTerms, LossWeights};
pub use networks::{AttributeCode, ContentCode, Group, Model, Network, Translator};
