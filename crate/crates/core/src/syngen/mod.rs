//! Procedural generation of the uniform and diverse dataset families.

pub mod augment;
pub mod defect;
pub mod generate;
pub mod part;
pub mod shift;

pub use augment::{augment, augment_checked, AugmentOp, AugmentSpec};
pub use crate::dataset::ImageSample;
pub use defect::{apply_defect, DefectOutcome, DefectSpec, Placement};
pub use generate::{gen_dataset, generate, DefectRange, Family, GenConfig, GeneratedDataset};
pub use part::{gen_part, Hole, Mask, PartSpec, RenderedPart, ShapeKind};
pub use shift::BatchShift;
