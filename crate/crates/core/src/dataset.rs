//! Domain types, dataset manifests and the split protocol.
//!
//! A manifest is one JSON document per dataset. Image-level labels are never
//! stored: a sample is NG exactly when it carries at least one ground-truth
//! box.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng;

/// Image-level verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "NG")]
    Ng,
}

impl Label {
    pub fn flipped(self) -> Label {
        match self {
            Label::Ok => Label::Ng,
            Label::Ng => Label::Ok,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Ok => "OK",
            Label::Ng => "NG",
        })
    }
}

/// Axis-aligned box in half-open pixel coordinates: column `c` is inside iff
/// `x_min <= c < x_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BBox {
    pub const fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> i64 {
        self.width().max(0) * self.height().max(0)
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x_min >= 0 && self.y_min >= 0 && self.x_max <= width as i64 && self.y_max <= height as i64
    }

    pub fn intersection_area(&self, other: &BBox) -> i64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0 || h <= 0 {
            0
        } else {
            w * h
        }
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    pub fn contains_pixel(&self, x: i64, y: i64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn translated(&self, dx: i64, dy: i64) -> BBox {
        BBox::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    /// Clips to `[0, width) x [0, height)`; `None` when nothing remains.
    pub fn clipped(&self, width: usize, height: usize) -> Option<BBox> {
        let b = BBox::new(
            self.x_min.max(0),
            self.y_min.max(0),
            self.x_max.min(width as i64),
            self.y_max.min(height as i64),
        );
        b.is_valid().then_some(b)
    }
}

/// Which partition of a dataset a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Holdout,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Holdout => "holdout",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "holdout" => Ok(Split::Holdout),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// One annotated image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub image_id: String,
    pub image_path: String,
    pub batch_id: String,
    pub rotation: u32,
    pub gt_boxes: Vec<BBox>,
    /// Accepted on input only so hand-edited manifests can be cross-checked
    /// against the boxes. Never written.
    #[serde(default, skip_serializing)]
    pub label: Option<Label>,
}

impl Sample {
    pub fn label(&self) -> Label {
        label_of(self)
    }
}

/// NG iff the sample has at least one ground-truth box.
pub fn label_of(sample: &Sample) -> Label {
    if sample.gt_boxes.is_empty() {
        Label::Ok
    } else {
        Label::Ng
    }
}

/// An annotation record with its decoded image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub sample: Sample,
    pub image: GrayImage,
}

impl ImageSample {
    pub fn label(&self) -> Label {
        label_of(&self.sample)
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.sample.gt_boxes
    }
}

/// A dataset: samples, their split assignment and generation provenance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub seed: u64,
    pub generator_config_hash: String,
    pub samples: Vec<Sample>,
    pub split_assignments: BTreeMap<String, Split>,
    /// Directory image paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn sample(&self, image_id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.image_id == image_id)
    }

    pub fn split_of(&self, image_id: &str) -> Option<Split> {
        self.split_assignments.get(image_id).copied()
    }

    /// Samples assigned to `split`, in manifest order.
    pub fn samples_in(&self, split: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .filter(|s| self.split_of(&s.image_id) == Some(split))
            .collect()
    }

    pub fn resolve_path(&self, sample: &Sample) -> PathBuf {
        match &self.base_dir {
            Some(dir) => dir.join(&sample.image_path),
            None => PathBuf::from(&sample.image_path),
        }
    }

    pub fn load_image(&self, sample: &Sample) -> Result<GrayImage> {
        GrayImage::load_pgm(&self.resolve_path(sample))
    }

    /// Loads the images of one split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<ImageSample>> {
        let samples = self.samples_in(split);
        crate::par::map_slice(&samples, |s| {
            self.load_image(s).map(|image| ImageSample {
                sample: (*s).clone(),
                image,
            })
        })
        .into_iter()
        .collect()
    }

    /// Checks every structural invariant that does not need the image files.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if s.image_id.is_empty() {
                return Err(Error::manifest("<empty>", "image_id", "empty image_id"));
            }
            if !ids.insert(s.image_id.as_str()) {
                return Err(Error::manifest(&s.image_id, "image_id", "duplicate image_id"));
            }
            if ![0, 90, 180, 270].contains(&s.rotation) {
                return Err(Error::manifest(
                    &s.image_id,
                    "rotation",
                    format!("rotation {} not in {{0,90,180,270}}", s.rotation),
                ));
            }
            for b in &s.gt_boxes {
                if !b.is_valid() {
                    return Err(Error::manifest(
                        &s.image_id,
                        "gt_boxes",
                        format!("degenerate box {b:?}"),
                    ));
                }
            }
            if let Some(stored) = s.label {
                if stored != label_of(s) {
                    return Err(Error::manifest(
                        &s.image_id,
                        "gt_boxes",
                        format!(
                            "label/box inconsistency: label {stored} with {} boxes",
                            s.gt_boxes.len()
                        ),
                    ));
                }
            }
            if !self.split_assignments.contains_key(&s.image_id) {
                return Err(Error::manifest(
                    &s.image_id,
                    "split_assignments",
                    "sample has no split assignment",
                ));
            }
        }
        for id in self.split_assignments.keys() {
            if !ids.contains(id.as_str()) {
                return Err(Error::manifest(
                    id,
                    "split_assignments",
                    "assignment for unknown image_id",
                ));
            }
        }

        let mut working_batches = BTreeSet::new();
        for s in &self.samples {
            if self.split_of(&s.image_id) != Some(Split::Holdout) {
                working_batches.insert(s.batch_id.as_str());
            }
        }
        for s in &self.samples {
            if self.split_of(&s.image_id) == Some(Split::Holdout)
                && working_batches.contains(s.batch_id.as_str())
            {
                return Err(Error::manifest(
                    &s.image_id,
                    "batch_id",
                    format!("holdout batch overlap: batch {:?} also used by train/validation", s.batch_id),
                ));
            }
        }
        Ok(())
    }

    /// Canonical serialization: pretty JSON, sorted split map, trailing newline.
    pub fn to_canonical_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self).map_err(|e| Error::json(&self.name, e))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8], context: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_slice(bytes).map_err(|e| Error::json(context, e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &self.to_canonical_json()?)
    }
}

/// Reads, parses and fully validates a manifest, including box bounds against
/// the referenced images.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut m = DatasetManifest::from_json(&bytes, &path.display().to_string())?;
    m.base_dir = Some(
        path.parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    );
    for s in &m.samples {
        if s.gt_boxes.is_empty() {
            continue;
        }
        let img = m.load_image(s).map_err(|e| {
            Error::manifest(&s.image_id, "image_path", format!("cannot read image: {e}"))
        })?;
        for b in &s.gt_boxes {
            if !b.fits_in(img.width(), img.height()) {
                return Err(Error::manifest(
                    &s.image_id,
                    "gt_boxes",
                    format!("box {b:?} outside {}x{} image", img.width(), img.height()),
                ));
            }
        }
    }
    Ok(m)
}

/// Deterministically assigns each sample to train or validation.
///
/// Exactly `round(validation_fraction * n)` samples land in validation.
pub fn split_dataset(
    samples: &[Sample],
    validation_fraction: f64,
    seed: u64,
) -> Result<BTreeMap<String, Split>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty sample list".into()));
    }
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {validation_fraction} outside (0, 1)"
        )));
    }
    let n = samples.len();
    let n_val = (validation_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::from_seed(seed));
    let mut out = BTreeMap::new();
    for (rank, &i) in order.iter().enumerate() {
        let split = if rank < n_val {
            Split::Validation
        } else {
            Split::Train
        };
        out.insert(samples[i].image_id.clone(), split);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample(id: &str, batch: &str, boxes: Vec<BBox>) -> Sample {
        Sample {
            image_id: id.into(),
            image_path: format!("images/{id}.pgm"),
            batch_id: batch.into(),
            rotation: 0,
            gt_boxes: boxes,
            label: None,
        }
    }

    #[test]
    fn label_follows_boxes() {
        let b = BBox::new(0, 0, 2, 2);
        assert_eq!(label_of(&sample("a", "B0", vec![])), Label::Ok);
        assert_eq!(label_of(&sample("a", "B0", vec![b])), Label::Ng);
        assert_eq!(label_of(&sample("a", "B0", vec![b, b, b])), Label::Ng);
    }

    #[test]
    fn split_cardinality_and_determinism() {
        let samples: Vec<_> = (0..10).map(|i| sample(&format!("s{i}"), "B0", vec![])).collect();
        let a = split_dataset(&samples, 0.2, 7).unwrap();
        let b = split_dataset(&samples, 0.2, 7).unwrap();
        assert_eq!(a, b);
        let n_val = a.values().filter(|s| **s == Split::Validation).count();
        assert_eq!(n_val, 2);
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn split_of_paper_sized_pool() {
        let samples: Vec<_> = (0..160).map(|i| sample(&format!("s{i}"), "B0", vec![])).collect();
        let a = split_dataset(&samples, 0.25, 1).unwrap();
        let n_val = a.values().filter(|s| **s == Split::Validation).count();
        assert_eq!((160 - n_val, n_val), (120, 40));
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_dataset(&[], 0.2, 1).is_err());
        let s = vec![sample("a", "B0", vec![])];
        assert!(split_dataset(&s, 0.0, 1).is_err());
        assert!(split_dataset(&s, 1.0, 1).is_err());
        assert!(split_dataset(&s, f64::NAN, 1).is_err());
    }

    fn manifest(samples: Vec<Sample>, splits: &[(&str, Split)]) -> DatasetManifest {
        DatasetManifest {
            name: "t".into(),
            seed: 1,
            generator_config_hash: "h".into(),
            samples,
            split_assignments: splits.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            base_dir: None,
        }
    }

    #[test]
    fn validation_catches_holdout_batch_overlap() {
        let m = manifest(
            vec![sample("a", "b0", vec![]), sample("b", "b0", vec![])],
            &[("a", Split::Train), ("b", Split::Holdout)],
        );
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("holdout batch overlap"), "{err}");
        assert!(err.contains("b:"), "{err}");
    }

    #[test]
    fn validation_catches_split_coverage_and_duplicates() {
        let m = manifest(vec![sample("a", "B0", vec![])], &[]);
        assert!(m.validate().is_err());
        let m = manifest(
            vec![sample("a", "B0", vec![])],
            &[("a", Split::Train), ("zz", Split::Train)],
        );
        assert!(m.validate().is_err());
        let m = manifest(
            vec![sample("a", "B0", vec![]), sample("a", "B0", vec![])],
            &[("a", Split::Train)],
        );
        assert!(m.validate().unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn validation_checks_rotation_and_boxes() {
        let mut s = sample("a", "B0", vec![]);
        s.rotation = 45;
        assert!(manifest(vec![s], &[("a", Split::Train)]).validate().is_err());
        let s = sample("a", "B0", vec![BBox::new(3, 0, 3, 2)]);
        assert!(manifest(vec![s], &[("a", Split::Train)]).validate().is_err());
    }

    #[test]
    fn bbox_geometry() {
        let a = BBox::new(0, 0, 2, 2);
        let b = BBox::new(1, 0, 3, 2);
        assert_eq!(a.intersection_area(&b), 2);
        assert_eq!(a.intersection_area(&BBox::new(2, 0, 4, 2)), 0);
        assert_eq!(BBox::new(-3, 1, 5, 200).clipped(4, 100), Some(BBox::new(0, 1, 4, 100)));
        assert_eq!(BBox::new(-3, 1, 0, 2).clipped(4, 4), None);
        assert!(a.contains_pixel(1, 1) && !a.contains_pixel(2, 1));
    }
}
