//! Whole-dataset generation for the uniform and diverse families.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentSpec};
use super::defect::{apply_defect, DefectSpec, Placement};
use super::part::{gen_part, sample_part_spec, uniform_part_spec, PartSpec};
use super::shift::BatchShift;
use crate::dataset::{split_dataset, BBox, DatasetManifest, ImageSample, Sample, Split};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::image::GrayImage;
use crate::par;
use crate::rng;
use crate::util::config_hash;

pub const TRAIN_BATCH: &str = "B0";
pub const HOLDOUT_BATCH: &str = "B1";

// independent random domains under the master seed
const DOMAIN_PART: u64 = 1;
const DOMAIN_DEFECT: u64 = 2;
const DOMAIN_TEXTURE: u64 = 3;
const DOMAIN_SHIFT: u64 = 4;
const DOMAIN_LABELS: u64 = 5;
const DOMAIN_SPLIT: u64 = 6;
const DOMAIN_AUGMENT: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// One fixed part shape.
    Uniform,
    /// A distinct random part per physical part, each imaged at four rotations.
    Diverse,
}

impl Family {
    pub fn rotations(&self) -> &'static [u32] {
        match self {
            Family::Uniform => &[0],
            Family::Diverse => &[0, 1, 2, 3],
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::Diverse => "diverse",
        }
    }
}

/// Ranges defect parameters are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectRange {
    pub diameter_min: u32,
    pub diameter_max: u32,
    pub bite_min: f64,
    pub bite_max: f64,
}

impl Default for DefectRange {
    fn default() -> Self {
        Self {
            diameter_min: 6,
            diameter_max: 12,
            bite_min: 0.0,
            bite_max: 0.4,
        }
    }
}

/// Generator configuration. Counts are physical parts; the diverse family
/// images each part four times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub family: Family,
    pub n_train_val: usize,
    pub n_holdout: usize,
    pub defect_rate: f64,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    pub seed: u64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub batch_shift: BatchShift,
    #[serde(default)]
    pub augment: AugmentSpec,
    #[serde(default)]
    pub defect: DefectRange,
}

fn default_image_size() -> usize {
    128
}

fn default_validation_fraction() -> f64 {
    0.25
}

impl GenConfig {
    pub fn uniform(seed: u64) -> Self {
        Self {
            name: Some("uniform".into()),
            family: Family::Uniform,
            n_train_val: 160,
            n_holdout: 40,
            defect_rate: 0.5,
            image_size: 128,
            seed,
            validation_fraction: 0.25,
            batch_shift: BatchShift::default(),
            augment: AugmentSpec::default(),
            defect: DefectRange::default(),
        }
    }

    pub fn diverse(seed: u64) -> Self {
        Self {
            name: Some("diverse".into()),
            family: Family::Diverse,
            n_train_val: 110,
            n_holdout: 44,
            ..Self::uniform(seed)
        }
    }

    pub fn dataset_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.family.as_str().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_train_val == 0 {
            return bad("n_train_val must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.defect_rate) {
            return bad(format!("defect_rate {} outside [0, 1]", self.defect_rate));
        }
        if self.image_size < 32 {
            return bad(format!("image_size {} below 32", self.image_size));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            ));
        }
        let d = &self.defect;
        if d.diameter_min < 2 || d.diameter_min > d.diameter_max {
            return bad(format!(
                "defect diameter range [{}, {}] invalid",
                d.diameter_min, d.diameter_max
            ));
        }
        if !(d.bite_min >= 0.0 && d.bite_min <= d.bite_max && d.bite_max <= 1.0) {
            return bad(format!("bite range [{}, {}] invalid", d.bite_min, d.bite_max));
        }
        self.batch_shift.validate()?;
        if self.augment.copies_per_train_sample > 0 && self.augment.ops.is_empty() {
            return bad("augmentation copies requested with no ops enabled".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// A dataset held in memory before (or instead of) being written out.
#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    /// Image per sample, aligned with `manifest.samples`.
    pub images: Vec<GrayImage>,
}

impl GeneratedDataset {
    /// Samples of one split paired with their images.
    pub fn split(&self, split: Split) -> Vec<ImageSample> {
        self.manifest
            .samples
            .iter()
            .zip(&self.images)
            .filter(|(s, _)| self.manifest.split_of(&s.image_id) == Some(split))
            .map(|(s, i)| ImageSample {
                sample: s.clone(),
                image: i.clone(),
            })
            .collect()
    }

    pub fn image(&self, image_id: &str) -> Option<&GrayImage> {
        self.manifest
            .samples
            .iter()
            .position(|s| s.image_id == image_id)
            .map(|i| &self.images[i])
    }

    /// Writes `<out>/<name>/images/*.pgm` and `<out>/<name>/manifest.json`.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let root = out.join(&self.manifest.name);
        fsutil::ensure_dir(&root.join("images"))?;
        for (sample, image) in self.manifest.samples.iter().zip(&self.images) {
            fsutil::write_atomic(&root.join(&sample.image_path), &image.to_pgm())?;
        }
        let path = root.join("manifest.json");
        self.manifest.save(&path)?;
        Ok(path)
    }
}

struct PartPlan {
    spec: PartSpec,
    defect: Option<DefectSpec>,
    holdout: bool,
}

struct ImageTask {
    part: usize,
    rotation_steps: u32,
    index: usize,
}

fn plan_parts(config: &GenConfig) -> Result<Vec<PartPlan>> {
    let groups = [(0usize, config.n_train_val, false), (1, config.n_holdout, true)];
    let mut plans = Vec::with_capacity(config.n_train_val + config.n_holdout);
    let part_domain = rng::derive(config.seed, DOMAIN_PART);
    let defect_domain = rng::derive(config.seed, DOMAIN_DEFECT);
    let mut offset = 0usize;
    for (group, count, holdout) in groups {
        // exactly round(rate * count) damaged parts per group
        let n_ng = (config.defect_rate * count as f64).round() as usize;
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng::stream(rng::derive(config.seed, DOMAIN_LABELS), group as u64));
        let mut damaged = vec![false; count];
        for &i in &order[..n_ng] {
            damaged[i] = true;
        }
        for (local, is_ng) in damaged.into_iter().enumerate() {
            let part_index = (offset + local) as u64;
            let spec = match config.family {
                Family::Uniform => uniform_part_spec(config.image_size),
                Family::Diverse => sample_part_spec(&mut rng::stream(part_domain, part_index), config.image_size),
            };
            if holdout {
                config
                    .batch_shift
                    .check_contrast(spec.base_intensity, spec.background_intensity)?;
            }
            let defect = is_ng.then(|| {
                let mut r = rng::stream(defect_domain, part_index);
                let d = &config.defect;
                DefectSpec {
                    diameter_px: r.gen_range(d.diameter_min..=d.diameter_max),
                    bite_depth_fraction: if d.bite_max > d.bite_min {
                        r.gen_range(d.bite_min..d.bite_max)
                    } else {
                        d.bite_max
                    }
                    .max(1e-3),
                    placement: Placement::RandomEdge,
                    count: 1,
                }
            });
            plans.push(PartPlan {
                spec,
                defect,
                holdout,
            });
        }
        offset += count;
    }
    Ok(plans)
}

fn render_image(config: &GenConfig, plan: &PartPlan, task: &ImageTask) -> Result<(GrayImage, Vec<BBox>)> {
    let size = config.image_size;
    let texture_seed = rng::derive(rng::derive(config.seed, DOMAIN_TEXTURE), task.index as u64);
    let part = gen_part(&plan.spec, size, texture_seed)?;
    let (mut image, mut boxes) = match &plan.defect {
        None => (part.image, Vec::new()),
        Some(d) => {
            // placement depends only on the part, so every rotation of a
            // damaged part shows the same crescent
            let seed = rng::derive(rng::derive(config.seed, DOMAIN_DEFECT), task.part as u64);
            let out = apply_defect(&part.image, &part.mask, d, plan.spec.background_intensity, seed)?;
            (out.image, out.boxes)
        }
    };
    if task.rotation_steps > 0 {
        let op = super::augment::AugmentOp::Rotate90k {
            k: task.rotation_steps,
        };
        boxes = boxes.iter().map(|b| op.map_box(b, size, size)).collect();
        image = image.rotate90k(task.rotation_steps);
    }
    if plan.holdout {
        let seed = rng::derive(rng::derive(config.seed, DOMAIN_SHIFT), task.index as u64);
        let (img, bx) = config
            .batch_shift
            .apply(&image, &boxes, plan.spec.background_intensity, seed);
        image = img;
        boxes = bx;
    }
    Ok((image, boxes))
}

/// Generates a dataset in memory. A pure function of the config.
pub fn generate(config: &GenConfig) -> Result<GeneratedDataset> {
    config.validate()?;
    let plans = plan_parts(config)?;
    let name = config.dataset_name();
    let rotations = config.family.rotations();
    let mut tasks = Vec::new();
    for part in 0..plans.len() {
        for &r in rotations {
            tasks.push(ImageTask {
                part,
                rotation_steps: r,
                index: tasks.len(),
            });
        }
    }
    let rendered = par::map_slice(&tasks, |t| render_image(config, &plans[t.part], t));

    let mut samples = Vec::with_capacity(tasks.len());
    let mut images = Vec::with_capacity(tasks.len());
    for (task, result) in tasks.iter().zip(rendered) {
        let (image, boxes) = result?;
        let plan = &plans[task.part];
        let id = format!("{name}-p{:04}-r{:03}", task.part, task.rotation_steps * 90);
        samples.push(Sample {
            image_path: format!("images/{id}.pgm"),
            image_id: id,
            batch_id: if plan.holdout { HOLDOUT_BATCH } else { TRAIN_BATCH }.to_string(),
            rotation: task.rotation_steps * 90,
            gt_boxes: boxes,
            label: None,
        });
        images.push(image);
    }

    let n_work = samples
        .iter()
        .zip(&tasks)
        .filter(|(_, t)| !plans[t.part].holdout)
        .count();
    let mut split_assignments =
        split_dataset(&samples[..n_work], config.validation_fraction, rng::derive(config.seed, DOMAIN_SPLIT))?;
    for s in &samples[n_work..] {
        split_assignments.insert(s.image_id.clone(), Split::Holdout);
    }

    if config.augment.copies_per_train_sample > 0 {
        let aug_domain = rng::derive(config.seed, DOMAIN_AUGMENT);
        let train_idx: Vec<usize> = (0..n_work)
            .filter(|&i| split_assignments[&samples[i].image_id] == Split::Train)
            .collect();
        let copies = config.augment.copies_per_train_sample as usize;
        let jobs: Vec<(usize, usize)> = train_idx
            .iter()
            .flat_map(|&i| (0..copies).map(move |c| (i, c)))
            .collect();
        let ops = &config.augment.ops;
        let augmented = par::map_slice(&jobs, |&(i, c)| {
            let op = ops[(i + c) % ops.len()];
            let input = ImageSample {
                sample: samples[i].clone(),
                image: images[i].clone(),
            };
            let seed = rng::derive(aug_domain, (i * copies + c) as u64);
            let mut out = augment(&input, &op, seed);
            out.sample.image_id = format!("{}-aug{c}", samples[i].image_id);
            out.sample.image_path = format!("images/{}.pgm", out.sample.image_id);
            out
        });
        for a in augmented {
            split_assignments.insert(a.sample.image_id.clone(), Split::Train);
            samples.push(a.sample);
            images.push(a.image);
        }
    }

    let manifest = DatasetManifest {
        name,
        seed: config.seed,
        generator_config_hash: config.hash(),
        samples,
        split_assignments,
        base_dir: None,
    };
    manifest.validate()?;
    Ok(GeneratedDataset { manifest, images })
}

/// Generates a dataset and writes it under `out`. Returns the manifest path.
pub fn gen_dataset(config: &GenConfig, out: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let data = generate(config)?;
    let path = data.write(out)?;
    let mut manifest = data.manifest;
    manifest.base_dir = path.parent().map(Path::to_path_buf);
    Ok((manifest, path))
}
