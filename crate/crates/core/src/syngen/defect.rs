//! Crescent material-removal defects.
//!
//! A round file of diameter `d` is centred on a random boundary pixel, pushed
//! outward along the local normal by `bite_depth_fraction * d / 2`, and every
//! part pixel under the file is removed.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::part::{textured, Mask, BACKGROUND_NOISE_SIGMA};
use crate::dataset::BBox;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng;

/// Placement attempts per defect before giving up.
pub const MAX_PLACEMENT_RETRIES: usize = 200;
/// Smallest admissible defect box area.
pub const MIN_DEFECT_AREA: i64 = 4;
/// Smallest admissible change of any removed pixel.
pub const MIN_DEFECT_CONTRAST: u8 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    RandomEdge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub diameter_px: u32,
    pub bite_depth_fraction: f64,
    #[serde(default)]
    pub placement: Placement,
    pub count: u32,
}

impl DefectSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(Error::InvalidArgument("count must be ≥1".into()));
        }
        if self.diameter_px < 2 {
            return Err(Error::InvalidArgument(format!(
                "defect diameter {} px too small",
                self.diameter_px
            )));
        }
        if !(self.bite_depth_fraction > 0.0 && self.bite_depth_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bite_depth_fraction {} outside (0, 1]",
                self.bite_depth_fraction
            )));
        }
        Ok(())
    }
}

/// Result of cutting defects into a part.
#[derive(Clone, Debug)]
pub struct DefectOutcome {
    pub image: GrayImage,
    /// One tight box per defect, in placement order.
    pub boxes: Vec<BBox>,
    /// Part mask after material removal.
    pub mask: Mask,
    /// Pixels that were removed.
    pub removed: Mask,
}

/// Unit vector from `(x, y)` toward nearby background, if any.
fn outward_normal(mask: &Mask, x: usize, y: usize) -> Option<(f64, f64)> {
    let (mut nx, mut ny) = (0.0, 0.0);
    for oy in -3i64..=3 {
        for ox in -3i64..=3 {
            if ox * ox + oy * oy > 9 {
                continue;
            }
            if !mask.get_signed(x as i64 + ox, y as i64 + oy) {
                nx += ox as f64;
                ny += oy as f64;
            }
        }
    }
    let len = (nx * nx + ny * ny).sqrt();
    (len > 1e-9).then(|| (nx / len, ny / len))
}

/// Removes `spec.count` crescents from the part and repaints them as
/// background.
pub fn apply_defect(
    image: &GrayImage,
    part_mask: &Mask,
    spec: &DefectSpec,
    background_intensity: u8,
    seed: u64,
) -> Result<DefectOutcome> {
    spec.validate()?;
    if part_mask.is_empty() {
        return Err(Error::InvalidArgument("part mask is empty".into()));
    }
    if (part_mask.width(), part_mask.height()) != (image.width(), image.height()) {
        return Err(Error::SizeMismatch {
            expected_w: image.width(),
            expected_h: image.height(),
            found_w: part_mask.width(),
            found_h: part_mask.height(),
        });
    }
    let (w, h) = (image.width(), image.height());
    let mut rng = rng::from_seed(seed);
    let mut mask = part_mask.clone();
    let mut removed = Mask::new(w, h);
    let mut boxes: Vec<BBox> = Vec::new();
    let radius = f64::from(spec.diameter_px) / 2.0;
    let offset = spec.bite_depth_fraction * radius;

    for _ in 0..spec.count {
        let boundary = mask.boundary();
        if boundary.is_empty() {
            return Err(Error::DefectPlacement { retries: 0 });
        }
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_RETRIES {
            let (bx, by) = boundary[rng.gen_range(0..boundary.len())];
            let Some((nx, ny)) = outward_normal(&mask, bx, by) else {
                continue;
            };
            let cx = bx as f64 + 0.5 + nx * offset;
            let cy = by as f64 + 0.5 + ny * offset;
            let x_lo = (cx - radius).floor().max(0.0) as usize;
            let y_lo = (cy - radius).floor().max(0.0) as usize;
            let x_hi = ((cx + radius).ceil() as usize).min(w);
            let y_hi = ((cy + radius).ceil() as usize).min(h);
            let mut region = Vec::new();
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= radius * radius && mask.get(x, y) {
                        region.push((x, y));
                    }
                }
            }
            if region.is_empty() {
                continue;
            }
            let bbox = region.iter().fold(
                BBox::new(i64::MAX, i64::MAX, i64::MIN, i64::MIN),
                |b, &(x, y)| {
                    BBox::new(
                        b.x_min.min(x as i64),
                        b.y_min.min(y as i64),
                        b.x_max.max(x as i64 + 1),
                        b.y_max.max(y as i64 + 1),
                    )
                },
            );
            if bbox.area() < MIN_DEFECT_AREA {
                continue;
            }
            // keep defects apart so each stays its own connected component
            let grown = BBox::new(bbox.x_min - 1, bbox.y_min - 1, bbox.x_max + 1, bbox.y_max + 1);
            if boxes.iter().any(|b| b.intersection_area(&grown) > 0) {
                continue;
            }
            placed = Some((region, bbox));
            break;
        }
        let Some((region, bbox)) = placed else {
            return Err(Error::DefectPlacement {
                retries: MAX_PLACEMENT_RETRIES,
            });
        };
        for (x, y) in region {
            mask.set(x, y, false);
            removed.set(x, y, true);
        }
        boxes.push(bbox);
    }

    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if !removed.get(x, y) {
                continue;
            }
            let old = image.get(x, y);
            let mut v = textured(background_intensity, BACKGROUND_NOISE_SIGMA, &mut rng);
            if v.abs_diff(old) < MIN_DEFECT_CONTRAST {
                v = if old >= background_intensity {
                    old.saturating_sub(MIN_DEFECT_CONTRAST)
                } else {
                    old.saturating_add(MIN_DEFECT_CONTRAST)
                };
            }
            out.set(x, y, v);
        }
    }
    Ok(DefectOutcome {
        image: out,
        boxes,
        mask,
        removed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syngen::part::{gen_part, PartSpec, ShapeKind};

    fn disc(size: u32) -> PartSpec {
        PartSpec {
            shape_kind: ShapeKind::Disc,
            size_px: size,
            aspect: 1.0,
            sides: 0,
            angle_deg: 0.0,
            hole_pattern: vec![],
            base_intensity: 190,
            background_intensity: 60,
        }
    }

    fn spec(d: u32, count: u32) -> DefectSpec {
        DefectSpec {
            diameter_px: d,
            bite_depth_fraction: 0.3,
            placement: Placement::RandomEdge,
            count,
        }
    }

    /// 4-connected components of the pixels that differ between two images.
    fn diff_components(a: &GrayImage, b: &GrayImage) -> Vec<Vec<(usize, usize)>> {
        let (w, h) = (a.width(), a.height());
        let mut seen = vec![false; w * h];
        let mut comps = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if seen[y * w + x] || a.get(x, y) == b.get(x, y) {
                    continue;
                }
                let mut stack = vec![(x, y)];
                seen[y * w + x] = true;
                let mut comp = Vec::new();
                while let Some((cx, cy)) = stack.pop() {
                    comp.push((cx, cy));
                    for (ox, oy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                        let (nx, ny) = (cx as i64 + ox, cy as i64 + oy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !seen[ny * w + nx] && a.get(nx, ny) != b.get(nx, ny) {
                            seen[ny * w + nx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
                comps.push(comp);
            }
        }
        comps
    }

    #[test]
    fn single_crescent_lies_in_circle_and_former_part() {
        let part_spec = disc(70);
        for seed in 0..20 {
            let part = gen_part(&part_spec, 128, seed).unwrap();
            let out = apply_defect(&part.image, &part.mask, &spec(8, 1), 60, seed).unwrap();
            assert_eq!(out.boxes.len(), 1);
            let b = out.boxes[0];
            let mut changed = 0;
            for y in 0..128 {
                for x in 0..128 {
                    if out.image.get(x, y) != part.image.get(x, y) {
                        changed += 1;
                        assert!(part.mask.get(x, y), "changed pixel outside part");
                        assert!(b.contains_pixel(x as i64, y as i64));
                        assert!(part.image.get(x, y).abs_diff(out.image.get(x, y)) >= 40);
                    }
                }
            }
            assert!(changed > 0);
            // every changed pixel fits in an 8 px disc: box no wider than the file
            assert!(b.width() <= 9 && b.height() <= 9, "{b:?}");
            // the box is exactly the bounds of the changed pixels
            let comps = diff_components(&part.image, &out.image);
            assert_eq!(comps.len(), 1);
            let xs = comps[0].iter().map(|p| p.0 as i64);
            let ys = comps[0].iter().map(|p| p.1 as i64);
            assert_eq!(b.x_min, xs.clone().min().unwrap());
            assert_eq!(b.x_max, xs.max().unwrap() + 1);
            assert_eq!(b.y_min, ys.clone().min().unwrap());
            assert_eq!(b.y_max, ys.max().unwrap() + 1);
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        let part = gen_part(&disc(60), 128, 1).unwrap();
        let err = apply_defect(&part.image, &part.mask, &spec(8, 0), 60, 1).unwrap_err();
        assert!(err.to_string().contains("count must be ≥1"));
    }

    #[test]
    fn two_defects_are_disjoint_components() {
        let plate = PartSpec {
            shape_kind: ShapeKind::Rectangle,
            size_px: 110,
            aspect: 0.8,
            ..disc(0)
        };
        for seed in 0..10 {
            let part = gen_part(&plate, 128, seed).unwrap();
            let out = apply_defect(&part.image, &part.mask, &spec(8, 2), 60, seed).unwrap();
            assert_eq!(out.boxes.len(), 2);
            assert_eq!(out.boxes[0].intersection_area(&out.boxes[1]), 0);
            assert_eq!(diff_components(&part.image, &out.image).len(), 2);
        }
    }

    #[test]
    fn impossible_placement_reports_retries() {
        // a single-pixel part can never yield a 4 px² box
        let img = GrayImage::new(16, 16, 60);
        let mut mask = Mask::new(16, 16);
        mask.set(8, 8, true);
        match apply_defect(&img, &mask, &spec(8, 1), 60, 1) {
            Err(Error::DefectPlacement { retries }) => assert_eq!(retries, MAX_PLACEMENT_RETRIES),
            other => panic!("expected placement failure, got {other:?}"),
        }
    }
}
