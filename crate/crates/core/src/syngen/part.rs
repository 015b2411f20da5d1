//! Part silhouettes and their textured rendering.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng;

/// Minimum free border around a silhouette.
pub const MARGIN_PX: usize = 4;
/// Minimum part/background contrast.
pub const MIN_CONTRAST: u8 = 40;
/// Texture noise on part pixels.
pub const PART_NOISE_SIGMA: f64 = 3.0;
/// Texture noise on background pixels.
pub const BACKGROUND_NOISE_SIGMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    PlateWithHoles,
    Ring,
    Disc,
    Rectangle,
    Polygon,
    PerforatedPanel,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::PlateWithHoles,
        ShapeKind::Ring,
        ShapeKind::Disc,
        ShapeKind::Rectangle,
        ShapeKind::Polygon,
        ShapeKind::PerforatedPanel,
    ];
}

/// A circular cut-out, in pixel coordinates relative to the image centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub dx: f64,
    pub dy: f64,
    pub radius: f64,
}

/// Geometry and shading of one part.
///
/// `size_px` is the outer diameter for discs, rings and polygons (circumscribed
/// circle) and the width for rectangular kinds, whose height is
/// `size_px * aspect`. `angle_deg` rotates the outline about the image centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub shape_kind: ShapeKind,
    pub size_px: u32,
    #[serde(default = "one")]
    pub aspect: f64,
    #[serde(default)]
    pub sides: u32,
    #[serde(default)]
    pub angle_deg: f64,
    pub hole_pattern: Vec<Hole>,
    pub base_intensity: u8,
    pub background_intensity: u8,
}

fn one() -> f64 {
    1.0
}

/// Boolean pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-bounds reads as `false`.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Tight half-open bounds `(x_min, y_min, x_max, y_max)` of set pixels.
    pub fn bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        b
    }

    /// Part pixels with at least one 4-neighbour outside the part.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                let (xi, yi) = (x as i64, y as i64);
                let edge = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|(ox, oy)| !self.get_signed(xi + ox, yi + oy));
                if edge {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

impl PartSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size_px < 4 {
            return Err(Error::InvalidArgument(format!(
                "part size {} px is degenerate",
                self.size_px
            )));
        }
        if !(self.aspect.is_finite() && self.aspect > 0.0) {
            return Err(Error::InvalidArgument(format!("aspect {} must be > 0", self.aspect)));
        }
        if self.shape_kind == ShapeKind::Polygon && self.sides < 3 {
            return Err(Error::InvalidArgument(format!(
                "polygon needs at least 3 sides, got {}",
                self.sides
            )));
        }
        if self.base_intensity.abs_diff(self.background_intensity) < MIN_CONTRAST {
            return Err(Error::InvalidArgument(format!(
                "part/background contrast {} below {MIN_CONTRAST}",
                self.base_intensity.abs_diff(self.background_intensity)
            )));
        }
        if self.hole_pattern.iter().any(|h| !(h.radius.is_finite() && h.radius > 0.0)) {
            return Err(Error::InvalidArgument("hole radius must be > 0".into()));
        }
        Ok(())
    }

    /// Whether the pixel-centre offset `(px, py)` from the image centre lies
    /// inside the outline, before holes are cut.
    fn outline_contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = (-self.angle_deg.to_radians()).sin_cos();
        let (u, v) = (px * c - py * s, px * s + py * c);
        let half = f64::from(self.size_px) / 2.0;
        match self.shape_kind {
            ShapeKind::Disc | ShapeKind::Ring => u * u + v * v <= half * half,
            ShapeKind::Rectangle | ShapeKind::PlateWithHoles | ShapeKind::PerforatedPanel => {
                u.abs() <= half && v.abs() <= half * self.aspect
            }
            ShapeKind::Polygon => {
                let n = self.sides as usize;
                let step = std::f64::consts::TAU / n as f64;
                let apothem = half * (step / 2.0).cos();
                (0..n).all(|i| {
                    let mid = step * (i as f64 + 0.5);
                    u * mid.cos() + v * mid.sin() <= apothem
                })
            }
        }
    }

    /// Rasterizes the silhouette at pixel centres.
    pub fn silhouette(&self, width: usize, height: usize) -> Mask {
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let mut mask = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let px = x as f64 + 0.5 - cx;
                let py = y as f64 + 0.5 - cy;
                if !self.outline_contains(px, py) {
                    continue;
                }
                let in_hole = self.hole_pattern.iter().any(|h| {
                    let (dx, dy) = (px - h.dx, py - h.dy);
                    dx * dx + dy * dy <= h.radius * h.radius
                });
                if !in_hole {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }

    /// Silhouette, checked to be nonempty and clear of the margin.
    pub fn fitted_silhouette(&self, image_size: usize) -> Result<Mask> {
        self.validate()?;
        let mask = self.silhouette(image_size, image_size);
        let (x0, y0, x1, y1) = mask
            .bounds()
            .ok_or_else(|| Error::Generation("part silhouette is empty".into()))?;
        if x0 < MARGIN_PX || y0 < MARGIN_PX || x1 + MARGIN_PX > image_size || y1 + MARGIN_PX > image_size {
            return Err(Error::Generation(format!(
                "silhouette [{x0},{y0},{x1},{y1}) does not fit a {image_size}px image with {MARGIN_PX}px margin"
            )));
        }
        Ok(mask)
    }
}

/// Gaussian texture value clipped to three sigma.
pub(crate) fn textured(base: u8, sigma: f64, rng: &mut rng::Rng) -> u8 {
    let noise: f64 = Normal::new(0.0, sigma)
        .map(|n| n.sample(rng))
        .unwrap_or(0.0)
        .clamp(-3.0 * sigma, 3.0 * sigma);
    (f64::from(base) + noise).round().clamp(0.0, 255.0) as u8
}

/// A rendered part and the silhouette it was rendered from.
#[derive(Clone, Debug)]
pub struct RenderedPart {
    pub image: GrayImage,
    pub mask: Mask,
}

/// Renders a square `image_size` image of the part with per-pixel texture.
pub fn gen_part(spec: &PartSpec, image_size: usize, seed: u64) -> Result<RenderedPart> {
    let mask = spec.fitted_silhouette(image_size)?;
    let mut rng = rng::from_seed(seed);
    let image = GrayImage::from_fn(image_size, image_size, |x, y| {
        if mask.get(x, y) {
            textured(spec.base_intensity, PART_NOISE_SIGMA, &mut rng)
        } else {
            textured(spec.background_intensity, BACKGROUND_NOISE_SIGMA, &mut rng)
        }
    });
    Ok(RenderedPart { image, mask })
}

/// Draws a random part for the diverse family.
pub fn sample_part_spec(rng: &mut rng::Rng, image_size: usize) -> PartSpec {
    let scale = image_size as f64 / 128.0;
    let kind = ShapeKind::ALL[rng.gen_range(0..ShapeKind::ALL.len())];
    let background_intensity: u8 = rng.gen_range(40..=80);
    let base_intensity: u8 = rng.gen_range(150..=225);
    // parts sit square to the camera; the four rotations supply orientation
    let angle_deg = 0.0;
    let mut spec = PartSpec {
        shape_kind: kind,
        size_px: 0,
        aspect: 1.0,
        sides: 0,
        angle_deg,
        hole_pattern: Vec::new(),
        base_intensity,
        background_intensity,
    };
    match kind {
        ShapeKind::Disc => {
            spec.size_px = (rng.gen_range(44.0..112.0) * scale) as u32;
            if rng.gen_bool(0.5) {
                let r = f64::from(spec.size_px) * rng.gen_range(0.05..0.15);
                spec.hole_pattern.push(Hole { dx: 0.0, dy: 0.0, radius: r });
            }
        }
        ShapeKind::Ring => {
            spec.size_px = (rng.gen_range(56.0..112.0) * scale) as u32;
            let r = f64::from(spec.size_px) / 2.0 * rng.gen_range(0.35..0.6);
            spec.hole_pattern.push(Hole { dx: 0.0, dy: 0.0, radius: r });
        }
        ShapeKind::Rectangle => {
            spec.size_px = (rng.gen_range(44.0..84.0) * scale) as u32;
            spec.aspect = rng.gen_range(0.4..1.0);
        }
        ShapeKind::Polygon => {
            spec.size_px = (rng.gen_range(48.0..112.0) * scale) as u32;
            spec.sides = rng.gen_range(3..=8);
        }
        ShapeKind::PlateWithHoles => {
            spec.size_px = (rng.gen_range(60.0..84.0) * scale) as u32;
            spec.aspect = rng.gen_range(0.25..0.45);
            let n = rng.gen_range(2..=4);
            let w = f64::from(spec.size_px);
            let r = w * spec.aspect * rng.gen_range(0.12..0.2);
            let (s, c) = spec.angle_deg.to_radians().sin_cos();
            for i in 0..n {
                let u = (i as f64 + 0.5) / n as f64 * w * 0.8 - w * 0.4;
                spec.hole_pattern.push(Hole { dx: u * c, dy: u * s, radius: r });
            }
        }
        ShapeKind::PerforatedPanel => {
            spec.size_px = (rng.gen_range(56.0..84.0) * scale) as u32;
            spec.aspect = rng.gen_range(0.6..1.0);
            let w = f64::from(spec.size_px);
            let h = w * spec.aspect;
            let (nx, ny) = (rng.gen_range(2..=4), rng.gen_range(2..=3));
            let r = (w / nx as f64).min(h / ny as f64) * rng.gen_range(0.15..0.25);
            let (s, c) = spec.angle_deg.to_radians().sin_cos();
            for j in 0..ny {
                for i in 0..nx {
                    let u = (i as f64 + 0.5) / nx as f64 * w * 0.8 - w * 0.4;
                    let v = (j as f64 + 0.5) / ny as f64 * h * 0.8 - h * 0.4;
                    spec.hole_pattern.push(Hole {
                        dx: u * c - v * s,
                        dy: u * s + v * c,
                        radius: r,
                    });
                }
            }
        }
    }
    spec
}

/// The single part shape used by the uniform family: a flat mending plate
/// with a row of screw holes.
pub fn uniform_part_spec(image_size: usize) -> PartSpec {
    let scale = image_size as f64 / 128.0;
    let w = (96.0 * scale).round();
    let hole_r = 4.0 * scale;
    PartSpec {
        shape_kind: ShapeKind::PlateWithHoles,
        size_px: w as u32,
        aspect: 0.3,
        sides: 0,
        angle_deg: 0.0,
        hole_pattern: [-36.0, -12.0, 12.0, 36.0]
            .iter()
            .map(|u| Hole {
                dx: u * scale,
                dy: 0.0,
                radius: hole_r,
            })
            .collect(),
        base_intensity: 185,
        background_intensity: 60,
    }
}
