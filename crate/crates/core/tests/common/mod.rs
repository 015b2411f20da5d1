//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use inspecta::learner::Detection;
use inspecta::metrics::ScoredLabel;
use inspecta::{BBox, GrayImage, Label};

/// Mann-Whitney statistic: fraction of (NG, OK) pairs ranked correctly,
/// ties counting one half.
pub fn pairwise_auc(scored: &[ScoredLabel]) -> f64 {
    let pos: Vec<f64> = scored.iter().filter(|s| s.truth == Label::Ng).map(|s| s.score).collect();
    let neg: Vec<f64> = scored.iter().filter(|s| s.truth == Label::Ok).map(|s| s.score).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let mut inter = 0i64;
    let mut union = 0i64;
    let x0 = a.x_min.min(b.x_min);
    let x1 = a.x_max.max(b.x_max);
    let y0 = a.y_min.min(b.y_min);
    let y1 = a.y_max.max(b.y_max);
    for y in y0..y1 {
        for x in x0..x1 {
            let (ia, ib) = (a.contains_pixel(x, y), b.contains_pixel(x, y));
            inter += i64::from(ia && ib);
            union += i64::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pixel-counting IOU.
pub fn pixel_iou(a: &BBox, b: &BBox) -> f64 {
    overlap(a, b)
}

/// True positives among the `m` highest-scoring detections, matched from
/// scratch.
fn true_positives(ranked: &[(usize, Detection)], gts: &[Vec<BBox>], m: usize, thr: f64) -> usize {
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0;
    for (img, d) in &ranked[..m] {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts[*img].iter().enumerate() {
            let o = pixel_iou(&d.bbox, g);
            if !used[*img][j] && o >= thr && best.map_or(true, |(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            used[*img][j] = true;
            tp += 1;
        }
    }
    tp
}

/// AP from the full precision/recall staircase: every cutoff `m` is
/// evaluated independently, and each recall step is weighted by the best
/// precision reachable at that recall or beyond. Scores must be distinct.
pub fn staircase_ap(dets: &[Vec<Detection>], gts: &[Vec<BBox>], thr: f64) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let mut ranked: Vec<(usize, Detection)> = dets
        .iter()
        .enumerate()
        .flat_map(|(i, ds)| ds.iter().map(move |d| (i, *d)))
        .collect();
    ranked.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap());
    let points: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|m| {
            let tp = true_positives(&ranked, gts, m, thr) as f64;
            (tp / n_gt as f64, tp / m as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for &(r, _) in &points {
        if r > prev {
            let best = points.iter().filter(|(r2, _)| *r2 >= r).map(|(_, p)| *p).fold(0.0, f64::max);
            ap += (r - prev) * best;
            prev = r;
        }
    }
    ap
}

/// Naive Ward agglomeration: recomputes every pairwise merge cost from
/// centroids at each step. Returns labels numbered by first appearance.
pub fn brute_ward(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let centroid = |c: &[usize]| -> Vec<f64> {
        let d = points[0].len();
        let mut m = vec![0.0; d];
        for &i in c {
            for (a, v) in m.iter_mut().zip(&points[i]) {
                *a += v;
            }
        }
        m.iter().map(|v| v / c.len() as f64).collect()
    };
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (ca, cb) = (centroid(&clusters[a]), centroid(&clusters[b]));
                let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
                let d2: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum();
                let cost = na * nb / (na + nb) * d2;
                if cost < best.0 {
                    best = (cost, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters[a].sort_unstable();
        clusters.sort_by_key(|c| c[0]);
    }
    let mut labels = vec![0; points.len()];
    for (l, c) in clusters.iter().enumerate() {
        for &i in c {
            labels[i] = l;
        }
    }
    canonical(&labels)
}

/// Relabels so clusters are numbered by first appearance.
pub fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Binary image with 255 inside `b` and 0 elsewhere.
pub fn box_mask(b: &BBox, width: usize, height: usize) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| if b.contains_pixel(x as i64, y as i64) { 255 } else { 0 })
}

/// Tight box around the nonzero pixels of `image`.
pub fn mask_bounds(image: &GrayImage) -> Option<BBox> {
    let mut out: Option<BBox> = None;
    for y in 0..image.height() {
        for x in 0..image.width() {
            if image.get(x, y) != 0 {
                let (x, y) = (x as i64, y as i64);
                out = Some(match out {
                    None => BBox::new(x, y, x + 1, y + 1),
                    Some(b) => BBox::new(b.x_min.min(x), b.y_min.min(y), b.x_max.max(x + 1), b.y_max.max(y + 1)),
                });
            }
        }
    }
    out
}

/// Cross-entropy of `logistic(z)` for label `y`, from the textbook formula.
pub fn cross_entropy(z: f64, y: u8) -> f64 {
    let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    if y == 1 {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Central-difference derivative.
pub fn central_diff(f: impl Fn(f64) -> f64, z: f64) -> f64 {
    let h = 1e-5 * z.abs().max(1.0);
    (f(z + h) - f(z - h)) / (2.0 * h)
}

/// Points in `k` tight blobs whose centres sit `separation` apart.
pub fn planted_blobs(rng: &mut impl rand::Rng, k: usize, per_blob: usize, dim: usize, spread: f64, separation: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(k * per_blob);
    for c in 0..k {
        for _ in 0..per_blob {
            out.push(
                (0..dim)
                    .map(|d| {
                        let centre = if d == c % dim { separation * (1 + c / dim) as f64 } else { 0.0 };
                        centre + rng.gen_range(-spread..spread)
                    })
                    .collect(),
            );
        }
    }
    out
}
