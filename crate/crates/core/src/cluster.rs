//! Data curation: pooled-pixel image features, Ward agglomerative
//! clustering, silhouette-based choice of `k`, and cluster-exclusion
//! training manifests.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::par;
use crate::util::config_hash;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub width: usize,
    pub height: usize,
    /// Pooling lattice; the feature length is `grid * grid`.
    pub grid: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            grid: 16,
        }
    }
}

impl CurationConfig {
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Mean-pooled intensities scaled to unit Euclidean norm.
pub fn curation_features(image: &GrayImage, config: &CurationConfig) -> Result<Vec<f64>> {
    if (image.width(), image.height()) != (config.width, config.height) {
        return Err(Error::SizeMismatch {
            expected_w: config.width,
            expected_h: config.height,
            found_w: image.width(),
            found_h: image.height(),
        });
    }
    let g = config.grid;
    if g == 0 || g > config.width || g > config.height {
        return Err(Error::InvalidArgument(format!("pooling grid {g} invalid")));
    }
    let (w, h) = (config.width, config.height);
    let mut out = Vec::with_capacity(g * g);
    for gy in 0..g {
        let (y0, y1) = (gy * h / g, (gy + 1) * h / g);
        for gx in 0..g {
            let (x0, x1) = (gx * w / g, (gx + 1) * w / g);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += f64::from(image.get(x, y));
                }
            }
            out.push(sum / ((x1 - x0) * (y1 - y0)) as f64);
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One merge of two clusters, identified by their smallest member index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub a: usize,
    pub b: usize,
    pub delta: f64,
    pub size: usize,
}

/// Full Ward merge sequence down to one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<MergeStep>,
}

impl Dendrogram {
    /// Cluster labels after `n - k` merges, numbered by first member.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.n {
            return Err(Error::Cluster(format!("cannot cut {} points into {k} clusters", self.n)));
        }
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for m in &self.merges[..self.n - k] {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
        }
        let mut ids = BTreeMap::new();
        Ok((0..self.n)
            .map(|i| {
                let root = find(&mut parent, i);
                let next = ids.len();
                *ids.entry(root).or_insert(next)
            })
            .collect())
    }
}

/// Ward linkage via the Lance-Williams update. At each step the pair with the
/// smallest merge cost wins; ties go to the lexicographically smallest pair
/// of cluster ids (a cluster's id is its smallest member index).
pub fn ward_dendrogram(features: &[Vec<f64>]) -> Result<Dendrogram> {
    let n = features.len();
    if n == 0 {
        return Err(Error::Cluster("no points to cluster".into()));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim || f.iter().any(|v| !v.is_finite())) {
        return Err(Error::Cluster("features must be finite and of equal length".into()));
    }
    // d[i][j] holds the Ward cost of merging active clusters i and j
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * sq_dist(&features[i], &features[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (delta, i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((ni + nk) * d[i][k] + (nj + nk) * d[j][k] - nk * delta) / (ni + nj + nk);
            d[i][k] = v;
            d[k][i] = v;
        }
        active[j] = false;
        size[i] += size[j];
        merges.push(MergeStep {
            a: i,
            b: j,
            delta,
            size: size[i],
        });
    }
    Ok(Dendrogram { n, merges })
}

/// Labels of `features` after Ward agglomeration down to `k` clusters.
pub fn agglomerate(features: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Cluster(format!("k must be at least 2, got {k}")));
    }
    if features.len() < k {
        return Err(Error::Cluster(format!(
            "{} points cannot form {k} clusters",
            features.len()
        )));
    }
    ward_dendrogram(features)?.cut(k)
}

fn distance_matrix(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = features.len();
    par::map_range(n, |i| {
        (0..n)
            .map(|j| sq_dist(&features[i], &features[j]).sqrt())
            .collect()
    })
}

fn silhouette_values_from(dist: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<f64> {
    let n = labels.len();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    (0..n)
        .map(|i| {
            let own = labels[i];
            if counts[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                sums[labels[j]] += dist[i][j];
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 && b.is_finite() {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect()
}

fn check_labels(n: usize, labels: &[usize]) -> Result<usize> {
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    let k = labels.iter().copied().collect::<BTreeSet<_>>().len();
    if k < 2 {
        return Err(Error::Cluster("silhouette needs at least 2 clusters".into()));
    }
    Ok(k)
}

/// Remaps arbitrary cluster labels to `0..k`, in order of first appearance.
fn compact(labels: &[usize]) -> Vec<usize> {
    let mut ids = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect()
}

/// Per-sample silhouette values; singletons score 0.
pub fn silhouette_values(features: &[Vec<f64>], labels: &[usize]) -> Result<Vec<f64>> {
    let k = check_labels(features.len(), labels)?;
    Ok(silhouette_values_from(&distance_matrix(features), &compact(labels), k))
}

/// Mean silhouette over all samples.
pub fn silhouette_score(features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let v = silhouette_values(features, labels)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteReport {
    pub k_min: usize,
    /// Upper end actually searched.
    pub k_max: usize,
    pub scores: BTreeMap<usize, f64>,
    pub chosen_k: usize,
    /// Labels at `chosen_k`.
    pub labels: Vec<usize>,
    /// Per-sample silhouette at `chosen_k`.
    pub per_sample: Vec<f64>,
}

pub const DEFAULT_K_MIN: usize = 3;
pub const DEFAULT_K_MAX: usize = 25;

/// Searches `k` in `[k_min, min(k_max, n - 1)]` for the best mean silhouette,
/// preferring the smaller `k` on ties.
pub fn select_k(features: &[Vec<f64>], k_min: usize, k_max: usize) -> Result<SilhouetteReport> {
    let n = features.len();
    if k_min < 2 {
        return Err(Error::Cluster(format!("k_min must be at least 2, got {k_min}")));
    }
    if n <= k_min {
        return Err(Error::Cluster(format!("{n} points are too few for k_min {k_min}")));
    }
    let hi = k_max.min(n - 1);
    if hi < k_min {
        return Err(Error::Cluster(format!("empty search range [{k_min}, {hi}]")));
    }
    let tree = ward_dendrogram(features)?;
    let dist = distance_matrix(features);
    let ks: Vec<usize> = (k_min..=hi).collect();
    let evaluated: Vec<(Vec<usize>, Vec<f64>)> = par::map_slice(&ks, |&k| {
        let labels = tree.cut(k).expect("k within range");
        let values = silhouette_values_from(&dist, &labels, k);
        (labels, values)
    });
    let mut scores = BTreeMap::new();
    let mut best: Option<(usize, f64)> = None;
    for (&k, (_, values)) in ks.iter().zip(&evaluated) {
        let s = values.iter().sum::<f64>() / n as f64;
        scores.insert(k, s);
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    let (chosen_k, _) = best.expect("nonempty range");
    let (labels, per_sample) = evaluated.into_iter().nth(chosen_k - k_min).expect("chosen k evaluated");
    Ok(SilhouetteReport {
        k_min,
        k_max: hi,
        scores,
        chosen_k,
        labels,
        per_sample,
    })
}

/// Cluster index of every image in a curated pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: BTreeMap<String, usize>,
    pub feature_config_hash: String,
}

impl ClusterAssignment {
    pub fn new(k: usize, labels: BTreeMap<String, usize>, feature_config_hash: String) -> Result<Self> {
        let a = Self {
            k,
            labels,
            feature_config_hash,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Cluster(format!("cluster assignment needs k ≥ 2, got {}", self.k)));
        }
        let mut sizes = vec![0usize; self.k];
        for (id, &c) in &self.labels {
            if c >= self.k {
                return Err(Error::Cluster(format!("{id} assigned to cluster {c} of {}", self.k)));
            }
            sizes[c] += 1;
        }
        if let Some(j) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Cluster(format!("cluster {j} is empty")));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        self.labels.values().for_each(|&c| sizes[c] += 1);
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.labels
            .iter()
            .filter(|(_, &c)| c == cluster)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// JSON written by clustering runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub feature_config_hash: String,
    pub k_min: usize,
    pub k_max: usize,
    pub scores: BTreeMap<String, f64>,
    pub chosen_k: usize,
    pub labels: BTreeMap<String, usize>,
}

impl ClusterReport {
    pub fn new(report: &SilhouetteReport, assignment: &ClusterAssignment) -> Self {
        Self {
            feature_config_hash: assignment.feature_config_hash.clone(),
            k_min: report.k_min,
            k_max: report.k_max,
            scores: report.scores.iter().map(|(k, s)| (k.to_string(), *s)).collect(),
            chosen_k: report.chosen_k,
            labels: assignment.labels.clone(),
        }
    }
}

/// Clusters the training split of a manifest.
pub fn cluster_split(
    manifest: &DatasetManifest,
    split: Split,
    config: &CurationConfig,
    k_min: usize,
    k_max: usize,
) -> Result<(SilhouetteReport, ClusterAssignment)> {
    let samples = manifest.samples_in(split);
    let features: Vec<Vec<f64>> = par::map_slice(&samples, |s| {
        manifest
            .load_image(s)
            .and_then(|img| curation_features(&img, config))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    cluster_features(
        samples.iter().map(|s| s.image_id.clone()).collect(),
        &features,
        config,
        k_min,
        k_max,
    )
}

/// Runs [`select_k`] and names the result by image id.
pub fn cluster_features(
    ids: Vec<String>,
    features: &[Vec<f64>],
    config: &CurationConfig,
    k_min: usize,
    k_max: usize,
) -> Result<(SilhouetteReport, ClusterAssignment)> {
    let report = select_k(features, k_min, k_max)?;
    let labels = ids.into_iter().zip(report.labels.iter().copied()).collect();
    let assignment = ClusterAssignment::new(report.chosen_k, labels, config.hash())?;
    Ok((report, assignment))
}

/// A training manifest with one cluster removed.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationManifest {
    pub cluster: usize,
    pub excluded: usize,
    pub excluded_fraction: f64,
    pub manifest: DatasetManifest,
}

/// One manifest per cluster, each dropping that cluster's images from the
/// train split. Validation and holdout are untouched.
pub fn ablation_manifests(manifest: &DatasetManifest, assignment: &ClusterAssignment) -> Result<Vec<AblationManifest>> {
    assignment.validate()?;
    let train: BTreeSet<&str> = manifest
        .samples_in(Split::Train)
        .into_iter()
        .map(|s| s.image_id.as_str())
        .collect();
    let labelled: BTreeSet<&str> = assignment.labels.keys().map(String::as_str).collect();
    if train != labelled {
        let stray = labelled.difference(&train).count();
        let missing = train.difference(&labelled).count();
        return Err(Error::AssignmentMismatch(format!(
            "{stray} labelled images are not in train, {missing} train images are unlabelled"
        )));
    }
    let n_train = train.len();
    (0..assignment.k)
        .map(|j| {
            let drop: BTreeSet<&str> = assignment.members(j).into_iter().collect();
            if drop.is_empty() {
                return Err(Error::AssignmentMismatch(format!("cluster {j} has no train images")));
            }
            let mut m = manifest.clone();
            m.name = format!("{}-excl-{j}", manifest.name);
            m.samples.retain(|s| !drop.contains(s.image_id.as_str()));
            m.split_assignments.retain(|id, _| !drop.contains(id.as_str()));
            Ok(AblationManifest {
                cluster: j,
                excluded: drop.len(),
                excluded_fraction: drop.len() as f64 / n_train as f64,
                manifest: m,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_images() {
        let cfg = CurationConfig::default();
        let v = curation_features(&GrayImage::new(128, 128, 90), &cfg).unwrap();
        assert_eq!(v.len(), 256);
        assert!(v.iter().all(|&x| (x - 1.0 / 16.0).abs() < 1e-15));
        let black = curation_features(&GrayImage::new(128, 128, 0), &cfg).unwrap();
        assert!(black.iter().all(|&x| x == 0.0));
        assert_eq!(sq_dist(&black, &v).sqrt(), 1.0);
        assert!(curation_features(&GrayImage::new(64, 64, 0), &cfg).is_err());
    }

    #[test]
    fn two_blobs() {
        let f: Vec<Vec<f64>> = [0.0, 10.0, 0.1, 10.1].iter().map(|&x| vec![x]).collect();
        assert_eq!(agglomerate(&f, 2).unwrap(), vec![0, 1, 0, 1]);
        assert_eq!(agglomerate(&f, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(agglomerate(&f, 5).is_err());
        assert!(agglomerate(&f, 1).is_err());
    }

    #[test]
    fn silhouette_cases() {
        let f: Vec<Vec<f64>> = [0.0, 0.01, 0.02, 100.0, 100.01, 100.02].iter().map(|&x| vec![x]).collect();
        assert!(silhouette_score(&f, &[0, 0, 0, 1, 1, 1]).unwrap() > 0.95);
        let line: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let mixed = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        assert!(silhouette_score(&line, &mixed).unwrap() < 0.05);
        let singles: Vec<usize> = (0..6).collect();
        assert_eq!(silhouette_score(&f, &singles).unwrap(), 0.0);
        assert!(silhouette_score(&f, &[0; 6]).is_err());
    }

    #[test]
    fn select_k_range_is_clipped() {
        let f: Vec<Vec<f64>> = (0..5).map(|i| vec![(i * i) as f64]).collect();
        let r = select_k(&f, 3, 25).unwrap();
        assert_eq!(r.k_max, 4);
        assert_eq!(r.scores.keys().copied().collect::<Vec<_>>(), vec![3, 4]);
        assert!(select_k(&f[..3], 3, 25).is_err());
    }

    #[test]
    fn assignment_needs_two_clusters() {
        let labels: BTreeMap<String, usize> = [("a".to_string(), 0)].into();
        assert!(ClusterAssignment::new(1, labels, String::new()).is_err());
    }
}
