//! Cluster-exclusion ablation: how much each cluster of training images
//! contributes to test performance.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{load_ref, make_report, train_model, write_report, DatasetRef, ExperimentReport, TrainingSpec};
use crate::cluster::{
    ablation_manifests, cluster_features, curation_features, ClusterReport, CurationConfig, DEFAULT_K_MAX,
    DEFAULT_K_MIN,
};
use crate::dataset::{load_manifest, DatasetManifest, ImageSample, Split};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::learner::{Aggregation, ModelKind};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Manifest whose train split is clustered.
    pub manifest: PathBuf,
    pub model_kind: ModelKind,
    pub test: DatasetRef,
    pub seed: u64,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub curation: CurationConfig,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
}

fn default_k_min() -> usize {
    DEFAULT_K_MIN
}

fn default_k_max() -> usize {
    DEFAULT_K_MAX
}

impl AblationConfig {
    pub fn new(manifest: impl Into<PathBuf>, model_kind: ModelKind, test: DatasetRef, seed: u64) -> Self {
        Self {
            manifest: manifest.into(),
            model_kind,
            test,
            seed,
            aggregation: Aggregation::default(),
            curation: CurationConfig::default(),
            k_min: DEFAULT_K_MIN,
            k_max: DEFAULT_K_MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub cluster: usize,
    pub excluded: usize,
    pub excluded_fraction: f64,
    pub n_train: usize,
    /// Run AUC minus baseline AUC.
    pub auc_delta: f64,
    pub report: ExperimentReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// The split that was clustered and ablated, `name:split`.
    pub clustered_pool: String,
    pub clusters: ClusterReport,
    pub baseline: ExperimentReport,
    pub entries: Vec<AblationEntry>,
}

impl AblationReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::json("ablation report", e))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Entry of the cluster with the most (or fewest) excluded images; ties
    /// go to the lower cluster index.
    pub fn by_size(&self, largest: bool) -> Option<&AblationEntry> {
        let mut best: Option<&AblationEntry> = None;
        for e in &self.entries {
            let better = match best {
                None => true,
                Some(b) if largest => e.excluded > b.excluded,
                Some(b) => e.excluded < b.excluded,
            };
            if better {
                best = Some(e);
            }
        }
        best
    }
}

/// Ablation on data that is already loaded. `train` must be the train split
/// of `manifest`, in manifest order.
pub fn run_ablation_on(
    config: &AblationConfig,
    manifest: &DatasetManifest,
    train: &[ImageSample],
    test_label: &str,
    test: &[ImageSample],
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    let min_pool = 2 * config.k_min;
    if train.len() < min_pool {
        return Err(Error::Cluster(format!(
            "train split has {} images, ablation needs at least {min_pool}",
            train.len()
        )));
    }
    let features: Vec<Vec<f64>> = par::map_slice(train, |s| curation_features(&s.image, &config.curation))
        .into_iter()
        .collect::<Result<_>>()?;
    let ids: Vec<String> = train.iter().map(|s| s.sample.image_id.clone()).collect();
    let (silhouette, assignment) = cluster_features(ids, &features, &config.curation, config.k_min, config.k_max)?;
    let clusters = ClusterReport::new(&silhouette, &assignment);
    let ablations = ablation_manifests(manifest, &assignment)?;
    let spec = TrainingSpec::default_for(config.model_kind, config.seed);
    let pool = format!("{}:{}", manifest.name, Split::Train);

    let mut subsets: Vec<(String, String, Vec<ImageSample>)> =
        vec![("baseline".to_string(), pool.clone(), train.to_vec())];
    for a in &ablations {
        let keep: BTreeSet<&str> = a
            .manifest
            .samples_in(Split::Train)
            .into_iter()
            .map(|s| s.image_id.as_str())
            .collect();
        let subset: Vec<ImageSample> = train
            .iter()
            .filter(|s| keep.contains(s.sample.image_id.as_str()))
            .cloned()
            .collect();
        subsets.push((format!("excl-{}", a.cluster), format!("{}:{}", a.manifest.name, Split::Train), subset));
    }

    let runs = par::map_slice(&subsets, |(id, label, samples)| {
        let params = train_model(samples, &spec)?;
        make_report(
            id,
            &params,
            Some(label.clone()),
            samples.len(),
            test_label.to_string(),
            test,
            config.aggregation,
            config.seed,
            0.5,
            0.1,
            Some(&spec),
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    if let Some(dir) = out_dir {
        for (report, eval) in &runs {
            write_report(report, eval, &dir.join(format!("{}.json", report.experiment_id)))?;
        }
    }
    let mut runs = runs.into_iter().map(|(r, _)| r);
    let baseline = runs.next().expect("baseline run");
    let entries = ablations
        .iter()
        .zip(runs)
        .map(|(a, report)| AblationEntry {
            cluster: a.cluster,
            excluded: a.excluded,
            excluded_fraction: a.excluded_fraction,
            n_train: report.n_train,
            auc_delta: report.auc - baseline.auc,
            report,
        })
        .collect();
    Ok(AblationReport {
        clustered_pool: pool,
        clusters,
        baseline,
        entries,
    })
}

/// Clusters the train split, retrains once per excluded cluster plus a
/// full-data baseline, and writes `clusters.json`, `ablation.json` and one
/// report per run under `out_dir`.
pub fn run_ablation(config: &AblationConfig, out_dir: &Path) -> Result<AblationReport> {
    let manifest = load_manifest(&config.manifest)?;
    let train = manifest.load_split(Split::Train)?;
    let (test_m, test) = load_ref(&config.test)?;
    let test_label = format!("{}:{}", test_m.name, config.test.split);
    let report = run_ablation_on(config, &manifest, &train, &test_label, &test, Some(out_dir))?;
    let mut cluster_bytes =
        serde_json::to_vec_pretty(&report.clusters).map_err(|e| Error::json("cluster report", e))?;
    cluster_bytes.push(b'\n');
    fsutil::write_atomic(&out_dir.join("clusters.json"), &cluster_bytes)?;
    fsutil::write_atomic(&out_dir.join("ablation.json"), &report.to_json()?)?;
    Ok(report)
}
