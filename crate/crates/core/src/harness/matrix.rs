//! Batches of experiments sharing datasets and trained models.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::experiment::{load_ref, make_report, train_model, write_report, DatasetRef, ExperimentConfig, ExperimentReport};
use crate::dataset::{DatasetManifest, ImageSample, Split};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::learner::{ModelKind, ModelParams};
use crate::par;

pub const SUMMARY_HEADER: &str = "experiment,kind,train,test,auc,ap,tp,fn,fp,tn";

/// The two generated families a default matrix runs over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefaultMatrix {
    pub uniform: PathBuf,
    pub diverse: PathBuf,
    pub seed: u64,
}

/// Matrix file: an optional default matrix followed by explicit rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    #[serde(default)]
    pub default_matrix: Option<DefaultMatrix>,
    #[serde(default)]
    pub experiments: Vec<ExperimentConfig>,
}

impl MatrixConfig {
    /// All rows, with relative manifest paths resolved against `base`.
    pub fn expand(&self, base: &Path) -> Vec<ExperimentConfig> {
        let mut rows = match &self.default_matrix {
            Some(d) => default_matrix(&base.join(&d.uniform), &base.join(&d.diverse), d.seed),
            None => Vec::new(),
        };
        rows.extend(self.experiments.iter().map(|c| ExperimentConfig {
            train: c.train.resolved(base),
            test: c.test.resolved(base),
            ..c.clone()
        }));
        rows
    }
}

/// Every (family, test set, model kind) combination: each family is tested
/// on its own validation split, its own holdout and the other family's
/// holdout, with both model kinds. Rows are numbered `exp01` to `exp12`.
pub fn default_matrix(uniform: &Path, diverse: &Path, seed: u64) -> Vec<ExperimentConfig> {
    let mut rows = Vec::with_capacity(12);
    for kind in [ModelKind::Classifier, ModelKind::Detector] {
        for (own, other) in [(uniform, diverse), (diverse, uniform)] {
            for test in [
                DatasetRef::new(own, Split::Validation),
                DatasetRef::new(own, Split::Holdout),
                DatasetRef::new(other, Split::Holdout),
            ] {
                let id = format!("exp{:02}", rows.len() + 1);
                rows.push(ExperimentConfig::new(id, kind, DatasetRef::new(own, Split::Train), test, seed));
            }
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq)]
pub enum RowOutcome {
    Done(Box<ExperimentReport>),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixRow {
    pub experiment_id: String,
    pub kind: ModelKind,
    pub train: String,
    pub test: String,
    pub outcome: RowOutcome,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatrixSummary {
    pub rows: Vec<MatrixRow>,
}

impl MatrixSummary {
    pub fn failures(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!(r.outcome, RowOutcome::Failed(_)))
            .count()
    }

    pub fn report(&self, experiment_id: &str) -> Option<&ExperimentReport> {
        self.rows.iter().find_map(|r| match &r.outcome {
            RowOutcome::Done(rep) if r.experiment_id == experiment_id => Some(rep.as_ref()),
            _ => None,
        })
    }

    /// One line per row; failed rows carry `failed` in the auc column.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{},", r.experiment_id, r.kind, r.train, r.test);
            match &r.outcome {
                RowOutcome::Done(rep) => {
                    let ap = rep.ap.map(|v| v.to_string()).unwrap_or_default();
                    let c = &rep.confusion;
                    let _ = writeln!(out, "{},{},{},{},{},{}", rep.auc, ap, c.tp, c.fn_, c.fp, c.tn);
                }
                RowOutcome::Failed(_) => out.push_str("failed,,,,,\n"),
            }
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("experiment,wall_time_s\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.3}", r.experiment_id, r.wall_time_s);
        }
        out
    }
}

type Loaded = std::result::Result<(DatasetManifest, Vec<ImageSample>), String>;

fn ref_label(r: &DatasetRef, loaded: &BTreeMap<DatasetRef, Loaded>) -> String {
    match loaded.get(r) {
        Some(Ok((m, _))) => format!("{}:{}", m.name, r.split),
        _ => r.to_string(),
    }
}

/// Runs every row, sharing loaded splits and trained models between rows
/// with the same inputs. A failing row is recorded and the rest continue.
/// Writes one report set per row plus `summary.csv` and `timings.csv`.
pub fn run_matrix(configs: &[ExperimentConfig], out_dir: &Path) -> Result<MatrixSummary> {
    let mut refs: Vec<DatasetRef> = configs.iter().flat_map(|c| [c.train.clone(), c.test.clone()]).collect();
    refs.sort();
    refs.dedup();
    let loaded: BTreeMap<DatasetRef, Loaded> = refs
        .into_iter()
        .map(|r| {
            let v = load_ref(&r).map_err(|e| e.chain());
            (r, v)
        })
        .collect();

    // one model per distinct (train split, training settings)
    let mut groups: BTreeMap<(DatasetRef, String), Vec<usize>> = BTreeMap::new();
    for (i, c) in configs.iter().enumerate() {
        let key = serde_json::to_string(&c.training()).map_err(|e| Error::json("training settings", e))?;
        groups.entry((c.train.clone(), key)).or_default().push(i);
    }
    let group_list: Vec<(&(DatasetRef, String), &Vec<usize>)> = groups.iter().collect();
    let trained: Vec<(std::result::Result<ModelParams, String>, f64)> = par::map_slice(&group_list, |(key, rows)| {
        let start = Instant::now();
        let config = &configs[rows[0]];
        let result = match (config.validate(), loaded.get(&key.0)) {
            (Err(e), _) => Err(e.chain()),
            (Ok(()), Some(Ok((_, train)))) => train_model(train, &config.training()).map_err(|e| e.chain()),
            (Ok(()), Some(Err(e))) => Err(e.clone()),
            (Ok(()), None) => Err("dataset not loaded".to_string()),
        };
        (result, start.elapsed().as_secs_f64())
    });
    let mut model_of = vec![0usize; configs.len()];
    for (g, (_, rows)) in group_list.iter().enumerate() {
        for &i in rows.iter() {
            model_of[i] = g;
        }
    }

    let rows: Vec<MatrixRow> = par::map_range(configs.len(), |i| {
        let c = &configs[i];
        let start = Instant::now();
        let (model, train_time) = &trained[model_of[i]];
        let outcome = (|| -> std::result::Result<ExperimentReport, String> {
            let params = model.as_ref().map_err(Clone::clone)?;
            let (_, test) = loaded
                .get(&c.test)
                .ok_or("dataset not loaded")?
                .as_ref()
                .map_err(Clone::clone)?;
            let n_train = match loaded.get(&c.train) {
                Some(Ok((_, t))) => t.len(),
                _ => 0,
            };
            let spec = c.training();
            let (report, eval) = make_report(
                &c.experiment_id,
                params,
                Some(ref_label(&c.train, &loaded)),
                n_train,
                ref_label(&c.test, &loaded),
                test,
                c.aggregation,
                c.seed,
                c.threshold,
                c.ap_iou,
                Some(&spec),
            )
            .map_err(|e| e.chain())?;
            write_report(&report, &eval, &out_dir.join(format!("{}.json", c.experiment_id)))
                .map_err(|e| e.chain())?;
            Ok(report)
        })();
        MatrixRow {
            experiment_id: c.experiment_id.clone(),
            kind: c.model_kind,
            train: ref_label(&c.train, &loaded),
            test: ref_label(&c.test, &loaded),
            outcome: match outcome {
                Ok(r) => RowOutcome::Done(Box::new(r)),
                Err(e) => RowOutcome::Failed(e),
            },
            wall_time_s: train_time + start.elapsed().as_secs_f64(),
        }
    });
    let summary = MatrixSummary { rows };
    fsutil::write_atomic(&out_dir.join("summary.csv"), summary.to_csv().as_bytes())?;
    fsutil::write_atomic(&out_dir.join("timings.csv"), summary.timings_csv().as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matrix_is_complete() {
        let m = default_matrix(Path::new("u.json"), Path::new("d.json"), 42);
        assert_eq!(m.len(), 12);
        let mut seen = std::collections::BTreeSet::new();
        for c in &m {
            assert_eq!(c.train.split, Split::Train);
            assert!(seen.insert((c.model_kind.as_str(), c.train.manifest.clone(), c.test.clone())));
        }
        assert_eq!(m[0].experiment_id, "exp01");
        assert_eq!(m[11].experiment_id, "exp12");
    }

    #[test]
    fn empty_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_matrix(&[], dir.path()).unwrap();
        assert_eq!(s.rows.len(), 0);
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv, format!("{SUMMARY_HEADER}\n"));
    }

    #[test]
    fn missing_dataset_marks_row_failed() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.json");
        let rows = default_matrix(&missing, &missing, 1);
        let s = run_matrix(&rows[..1], dir.path()).unwrap();
        assert_eq!(s.failures(), 1);
        assert!(s.to_csv().lines().nth(1).unwrap().contains(",failed,"));
    }
}
