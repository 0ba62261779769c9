//! In-memory multi-view datasets and loading them from manifests.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::featureio::{read_feature_file, DatasetManifest, Label, Record};
use crate::tensor::Tensor;

/// One utterance: a time-major `T×D` matrix per view.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: Label,
    pub views: Vec<Tensor<f32>>,
}

/// Samples whose views share shapes across the whole set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub view_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(view_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            for s in &samples {
                if s.views.len() != view_names.len() {
                    return Err(Error::Shape(format!(
                        "{}: {} views, expected {}",
                        s.id,
                        s.views.len(),
                        view_names.len()
                    )));
                }
                for (i, (v, f)) in s.views.iter().zip(&first.views).enumerate() {
                    if v.shape().len() != 2 || v.shape() != f.shape() {
                        return Err(Error::Shape(format!(
                            "{}: view {} has shape {:?}, {} has {:?}",
                            s.id,
                            view_names[i],
                            v.shape(),
                            first.id,
                            f.shape()
                        )));
                    }
                }
            }
        }
        Ok(Dataset { view_names, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(T, D)` of each view.
    pub fn view_shapes(&self) -> Vec<(usize, usize)> {
        self.samples
            .first()
            .map(|s| s.views.iter().map(|v| (v.shape()[0], v.shape()[1])).collect())
            .unwrap_or_default()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Stacks the selected samples into one `B×T×D` tensor per view plus class indices.
    pub fn batch(&self, idx: &[usize]) -> Result<(Vec<Tensor<f32>>, Vec<usize>)> {
        let views = (0..self.view_names.len())
            .map(|v| Tensor::stack(&idx.iter().map(|&i| self.samples[i].views[v].clone()).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let labels = idx.iter().map(|&i| self.samples[i].label.index()).collect();
        Ok((views, labels))
    }

    /// Keeps only the named views, in the given order.
    pub fn select_views(&self, names: &[String]) -> Result<Dataset> {
        let pick = names
            .iter()
            .map(|n| {
                self.view_names
                    .iter()
                    .position(|v| v == n)
                    .ok_or_else(|| Error::Usage(format!("dataset has no view {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                id: s.id.clone(),
                label: s.label,
                views: pick.iter().map(|&i| s.views[i].clone()).collect(),
            })
            .collect();
        Ok(Dataset { view_names: names.to_vec(), samples })
    }

    /// Splits off the last `ceil(fraction·n)` samples (at least one).
    pub fn split_tail(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) || self.len() < 2 {
            return Err(Error::Usage(format!(
                "cannot hold out {fraction} of {} samples",
                self.len()
            )));
        }
        let k = ((self.len() as f64 * fraction).ceil() as usize).clamp(1, self.len() - 1);
        let cut = self.len() - k;
        Ok((
            Dataset { view_names: self.view_names.clone(), samples: self.samples[..cut].to_vec() },
            Dataset { view_names: self.view_names.clone(), samples: self.samples[cut..].to_vec() },
        ))
    }
}

/// Where the files of one view come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViewSource {
    /// `<dir>/<id>.addf`
    Dir(PathBuf),
    /// The record's `view.<name>` manifest entry.
    Manifest,
}

/// Parses `name=dir,name,...`; a bare name reads paths from the manifest.
pub fn parse_views(spec: &str) -> Result<Vec<(String, ViewSource)>> {
    let mut out: Vec<(String, ViewSource)> = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, src) = match part.split_once('=') {
            Some((n, d)) if !d.is_empty() => (n, ViewSource::Dir(PathBuf::from(d))),
            Some(_) => return Err(Error::Usage(format!("view {part:?} has an empty directory"))),
            None => (part, ViewSource::Manifest),
        };
        if name.is_empty() {
            return Err(Error::Usage(format!("view {part:?} has an empty name")));
        }
        if out.iter().any(|(n, _)| n == name) {
            return Err(Error::Usage(format!("view {name:?} given twice")));
        }
        out.push((name.to_owned(), src));
    }
    if out.is_empty() {
        return Err(Error::Usage("no views given".into()));
    }
    Ok(out)
}

pub fn feature_path(manifest: &DatasetManifest, rec: &Record, name: &str, src: &ViewSource) -> Result<PathBuf> {
    match src {
        ViewSource::Dir(d) => Ok(manifest.resolve(&d.join(format!("{}.addf", rec.id)))),
        ViewSource::Manifest => rec
            .features
            .get(name)
            .map(|p| manifest.resolve(p))
            .ok_or_else(|| Error::Validation(format!("{}: manifest has no view.{name} path", rec.id))),
    }
}

fn load_record(manifest: &DatasetManifest, rec: &Record, views: &[(String, ViewSource)]) -> Result<Sample> {
    let views = views
        .iter()
        .map(|(name, src)| {
            let path = feature_path(manifest, rec, name, src)?;
            let f = read_feature_file(&path)?;
            if f.shape.len() != 2 {
                return Err(Error::Shape(format!("{}: expected D×T, got {:?}", path.display(), f.shape)));
            }
            Tensor::new(&[f.frames(), f.dim()], f.time_major()?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample { id: rec.id.clone(), label: rec.label, views })
}

/// Reads every record's views in parallel. Failures are collected per utterance
/// and returned together, in manifest order.
pub fn load_samples(
    manifest: &DatasetManifest,
    records: &[&Record],
    views: &[(String, ViewSource)],
) -> (Vec<Sample>, Vec<(String, Error)>) {
    let results: Vec<Result<Sample>> = records.par_iter().map(|r| load_record(manifest, r, views)).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(s) => ok.push(s),
            Err(e) => failed.push((r.id.clone(), e)),
        }
    }
    (ok, failed)
}

/// As [`load_samples`], failing with one error that lists every bad utterance.
pub fn load_dataset(manifest: &DatasetManifest, records: &[&Record], views: &[(String, ViewSource)]) -> Result<Dataset> {
    let (samples, failed) = load_samples(manifest, records, views);
    if !failed.is_empty() {
        return Err(collect_failures(&failed));
    }
    Dataset::new(views.iter().map(|(n, _)| n.clone()).collect(), samples)
}

pub fn collect_failures(failed: &[(String, Error)]) -> Error {
    let shown: Vec<String> = failed.iter().take(20).map(|(id, e)| format!("{id}: {e}")).collect();
    let more = if failed.len() > 20 { format!(" (and {} more)", failed.len() - 20) } else { String::new() };
    Error::Validation(format!("{} utterance(s) failed to load: {}{more}", failed.len(), shown.join("; ")))
}

/// Directory helper for writers: `<dir>/<id>.addf`.
pub fn feature_file_in(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.addf"))
}
