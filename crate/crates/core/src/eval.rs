//! Detection scores and the equal error rate.
//!
//! Polarity: a score is the genuine-class probability, so higher means more
//! genuine. At threshold `t` an utterance is accepted when `score >= t`;
//! FAR is the fraction of spoofs accepted and FRR the fraction of genuine
//! utterances rejected.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{collect_failures, load_samples, Dataset, ViewSource};
use crate::error::{Error, Result};
use crate::featureio::{write_atomic, DatasetManifest, Label, Record};
use crate::params::ParamStore;
use crate::model::Detector;
use crate::train::{dataset_logits, Checkpoint};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreEntry {
    pub id: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
    pub n_genuine: usize,
    pub n_spoof: usize,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::Validation(format!("score for {} is not finite", e.id)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("duplicate utterance id {}", e.id)));
            }
        }
        Ok(ScoreSet { entries })
    }

    /// Builds a set from parallel score and label slices with ids `0..n`.
    pub fn from_pairs(scores: &[f64], labels: &[Label]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Usage(format!("{} scores vs {} labels", scores.len(), labels.len())));
        }
        Self::new(
            scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&score, &label))| ScoreEntry { id: i.to_string(), score, label })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let mut g = Vec::new();
        let mut s = Vec::new();
        for e in &self.entries {
            match e.label {
                Label::Genuine => g.push(e.score),
                Label::Spoof => s.push(e.score),
            }
        }
        (g, s)
    }

    /// `id\tscore\tlabel` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.id, e.score, e.label);
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Validation(format!("score line {}: expected 3 tab-separated fields", i + 1)));
            }
            let score = cols[1]
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("score line {}: bad score {:?}", i + 1, cols[1])))?;
            entries.push(ScoreEntry { id: cols[0].to_owned(), score, label: cols[2].parse()? });
        }
        Self::new(entries)
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Candidate thresholds in increasing order: `-∞`, midpoints between
/// consecutive distinct scores, `+∞`.
fn thresholds(all: &mut [f64]) -> Vec<f64> {
    all.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = Vec::with_capacity(all.len());
    for &v in all.iter() {
        if distinct.last() != Some(&v) {
            distinct.push(v);
        }
    }
    let mut t = Vec::with_capacity(distinct.len() + 1);
    t.push(f64::NEG_INFINITY);
    t.extend(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    t.push(f64::INFINITY);
    t
}

/// `(threshold, FAR, FRR)` at every candidate threshold, by a merged sweep.
fn sweep(genuine: &[f64], spoof: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut all: Vec<f64> = genuine.iter().chain(spoof).copied().collect();
    let ts = thresholds(&mut all);
    let mut g = genuine.to_vec();
    let mut s = spoof.to_vec();
    g.sort_by(f64::total_cmp);
    s.sort_by(f64::total_cmp);
    let (ng, ns) = (g.len() as f64, s.len() as f64);
    let (mut gi, mut si) = (0, 0);
    ts.into_iter()
        .map(|t| {
            // gi = genuine below t (rejected), si = spoofs below t
            while gi < g.len() && g[gi] < t {
                gi += 1;
            }
            while si < s.len() && s[si] < t {
                si += 1;
            }
            (t, (s.len() - si) as f64 / ns, gi as f64 / ng)
        })
        .collect()
}

fn classes(scores: &ScoreSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let (g, s) = scores.split();
    if g.is_empty() || s.is_empty() {
        return Err(Error::Usage(format!(
            "EER needs both classes, got {} genuine and {} spoof",
            g.len(),
            s.len()
        )));
    }
    if let Some(e) = scores.entries.iter().find(|e| !e.score.is_finite()) {
        return Err(Error::Validation(format!("score for {} is not finite", e.id)));
    }
    Ok((g, s))
}

/// `(FAR, FRR)` at each candidate threshold, thresholds increasing.
pub fn det_points(scores: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    let (g, s) = classes(scores)?;
    Ok(sweep(&g, &s).into_iter().map(|(_, far, frr)| (far, frr)).collect())
}

/// Locates the first sign change of `FAR - FRR` along the sweep and
/// interpolates linearly between the two bracketing operating points.
pub fn compute_eer(scores: &ScoreSet) -> Result<Eer> {
    let (g, s) = classes(scores)?;
    let pts = sweep(&g, &s);
    let n_genuine = g.len();
    let n_spoof = s.len();
    // d starts at 1 (everything accepted) and ends at -1
    for i in 0..pts.len() {
        let (t0, far0, frr0) = pts[i];
        let d0 = far0 - frr0;
        if d0 == 0.0 {
            let threshold = if t0.is_finite() { t0 } else { finite_neighbor(&pts, i) };
            return Ok(Eer { eer: far0, threshold, n_genuine, n_spoof });
        }
        let (t1, far1, frr1) = pts[i + 1];
        let d1 = far1 - frr1;
        if d1 <= 0.0 {
            if d1 == 0.0 {
                let threshold = if t1.is_finite() { t1 } else { finite_neighbor(&pts, i + 1) };
                return Ok(Eer { eer: far1, threshold, n_genuine, n_spoof });
            }
            let a = d0 / (d0 - d1);
            let eer = far0 + a * (far1 - far0);
            let threshold = match (t0.is_finite(), t1.is_finite()) {
                (true, true) => t0 + a * (t1 - t0),
                (true, false) => t0,
                (false, true) => t1,
                (false, false) => all_equal_score(&g),
            };
            return Ok(Eer { eer, threshold, n_genuine, n_spoof });
        }
    }
    unreachable!("FAR - FRR goes from 1 to -1")
}

fn finite_neighbor(pts: &[(f64, f64, f64)], i: usize) -> f64 {
    let left = i.checked_sub(1).map(|j| pts[j].0).filter(|t| t.is_finite());
    let right = pts.get(i + 1).map(|p| p.0).filter(|t| t.is_finite());
    left.or(right).unwrap_or(f64::NAN)
}

fn all_equal_score(g: &[f64]) -> f64 {
    g[0]
}

/// Human-readable report; the header documents score polarity.
pub fn report_text(e: &Eer) -> String {
    format!(
        "# score = P(genuine); accept when score >= threshold; FAR over spoof, FRR over genuine\n\
         eer={}  threshold={}  n_genuine={} n_spoof={}\n",
        e.eer, e.threshold, e.n_genuine, e.n_spoof
    )
}

pub fn write_report(e: &Eer, path: &Path) -> Result<()> {
    write_atomic(path, report_text(e).as_bytes())
}

/// Two-class softmax probability of class 0 (genuine), computed stably.
pub fn genuine_probability(logits: [f64; 2]) -> f64 {
    1.0 / (1.0 + (logits[1] - logits[0]).exp())
}

/// Scores every sample with noise-free gates; ids are the sample ids.
pub fn score_dataset(det: &Detector, store: &ParamStore<f32>, data: &Dataset, batch_size: usize) -> Result<ScoreSet> {
    let logits = dataset_logits(det, store, data, batch_size)?;
    ScoreSet::new(
        data.samples
            .iter()
            .zip(logits)
            .map(|(s, l)| ScoreEntry {
                id: s.id.clone(),
                score: genuine_probability([l[0] as f64, l[1] as f64]),
                label: s.label,
            })
            .collect(),
    )
}

/// Loads the records' views and scores them with the checkpoint. The view
/// names must equal the checkpoint's, in order. Unreadable utterances are
/// collected and reported together.
pub fn score_utterances(
    ckpt: &Checkpoint,
    manifest: &DatasetManifest,
    records: &[&Record],
    views: &[(String, ViewSource)],
) -> Result<ScoreSet> {
    let names: Vec<String> = views.iter().map(|(n, _)| n.clone()).collect();
    if names != ckpt.model.view_names() {
        return Err(Error::Validation(format!(
            "views {names:?} do not match the checkpoint's {:?}",
            ckpt.model.view_names()
        )));
    }
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Validation(format!("duplicate utterance id {}", r.id)));
        }
    }
    let (samples, failed) = load_samples(manifest, records, views);
    if !failed.is_empty() {
        return Err(collect_failures(&failed));
    }
    let data = Dataset::new(names, samples)?;
    let det = ckpt.detector()?;
    score_dataset(&det, &ckpt.params, &data, ckpt.train.batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Genuine as G, Spoof as S};

    fn set(g: &[f64], s: &[f64]) -> ScoreSet {
        let scores: Vec<f64> = g.iter().chain(s).copied().collect();
        let labels: Vec<Label> = g.iter().map(|_| G).chain(s.iter().map(|_| S)).collect();
        ScoreSet::from_pairs(&scores, &labels).unwrap()
    }

    #[test]
    fn perfect_separation() {
        let e = compute_eer(&set(&[0.9, 0.8, 0.7], &[0.1, 0.2, 0.3])).unwrap();
        assert_eq!(e.eer, 0.0);
        assert!(e.threshold > 0.3 && e.threshold < 0.7);
        assert!(det_points(&set(&[0.9, 0.8, 0.7], &[0.1, 0.2, 0.3])).unwrap().contains(&(0.0, 0.0)));
    }

    #[test]
    fn one_crossing_at_a_third() {
        let e = compute_eer(&set(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1])).unwrap();
        assert!((e.eer - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((e.n_genuine, e.n_spoof), (3, 3));
    }

    #[test]
    fn total_inversion() {
        let e = compute_eer(&set(&[0.1, 0.2, 0.3], &[0.9, 0.8, 0.7])).unwrap();
        assert_eq!(e.eer, 1.0);
    }

    #[test]
    fn all_scores_equal() {
        let s = set(&[0.5, 0.5], &[0.5]);
        assert_eq!(det_points(&s).unwrap(), vec![(1.0, 0.0), (0.0, 1.0)]);
        let e = compute_eer(&s).unwrap();
        assert_eq!(e.eer, 0.5);
        assert_eq!(e.threshold, 0.5);
    }

    #[test]
    fn det_points_count_and_monotonicity() {
        let s = set(&[0.9, 0.4, 0.4, 0.1], &[0.4, 0.3, 0.0]);
        let pts = det_points(&s).unwrap();
        assert_eq!(pts.len(), 6);
        for w in pts.windows(2) {
            assert!(w[1].0 <= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn one_class_is_a_usage_error() {
        let s = set(&[0.9, 0.4], &[]);
        assert!(matches!(compute_eer(&s), Err(Error::Usage(_))));
    }

    #[test]
    fn duplicate_ids_and_nan_are_rejected() {
        let dup = vec![
            ScoreEntry { id: "a".into(), score: 0.1, label: G },
            ScoreEntry { id: "a".into(), score: 0.2, label: S },
        ];
        assert!(matches!(ScoreSet::new(dup), Err(Error::Validation(_))));
        assert!(ScoreSet::from_pairs(&[f64::NAN], &[G]).is_err());
    }

    #[test]
    fn zero_logits_score_one_half() {
        assert_eq!(genuine_probability([0.0, 0.0]), 0.5);
        assert!(genuine_probability([3.0, -1.0]) > 0.98);
        assert!(genuine_probability([-800.0, 800.0]) >= 0.0);
    }

    #[test]
    fn tsv_round_trip() {
        let s = set(&[0.123456789012345, 1e-300], &[0.75]);
        assert_eq!(ScoreSet::parse_tsv(&s.to_tsv()).unwrap(), s);
        assert!(s.to_tsv().starts_with("0\t0.123456789012345\tgenuine\n"));
    }

    #[test]
    fn report_line_format() {
        let e = compute_eer(&set(&[0.9], &[0.1])).unwrap();
        let r = report_text(&e);
        assert!(r.starts_with('#'));
        assert!(r.lines().nth(1).unwrap().starts_with("eer=0  threshold=0.5  n_genuine=1 n_spoof=1"));
    }
}
