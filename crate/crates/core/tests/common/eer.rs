//! Exhaustive EER reference: every threshold is scored by recounting all
//! trials from scratch.

use addlab::{Label, ScoreSet};

pub fn far_frr(scores: &ScoreSet, t: f64) -> (f64, f64) {
    let (mut fa, mut fr, mut ns, mut ng) = (0usize, 0usize, 0usize, 0usize);
    for e in &scores.entries {
        match e.label {
            Label::Spoof => {
                ns += 1;
                if e.score >= t {
                    fa += 1;
                }
            }
            Label::Genuine => {
                ng += 1;
                if e.score < t {
                    fr += 1;
                }
            }
        }
    }
    (fa as f64 / ns as f64, fr as f64 / ng as f64)
}

pub fn candidate_thresholds(scores: &ScoreSet) -> Vec<f64> {
    let mut v: Vec<f64> = scores.entries.iter().map(|e| e.score).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    let mut t = vec![f64::NEG_INFINITY];
    for w in v.windows(2) {
        t.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    t.push(f64::INFINITY);
    t
}

/// EER at the first crossing of FAR and FRR, interpolated between the two
/// thresholds that bracket it.
pub fn oracle_eer(scores: &ScoreSet) -> f64 {
    let ts = candidate_thresholds(scores);
    let pts: Vec<(f64, f64)> = ts.iter().map(|&t| far_frr(scores, t)).collect();
    for i in 0..pts.len() {
        let d0 = pts[i].0 - pts[i].1;
        if d0 == 0.0 {
            return pts[i].0;
        }
        let d1 = pts[i + 1].0 - pts[i + 1].1;
        if d1 <= 0.0 {
            return pts[i].0 + d0 / (d0 - d1) * (pts[i + 1].0 - pts[i].0);
        }
    }
    unreachable!()
}
