use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::VideoScore;
use crate::error::{GoasError, Result};

/// Thresholds are finite or ±∞; infinities are written as `"inf"`/`"-inf"`.
pub mod threshold_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("bad threshold `{t}`"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub far: f64,
    pub frr: f64,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoCounts {
    pub live: usize,
    pub spoof: usize,
}

/// Scores split by class, sorted ascending.
struct Classes {
    live: Vec<f64>,
    spoof: Vec<f64>,
}

fn classes(scores: &[VideoScore]) -> Result<Classes> {
    let mut live = Vec::new();
    let mut spoof = Vec::new();
    for s in scores {
        if !s.video_score.is_finite() {
            return Err(GoasError::invalid(format!("video `{}` has a non-finite score", s.video_id)));
        }
        if s.is_spoof() {
            spoof.push(s.video_score);
        } else {
            live.push(s.video_score);
        }
    }
    if live.is_empty() || spoof.is_empty() {
        return Err(GoasError::invalid(format!(
            "metrics need live and spoof videos, got {} live and {} spoof",
            live.len(),
            spoof.len()
        )));
    }
    live.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);
    Ok(Classes { live, spoof })
}

/// `(FAR, FRR)` at threshold `t`: FRR is the fraction of live videos scoring
/// `≥ t`, FAR the fraction of spoof videos scoring `< t`.
fn rates(c: &Classes, t: f64) -> (f64, f64) {
    let live_rejected = c.live.len() - c.live.partition_point(|&s| s < t);
    let spoof_accepted = c.spoof.partition_point(|&s| s < t);
    (
        spoof_accepted as f64 / c.spoof.len() as f64,
        live_rejected as f64 / c.live.len() as f64,
    )
}

fn thresholds(c: &Classes) -> Vec<f64> {
    let mut t: Vec<f64> = c.live.iter().chain(&c.spoof).copied().collect();
    t.push(f64::NEG_INFINITY);
    t.push(f64::INFINITY);
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// Sweep over all distinct scores and ±∞, in ascending threshold order.
pub fn compute_roc(scores: &[VideoScore]) -> Result<Vec<RocPoint>> {
    let c = classes(scores)?;
    Ok(thresholds(&c)
        .into_iter()
        .map(|t| {
            let (far, frr) = rates(&c, t);
            RocPoint { far, frr, threshold: t }
        })
        .collect())
}

/// Percent probability that a random spoof video outscores a random live
/// video, ties counting one half.
pub fn compute_auc(scores: &[VideoScore]) -> Result<f64> {
    let c = classes(scores)?;
    let mut twice_wins: u128 = 0;
    for &s in &c.spoof {
        let below = c.live.partition_point(|&l| l < s);
        let not_above = c.live.partition_point(|&l| l <= s);
        twice_wins += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = 2 * c.live.len() as u128 * c.spoof.len() as u128;
    Ok(100.0 * twice_wins as f64 / pairs as f64)
}

/// `(EER percent, threshold)` at the threshold minimising `|FAR − FRR|`,
/// preferring the smallest such threshold.
pub fn compute_eer(scores: &[VideoScore]) -> Result<(f64, f64)> {
    let roc = compute_roc(scores)?;
    let mut best = roc[0];
    for p in &roc[1..] {
        if (p.far - p.frr).abs() < (best.far - best.frr).abs() {
            best = *p;
        }
    }
    Ok((50.0 * (best.far + best.frr), best.threshold))
}

/// Percent half total error on `scores` at a fixed threshold.
pub fn hter_at(scores: &[VideoScore], threshold: f64) -> Result<f64> {
    let c = classes(scores)?;
    let (far, frr) = rates(&c, threshold);
    Ok(50.0 * (far + frr))
}

/// HTER on `test` at the EER threshold of `dev`.
pub fn compute_hter(dev: &[VideoScore], test: &[VideoScore]) -> Result<f64> {
    let (_, t) = compute_eer(dev)?;
    hter_at(test, t)
}

/// Accept/reject counts at one threshold (spoof is the positive class).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub live_accepted: usize,
    pub live_rejected: usize,
    pub spoof_accepted: usize,
    pub spoof_rejected: usize,
}

impl ConfusionCounts {
    pub fn at(scores: &[VideoScore], threshold: f64) -> Self {
        let mut c = ConfusionCounts::default();
        for s in scores {
            let rejected = s.video_score >= threshold;
            match (s.is_spoof(), rejected) {
                (false, false) => c.live_accepted += 1,
                (false, true) => c.live_rejected += 1,
                (true, false) => c.spoof_accepted += 1,
                (true, true) => c.spoof_rejected += 1,
            }
        }
        c
    }

    pub fn add(&mut self, o: &ConfusionCounts) {
        self.live_accepted += o.live_accepted;
        self.live_rejected += o.live_rejected;
        self.spoof_accepted += o.spoof_accepted;
        self.spoof_rejected += o.spoof_rejected;
    }

    /// Fraction of videos classified correctly.
    pub fn accuracy(&self) -> f64 {
        let total = self.live_accepted + self.live_rejected + self.spoof_accepted + self.spoof_rejected;
        (self.live_accepted + self.spoof_rejected) as f64 / total.max(1) as f64
    }
}

/// Video-level metrics, percentages in `[0, 100]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub eer: f64,
    pub hter: f64,
    #[serde(with = "threshold_serde")]
    pub eer_threshold: f64,
    /// Threshold at which `hter` was measured.
    #[serde(with = "threshold_serde")]
    pub hter_threshold: f64,
    pub roc_points: Vec<RocPoint>,
    pub counts: VideoCounts,
}

impl MetricsReport {
    /// Metrics of `test`; HTER uses the EER threshold of `dev` when given and
    /// of `test` otherwise.
    pub fn build(test: &[VideoScore], dev: Option<&[VideoScore]>) -> Result<Self> {
        let (eer, eer_threshold) = compute_eer(test)?;
        let hter_threshold = match dev {
            Some(d) => compute_eer(d)?.1,
            None => eer_threshold,
        };
        Ok(MetricsReport {
            auc: compute_auc(test)?,
            eer,
            hter: hter_at(test, hter_threshold)?,
            eer_threshold,
            hter_threshold,
            roc_points: compute_roc(test)?,
            counts: VideoCounts {
                live: test.iter().filter(|s| !s.is_spoof()).count(),
                spoof: test.iter().filter(|s| s.is_spoof()).count(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::VideoLabel;

    pub(crate) fn scored(live: &[f64], spoof: &[f64]) -> Vec<VideoScore> {
        let mk = |i: usize, s: f64, label| VideoScore::bare(format!("v{i}"), s, label);
        live.iter()
            .enumerate()
            .map(|(i, &s)| mk(i, s, VideoLabel::Live))
            .chain(spoof.iter().enumerate().map(|(i, &s)| mk(100 + i, s, VideoLabel::Spoof)))
            .collect()
    }

    #[test]
    fn separable_case() {
        let s = scored(&[0.1, 0.2], &[0.8, 0.9]);
        assert_eq!(compute_auc(&s).unwrap(), 100.0);
        assert_eq!(compute_eer(&s).unwrap().0, 0.0);
        assert!(compute_roc(&s).unwrap().iter().any(|p| p.far == 0.0 && p.frr == 0.0));
    }

    #[test]
    fn overlapping_case() {
        let s = scored(&[0.1, 0.6], &[0.4, 0.9]);
        assert_eq!(compute_auc(&s).unwrap(), 75.0);
        let (far, frr) = rates(&classes(&s).unwrap(), 0.5);
        assert_eq!((far, frr), (0.5, 0.5));
        assert_eq!(compute_eer(&s).unwrap().0, 50.0);
    }

    #[test]
    fn ties_and_worst_case() {
        assert_eq!(compute_auc(&scored(&[0.3; 3], &[0.3; 4])).unwrap(), 50.0);
        assert_eq!(compute_eer(&scored(&[0.8, 0.9], &[0.1, 0.2])).unwrap().0, 100.0);
        assert!(compute_auc(&scored(&[0.1], &[])).is_err());
    }

    #[test]
    fn mirrored_roc_under_label_swap() {
        let s = scored(&[0.1, 0.35, 0.6], &[0.4, 0.7, 0.9]);
        let mirrored: Vec<VideoScore> = s
            .iter()
            .map(|v| {
                let label = if v.is_spoof() { VideoLabel::Live } else { VideoLabel::Spoof };
                VideoScore::bare(v.video_id.clone(), 1.0 - v.video_score, label)
            })
            .collect();
        assert_eq!(compute_auc(&s).unwrap(), compute_auc(&mirrored).unwrap());
        let a = compute_roc(&s).unwrap();
        let b = compute_roc(&mirrored).unwrap();
        let mut pa: Vec<(f64, f64)> = a.iter().map(|p| (p.far, p.frr)).collect();
        let mut pb: Vec<(f64, f64)> = b.iter().map(|p| (p.far, p.frr)).collect();
        pa.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn hter_examples() {
        let dev = scored(&[0.2, 0.3], &[0.5, 0.7]);
        assert_eq!(compute_eer(&dev).unwrap().1, 0.5);
        let test = scored(&[0.1, 0.2, 0.3], &[0.4, 0.6, 0.9]);
        assert!((compute_hter(&dev, &test).unwrap() - 100.0 / 6.0).abs() < 1e-9);
        let sep = scored(&[0.1, 0.2], &[0.8, 0.9]);
        assert_eq!(compute_hter(&dev, &sep).unwrap(), 0.0);
        assert_eq!(compute_hter(&test, &test).unwrap(), compute_eer(&test).unwrap().0);
    }

    #[test]
    fn roc_is_monotone_and_serializes_infinities() {
        let s = scored(&[0.1, 0.35, 0.6], &[0.4, 0.7, 0.9]);
        let roc = compute_roc(&s).unwrap();
        for w in roc.windows(2) {
            assert!(w[1].threshold > w[0].threshold);
            assert!(w[1].far >= w[0].far && w[1].frr <= w[0].frr);
        }
        let r = MetricsReport::build(&s, None).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"-inf\"") && text.contains("\"inf\""));
        let back: MetricsReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn counts_accuracy() {
        let s = scored(&[0.1, 0.6], &[0.4, 0.9]);
        let c = ConfusionCounts::at(&s, 0.5);
        assert_eq!((c.live_accepted, c.live_rejected, c.spoof_accepted, c.spoof_rejected), (1, 1, 1, 1));
        assert_eq!(c.accuracy(), 0.5);
    }
}
