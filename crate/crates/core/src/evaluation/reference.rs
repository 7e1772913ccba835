//! Brute-force reference forms of the metrics, for cross-checking.

use super::VideoScore;

/// Percent AUC by comparing every spoof/live pair.
pub fn pairwise_auc(scores: &[VideoScore]) -> f64 {
    let (mut twice_wins, mut pairs) = (0u128, 0u128);
    for s in scores.iter().filter(|s| s.is_spoof()) {
        for l in scores.iter().filter(|l| !l.is_spoof()) {
            twice_wins += match s.video_score.partial_cmp(&l.video_score) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
            pairs += 2;
        }
    }
    100.0 * twice_wins as f64 / pairs as f64
}

/// Percent EER over `steps + 1` evenly spaced thresholds in `[lo, hi]`.
pub fn sweep_eer(scores: &[VideoScore], lo: f64, hi: f64, steps: usize) -> f64 {
    let live = scores.iter().filter(|s| !s.is_spoof()).count() as f64;
    let spoof = scores.iter().filter(|s| s.is_spoof()).count() as f64;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=steps {
        let t = lo + (hi - lo) * k as f64 / steps as f64;
        let frr = scores.iter().filter(|s| !s.is_spoof() && s.video_score >= t).count() as f64 / live;
        let far = scores.iter().filter(|s| s.is_spoof() && s.video_score < t).count() as f64 / spoof;
        if (far - frr).abs() < best.0 {
            best = ((far - frr).abs(), 50.0 * (far + frr));
        }
    }
    best.1
}
