//! Center-distance detection metrics: AP/mAP and true-positive errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ObjectClass;

/// Distance thresholds (meters) averaged by [`mean_average_precision`].
pub const MATCH_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Threshold used to pair boxes for translation/scale/orientation errors.
pub const TP_THRESHOLD: f64 = 2.0;
/// PR points at or below this recall or precision are ignored by AP.
pub const MIN_RECALL: f64 = 0.1;
pub const MIN_PRECISION: f64 = 0.1;

/// Oriented 3D box. `center` is `(x, y)` on the BEV ground plane plus
/// height `z`; `size` is `(w, l, h)`; `yaw` is measured from BEV x toward
/// BEV y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub class: ObjectClass,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn ground_distance(&self, other: &DetectionBox) -> f64 {
        (self.center[0] - other.center[0]).hypot(self.center[1] - other.center[1])
    }
}

/// Greedy assignment result; indices refer to the input slices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Matching {
    /// `(pred, gt)` pairs in the order they were made.
    pub pairs: Vec<(usize, usize)>,
    /// Prediction indices by descending confidence.
    pub ranked: Vec<usize>,
    /// For each prediction, its matched ground truth.
    pub pred_to_gt: Vec<Option<usize>>,
}

/// Prediction indices sorted by descending confidence; ties keep input order.
pub fn rank_by_confidence(preds: &[DetectionBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    order
}

/// Greedy matching in descending confidence: each prediction takes the
/// nearest still-unmatched ground truth closer than `threshold`.
///
/// Classes are not checked; filter by class first.
pub fn match_by_center_distance(preds: &[DetectionBox], gts: &[DetectionBox], threshold: f64) -> Matching {
    let ranked = rank_by_confidence(preds);
    let mut taken = vec![false; gts.len()];
    let mut pred_to_gt = vec![None; preds.len()];
    let mut pairs = Vec::new();
    for &p in &ranked {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !taken[*g])
            .map(|(g, gt)| (g, preds[p].ground_distance(gt)))
            .filter(|&(_, d)| d < threshold)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((g, _)) = best {
            taken[g] = true;
            pred_to_gt[p] = Some(g);
            pairs.push((p, g));
        }
    }
    Matching {
        pairs,
        ranked,
        pred_to_gt,
    }
}

/// A predictions/ground-truth set for one frame.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub preds: &'a [DetectionBox],
    pub gts: &'a [DetectionBox],
}

/// Area under the monotone PR envelope for recall in `(0.1, 1]`, counting
/// only precision above 0.1, rescaled by `1 / 0.9` and clamped to `[0, 1]`.
///
/// `hits` lists true/false positive flags in descending-confidence order.
pub fn ap_from_ranked_hits(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 || hits.is_empty() {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp_positions = Vec::new();
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
            tp_positions.push(k);
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    let mut suffix_max = precision.clone();
    for k in (0..suffix_max.len().saturating_sub(1)).rev() {
        suffix_max[k] = suffix_max[k].max(suffix_max[k + 1]);
    }
    let n = num_gt as f64;
    let mut area = 0.0;
    for (i, &k) in tp_positions.iter().enumerate() {
        let (lo, hi) = (i as f64 / n, (i + 1) as f64 / n);
        let width = hi - lo.max(MIN_RECALL);
        let p = suffix_max[k];
        if width > 0.0 && p > MIN_PRECISION {
            area += width * p;
        }
    }
    (area / (1.0 - MIN_RECALL)).clamp(0.0, 1.0)
}

/// AP pooled over frames at one distance threshold.
pub fn average_precision_samples(samples: &[Sample<'_>], threshold: f64) -> f64 {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut num_gt = 0;
    for s in samples {
        num_gt += s.gts.len();
        let m = match_by_center_distance(s.preds, s.gts, threshold);
        scored.extend(m.ranked.iter().map(|&p| (s.preds[p].confidence, m.pred_to_gt[p].is_some())));
    }
    // Stable: equal confidences keep frame order, then in-frame rank.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let hits: Vec<bool> = scored.into_iter().map(|(_, h)| h).collect();
    ap_from_ranked_hits(&hits, num_gt)
}

pub fn average_precision(preds: &[DetectionBox], gts: &[DetectionBox], threshold: f64) -> f64 {
    average_precision_samples(&[Sample { preds, gts }], threshold)
}

fn of_class(boxes: &[DetectionBox], class: ObjectClass) -> Vec<DetectionBox> {
    boxes.iter().filter(|b| b.class == class).copied().collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapResult {
    /// Mean over every (class, threshold) term; `None` without any ground truth.
    pub map: Option<f64>,
    /// AP per class at each of [`MATCH_THRESHOLDS`]; classes without ground
    /// truth are absent.
    pub per_class: BTreeMap<ObjectClass, [f64; 4]>,
}

/// mAP over classes and [`MATCH_THRESHOLDS`]. Classes with no ground truth
/// are excluded from the mean.
pub fn mean_average_precision_samples(samples: &[Sample<'_>]) -> MapResult {
    let mut result = MapResult::default();
    for class in ObjectClass::ALL {
        let filtered: Vec<(Vec<DetectionBox>, Vec<DetectionBox>)> = samples
            .iter()
            .map(|s| (of_class(s.preds, class), of_class(s.gts, class)))
            .collect();
        if filtered.iter().all(|(_, g)| g.is_empty()) {
            continue;
        }
        let views: Vec<Sample<'_>> = filtered.iter().map(|(p, g)| Sample { preds: p, gts: g }).collect();
        let mut aps = [0.0; 4];
        for (ap, &d) in aps.iter_mut().zip(&MATCH_THRESHOLDS) {
            *ap = average_precision_samples(&views, d);
        }
        result.per_class.insert(class, aps);
    }
    let terms: Vec<f64> = result.per_class.values().flat_map(|a| a.iter().copied()).collect();
    if !terms.is_empty() {
        result.map = Some(terms.iter().sum::<f64>() / terms.len() as f64);
    }
    result
}

pub fn mean_average_precision(preds: &[DetectionBox], gts: &[DetectionBox]) -> MapResult {
    mean_average_precision_samples(&[Sample { preds, gts }])
}

/// Absolute angle difference wrapped into `[0, π]`.
pub fn wrapped_angle_diff(a: f64, b: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let d = (a - b).rem_euclid(two_pi);
    d.min(two_pi - d)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean ground-plane center distance over `(pred, gt)` pairs.
pub fn mate(pairs: &[(DetectionBox, DetectionBox)]) -> Option<f64> {
    mean(pairs.iter().map(|(p, g)| p.ground_distance(g)))
}

/// Mean over pairs of the average absolute `(w, l, h)` error.
pub fn mase(pairs: &[(DetectionBox, DetectionBox)]) -> Option<f64> {
    mean(pairs.iter().map(|(p, g)| {
        (0..3).map(|i| (p.size[i] - g.size[i]).abs()).sum::<f64>() / 3.0
    }))
}

/// Mean wrapped yaw error in radians.
pub fn maoe(pairs: &[(DetectionBox, DetectionBox)]) -> Option<f64> {
    mean(pairs.iter().map(|(p, g)| wrapped_angle_diff(p.yaw, g.yaw)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TpErrors {
    pub mate: Option<f64>,
    pub mase: Option<f64>,
    pub maoe: Option<f64>,
    pub matched: usize,
}

/// Class-aware matching at `threshold` across frames, then the three errors
/// over all matched pairs.
pub fn true_positive_errors(samples: &[Sample<'_>], threshold: f64) -> TpErrors {
    let pairs = matched_pairs(samples, threshold);
    TpErrors {
        mate: mate(&pairs),
        mase: mase(&pairs),
        maoe: maoe(&pairs),
        matched: pairs.len(),
    }
}

/// Class-aware matched `(pred, gt)` pairs across frames.
pub fn matched_pairs(samples: &[Sample<'_>], threshold: f64) -> Vec<(DetectionBox, DetectionBox)> {
    let mut pairs = Vec::new();
    for s in samples {
        for class in ObjectClass::ALL {
            let p = of_class(s.preds, class);
            let g = of_class(s.gts, class);
            let m = match_by_center_distance(&p, &g, threshold);
            pairs.extend(m.pairs.iter().map(|&(pi, gi)| (p[pi], g[gi])));
        }
    }
    pairs
}

/// Fraction of ground-truth boxes matched (class-aware) at `threshold`.
pub fn recall(samples: &[Sample<'_>], threshold: f64) -> Option<f64> {
    let total: usize = samples.iter().map(|s| s.gts.len()).sum();
    (total > 0).then(|| matched_pairs(samples, threshold).len() as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x: f64, y: f64, conf: f64) -> DetectionBox {
        DetectionBox {
            center: [x, y, 0.8],
            size: [1.8, 4.5, 1.6],
            yaw: 0.3,
            class: ObjectClass::Vehicle,
            confidence: conf,
        }
    }

    #[test]
    fn matching_basics() {
        let gt = [bx(0.0, 0.0, 1.0)];
        assert_eq!(match_by_center_distance(&[bx(0.0, 0.0, 0.9)], &gt, 0.5).pairs, vec![(0, 0)]);
        assert!(match_by_center_distance(&[bx(3.0, 0.0, 0.9)], &gt, 2.0).pairs.is_empty());
        let m = match_by_center_distance(&[bx(0.1, 0.0, 0.4), bx(0.3, 0.0, 0.8)], &gt, 1.0);
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.pred_to_gt, vec![None, Some(0)]);
    }

    /// Tries every injective assignment consistent with greedy order.
    fn exhaustive_greedy(preds: &[DetectionBox], gts: &[DetectionBox], d: f64) -> Vec<Option<usize>> {
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].confidence.partial_cmp(&preds[a].confidence).unwrap().then(a.cmp(&b)));
        let mut out = vec![None; preds.len()];
        let mut used = vec![false; gts.len()];
        for p in order {
            let mut best: Option<(usize, f64)> = None;
            for g in 0..gts.len() {
                if used[g] {
                    continue;
                }
                let dist = ((preds[p].center[0] - gts[g].center[0]).powi(2)
                    + (preds[p].center[1] - gts[g].center[1]).powi(2))
                .sqrt();
                if dist < d && best.is_none_or(|(_, bd)| dist < bd) {
                    best = Some((g, dist));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
                out[p] = Some(g);
            }
        }
        out
    }

    #[test]
    fn matching_agrees_with_small_case_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let preds: Vec<_> = (0..rng.random_range(0..6))
                .map(|_| bx(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..1.0)))
                .collect();
            let gts: Vec<_> = (0..rng.random_range(0..6))
                .map(|_| bx(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), 1.0))
                .collect();
            let m = match_by_center_distance(&preds, &gts, 1.5);
            assert_eq!(m.pred_to_gt, exhaustive_greedy(&preds, &gts, 1.5));
        }
    }

    #[test]
    fn perfect_and_empty_ap() {
        let gts: Vec<_> = (0..5).map(|i| bx(i as f64 * 10.0, 0.0, 1.0)).collect();
        assert_eq!(average_precision(&gts, &gts, 0.5), 1.0);
        assert_eq!(average_precision(&[], &gts, 0.5), 0.0);
        assert_eq!(mean_average_precision(&gts, &gts).map, Some(1.0));
        assert_eq!(mean_average_precision(&[], &gts).map, Some(0.0));
        assert_eq!(mean_average_precision(&gts, &[]).map, None);
    }

    #[test]
    fn ap_hand_case() {
        // TP, FP, TP with 2 gts: envelope 1.0 on (0, .5], 2/3 on (.5, 1].
        let ap = ap_from_ranked_hits(&[true, false, true], 2);
        let expected = (0.4 * 1.0 + 0.5 * 2.0 / 3.0) / 0.9;
        assert!((ap - expected).abs() < 1e-12);
        // Precision of 1/11 on the only TP is under the floor.
        let mut hits = vec![false; 10];
        hits.push(true);
        assert_eq!(ap_from_ranked_hits(&hits, 1), 0.0);
    }

    #[test]
    fn angle_wrap() {
        assert!((wrapped_angle_diff(3.0, -3.0) - (std::f64::consts::TAU - 6.0)).abs() < 1e-12);
        assert_eq!(wrapped_angle_diff(0.5, 0.5), 0.0);
        assert!((wrapped_angle_diff(-3.1, 3.1) - (std::f64::consts::TAU - 6.2)).abs() < 1e-12);
    }

    #[test]
    fn tp_errors() {
        let g = bx(1.0, 2.0, 1.0);
        let mut p = g;
        assert_eq!(mate(&[(p, g)]), Some(0.0));
        assert_eq!(mase(&[(p, g)]), Some(0.0));
        assert_eq!(maoe(&[(p, g)]), Some(0.0));
        p.center[0] += 1.0;
        p.size = [2.1, 4.5, 1.0];
        assert_eq!(mate(&[(p, g)]), Some(1.0));
        assert!((mase(&[(p, g)]).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(mate(&[]), None);
    }

    /// Re-matches every top-k prefix from scratch and integrates the
    /// envelope as a staircase over all PR points.
    fn staircase_ap(preds: &[DetectionBox], gts: &[DetectionBox], d: f64) -> f64 {
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].confidence.partial_cmp(&preds[a].confidence).unwrap().then(a.cmp(&b)));
        let pts: Vec<(f64, f64)> = (1..=order.len())
            .map(|k| {
                let top: Vec<DetectionBox> = order[..k].iter().map(|&i| preds[i]).collect();
                let tp = exhaustive_greedy(&top, gts, d).iter().filter(|m| m.is_some()).count();
                (tp as f64 / gts.len() as f64, tp as f64 / k as f64)
            })
            .collect();
        // Fine recall grid with every step on a 1/n boundary.
        let steps = gts.len() * 1000;
        let mut area = 0.0;
        for s in 0..steps {
            let r = (s as f64 + 0.5) / steps as f64;
            if r <= MIN_RECALL {
                continue;
            }
            let p = pts.iter().filter(|pt| pt.0 >= r).map(|pt| pt.1).fold(0.0, f64::max);
            if p > MIN_PRECISION {
                area += p / steps as f64;
            }
        }
        (area / 0.9).min(1.0)
    }

    #[test]
    fn ap_matches_staircase_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let gts: Vec<_> = (0..rng.random_range(1..12))
                .map(|_| bx(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), 1.0))
                .collect();
            let preds: Vec<_> = (0..20)
                .map(|_| {
                    if rng.random_bool(0.6) {
                        let g = gts[rng.random_range(0..gts.len())];
                        bx(g.center[0] + rng.random_range(-1.5..1.5), g.center[1] + rng.random_range(-1.5..1.5), rng.random())
                    } else {
                        bx(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), rng.random())
                    }
                })
                .collect();
            for d in MATCH_THRESHOLDS {
                let fast = average_precision(&preds, &gts, d);
                let slow = staircase_ap(&preds, &gts, d);
                // The grid oracle is exact up to its midpoint sampling of (0.1, 1].
                assert!((fast - slow).abs() < 2e-3, "{fast} vs {slow}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn ap_monotone_in_threshold(
            pts in proptest::collection::vec((0.0..15.0f64, 0.0..15.0f64, 0.0..1.0f64), 1..15),
            gts in proptest::collection::vec((0.0..15.0f64, 0.0..15.0f64), 1..10),
        ) {
            let preds: Vec<_> = pts.iter().map(|&(x, y, c)| bx(x, y, c)).collect();
            let gts: Vec<_> = gts.iter().map(|&(x, y)| bx(x, y, 1.0)).collect();
            let aps: Vec<f64> = MATCH_THRESHOLDS.iter().map(|&d| average_precision(&preds, &gts, d)).collect();
            for w in aps.windows(2) {
                proptest::prop_assert!(w[0] <= w[1] + 1e-12, "{:?}", aps);
            }
            let m = mean_average_precision(&preds, &gts).map.unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&m));
        }

        #[test]
        fn tp_errors_nonnegative(a in -3.2..3.2f64, b in -3.2..3.2f64, dx in -2.0..2.0f64) {
            let g = bx(0.0, 0.0, 1.0);
            let mut p = g;
            p.yaw = a;
            p.center[0] = dx;
            let mut gg = g;
            gg.yaw = b;
            let e = maoe(&[(p, gg)]).unwrap();
            proptest::prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&e));
            proptest::prop_assert!(mate(&[(p, gg)]).unwrap() >= 0.0);
        }
    }
}
