//! Metric bundle per strategy and evaluation range.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode::FrameOutput;
use super::extract::crop_instances;
use super::ledger::BandwidthLedger;
use crate::bev::GridSpec;
use crate::error::{Error, Result};
use crate::metrics::detection::{recall, TP_THRESHOLD};
use crate::metrics::{
    mean_average_precision_samples, panoptic, seg_iou, temporal_iou, true_positive_errors, vpq, DetectionBox,
    InstanceMap, PanopticScores, Sample, SegMask, TrackedSequence,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalRange {
    /// Centered 75 m × 75 m window.
    Short,
    /// The whole grid (150 m × 150 m by default).
    Long,
}

impl EvalRange {
    pub fn name(self) -> &'static str {
        match self {
            Self::Short => "short",
            Self::Long => "long",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Self::Short, Self::Long].into_iter().find(|r| r.name() == s)
    }

    /// Evaluation window: the centered square of this range, clipped to the grid.
    pub fn window(self, spec: &GridSpec) -> GridSpec {
        let side = (spec.x_range.1 - spec.x_range.0).min(spec.y_range.1 - spec.y_range.0);
        match self {
            Self::Long => *spec,
            Self::Short => spec.cropped(side.min(75.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub range: EvalRange,
    pub task: String,
    pub metric: String,
    /// Absent when undefined (for example no matched boxes).
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub rows: Vec<MetricRow>,
}

impl EvalReport {
    pub fn get(&self, range: EvalRange, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.range == range && r.metric == metric)
            .and_then(|r| r.value)
    }

    pub const CSV_HEADER: [&'static str; 5] = ["strategy", "range", "task", "metric", "value"];

    /// One row per metric and range; absent values are empty.
    pub fn write_csv_rows<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for r in &self.rows {
            w.write_record([
                self.strategy.as_str(),
                r.range.name(),
                r.task.as_str(),
                r.metric.as_str(),
                &r.value.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ])?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER)?;
        self.write_csv_rows(&mut w)?;
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Fixed-width table, one line per range.
    pub fn summary(&self) -> String {
        let cols = [
            "mAP", "mATE", "mASE", "mAOE", "recall", "IoU", "PQ", "SQ", "RQ", "temporal_IoU", "VPQ", "ratio",
        ];
        let mut out = format!("strategy: {}\n{:<6}", self.strategy, "range");
        for c in cols {
            let _ = write!(out, " {:>12}", c);
        }
        out.push('\n');
        for range in [EvalRange::Short, EvalRange::Long] {
            if !self.rows.iter().any(|r| r.range == range) {
                continue;
            }
            let _ = write!(out, "{:<6}", range.name());
            for c in cols {
                match self.get(range, c) {
                    Some(v) => {
                        let _ = write!(out, " {:>12.4}", v);
                    }
                    None => {
                        let _ = write!(out, " {:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn in_window(b: &DetectionBox, window: &GridSpec) -> bool {
    window.cell_of(b.center[0], b.center[1]).is_some()
}

/// Detection over all frames, segmentation pooled over frames, and the
/// temporal metrics over the frame sequence.
pub fn evaluate(
    strategy: &str,
    frames: &[FrameOutput],
    tracks: &[InstanceMap],
    gt_tracks: &[InstanceMap],
    spec: &GridSpec,
    ranges: &[EvalRange],
    ledger: &BandwidthLedger,
) -> Result<EvalReport> {
    let mut report = EvalReport {
        strategy: strategy.to_string(),
        rows: Vec::new(),
    };
    if frames.is_empty() {
        return Ok(report);
    }
    let side_of = |w: &GridSpec| w.x_range.1 - w.x_range.0;
    for &range in ranges {
        let window = range.window(spec);
        let mut push = |task: &str, metric: &str, value: Option<f64>| {
            report.rows.push(MetricRow {
                range,
                task: task.into(),
                metric: metric.into(),
                value,
            })
        };

        let filtered: Vec<(Vec<DetectionBox>, Vec<DetectionBox>)> = frames
            .iter()
            .map(|f| {
                (
                    f.boxes.iter().filter(|b| in_window(b, &window)).copied().collect(),
                    f.gt_boxes.iter().map(|g| g.1).filter(|b| in_window(b, &window)).collect(),
                )
            })
            .collect();
        let samples: Vec<Sample<'_>> = filtered.iter().map(|(p, g)| Sample { preds: p, gts: g }).collect();
        let map = mean_average_precision_samples(&samples);
        let tp = true_positive_errors(&samples, TP_THRESHOLD);
        push("detection", "mAP", map.map);
        push("detection", "mATE", tp.mate);
        push("detection", "mASE", tp.mase);
        push("detection", "mAOE", tp.maoe);
        push("detection", "recall", recall(&samples, TP_THRESHOLD));

        let crop = |m: &InstanceMap| {
            if range == EvalRange::Long {
                m.clone()
            } else {
                crop_instances(m, spec, side_of(&window))
            }
        };
        let pred: Vec<InstanceMap> = frames.iter().map(|f| crop(&f.instances)).collect();
        let pred_tracks: Vec<InstanceMap> = tracks.iter().map(crop).collect();
        let gt: Vec<InstanceMap> = gt_tracks.iter().map(crop).collect();
        let (mut inter, mut union) = (0usize, 0usize);
        let (mut iou_sum, mut n_tp, mut n_fp, mut n_fn) = (0.0, 0, 0, 0);
        for (p, g) in pred.iter().zip(&gt) {
            let (pm, gm) = (p.mask(None), g.mask(None));
            for (&a, &b) in pm.data.iter().zip(gm.data.iter()) {
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
            let s = panoptic(p, g)?;
            iou_sum += s.iou_sum;
            n_tp += s.tp;
            n_fp += s.fp;
            n_fn += s.fn_;
        }
        let pooled = PanopticScores::from_counts(iou_sum, n_tp, n_fp, n_fn);
        push(
            "segmentation",
            "IoU",
            Some(if union == 0 { 1.0 } else { inter as f64 / union as f64 }),
        );
        push("segmentation", "PQ", Some(pooled.pq));
        push("segmentation", "SQ", Some(pooled.sq));
        push("segmentation", "RQ", Some(pooled.rq));

        let pm: Vec<SegMask> = pred_tracks.iter().map(|m| m.mask(None)).collect();
        let gm: Vec<SegMask> = gt.iter().map(|m| m.mask(None)).collect();
        push("prediction", "temporal_IoU", Some(temporal_iou(&pm, &gm)?));
        push(
            "prediction",
            "VPQ",
            Some(vpq(&TrackedSequence::new(pred_tracks)?, &TrackedSequence::new(gt)?)?),
        );
        // Present-frame IoU, for reference next to the temporal mean.
        push("prediction", "present_IoU", Some(seg_iou(&pm[0], &gm[0])?));

        push("bandwidth", "total_bytes", Some(ledger.total_bytes() as f64));
        push("bandwidth", "ratio", ledger.mean_ratio());
    }
    Ok(report)
}
