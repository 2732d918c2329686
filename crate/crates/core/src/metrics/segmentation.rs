//! Binary-mask IoU, panoptic quality and its video extension.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;

use super::ObjectClass;
use crate::error::{Error, Result};

/// `X × Y` binary raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    pub data: Array2<bool>,
}

impl SegMask {
    pub fn new(data: Array2<bool>) -> Self {
        Self { data }
    }

    pub fn empty(x: usize, y: usize) -> Self {
        Self::new(Array2::from_elem((x, y), false))
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

fn same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("raster {a:?} vs {b:?}")));
    }
    Ok(())
}

/// `|∩| / |∪|`; two empty masks agree perfectly and score 1.
pub fn seg_iou(pred: &SegMask, gt: &SegMask) -> Result<f64> {
    same_shape(pred.data.dim(), gt.data.dim())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(gt.data.iter()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean per-frame [`seg_iou`].
pub fn temporal_iou(pred: &[SegMask], gt: &[SegMask]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!("{} predicted vs {} reference frames", pred.len(), gt.len())));
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        sum += seg_iou(p, g)?;
    }
    Ok(sum / pred.len() as f64)
}

/// Raster of instance ids (0 is background) with each id's class.
///
/// Ids need not be contiguous; every metric here only compares segments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMap {
    pub ids: Array2<u32>,
    pub classes: BTreeMap<u32, ObjectClass>,
}

impl InstanceMap {
    pub fn new(ids: Array2<u32>, classes: BTreeMap<u32, ObjectClass>) -> Result<Self> {
        if let Some(&id) = ids.iter().find(|&&id| id != 0 && !classes.contains_key(&id)) {
            return Err(Error::Shape(format!("instance {id} has no class")));
        }
        Ok(Self { ids, classes })
    }

    pub fn empty(x: usize, y: usize) -> Self {
        Self {
            ids: Array2::zeros((x, y)),
            classes: BTreeMap::new(),
        }
    }

    /// Foreground mask, optionally restricted to one class.
    pub fn mask(&self, class: Option<ObjectClass>) -> SegMask {
        SegMask::new(self.ids.mapv(|id| {
            id != 0 && class.is_none_or(|c| self.classes.get(&id) == Some(&c))
        }))
    }

    pub fn areas(&self) -> BTreeMap<u32, usize> {
        let mut areas = BTreeMap::new();
        for &id in self.ids.iter().filter(|&&id| id != 0) {
            *areas.entry(id).or_insert(0) += 1;
        }
        areas
    }

    /// Same segmentation with ids renumbered `1..=n` in raster order.
    pub fn relabeled(&self) -> Self {
        let mut map = HashMap::new();
        let mut classes = BTreeMap::new();
        let ids = self.ids.mapv(|id| {
            if id == 0 {
                return 0;
            }
            let next = map.len() as u32 + 1;
            let new = *map.entry(id).or_insert(next);
            classes.insert(new, self.classes[&id]);
            new
        });
        Self { ids, classes }
    }
}

/// Instance maps over time whose ids persist across frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrackedSequence {
    pub frames: Vec<InstanceMap>,
}

impl TrackedSequence {
    pub fn new(frames: Vec<InstanceMap>) -> Result<Self> {
        let mut seen: HashMap<u32, ObjectClass> = HashMap::new();
        for (t, f) in frames.iter().enumerate() {
            for (&id, &class) in &f.classes {
                if *seen.entry(id).or_insert(class) != class {
                    return Err(Error::Shape(format!("track {id} changes class at frame {t}")));
                }
            }
        }
        Ok(Self { frames })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PanopticScores {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub iou_sum: f64,
}

impl PanopticScores {
    /// With no segments on either side everything is 1; with no true
    /// positives but some errors, everything is 0.
    pub fn from_counts(iou_sum: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let denom = tp as f64 + 0.5 * (fp + fn_) as f64;
        let (pq, sq, rq) = if denom == 0.0 {
            (1.0, 1.0, 1.0)
        } else if tp == 0 {
            (0.0, 0.0, 0.0)
        } else {
            let sq = iou_sum / tp as f64;
            let rq = tp as f64 / denom;
            (sq * rq, sq, rq)
        };
        Self {
            pq,
            sq,
            rq,
            tp,
            fp,
            fn_,
            iou_sum,
        }
    }

    fn denominator(&self) -> f64 {
        self.tp as f64 + 0.5 * (self.fp + self.fn_) as f64
    }
}

/// Same-class `(pred, gt, IoU)` pairs with IoU above one half. Each segment
/// appears at most once since two segments cannot both overlap it by more
/// than half.
fn matched_segments(pred: &InstanceMap, gt: &InstanceMap) -> Result<Vec<(u32, u32, f64)>> {
    same_shape(pred.ids.dim(), gt.ids.dim())?;
    let (pa, ga) = (pred.areas(), gt.areas());
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &g) in pred.ids.iter().zip(gt.ids.iter()) {
        if p != 0 && g != 0 {
            *inter.entry((p, g)).or_insert(0) += 1;
        }
    }
    Ok(inter
        .into_iter()
        .filter(|((p, g), _)| pred.classes[p] == gt.classes[g])
        .map(|((p, g), i)| (p, g, i as f64 / (pa[&p] + ga[&g] - i) as f64))
        .filter(|&(_, _, iou)| iou > 0.5)
        .collect())
}

pub fn panoptic(pred: &InstanceMap, gt: &InstanceMap) -> Result<PanopticScores> {
    let pairs = matched_segments(pred, gt)?;
    let tp = pairs.len();
    let iou_sum = pairs.iter().map(|p| p.2).sum();
    Ok(PanopticScores::from_counts(
        iou_sum,
        tp,
        pred.areas().len() - tp,
        gt.areas().len() - tp,
    ))
}

/// Video panoptic quality pooled over frames:
/// `Σ_t Σ IoU / Σ_t (TP_t + FP_t/2 + FN_t/2)`.
///
/// A predicted track is bound to the ground-truth track of its first true
/// positive (and vice versa). A later overlap that contradicts either
/// binding is not a true positive; both segments then count as errors.
/// With a single frame this equals [`panoptic`].
pub fn vpq(pred: &TrackedSequence, gt: &TrackedSequence) -> Result<f64> {
    if pred.frames.len() != gt.frames.len() || pred.frames.is_empty() {
        return Err(Error::Shape(format!(
            "{} predicted vs {} reference frames",
            pred.frames.len(),
            gt.frames.len()
        )));
    }
    let mut pred_to_gt: HashMap<u32, u32> = HashMap::new();
    let mut gt_to_pred: HashMap<u32, u32> = HashMap::new();
    let (mut num, mut den) = (0.0, 0.0);
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        let mut tp = 0;
        let mut iou_sum = 0.0;
        for (pid, gid, iou) in matched_segments(p, g)? {
            let consistent = pred_to_gt.get(&pid).is_none_or(|&x| x == gid)
                && gt_to_pred.get(&gid).is_none_or(|&x| x == pid);
            if consistent {
                pred_to_gt.insert(pid, gid);
                gt_to_pred.insert(gid, pid);
                tp += 1;
                iou_sum += iou;
            }
        }
        let frame =
            PanopticScores::from_counts(iou_sum, tp, p.areas().len() - tp, g.areas().len() - tp);
        num += frame.iou_sum;
        den += frame.denominator();
    }
    Ok(if den == 0.0 { 1.0 } else { num / den })
}
