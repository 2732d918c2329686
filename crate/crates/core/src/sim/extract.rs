//! Untrained detection/segmentation heads over signature BEV maps.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Array3, ArrayView3, ArrayViewMut3};

use super::render::{CH_CLASS, CH_COUNT, CH_GROUND, CH_VOID, SIGNATURE_CHANNELS};
use super::scene::class_size;
use crate::bev::GridSpec;
use crate::metrics::{DetectionBox, InstanceMap, ObjectClass};

/// Divides each signature block by its pixel count, turning pooled sums into
/// per-cell means. Cells that received no pixels become void.
pub fn normalize_occupancy(mut map: ArrayViewMut3<f32>) {
    let c = map.dim().2;
    for mut cell in map.lanes_mut(ndarray::Axis(2)) {
        for base in (0..c).step_by(SIGNATURE_CHANNELS) {
            let count = cell[base + CH_COUNT];
            if count > 0.0 {
                for ch in base..base + SIGNATURE_CHANNELS {
                    cell[ch] /= count;
                }
            } else {
                for ch in base..base + SIGNATURE_CHANNELS {
                    cell[ch] = 0.0;
                }
                cell[base + CH_VOID] = 1.0;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractParams {
    /// First channel of the signature block to read.
    pub offset: usize,
    /// Minimum class share `class / (ground + Σ classes)` of a member cell.
    pub share_threshold: f32,
    /// Cells with less ground-plus-class mass are ignored.
    pub min_mass: f32,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            offset: SIGNATURE_CHANNELS,
            share_threshold: 0.5,
            min_mass: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Extraction {
    pub boxes: Vec<DetectionBox>,
    /// Instance `k + 1` corresponds to `boxes[k]`.
    pub instances: InstanceMap,
}

/// Class and share of the dominant class in one cell, if it qualifies.
fn cell_class(map: &ArrayView3<f32>, i: usize, j: usize, p: &ExtractParams) -> Option<(ObjectClass, f32)> {
    let at = |ch: usize| map[[i, j, p.offset + ch]].max(0.0);
    let classes = [at(CH_CLASS), at(CH_CLASS + 1), at(CH_CLASS + 2)];
    let mass = at(CH_GROUND) + classes.iter().sum::<f32>();
    if mass <= p.min_mass {
        return None;
    }
    let (k, &best) = classes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
    let share = best / mass;
    (share >= p.share_threshold).then(|| (ObjectClass::ALL[k], share))
}

/// Oriented box around a set of cell centers.
fn fit_box(cells: &[(usize, usize)], spec: &GridSpec, class: ObjectClass, confidence: f64) -> DetectionBox {
    let pts: Vec<(f64, f64)> = cells.iter().map(|&(i, j)| spec.cell_center(i, j)).collect();
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (s, c) = theta.sin_cos();
    let (mut a0, mut a1, mut b0, mut b1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        let a = c * (x - mx) + s * (y - my);
        let b = -s * (x - mx) + c * (y - my);
        a0 = a0.min(a);
        a1 = a1.max(a);
        b0 = b0.min(b);
        b1 = b1.max(b);
    }
    let (ac, bc) = ((a0 + a1) / 2.0, (b0 + b1) / 2.0);
    let center = (mx + c * ac - s * bc, my + s * ac + c * bc);
    let res = spec.resolution;
    let (l, w) = (a1 - a0 + res, b1 - b0 + res);
    let (w, l, yaw) = if w > l {
        (l, w, theta + std::f64::consts::FRAC_PI_2)
    } else {
        (w, l, theta)
    };
    let h = class_size(class)[2];
    DetectionBox {
        center: [center.0, center.1, h / 2.0],
        size: [w, l, h],
        yaw: if yaw > std::f64::consts::PI { yaw - std::f64::consts::TAU } else { yaw },
        class,
        confidence,
    }
}

/// Groups same-class cells into 4-connected components; each component is
/// one instance with an enclosing oriented box. Confidence is the mean class
/// share over the component. Boxes are in the map's BEV coordinates.
pub fn extract_instances(map: ArrayView3<f32>, spec: &GridSpec, params: &ExtractParams) -> Extraction {
    let (nx, ny, _) = map.dim();
    let mut labels: Array2<Option<(ObjectClass, f32)>> = Array2::from_elem((nx, ny), None);
    for i in 0..nx {
        for j in 0..ny {
            labels[[i, j]] = cell_class(&map, i, j, params);
        }
    }
    let mut ids = Array2::<u32>::zeros((nx, ny));
    let mut classes = BTreeMap::new();
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let Some((class, _)) = labels[[i, j]] else { continue };
            if ids[[i, j]] != 0 {
                continue;
            }
            let id = boxes.len() as u32 + 1;
            let mut cells = Vec::new();
            let mut share_sum = 0.0f64;
            ids[[i, j]] = id;
            stack.push((i, j));
            while let Some((a, b)) = stack.pop() {
                cells.push((a, b));
                share_sum += labels[[a, b]].map_or(0.0, |l| l.1 as f64);
                let neighbors = [
                    (a.wrapping_sub(1), b),
                    (a + 1, b),
                    (a, b.wrapping_sub(1)),
                    (a, b + 1),
                ];
                for (x, y) in neighbors {
                    if x < nx && y < ny && ids[[x, y]] == 0 && labels[[x, y]].is_some_and(|l| l.0 == class) {
                        ids[[x, y]] = id;
                        stack.push((x, y));
                    }
                }
            }
            cells.sort_unstable();
            let conf = (share_sum / cells.len() as f64).min(1.0);
            boxes.push(fit_box(&cells, spec, class, conf));
            classes.insert(id, class);
        }
    }
    Extraction {
        boxes,
        instances: InstanceMap { ids, classes },
    }
}

/// Rasterizes boxes: cells whose center lies on a footprint, or the cell
/// holding the box center when the footprint misses every cell center.
pub fn rasterize_boxes(boxes: &[(u32, DetectionBox)], spec: &GridSpec) -> InstanceMap {
    let (nx, ny) = spec.dims();
    let mut ids = Array2::<u32>::zeros((nx, ny));
    let mut classes = BTreeMap::new();
    let res = spec.resolution;
    for &(id, b) in boxes {
        let (s, c) = b.yaw.sin_cos();
        let inside = |x: f64, y: f64| {
            let (dx, dy) = (x - b.center[0], y - b.center[1]);
            (c * dx + s * dy).abs() <= b.size[1] / 2.0 && (-s * dx + c * dy).abs() <= b.size[0] / 2.0
        };
        let reach = b.size[0].hypot(b.size[1]) / 2.0 + res;
        let Some((i0, j0)) = spec.cell_of(
            (b.center[0] - reach).max(spec.x_range.0),
            (b.center[1] - reach).max(spec.y_range.0),
        ) else {
            continue;
        };
        let span = (2.0 * reach / res).ceil() as usize + 1;
        let mut any = false;
        for i in i0..(i0 + span).min(nx) {
            for j in j0..(j0 + span).min(ny) {
                let (x, y) = spec.cell_center(i, j);
                if inside(x, y) {
                    ids[[i, j]] = id;
                    any = true;
                }
            }
        }
        if !any {
            if let Some((i, j)) = spec.cell_of(b.center[0], b.center[1]) {
                ids[[i, j]] = id;
                any = true;
            }
        }
        if any {
            classes.insert(id, b.class);
        }
    }
    InstanceMap { ids, classes }
}

/// Centered square crop of `side` meters, for the short-range evaluation.
pub fn crop_cells(spec: &GridSpec, side: f64) -> (GridSpec, (usize, usize)) {
    let crop = spec.cropped(side);
    let off = |lo: f64, clo: f64| ((clo - lo) / spec.resolution).round() as usize;
    (crop, (off(spec.x_range.0, crop.x_range.0), off(spec.y_range.0, crop.y_range.0)))
}

pub fn crop_instances(map: &InstanceMap, spec: &GridSpec, side: f64) -> InstanceMap {
    let (crop, (oi, oj)) = crop_cells(spec, side);
    let (nx, ny) = crop.dims();
    let ids = map.ids.slice(s![oi..oi + nx, oj..oj + ny]).to_owned();
    let classes = map
        .classes
        .iter()
        .filter(|(id, _)| ids.iter().any(|v| v == *id))
        .map(|(&id, &c)| (id, c))
        .collect();
    InstanceMap { ids, classes }
}

/// Signature map filled with void everywhere.
pub fn empty_signature_map(spec: &GridSpec, channels: usize) -> Array3<f32> {
    let (nx, ny) = spec.dims();
    let mut m = Array3::zeros((nx, ny, channels));
    normalize_occupancy(m.view_mut());
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::render::FEATURE_CHANNELS;

    fn spec() -> GridSpec {
        GridSpec {
            x_range: (-6.0, 6.0),
            y_range: (-6.0, 6.0),
            ..GridSpec::default()
        }
    }

    fn paint(map: &mut Array3<f32>, i: usize, j: usize, class: usize) {
        map[[i, j, SIGNATURE_CHANNELS + CH_CLASS + class]] = 1.0;
        map[[i, j, SIGNATURE_CHANNELS + CH_VOID]] = 0.0;
    }

    #[test]
    fn normalization_averages_and_voids() {
        let mut m = Array3::zeros((2, 1, FEATURE_CHANNELS));
        m[[0, 0, CH_COUNT]] = 4.0;
        m[[0, 0, CH_GROUND]] = 0.5;
        m[[0, 0, CH_CLASS]] = 2.0;
        normalize_occupancy(m.view_mut());
        assert_eq!(m[[0, 0, CH_COUNT]], 1.0);
        assert_eq!(m[[0, 0, CH_CLASS]], 0.5);
        assert_eq!(m[[1, 0, CH_VOID]], 1.0);
        assert_eq!(m[[1, 0, SIGNATURE_CHANNELS + CH_VOID]], 1.0);
    }

    #[test]
    fn components_and_boxes() {
        let spec = spec();
        let mut m = empty_signature_map(&spec, FEATURE_CHANNELS);
        // A 2×6 vehicle along x and a single pedestrian cell, well apart.
        for i in 2..8 {
            for j in 3..5 {
                paint(&mut m, i, j, 0);
            }
        }
        paint(&mut m, 12, 12, 2);
        let ex = extract_instances(m.view(), &spec, &ExtractParams::default());
        assert_eq!(ex.boxes.len(), 2);
        let v = ex.boxes.iter().find(|b| b.class == ObjectClass::Vehicle).unwrap();
        assert!((v.size[1] - 4.5).abs() < 1e-9 && (v.size[0] - 1.5).abs() < 1e-9);
        assert!(v.yaw.sin().abs() < 1e-9);
        let (cx, cy) = spec.cell_center(2, 3);
        assert!((v.center[0] - (cx + 2.5 * 0.75)).abs() < 1e-9 && (v.center[1] - (cy + 0.375)).abs() < 1e-9);
        assert_eq!(v.confidence, 1.0);
        assert_eq!(ex.instances.areas().values().copied().collect::<Vec<_>>(), vec![12, 1]);

        // Two objects separated by ≥ 2 cells stay apart; adjacent ones of
        // another class do too.
        paint(&mut m, 12, 14, 2);
        paint(&mut m, 13, 12, 1);
        let ex = extract_instances(m.view(), &spec, &ExtractParams::default());
        assert_eq!(ex.boxes.len(), 4);
    }

    #[test]
    fn share_threshold() {
        let spec = spec();
        let mut m = empty_signature_map(&spec, FEATURE_CHANNELS);
        m[[1, 1, SIGNATURE_CHANNELS + CH_GROUND]] = 0.6;
        m[[1, 1, SIGNATURE_CHANNELS + CH_CLASS + 2]] = 0.4;
        m[[3, 3, SIGNATURE_CHANNELS + CH_GROUND]] = 0.4;
        m[[3, 3, SIGNATURE_CHANNELS + CH_CLASS + 2]] = 0.6;
        let ex = extract_instances(m.view(), &spec, &ExtractParams::default());
        assert_eq!(ex.boxes.len(), 1);
        assert!((ex.boxes[0].confidence - 0.6).abs() < 1e-6);
    }

    #[test]
    fn rasterized_boxes_round_trip() {
        let spec = spec();
        let b = DetectionBox {
            center: [0.0, 0.0, 0.8],
            size: [1.5, 3.0, 1.6],
            yaw: 0.0,
            class: ObjectClass::Vehicle,
            confidence: 1.0,
        };
        let tiny = DetectionBox {
            center: [3.1, 3.1, 0.9],
            size: [0.2, 0.2, 1.8],
            class: ObjectClass::Pedestrian,
            ..b
        };
        let m = rasterize_boxes(&[(5, b), (9, tiny)], &spec);
        assert_eq!(m.areas()[&5], 8);
        assert_eq!(m.areas()[&9], 1);
        let cropped = crop_instances(&m, &spec, 6.0);
        assert_eq!(cropped.ids.dim(), (8, 8));
        assert_eq!(cropped.areas()[&5], 8);
        assert!(!cropped.classes.contains_key(&9));
    }
}
