//! Ray-cast oracle features standing in for a trained image encoder.
//!
//! Every pixel that sees the ground or an object gets a 16-channel
//! signature, written twice to fill [`FEATURE_CHANNELS`]:
//!
//! | channel | meaning |
//! |---|---|
//! | 0 | ground ([`GROUND_STRENGTH`]) |
//! | 1–3 | vehicle / bicycle / pedestrian one-hot |
//! | 4 | void (set only on empty BEV cells after normalization) |
//! | 5 | surface height over the grid's height band |
//! | 6 | count (1 per pixel; pooling turns it into an occupancy) |
//! | 7–15 | bits of the object id |

use std::collections::BTreeMap;

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rayon::prelude::*;

use super::platform::Platform;
use super::scene::ObjectState;
use crate::bev::{DepthDistribution, DepthEstimator, ImageFeatureMap, OracleDepth};
use crate::camera::{build_projection_cache, DepthPrior};
use crate::error::Result;

pub const SIGNATURE_CHANNELS: usize = 16;
pub const FEATURE_CHANNELS: usize = 2 * SIGNATURE_CHANNELS;

pub const CH_GROUND: usize = 0;
/// Class channels follow [`crate::metrics::ObjectClass::index`].
pub const CH_CLASS: usize = 1;
pub const CH_VOID: usize = 4;
pub const CH_HEIGHT: usize = 5;
pub const CH_COUNT: usize = 6;
pub const CH_ID: usize = 7;
pub const ID_BITS: usize = SIGNATURE_CHANNELS - CH_ID;

/// Ground signature strength relative to the object one-hot.
pub const GROUND_STRENGTH: f32 = 0.25;

/// Pixels whose ray first meets `id`, and pixels whose ray meets `id`
/// behind something else.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ObjectVisibility {
    pub visible_pixels: usize,
    pub occluded_pixels: usize,
    /// Ids of objects that block some of this object's pixels.
    pub occluders: Vec<u32>,
}

impl ObjectVisibility {
    /// On screen but completely hidden behind other objects.
    pub fn fully_occluded(&self) -> bool {
        self.visible_pixels == 0 && self.occluded_pixels > 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VisibilityRecord {
    pub objects: BTreeMap<u32, ObjectVisibility>,
}

impl VisibilityRecord {
    pub fn get(&self, id: u32) -> ObjectVisibility {
        self.objects.get(&id).cloned().unwrap_or_default()
    }

    pub fn fully_occluded(&self) -> Vec<u32> {
        self.objects
            .iter()
            .filter(|(_, v)| v.fully_occluded())
            .map(|(&id, _)| id)
            .collect()
    }
}

pub struct RenderOutput {
    pub features: ImageFeatureMap,
    /// True depth over the ground bound per pixel (1 on the ground itself).
    pub relative_depth: Array2<f64>,
    pub visibility: VisibilityRecord,
}

impl RenderOutput {
    /// One-hot depth distribution at the true relative depth.
    pub fn depth_distribution(&self, bins: usize) -> Result<DepthDistribution> {
        let oracle = OracleDepth {
            bins,
            relative: self.relative_depth.clone(),
        };
        let (w, h) = self.relative_depth.dim();
        let mut probs = Array3::<f32>::zeros((w, h, bins));
        let mut buf = vec![0.0; bins];
        let empty = ndarray::Array1::<f32>::zeros(0);
        for u in 0..w {
            for v in 0..h {
                oracle.estimate(u, v, empty.view(), &mut buf);
                for (k, &p) in buf.iter().enumerate() {
                    probs[[u, v, k]] = p as f32;
                }
            }
        }
        DepthDistribution::new(probs)
    }
}

/// Entry distance of a ray into an object's box, in camera-depth units of
/// the (unnormalized) direction.
fn box_entry(origin: &Vector3<f64>, dir: &Vector3<f64>, o: &ObjectState, altitude: f64) -> Option<f64> {
    let (s, c) = o.yaw.sin_cos();
    // Box-local axes: a along the heading, b across, y vertical.
    let (dx, dz) = (origin.x - o.center[0], origin.z - o.center[1]);
    let lo = [c * dx + s * dz, -s * dx + c * dz, origin.y + altitude];
    let ld = [c * dir.x + s * dir.z, -s * dir.x + c * dir.z, dir.y];
    let bounds = [
        (-o.size[1] / 2.0, o.size[1] / 2.0),
        (-o.size[0] / 2.0, o.size[0] / 2.0),
        (0.0, o.size[2]),
    ];
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        if ld[k].abs() < 1e-15 {
            if lo[k] < bounds[k].0 || lo[k] > bounds[k].1 {
                return None;
            }
            continue;
        }
        let (a, b) = ((bounds[k].0 - lo[k]) / ld[k], (bounds[k].1 - lo[k]) / ld[k]);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
        if t0 > t1 {
            return None;
        }
    }
    (t0 > 0.0).then_some(t0)
}

fn write_signature(px: &mut [f32], class: Option<usize>, height_frac: f32, id: u32) {
    let mut sig = [0.0f32; SIGNATURE_CHANNELS];
    match class {
        None => sig[CH_GROUND] = GROUND_STRENGTH,
        Some(c) => {
            sig[CH_CLASS + c] = 1.0;
            for bit in 0..ID_BITS {
                sig[CH_ID + bit] = ((id >> bit) & 1) as f32;
            }
        }
    }
    sig[CH_HEIGHT] = height_frac;
    sig[CH_COUNT] = 1.0;
    px[..SIGNATURE_CHANNELS].copy_from_slice(&sig);
    px[SIGNATURE_CHANNELS..].copy_from_slice(&sig);
}

/// Casts one ray per pixel center against the ground and every object box.
///
/// Rays that meet nothing within `prior.d_max` carry no features.
pub fn render_oracle_features(
    platform: &Platform,
    objects: &[ObjectState],
    height_range: (f64, f64),
    prior: &DepthPrior,
) -> Result<RenderOutput> {
    let cache = build_projection_cache(&platform.intrinsics, &platform.pose)?;
    let (w, h) = (platform.intrinsics.width as usize, platform.intrinsics.height as usize);
    let altitude = platform.altitude();
    let origin = platform.pose.camera_center();
    let span = (height_range.1 - height_range.0) as f32;

    struct Column {
        feats: Vec<f32>,
        rel: Vec<f64>,
        hits: Vec<(usize, Option<usize>)>,
    }
    // Columns render independently and are stitched in order.
    let columns: Vec<Column> = (0..w)
        .into_par_iter()
        .map(|u| {
            let mut col = Column {
                feats: vec![0.0; h * FEATURE_CHANNELS],
                rel: vec![1.0; h],
                hits: Vec::new(),
            };
            let mut entries: Vec<(f64, usize)> = Vec::with_capacity(objects.len());
            for v in 0..h {
                let (fu, fv) = (u as f64 + 0.5, v as f64 + 0.5);
                let dir = cache.ray_direction(fu, fv);
                let bound = cache.depth_upper_bound(fu, fv, altitude, prior);
                entries.clear();
                entries.extend(
                    objects
                        .iter()
                        .enumerate()
                        .filter_map(|(i, o)| box_entry(&origin, &dir, o, altitude).map(|t| (t, i))),
                );
                entries.sort_by(|a, b| a.0.total_cmp(&b.0));
                let first = entries.first().copied();
                let px = &mut col.feats[v * FEATURE_CHANNELS..(v + 1) * FEATURE_CHANNELS];
                match first {
                    Some((t, i)) if t <= prior.d_max => {
                        let p = origin + dir * t;
                        let height = (p.y + altitude - height_range.0) as f32 / span;
                        let o = &objects[i];
                        write_signature(px, Some(o.class.index()), height, o.id);
                        col.rel[v] = (t / bound.depth).min(1.0);
                        col.hits.push((i, None));
                        for &(_, j) in &entries[1..] {
                            col.hits.push((j, Some(i)));
                        }
                    }
                    _ if !bound.clamped && bound.depth <= prior.d_max => {
                        write_signature(px, None, -(height_range.0 as f32) / span, 0);
                        col.rel[v] = 1.0;
                    }
                    _ => {}
                }
            }
            col
        })
        .collect();

    let mut data = Array3::<f32>::zeros((w, h, FEATURE_CHANNELS));
    let mut relative = Array2::<f64>::ones((w, h));
    let mut visibility = VisibilityRecord::default();
    for o in objects {
        visibility.objects.insert(o.id, ObjectVisibility::default());
    }
    for (u, col) in columns.into_iter().enumerate() {
        for v in 0..h {
            relative[[u, v]] = col.rel[v];
            for ch in 0..FEATURE_CHANNELS {
                data[[u, v, ch]] = col.feats[v * FEATURE_CHANNELS + ch];
            }
        }
        for (i, by) in col.hits {
            let rec = visibility.objects.get_mut(&objects[i].id).expect("registered");
            match by {
                None => rec.visible_pixels += 1,
                Some(j) => {
                    rec.occluded_pixels += 1;
                    let occ = objects[j].id;
                    if let Err(pos) = rec.occluders.binary_search(&occ) {
                        rec.occluders.insert(pos, occ);
                    }
                }
            }
        }
    }
    Ok(RenderOutput {
        features: ImageFeatureMap::new(data)?,
        relative_depth: relative,
        visibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraPose};
    use crate::metrics::ObjectClass;
    use crate::sim::scene::OCCLUDER_SIZE;

    fn nadir(altitude: f64) -> Platform {
        let intrinsics = CameraIntrinsics::new(200.0, 200.0, 100.0, 100.0, 200, 200).unwrap();
        let pose = CameraPose::look_at(Vector3::zeros(), Vector3::new(0.0, -altitude, 0.0), altitude).unwrap();
        Platform { id: 0, intrinsics, pose }
    }

    fn obj(id: u32, class: ObjectClass, center: [f64; 2], size: [f64; 3], yaw: f64) -> ObjectState {
        ObjectState {
            id,
            class,
            center,
            size,
            yaw,
            velocity: [0.0; 2],
        }
    }

    #[test]
    fn nadir_footprint_matches_projection() {
        let h = 40.0;
        let p = nadir(h);
        // Axis-aligned box centered under the camera: only the top face shows.
        let o = obj(3, ObjectClass::Vehicle, [0.0, 0.0], [2.0, 4.0, 1.5], 0.0);
        let out = render_oracle_features(&p, &[o], (0.0, 10.0), &DepthPrior::default()).unwrap();
        let vis = out.visibility.get(3);
        let scale = 200.0 / (h - 1.5);
        let (a, b) = (4.0 * scale, 2.0 * scale);
        let n = vis.visible_pixels as f64;
        assert!(n >= (a - 1.0) * (b - 1.0) && n <= (a + 1.0) * (b + 1.0), "{n} vs {}", a * b);
        assert_eq!(vis.occluded_pixels, 0);
        // Object pixels sit at the top face: relative depth (h - 1.5) / h.
        let center = out.relative_depth[[100, 100]];
        assert!((center - (h - 1.5) / h).abs() < 1e-9);
        assert_eq!(out.features.data[[100, 100, CH_CLASS]], 1.0);
        assert_eq!(out.features.data[[0, 0, CH_GROUND]], GROUND_STRENGTH);
        assert_eq!(out.features.data[[0, 0, SIGNATURE_CHANNELS + CH_GROUND]], GROUND_STRENGTH);
    }

    #[test]
    fn hidden_object_is_marked_occluded() {
        // Oblique camera; a tall occluder directly in front of a pedestrian.
        let intrinsics = CameraIntrinsics::new(220.0, 220.0, 176.0, 96.0, 352, 192).unwrap();
        let pose = CameraPose::look_at(Vector3::zeros(), Vector3::new(-60.0, -30.0, 0.0), 30.0).unwrap();
        let p = Platform { id: 0, intrinsics, pose };
        let yaw = std::f64::consts::PI;
        let occ = obj(1, ObjectClass::Vehicle, [-58.0, 0.0], OCCLUDER_SIZE, yaw);
        let ped = obj(2, ObjectClass::Pedestrian, [-58.0 - 3.0 - 2.25 - 0.45, 0.0], [0.8, 0.8, 1.8], yaw);
        let out = render_oracle_features(&p, &[occ, ped], (0.0, 10.0), &DepthPrior::default()).unwrap();
        let v = out.visibility.get(2);
        assert_eq!(v.visible_pixels, 0);
        assert!(v.occluded_pixels > 0);
        assert_eq!(v.occluders, vec![1]);
        assert!(v.fully_occluded());
        assert_eq!(out.visibility.fully_occluded(), vec![2]);
        assert!(out.visibility.get(1).visible_pixels > 0);

        // Alone, the pedestrian is visible.
        let alone = render_oracle_features(&p, &[ped], (0.0, 10.0), &DepthPrior::default()).unwrap();
        assert!(alone.visibility.get(2).visible_pixels > 0);
    }

    #[test]
    fn depth_distribution_is_one_hot() {
        let p = nadir(20.0);
        let o = obj(1, ObjectClass::Bicycle, [0.0, 0.0], [0.7, 1.8, 1.4], 0.3);
        let out = render_oracle_features(&p, &[o], (0.0, 10.0), &DepthPrior::default()).unwrap();
        let d = out.depth_distribution(100).unwrap();
        for u in [0, 100, 199] {
            let row = d.probs.slice(ndarray::s![u, 100, ..]);
            assert_eq!(row.sum(), 1.0);
            assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
        }
    }
}
