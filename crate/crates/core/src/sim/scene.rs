//! Synthetic traffic scenes on a flat ground plane.
//!
//! Ground coordinates `(x, y)` coincide with BEV coordinates: `x` is world
//! `x` and `y` is world `z` of the y-up platform frames. Heights are above
//! the ground plane.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{DetectionBox, ObjectClass};

/// Nominal `(w, l, h)` per class, in meters.
pub fn class_size(class: ObjectClass) -> [f64; 3] {
    match class {
        ObjectClass::Vehicle => [1.9, 4.5, 1.6],
        ObjectClass::Bicycle => [0.7, 1.8, 1.4],
        ObjectClass::Pedestrian => [0.8, 0.8, 1.8],
    }
}

/// Footprint of the tall vehicles that hide objects in occlusion pairs.
pub const OCCLUDER_SIZE: [f64; 3] = [2.4, 6.0, 3.5];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: u32,
    pub class: ObjectClass,
    /// Ground-plane center.
    pub center: [f64; 2],
    /// `(w, l, h)`; `l` runs along the heading.
    pub size: [f64; 3],
    /// Heading from ground `x` toward ground `y`, in `(-π, π]`.
    pub yaw: f64,
    /// Ground-plane velocity in m/s.
    pub velocity: [f64; 2],
}

impl ObjectState {
    /// Footprint corners, counterclockwise.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.size[1] / 2.0, self.size[0] / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| {
            [self.center[0] + c * a - s * b, self.center[1] + s * a + c * b]
        })
    }

    /// Whether ground point `(x, y)` lies on the footprint.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let a = c * dx + s * dy;
        let b = -s * dx + c * dy;
        a.abs() <= self.size[1] / 2.0 && b.abs() <= self.size[0] / 2.0
    }

    pub fn advanced(&self, dt: f64) -> Self {
        Self {
            center: [
                self.center[0] + self.velocity[0] * dt,
                self.center[1] + self.velocity[1] * dt,
            ],
            ..*self
        }
    }

    pub fn to_box(&self) -> DetectionBox {
        DetectionBox {
            center: [self.center[0], self.center[1], self.size[2] / 2.0],
            size: self.size,
            yaw: self.yaw,
            class: self.class,
            confidence: 1.0,
        }
    }
}

fn segment_distance(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let point_seg = |p: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
        };
        (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
    };
    point_seg(p, a, b)
        .min(point_seg(q, a, b))
        .min(point_seg(a, p, q))
        .min(point_seg(b, p, q))
}

/// Gap between two footprints; zero when they touch or overlap.
pub fn footprint_gap(a: &ObjectState, b: &ObjectState) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    if ca.iter().any(|p| b.contains(p[0], p[1])) || cb.iter().any(|p| a.contains(p[0], p[1])) {
        return 0.0;
    }
    let mut gap = f64::INFINITY;
    for i in 0..4 {
        for j in 0..4 {
            gap = gap.min(segment_distance(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4]));
        }
    }
    gap
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    /// Side of the square world window centered on the origin (meters).
    pub area: f64,
    pub frames: usize,
    /// Seconds between frames.
    pub dt: f64,
    pub vehicles: usize,
    pub bicycles: usize,
    pub pedestrians: usize,
    /// Maximum speed per class `[vehicle, bicycle, pedestrian]` in m/s.
    pub max_speed: [f64; 3],
    /// Minimum footprint gap between any two objects at every frame.
    pub clearance: f64,
    /// Parked tall vehicles, each hiding a pedestrian or bicycle from `viewer`.
    pub occlusion_pairs: usize,
    /// Ground position the occlusion pairs are hidden from.
    pub viewer: [f64; 2],
    /// Smallest horizontal distance from `viewer` to an occluder.
    pub pair_min_range: f64,
    pub max_attempts: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            area: 60.0,
            frames: 3,
            dt: 0.5,
            vehicles: 8,
            bicycles: 4,
            pedestrians: 8,
            max_speed: [4.0, 3.0, 1.2],
            clearance: 2.25,
            occlusion_pairs: 2,
            viewer: [39.75, 0.0],
            pair_min_range: 55.0,
            max_attempts: 5000,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.area > 0.0 && self.area <= 150.0) {
            return bad(format!("scene area {} m must be in (0, 150]", self.area));
        }
        if self.frames == 0 || !(self.dt > 0.0) {
            return bad("a scene needs at least one frame and a positive time step".into());
        }
        if self.max_speed.iter().any(|v| !(*v >= 0.0)) || !(self.clearance >= 0.0) {
            return bad("speeds and clearance must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub area: f64,
    pub dt: f64,
    /// Object states per frame; every frame lists the same ids in the same order.
    pub frames: Vec<Vec<ObjectState>>,
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

struct Builder<'a> {
    params: &'a SceneParams,
    /// Trajectories accepted so far.
    tracks: Vec<Vec<ObjectState>>,
}

impl Builder<'_> {
    fn trajectory(&self, start: ObjectState) -> Vec<ObjectState> {
        (0..self.params.frames)
            .map(|t| start.advanced(t as f64 * self.params.dt))
            .collect()
    }

    fn fits(&self, traj: &[ObjectState]) -> bool {
        let half = self.params.area / 2.0;
        let inside = traj
            .iter()
            .all(|s| s.corners().iter().all(|c| c[0].abs() <= half && c[1].abs() <= half));
        inside
            && self.tracks.iter().all(|other| {
                traj.iter()
                    .zip(other)
                    .all(|(a, b)| footprint_gap(a, b) >= self.params.clearance)
            })
    }

    fn try_add(&mut self, traj: Vec<ObjectState>) -> bool {
        let ok = self.fits(&traj);
        if ok {
            self.tracks.push(traj);
        }
        ok
    }
}

/// Deterministic scene: occlusion pairs first, then freely moving objects,
/// all placed by rejection sampling.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        params,
        tracks: Vec::new(),
    };
    let half = params.area / 2.0;
    let mut next_id = 1u32;

    for pair in 0..params.occlusion_pairs {
        let mut placed = false;
        for _ in 0..params.max_attempts {
            let [vx, vy] = params.viewer;
            let toward = (-vy).atan2(-vx) + rng.random_range(-0.35..0.35);
            let range = params.pair_min_range + rng.random_range(0.0..8.0);
            let (s, c) = toward.sin_cos();
            let occ = ObjectState {
                id: next_id,
                class: ObjectClass::Vehicle,
                center: [vx + c * range, vy + s * range],
                size: OCCLUDER_SIZE,
                yaw: wrap_angle(toward),
                velocity: [0.0, 0.0],
            };
            let class = if pair % 2 == 0 {
                ObjectClass::Pedestrian
            } else {
                ObjectClass::Bicycle
            };
            let size = class_size(class);
            let behind = OCCLUDER_SIZE[1] / 2.0 + params.clearance + size[0] / 2.0 + 0.05;
            let hidden = ObjectState {
                id: next_id + 1,
                class,
                center: [occ.center[0] + c * behind, occ.center[1] + s * behind],
                size,
                // Broadside to the viewer so it stays inside the occluder's shadow.
                yaw: wrap_angle(toward + PI / 2.0),
                velocity: [0.0, 0.0],
            };
            let (to, th) = (b.trajectory(occ), b.trajectory(hidden));
            if b.fits(&to) && b.fits(&th) && footprint_gap(&occ, &hidden) >= params.clearance {
                b.tracks.push(to);
                b.tracks.push(th);
                next_id += 2;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!("could not place occlusion pair {pair} inside the scene")));
        }
    }

    let classes = [
        (ObjectClass::Vehicle, params.vehicles),
        (ObjectClass::Bicycle, params.bicycles),
        (ObjectClass::Pedestrian, params.pedestrians),
    ];
    for (class, count) in classes {
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..params.max_attempts {
                let nominal = class_size(class);
                let jitter = rng.random_range(0.9..1.1);
                let yaw = wrap_angle(rng.random_range(-PI..PI));
                let speed = rng.random_range(0.0..=params.max_speed[class.index()]);
                let start = ObjectState {
                    id: next_id,
                    class,
                    center: [rng.random_range(-half..half), rng.random_range(-half..half)],
                    size: [nominal[0] * jitter, nominal[1] * jitter, nominal[2] * jitter],
                    yaw,
                    velocity: [speed * yaw.cos(), speed * yaw.sin()],
                };
                if b.try_add(b.trajectory(start)) {
                    next_id += 1;
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Config(format!(
                    "could not place object {next_id} ({class}) after {} attempts; lower the object count or clearance",
                    params.max_attempts
                )));
            }
        }
    }

    let frames = (0..params.frames)
        .map(|t| b.tracks.iter().map(|tr| tr[t]).collect())
        .collect();
    Ok(Scene {
        area: params.area,
        dt: params.dt,
        frames,
    })
}

impl Scene {
    /// Line-oriented text form.
    ///
    /// ```text
    /// scene <area> <dt> <frames>
    /// obj <frame> <id> <class> <x> <y> <z> <w> <l> <h> <yaw> <vx> <vy>
    /// ```
    ///
    /// `z` is the box-center height; `#` starts a comment.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# obj frame id class x y z w l h yaw vx vy\n");
        let _ = writeln!(out, "scene {} {} {}", self.area, self.dt, self.frames.len());
        for (t, frame) in self.frames.iter().enumerate() {
            for o in frame {
                let _ = writeln!(
                    out,
                    "obj {t} {} {} {} {} {} {} {} {} {} {} {}",
                    o.id,
                    o.class,
                    o.center[0],
                    o.center[1],
                    o.size[2] / 2.0,
                    o.size[0],
                    o.size[1],
                    o.size[2],
                    o.yaw,
                    o.velocity[0],
                    o.velocity[1]
                );
            }
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut header: Option<(f64, f64, usize)> = None;
        let mut frames: Vec<Vec<ObjectState>> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                fields
                    .get(i)
                    .ok_or_else(|| err(line_no, format!("missing field {i}")))?
                    .parse::<f64>()
                    .map_err(|e| err(line_no, format!("field {i}: {e}")))
                    .and_then(|v| {
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(err(line_no, format!("field {i} is not finite")))
                        }
                    })
            };
            let int = |i: usize| -> Result<usize> {
                fields
                    .get(i)
                    .ok_or_else(|| err(line_no, format!("missing field {i}")))?
                    .parse::<usize>()
                    .map_err(|e| err(line_no, format!("field {i}: {e}")))
            };
            match fields[0] {
                "scene" => {
                    if fields.len() != 4 {
                        return Err(err(line_no, "expected `scene <area> <dt> <frames>`".into()));
                    }
                    let h = (num(1)?, num(2)?, int(3)?);
                    frames = vec![Vec::new(); h.2];
                    header = Some(h);
                }
                "obj" => {
                    if header.is_none() {
                        return Err(err(line_no, "object record before the scene header".into()));
                    }
                    if fields.len() != 13 {
                        return Err(err(line_no, format!("expected 13 fields, found {}", fields.len())));
                    }
                    let t = int(1)?;
                    let class = ObjectClass::from_name(fields[3])
                        .ok_or_else(|| err(line_no, format!("unknown class `{}`", fields[3])))?;
                    let size = [num(7)?, num(8)?, num(9)?];
                    if size.iter().any(|s| *s <= 0.0) {
                        return Err(err(line_no, "box sizes must be positive".into()));
                    }
                    let state = ObjectState {
                        id: int(2)? as u32,
                        class,
                        center: [num(4)?, num(5)?],
                        size,
                        yaw: num(10)?,
                        velocity: [num(11)?, num(12)?],
                    };
                    frames
                        .get_mut(t)
                        .ok_or_else(|| err(line_no, format!("frame {t} is beyond the declared count")))?
                        .push(state);
                }
                other => return Err(err(line_no, format!("unknown record `{other}`"))),
            }
        }
        let (area, dt, _) = header.ok_or_else(|| err(1, "missing scene header".into()))?;
        let scene = Scene { area, dt, frames };
        scene.check_ids().map_err(|msg| err(0, msg))?;
        Ok(scene)
    }

    fn check_ids(&self) -> std::result::Result<(), String> {
        let Some(first) = self.frames.first() else {
            return Ok(());
        };
        let ids: Vec<(u32, ObjectClass)> = first.iter().map(|o| (o.id, o.class)).collect();
        for (t, f) in self.frames.iter().enumerate() {
            let these: Vec<(u32, ObjectClass)> = f.iter().map(|o| (o.id, o.class)).collect();
            if these != ids {
                return Err(format!("frame {t} does not list the same objects as frame 0"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
