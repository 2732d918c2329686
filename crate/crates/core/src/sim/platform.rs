//! Camera platforms and the default constellation.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bev::BevFrame;
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Platform {
    pub id: u16,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl Platform {
    pub fn altitude(&self) -> f64 {
        self.pose.altitude
    }

    /// Ground position below the camera.
    pub fn ground_position(&self) -> [f64; 2] {
        let c = self.pose.camera_center();
        [c.x, c.z]
    }

    pub fn bev_frame(&self, resolution: f64) -> BevFrame {
        BevFrame::below_camera(&self.pose, resolution)
    }
}

/// Platforms on a ring around a shared target, all looking at it.
///
/// Platform `i` sits at bearing `i · 360° / n` (platform 0 on the +x axis).
/// Ground positions are snapped to the BEV lattice so that every pair of
/// BEV frames differs by a whole number of cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constellation {
    pub altitudes: Vec<f64>,
    pub radii: Vec<f64>,
    pub image_width: u32,
    pub image_height: u32,
    pub focal: f64,
    /// Ground point every camera looks at.
    pub target: [f64; 2],
}

impl Default for Constellation {
    fn default() -> Self {
        Self {
            altitudes: vec![30.0, 30.0, 30.0, 50.0, 70.0],
            radii: vec![40.0, 40.0, 40.0, 35.0, 30.0],
            image_width: 352,
            image_height: 192,
            focal: 220.0,
            target: [0.0, 0.0],
        }
    }
}

impl Constellation {
    pub fn build(&self, resolution: f64) -> Result<Vec<Platform>> {
        if self.altitudes.is_empty() || self.altitudes.len() != self.radii.len() {
            return Err(Error::Config(format!(
                "constellation needs matching, non-empty altitude and radius lists ({} vs {})",
                self.altitudes.len(),
                self.radii.len()
            )));
        }
        if self.altitudes.len() > u16::MAX as usize {
            return Err(Error::Config("too many platforms".into()));
        }
        let intrinsics = CameraIntrinsics::new(
            self.focal,
            self.focal,
            self.image_width as f64 / 2.0,
            self.image_height as f64 / 2.0,
            self.image_width,
            self.image_height,
        )?;
        let n = self.altitudes.len();
        let snap = |v: f64| (v / resolution).round() * resolution;
        self.altitudes
            .iter()
            .zip(&self.radii)
            .enumerate()
            .map(|(i, (&h, &r))| {
                if !(h > 0.0) {
                    return Err(Error::Config(format!("platform {i} altitude {h} must be positive")));
                }
                let bearing = i as f64 * std::f64::consts::TAU / n as f64;
                let eye = Vector3::new(
                    snap(self.target[0] + r * bearing.cos()),
                    0.0,
                    snap(self.target[1] + r * bearing.sin()),
                );
                let target = Vector3::new(self.target[0], -h, self.target[1]);
                Ok(Platform {
                    id: i as u16,
                    intrinsics,
                    pose: CameraPose::look_at(eye, target, h)?,
                })
            })
            .collect()
    }
}
