//! Detection, instance-segmentation and temporal metrics.

pub mod detection;
pub mod segmentation;

use serde::{Deserialize, Serialize};

pub use detection::{
    average_precision, average_precision_samples, maoe, mase, mate, match_by_center_distance,
    mean_average_precision, mean_average_precision_samples, true_positive_errors, DetectionBox, MapResult,
    Matching, Sample, TpErrors,
};
pub use segmentation::{
    panoptic, seg_iou, temporal_iou, vpq, InstanceMap, PanopticScores, SegMask, TrackedSequence,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Vehicle,
    Bicycle,
    Pedestrian,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Vehicle, ObjectClass::Bicycle, ObjectClass::Pedestrian];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Bicycle => "bicycle",
            ObjectClass::Pedestrian => "pedestrian",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
