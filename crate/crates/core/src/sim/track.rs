//! Frame-to-frame id carry-over for predicted instances.

use std::collections::BTreeMap;

use crate::metrics::{DetectionBox, InstanceMap, ObjectClass};

/// Greedy nearest-center association with the previous frame's tracks.
#[derive(Clone, Debug)]
pub struct Tracker {
    gate: f64,
    next_id: u32,
    previous: Vec<(u32, ObjectClass, [f64; 2])>,
}

impl Tracker {
    pub fn new(gate: f64) -> Self {
        Self {
            gate,
            next_id: 1,
            previous: Vec::new(),
        }
    }

    /// Relabels `instances` (where id `k + 1` belongs to `boxes[k]`) with
    /// track ids. Boxes are visited by descending confidence; each takes the
    /// nearest unclaimed same-class track within the gate or starts a new one.
    pub fn assign(&mut self, boxes: &[DetectionBox], instances: &InstanceMap) -> InstanceMap {
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        order.sort_by(|&a, &b| boxes[b].confidence.total_cmp(&boxes[a].confidence));
        let mut claimed = vec![false; self.previous.len()];
        let mut track_of = vec![0u32; boxes.len()];
        for k in order {
            let b = &boxes[k];
            let best = self
                .previous
                .iter()
                .enumerate()
                .filter(|(i, p)| !claimed[*i] && p.1 == b.class)
                .map(|(i, p)| (i, (p.2[0] - b.center[0]).hypot(p.2[1] - b.center[1])))
                .filter(|&(_, d)| d < self.gate)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            track_of[k] = match best {
                Some((i, _)) => {
                    claimed[i] = true;
                    self.previous[i].0
                }
                None => {
                    self.next_id += 1;
                    self.next_id - 1
                }
            };
        }
        self.previous = boxes
            .iter()
            .zip(&track_of)
            .map(|(b, &id)| (id, b.class, [b.center[0], b.center[1]]))
            .collect();
        let relabel = |id: u32| if id == 0 { 0 } else { track_of[id as usize - 1] };
        let classes: BTreeMap<u32, ObjectClass> =
            instances.classes.iter().map(|(&id, &c)| (relabel(id), c)).collect();
        InstanceMap {
            ids: instances.ids.mapv(relabel),
            classes,
        }
    }
}
