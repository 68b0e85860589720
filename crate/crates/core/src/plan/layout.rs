//! In-place device buffer layout.
//!
//! Each device keeps one merged buffer holding its owned transition rows and
//! its chunk's neighbor rows. A vertex live in two consecutive batches keeps
//! its slot; incoming vertices take freed slots in ascending slot order and
//! new slots are appended only when the live set outgrows the buffer.

use serde::{Deserialize, Serialize};

use super::DedupPlan;
use crate::sets;

/// One slot write caused by a vertex entering the live set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecycle {
    pub slot: usize,
    /// Vertex that held the slot in the previous batch, if any.
    pub evicted: Option<usize>,
    pub incoming: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLayout {
    pub capacity: usize,
    /// `live[j]`: owned transition rows ∪ neighbor rows, ascending.
    pub live: Vec<Vec<usize>>,
    /// `slots[j][k]`: slot of `live[j][k]`.
    pub slots: Vec<Vec<usize>>,
    pub recycled: Vec<Vec<SlotRecycle>>,
}

impl DeviceLayout {
    pub fn slot_of(&self, j: usize, v: usize) -> Option<usize> {
        self.live[j].binary_search(&v).ok().map(|k| self.slots[j][k])
    }

    /// Assigns slots for a sequence of ascending live sets.
    pub fn from_live_sets(live: Vec<Vec<usize>>) -> Self {
        let mut capacity = 0usize;
        let mut occupant: Vec<Option<usize>> = Vec::new();
        let mut slots = Vec::with_capacity(live.len());
        let mut recycled = Vec::with_capacity(live.len());
        let mut prev: (&[usize], &[usize]) = (&[], &[]);

        for set in &live {
            let mut slot_row = vec![usize::MAX; set.len()];
            let mut keep = vec![false; capacity];
            for (k, &v) in set.iter().enumerate() {
                if let Ok(p) = prev.0.binary_search(&v) {
                    slot_row[k] = prev.1[p];
                    keep[prev.1[p]] = true;
                }
            }
            let mut free = (0..capacity).filter(|&s| !keep[s]);
            let mut events = Vec::new();
            for (k, &v) in set.iter().enumerate() {
                if slot_row[k] != usize::MAX {
                    continue;
                }
                let slot = free.next().unwrap_or_else(|| {
                    capacity += 1;
                    occupant.push(None);
                    capacity - 1
                });
                slot_row[k] = slot;
                events.push(SlotRecycle {
                    slot,
                    evicted: occupant[slot],
                    incoming: v,
                });
            }
            // occupants after this batch; stale ones are cleared
            for s in 0..capacity {
                if s < keep.len() && !keep[s] {
                    occupant[s] = None;
                }
            }
            for e in &events {
                occupant[e.slot] = Some(e.incoming);
            }
            slots.push(slot_row);
            recycled.push(events);
            let last = slots.len() - 1;
            prev = (&live[last], &slots[last]);
        }

        Self {
            capacity,
            live,
            slots,
            recycled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferLayout {
    pub devices: Vec<DeviceLayout>,
}

impl BufferLayout {
    pub fn capacities(&self) -> Vec<usize> {
        self.devices.iter().map(|d| d.capacity).collect()
    }
}

pub fn build_buffer_layout(plan: &DedupPlan) -> BufferLayout {
    let devices = (0..plan.m())
        .map(|i| {
            let live = (0..plan.n())
                .map(|j| sets::union(&plan.transition.owned[i][j], &plan.neighbors[i][j]))
                .collect();
            DeviceLayout::from_live_sets(live)
        })
        .collect();
    BufferLayout { devices }
}
