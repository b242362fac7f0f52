//! Event streams: the record types, file formats, voxel-grid construction and
//! the synthetic moving-shapes generator.

pub mod io;
pub mod synthetic;
mod voxel;

pub use voxel::{
    downsample_voxel, extract_reference_points, voxelize, znorm, ReferencePointSet, VoxelGrid,
    ZNORM_EPS,
};

use crate::error::{Error, Result};

/// A single brightness-change event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    /// Pixel column.
    pub x: u16,
    /// Pixel row.
    pub y: u16,
    /// Timestamp in microseconds.
    pub t: u64,
    /// Polarity, `-1` or `+1`.
    pub p: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: i8) -> Self {
        Self { x, y, t, p }
    }
}

/// Time-ordered events with their sensor geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    width: u32,
    height: u32,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates geometry, polarity and timestamp order. Errors name the
    /// offending record index.
    pub fn new(width: u32, height: u32, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 || width > u16::MAX as u32 + 1 || height > u16::MAX as u32 + 1 {
            return Err(Error::InvalidArgument(format!(
                "unsupported sensor geometry {width}x{height}"
            )));
        }
        let mut last_t = 0;
        for (index, e) in events.iter().enumerate() {
            check_event(e, width, height, index)?;
            if e.t < last_t {
                return Err(Error::EventRecord {
                    index,
                    reason: format!("timestamp {} precedes previous timestamp {last_t}", e.t),
                });
            }
            last_t = e.t;
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t_start <= t <= t_end`.
    pub fn window(&self, t_start: u64, t_end: u64) -> EventStream {
        let lo = self.events.partition_point(|e| e.t < t_start);
        let hi = self.events.partition_point(|e| e.t <= t_end);
        EventStream {
            width: self.width,
            height: self.height,
            events: self.events[lo..hi.max(lo)].to_vec(),
        }
    }

    /// Mirror along the x axis.
    pub fn hflip(&self) -> EventStream {
        let w = self.width as u16;
        EventStream {
            width: self.width,
            height: self.height,
            events: self
                .events
                .iter()
                .map(|e| Event { x: w - 1 - e.x, ..*e })
                .collect(),
        }
    }
}

pub(crate) fn check_event(e: &Event, width: u32, height: u32, index: usize) -> Result<()> {
    if e.x as u32 >= width || e.y as u32 >= height {
        return Err(Error::EventRecord {
            index,
            reason: format!("({}, {}) outside {width}x{height} sensor", e.x, e.y),
        });
    }
    if e.p != 1 && e.p != -1 {
        return Err(Error::EventRecord {
            index,
            reason: format!("polarity {} is not +1 or -1", e.p),
        });
    }
    Ok(())
}
