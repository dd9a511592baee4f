//! Point frames and synchronized scene sequences.

use crate::config::{Config, GridSpec};
use crate::error::{Error, Result};
use crate::motion::{Direction, MotionStack};

const TIMESTAMP_TOL: f64 = 1e-6;

/// Per-point generator label: ground.
pub const LABEL_GROUND: i32 = -1;

/// Points captured at one timestamp, already in the common frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointFrame {
    pub timestamp: f64,
    pub points: Vec<[f32; 3]>,
}

impl PointFrame {
    pub fn new(timestamp: f64, points: Vec<[f32; 3]>) -> Self {
        Self { timestamp, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite() && self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }
}

/// Time-ordered frames around a current frame.
///
/// `frames[current]` is the reference frame; forward labels use frames after
/// it and backward labels frames before it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub grid: GridSpec,
    pub frame_dt: f64,
    pub frames: Vec<PointFrame>,
    pub current: usize,
    /// Forward ground-truth motion over the current frame's occupied cells.
    pub ground_truth: Option<MotionStack<f64>>,
    /// Generator labels per frame and point: [`LABEL_GROUND`] or an object id.
    pub annotations: Option<Vec<Vec<i32>>>,
}

impl SceneSequence {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidScene("no frames".into()));
        }
        if self.current >= self.frames.len() {
            return Err(Error::InvalidScene(format!(
                "current index {} outside {} frames",
                self.current,
                self.frames.len()
            )));
        }
        if !(self.frame_dt.is_finite() && self.frame_dt > 0.0) {
            return Err(Error::InvalidScene(format!("frame_dt {} must be > 0", self.frame_dt)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("frame {i}")));
            }
        }
        for (i, w) in self.frames.windows(2).enumerate() {
            let gap = w[1].timestamp - w[0].timestamp;
            if (gap - self.frame_dt).abs() > TIMESTAMP_TOL {
                return Err(Error::InvalidScene(format!(
                    "frames {i}->{}: spacing {gap} s, expected {} s",
                    i + 1,
                    self.frame_dt
                )));
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.grid() != &self.grid || gt.direction() != Direction::Forward {
                return Err(Error::InvalidScene("ground truth must be forward on the scene grid".into()));
            }
        }
        if let Some(ann) = &self.annotations {
            if ann.len() != self.frames.len() || ann.iter().zip(&self.frames).any(|(a, f)| a.len() != f.len()) {
                return Err(Error::InvalidScene("annotation counts do not match frames".into()));
            }
        }
        Ok(())
    }

    /// Frame `offset` steps from the current one.
    pub fn frame_at(&self, offset: isize) -> Option<&PointFrame> {
        let i = self.current as isize + offset;
        (i >= 0).then(|| self.frames.get(i as usize)).flatten()
    }

    pub fn current_frame(&self) -> &PointFrame {
        &self.frames[self.current]
    }

    /// Frames available before / after the current one.
    pub fn past_available(&self) -> usize {
        self.current
    }
    pub fn future_available(&self) -> usize {
        self.frames.len() - 1 - self.current
    }

    /// Checks that `cfg.future_steps` frames exist in `direction`.
    pub fn require_horizon(&self, cfg: &Config, direction: Direction) -> Result<()> {
        let have = match direction {
            Direction::Forward => self.future_available(),
            Direction::Backward => self.past_available(),
        };
        if have < cfg.future_steps {
            return Err(Error::InvalidScene(format!(
                "{direction:?} labels need {} frames, sequence has {have}",
                cfg.future_steps
            )));
        }
        Ok(())
    }
}

/// Frames on each side of the current frame for a config: enough for `T`
/// input frames in either direction and `T'` label targets.
pub fn frames_per_side(cfg: &Config) -> usize {
    (cfg.past_frames - 1).max(cfg.future_steps)
}
