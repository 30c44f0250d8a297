//! Scene data model: agent tracks, BEV raster, drivable mask, grid-map
//! prior, patch extraction, plus file I/O and synthetic generation.

mod io;
mod synth;

pub use io::{load_dataset, load_scene, save_scene, write_index, INDEX_FILE};
pub use synth::{synth_scenes, ManeuverClass, SynthConfig};

use thiserror::Error;

/// Past / future track lengths: 6 points at 0.5 s stride cover 3 s each.
pub const PAST_LEN: usize = 6;
pub const FUTURE_LEN: usize = 6;
/// Time stride between consecutive poses, seconds.
pub const TIME_STRIDE: f64 = 0.5;
/// Default floor mass for non-drivable prior cells.
pub const PRIOR_FLOOR: f64 = 1e-6;
/// How far outside the raster extent a pose may sit before load rejects it.
pub const POSE_MARGIN_M: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("degenerate prior: mask has no drivable cells")]
    DegeneratePrior,
    #[error("prior floor {eps} outside (0, 1/{cells})")]
    BadPriorFloor { eps: f64, cells: usize },
    #[error("patch size {0} must be even and >= 2")]
    BadPatchSize(usize),
    #[error("infeasible synthesis config: {0}")]
    Infeasible(String),
}

/// 2-D position in the scene frame, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: u32,
    pub past: Vec<Pose>,
    pub future: Vec<Pose>,
}

impl AgentTrack {
    /// Most recent observed pose; patch crops and decoder rollouts anchor here.
    pub fn last_observed(&self) -> Pose {
        *self.past.last().expect("past is non-empty by invariant")
    }
}

/// Grid placement shared by raster, mask and prior: `origin` is the corner
/// of pixel (0, 0); pixel (r, c) spans a `resolution`-sized square with
/// center origin + ((c + 0.5)·res, (r + 0.5)·res).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub origin: Pose,
    pub resolution: f64,
}

impl GridFrame {
    /// Cell indices (row, col) containing a position; may be negative /
    /// out of range, callers decide the out-of-bounds policy.
    pub fn cell_of(&self, p: &Pose) -> (i64, i64) {
        let c = ((p.x - self.origin.x) / self.resolution).floor() as i64;
        let r = ((p.y - self.origin.y) / self.resolution).floor() as i64;
        (r, c)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Pose {
        Pose::new(
            self.origin.x + (col as f64 + 0.5) * self.resolution,
            self.origin.y + (row as f64 + 0.5) * self.resolution,
        )
    }
}

/// H×W×C birds-eye-view raster, values in [0, 1], row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct BevRaster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frame: GridFrame,
    data: Vec<f32>,
}

impl BevRaster {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        frame: GridFrame,
        data: Vec<f32>,
    ) -> Result<Self, SceneError> {
        if data.len() != height * width * channels {
            return Err(SceneError::Invariant(format!(
                "raster data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if frame.resolution <= 0.0 {
            return Err(SceneError::Invariant(
                "raster resolution must be positive".into(),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SceneError::Invariant("raster contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            frame,
            data,
        })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn at_mut(&mut self, row: usize, col: usize, ch: usize) -> &mut f32 {
        &mut self.data[(row * self.width + col) * self.channels + ch]
    }

    /// m×m×C crop centered at the pixel containing `center`; cells outside
    /// the raster are zero-filled. For even m the center pixel lands at
    /// index m/2 along both axes.
    pub fn extract_patch(&self, center: &Pose, m: usize) -> Result<Patch, SceneError> {
        if m < 2 || m % 2 != 0 {
            return Err(SceneError::BadPatchSize(m));
        }
        let (cr, cc) = self.frame.cell_of(center);
        let half = (m / 2) as i64;
        let mut data = vec![0.0f32; m * m * self.channels];
        for pr in 0..m as i64 {
            let r = cr - half + pr;
            if r < 0 || r >= self.height as i64 {
                continue;
            }
            for pc in 0..m as i64 {
                let c = cc - half + pc;
                if c < 0 || c >= self.width as i64 {
                    continue;
                }
                for ch in 0..self.channels {
                    data[((pr as usize) * m + pc as usize) * self.channels + ch] =
                        self.at(r as usize, c as usize, ch);
                }
            }
        }
        Ok(Patch {
            size: m,
            channels: self.channels,
            data,
        })
    }
}

/// m×m×C crop around an agent, zero-padded outside the raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Boolean admissible-region raster aligned with the BEV grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivableMask {
    pub height: usize,
    pub width: usize,
    data: Vec<bool>,
}

impl DrivableMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self, SceneError> {
        if data.len() != height * width {
            return Err(SceneError::Invariant(format!(
                "mask data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn drivable_count(&self) -> usize {
        self.data.iter().filter(|&&d| d).count()
    }

    /// Drivable test for a continuous position; anything outside the grid
    /// counts as non-drivable.
    pub fn contains(&self, frame: &GridFrame, p: &Pose) -> bool {
        let (r, c) = frame.cell_of(p);
        r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width
            && self.at(r as usize, c as usize)
    }
}

/// Discrete spatial prior p̂ over the grid: floor mass on non-drivable
/// cells, the rest uniform over drivable cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorGrid {
    pub height: usize,
    pub width: usize,
    pub floor: f64,
    masses: Vec<f64>,
}

impl PriorGrid {
    /// Build the prior from a drivable mask. `eps` must sit in
    /// (0, 1/(H·W)) so the drivable share stays positive.
    pub fn build(mask: &DrivableMask, eps: f64) -> Result<Self, SceneError> {
        let cells = mask.height * mask.width;
        if !(eps > 0.0 && eps < 1.0 / cells as f64) {
            return Err(SceneError::BadPriorFloor { eps, cells });
        }
        let drivable = mask.drivable_count();
        if drivable == 0 {
            return Err(SceneError::DegeneratePrior);
        }
        let off = cells - drivable;
        let on_mass = (1.0 - eps * off as f64) / drivable as f64;
        let masses = mask
            .data()
            .iter()
            .map(|&d| if d { on_mass } else { eps })
            .collect();
        Ok(Self {
            height: mask.height,
            width: mask.width,
            floor: eps,
            masses,
        })
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass_at(&self, row: usize, col: usize) -> f64 {
        self.masses[row * self.width + col]
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn max_mass(&self) -> f64 {
        self.masses.iter().copied().fold(0.0, f64::max)
    }

    /// Log of the bilinear interpolation of cell masses at `p`, on the
    /// cell-center lattice; positions outside clamp to the boundary cell.
    pub fn log_prob(&self, frame: &GridFrame, p: &Pose) -> f64 {
        self.log_prob_with_grad(frame, p).0
    }

    /// (log p̂, ∂/∂x, ∂/∂y). The interpolant is piecewise bilinear, so the
    /// partials are constant within a lattice cell; exactly on a seam the
    /// one-sided (right/upper) value is used.
    pub fn log_prob_with_grad(&self, frame: &GridFrame, p: &Pose) -> (f64, f64, f64) {
        let res = frame.resolution;
        // continuous coordinates on the cell-center lattice
        let gx = (p.x - frame.origin.x) / res - 0.5;
        let gy = (p.y - frame.origin.y) / res - 0.5;
        let cgx = gx.clamp(0.0, (self.width - 1) as f64);
        let cgy = gy.clamp(0.0, (self.height - 1) as f64);
        let clamped_x = cgx != gx;
        let clamped_y = cgy != gy;
        let c0 = (cgx.floor() as usize).min(self.width.saturating_sub(2));
        let r0 = (cgy.floor() as usize).min(self.height.saturating_sub(2));
        let (c1, r1) = ((c0 + 1).min(self.width - 1), (r0 + 1).min(self.height - 1));
        let fx = (cgx - c0 as f64).clamp(0.0, 1.0);
        let fy = (cgy - r0 as f64).clamp(0.0, 1.0);
        let m00 = self.mass_at(r0, c0);
        let m01 = self.mass_at(r0, c1);
        let m10 = self.mass_at(r1, c0);
        let m11 = self.mass_at(r1, c1);
        let mass = m00 * (1.0 - fx) * (1.0 - fy)
            + m01 * fx * (1.0 - fy)
            + m10 * (1.0 - fx) * fy
            + m11 * fx * fy;
        let dmdx = if clamped_x {
            0.0
        } else {
            ((m01 - m00) * (1.0 - fy) + (m11 - m10) * fy) / res
        };
        let dmdy = if clamped_y {
            0.0
        } else {
            ((m10 - m00) * (1.0 - fx) + (m11 - m01) * fx) / res
        };
        (mass.ln(), dmdx / mass, dmdy / mass)
    }
}

/// One snapshot: BEV raster, drivable mask, prior, and A agent tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub raster: BevRaster,
    pub mask: DrivableMask,
    pub prior: PriorGrid,
    pub tracks: Vec<AgentTrack>,
}

impl Scene {
    pub fn frame(&self) -> &GridFrame {
        &self.raster.frame
    }

    pub fn agents(&self) -> usize {
        self.tracks.len()
    }

    /// Validates the cross-field invariants shared by load and synth.
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.tracks.is_empty() {
            return Err(SceneError::Invariant("scene has no agents".into()));
        }
        if self.mask.height != self.raster.height || self.mask.width != self.raster.width {
            return Err(SceneError::Invariant(format!(
                "mask {}x{} does not match raster {}x{}",
                self.mask.height, self.mask.width, self.raster.height, self.raster.width
            )));
        }
        let total = self.prior.total_mass();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SceneError::Invariant(format!(
                "prior mass {total} not 1 within 1e-9"
            )));
        }
        let frame = self.frame();
        let ext_x = self.raster.width as f64 * frame.resolution;
        let ext_y = self.raster.height as f64 * frame.resolution;
        for track in &self.tracks {
            if track.past.len() != PAST_LEN {
                return Err(SceneError::Invariant(format!(
                    "agent {}: past length {} != {PAST_LEN}",
                    track.agent_id,
                    track.past.len()
                )));
            }
            if track.future.len() != FUTURE_LEN {
                return Err(SceneError::Invariant(format!(
                    "agent {}: future length {} != {FUTURE_LEN}",
                    track.agent_id,
                    track.future.len()
                )));
            }
            for p in track.past.iter().chain(&track.future) {
                if !(p.x.is_finite() && p.y.is_finite()) {
                    return Err(SceneError::Invariant(format!(
                        "agent {}: non-finite pose",
                        track.agent_id
                    )));
                }
                let inside = p.x >= frame.origin.x - POSE_MARGIN_M
                    && p.x <= frame.origin.x + ext_x + POSE_MARGIN_M
                    && p.y >= frame.origin.y - POSE_MARGIN_M
                    && p.y <= frame.origin.y + ext_y + POSE_MARGIN_M;
                if !inside {
                    return Err(SceneError::Invariant(format!(
                        "agent {}: pose ({}, {}) outside raster extent + margin",
                        track.agent_id, p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }
}
