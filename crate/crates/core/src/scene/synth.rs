//! Synthetic driving scenes: lane-corridor masks with agents following
//! one of four maneuver classes at constant speed plus Gaussian jitter.
//! Jittered points are pulled back inside the corridor, so ground-truth
//! futures are always drivable-area compliant against their own mask.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{
    AgentTrack, BevRaster, DrivableMask, GridFrame, Pose, PriorGrid, Scene, SceneError,
    FUTURE_LEN, PAST_LEN, PRIOR_FLOOR, TIME_STRIDE,
};
use crate::seeding::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManeuverClass {
    Straight,
    LeftTurn,
    RightTurn,
    LaneChange,
}

pub const ALL_CLASSES: [ManeuverClass; 4] = [
    ManeuverClass::Straight,
    ManeuverClass::LeftTurn,
    ManeuverClass::RightTurn,
    ManeuverClass::LaneChange,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Scenes generated per maneuver class.
    pub per_class: usize,
    /// Agent speed sampled uniformly from this range, m/s.
    pub speed_range: (f64, f64),
    /// Std-dev of the per-point Gaussian jitter, meters.
    pub noise_sigma: f64,
    /// Agents per scene, inclusive range.
    pub agents_range: (usize, usize),
    /// Square grid side, pixels.
    pub grid: usize,
    /// Meters per pixel.
    pub resolution: f64,
    /// Lane corridor half-width, meters.
    pub half_width: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_class: 10,
            speed_range: (2.0, 4.0),
            noise_sigma: 0.15,
            agents_range: (1, 4),
            grid: 64,
            resolution: 0.5,
            half_width: 2.25,
        }
    }
}

/// Lane center path as a dense arc-length-indexed polyline.
struct LanePath {
    points: Vec<Pose>,
    cum_len: Vec<f64>,
}

impl LanePath {
    fn total_len(&self) -> f64 {
        *self.cum_len.last().unwrap()
    }

    /// Position at arc length s (clamped to the path ends).
    fn at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.total_len());
        let i = match self
            .cum_len
            .binary_search_by(|v| v.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i + 1 >= self.points.len() {
            return self.points[self.points.len() - 1];
        }
        let seg = self.cum_len[i + 1] - self.cum_len[i];
        let f = if seg > 0.0 { (s - self.cum_len[i]) / seg } else { 0.0 };
        let (a, b) = (self.points[i], self.points[i + 1]);
        Pose::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f)
    }

    fn nearest(&self, p: &Pose) -> Pose {
        *self
            .points
            .iter()
            .min_by(|a, b| a.dist(p).partial_cmp(&b.dist(p)).unwrap())
            .unwrap()
    }
}

fn build_path(class: ManeuverClass, extent: f64) -> LanePath {
    let margin = extent / 16.0;
    let mid = extent / 2.0;
    let radius = extent * 0.3;
    let step = 0.05;
    let mut raw: Vec<Pose> = Vec::new();
    match class {
        ManeuverClass::Straight => {
            let x = mid;
            let mut y = margin;
            while y <= extent - margin {
                raw.push(Pose::new(x, y));
                y += step;
            }
        }
        ManeuverClass::LeftTurn | ManeuverClass::RightTurn => {
            let left = matches!(class, ManeuverClass::LeftTurn);
            let cx = if left { mid + extent / 8.0 } else { mid - extent / 8.0 };
            let turn_y = mid;
            // entry leg, heading +y
            let mut y = margin;
            while y < turn_y {
                raw.push(Pose::new(cx, y));
                y += step;
            }
            // quarter arc
            let center = if left {
                Pose::new(cx - radius, turn_y)
            } else {
                Pose::new(cx + radius, turn_y)
            };
            let n_arc = (std::f64::consts::FRAC_PI_2 * radius / step).ceil() as usize;
            for k in 0..=n_arc {
                let th = std::f64::consts::FRAC_PI_2 * k as f64 / n_arc as f64;
                let p = if left {
                    Pose::new(center.x + radius * th.cos(), center.y + radius * th.sin())
                } else {
                    Pose::new(center.x - radius * th.cos(), center.y + radius * th.sin())
                };
                raw.push(p);
            }
            // exit leg, heading -x (left) or +x (right)
            let exit_y = turn_y + radius;
            let mut x = if left { cx - radius } else { cx + radius };
            loop {
                let done = if left { x < margin } else { x > extent - margin };
                if done {
                    break;
                }
                raw.push(Pose::new(x, exit_y));
                x += if left { -step } else { step };
            }
        }
        ManeuverClass::LaneChange => {
            let shift = extent / 16.0;
            let (x1, x2) = (mid - shift, mid + shift);
            let (y1, y2) = (mid - extent / 8.0, mid + extent / 8.0);
            let mut y = margin;
            while y <= extent - margin {
                let u = ((y - y1) / (y2 - y1)).clamp(0.0, 1.0);
                let s = u * u * (3.0 - 2.0 * u); // smoothstep
                raw.push(Pose::new(x1 + (x2 - x1) * s, y));
                y += step;
            }
        }
    }
    let mut cum_len = Vec::with_capacity(raw.len());
    let mut acc = 0.0;
    cum_len.push(0.0);
    for w in raw.windows(2) {
        acc += w[0].dist(&w[1]);
        cum_len.push(acc);
    }
    LanePath {
        points: raw,
        cum_len,
    }
}

/// Deterministic scene list for a config and seed: `per_class` scenes for
/// each of the four maneuver classes, in class order.
pub fn synth_scenes(cfg: &SynthConfig, seed: u64) -> Result<Vec<Scene>, SceneError> {
    let extent = cfg.grid as f64 * cfg.resolution;
    let horizon = (PAST_LEN + FUTURE_LEN) as f64 * TIME_STRIDE;
    let travel_max = cfg.speed_range.1 * horizon;
    let min_path = ALL_CLASSES
        .iter()
        .map(|&c| build_path(c, extent).total_len())
        .fold(f64::INFINITY, f64::min);
    if travel_max + 1.0 > min_path {
        return Err(SceneError::Infeasible(format!(
            "max travel {travel_max:.1} m (+1 m slack) exceeds shortest lane path {min_path:.1} m; \
             lower the speed range or enlarge the grid"
        )));
    }
    if cfg.agents_range.0 < 1 || cfg.agents_range.0 > cfg.agents_range.1 {
        return Err(SceneError::Infeasible(format!(
            "bad agents range {:?}",
            cfg.agents_range
        )));
    }

    let mut scenes = Vec::with_capacity(cfg.per_class * ALL_CLASSES.len());
    for &class in &ALL_CLASSES {
        for i in 0..cfg.per_class {
            let label = format!("synth/{class:?}/{i}");
            let mut rng = substream(seed, &label);
            scenes.push(build_scene(cfg, class, extent, &mut rng)?);
        }
    }
    Ok(scenes)
}

fn build_scene(
    cfg: &SynthConfig,
    class: ManeuverClass,
    extent: f64,
    rng: &mut impl Rng,
) -> Result<Scene, SceneError> {
    let path = build_path(class, extent);
    let frame = GridFrame {
        origin: Pose::new(0.0, 0.0),
        resolution: cfg.resolution,
    };
    let n = cfg.grid;

    let mut drivable = vec![false; n * n];
    let mut marking = vec![false; n * n];
    stamp_corridor(&path, &frame, n, cfg.half_width, &mut drivable);
    stamp_corridor(&path, &frame, n, 0.2_f64.max(cfg.resolution * 0.4), &mut marking);
    let mask = DrivableMask::new(n, n, drivable)?;

    // jittered points stay this close to the lane center, which keeps the
    // containing cell's center within half_width of the path
    let clamp_r = cfg.half_width - (cfg.resolution * std::f64::consts::SQRT_2 / 2.0 + 0.1);
    if clamp_r <= 0.0 {
        return Err(SceneError::Infeasible(
            "half_width too small for the grid resolution".into(),
        ));
    }
    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| SceneError::Infeasible(format!("bad noise sigma: {e}")))?;

    let n_agents = rng.gen_range(cfg.agents_range.0..=cfg.agents_range.1);
    let steps = PAST_LEN + FUTURE_LEN;
    let mut tracks = Vec::with_capacity(n_agents);
    for agent_id in 0..n_agents {
        let speed = rng.gen_range(cfg.speed_range.0..cfg.speed_range.1);
        let travel = speed * TIME_STRIDE * (steps - 1) as f64;
        let s0 = rng.gen_range(0.5..(path.total_len() - travel - 0.5));
        let mut pts = Vec::with_capacity(steps);
        for k in 0..steps {
            let ideal = path.at(s0 + speed * TIME_STRIDE * k as f64);
            let mut p = Pose::new(ideal.x + noise.sample(rng), ideal.y + noise.sample(rng));
            let near = path.nearest(&p);
            let d = p.dist(&near);
            if d > clamp_r {
                let f = clamp_r / d;
                p = Pose::new(near.x + (p.x - near.x) * f, near.y + (p.y - near.y) * f);
            }
            pts.push(p);
        }
        tracks.push(AgentTrack {
            agent_id: agent_id as u32,
            past: pts[..PAST_LEN].to_vec(),
            future: pts[PAST_LEN..].to_vec(),
        });
    }

    // channels: drivable intensity, agent occupancy, lane marking
    let mut raster_data = vec![0.0f32; n * n * 3];
    for r in 0..n {
        for c in 0..n {
            let idx = (r * n + c) * 3;
            if mask.at(r, c) {
                raster_data[idx] = 1.0;
            }
            if marking[r * n + c] {
                raster_data[idx + 2] = 1.0;
            }
        }
    }
    for track in &tracks {
        let p = track.last_observed();
        let (pr, pc) = frame.cell_of(&p);
        let sigma_px = 1.5;
        for dr in -4i64..=4 {
            for dc in -4i64..=4 {
                let (r, c) = (pr + dr, pc + dc);
                if r < 0 || c < 0 || r >= n as i64 || c >= n as i64 {
                    continue;
                }
                let center = frame.cell_center(r as usize, c as usize);
                let d_px = p.dist(&center) / cfg.resolution;
                let v = (-d_px * d_px / (2.0 * sigma_px * sigma_px)).exp() as f32;
                let slot = &mut raster_data[((r as usize) * n + c as usize) * 3 + 1];
                *slot = slot.max(v);
            }
        }
    }
    let raster = BevRaster::new(n, n, 3, frame, raster_data)?;
    let prior = PriorGrid::build(&mask, PRIOR_FLOOR)?;
    let scene = Scene {
        raster,
        mask,
        prior,
        tracks,
    };
    scene.validate()?;
    Ok(scene)
}

fn stamp_corridor(
    path: &LanePath,
    frame: &GridFrame,
    n: usize,
    radius: f64,
    out: &mut [bool],
) {
    let r_cells = (radius / frame.resolution).ceil() as i64 + 1;
    for p in &path.points {
        let (pr, pc) = frame.cell_of(p);
        for dr in -r_cells..=r_cells {
            for dc in -r_cells..=r_cells {
                let (r, c) = (pr + dr, pc + dc);
                if r < 0 || c < 0 || r >= n as i64 || c >= n as i64 {
                    continue;
                }
                let idx = (r as usize) * n + c as usize;
                if out[idx] {
                    continue;
                }
                if frame.cell_center(r as usize, c as usize).dist(p) <= radius {
                    out[idx] = true;
                }
            }
        }
    }
}
