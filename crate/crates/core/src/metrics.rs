//! Evaluation metrics over k sampled futures per agent: minADE, minFDE,
//! the diversity ratio rF, drivable-area occupancy (DAO) and compliance
//! (DAC).
//!
//! None of these formulas are standardized in one place; the definitions
//! here follow the common motion-forecasting conventions: minADE/minFDE
//! as the best-of-k displacement errors, rF as avgFDE/minFDE (so any
//! deterministic predictor scores exactly 1.0), DAO as the fraction of
//! distinct drivable cells touched by any predicted point scaled by 10⁴,
//! and DAC as the fraction of samples that never leave the drivable
//! area. Points outside the grid count as non-drivable for DAC and are
//! ignored for DAO.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{DrivableMask, GridFrame, Pose};

/// DAO scale factor; keeps synthetic values in a readable range.
pub const DAO_SCALE: f64 = 1e4;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no samples given")]
    NoSamples,
    #[error("sample {index} has {got} points, ground truth has {expected}")]
    LengthMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("mask has no drivable cells")]
    NoDrivableCells,
}

/// The five per-agent metrics plus the k they were computed over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub min_ade: f64,
    pub min_fde: f64,
    pub rf: f64,
    pub dao: f64,
    pub dac: f64,
    pub k: usize,
}

impl MetricsReport {
    /// Field-wise mean over a non-empty set of reports.
    pub fn aggregate(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(MetricsReport {
            min_ade: reports.iter().map(|r| r.min_ade).sum::<f64>() / n,
            min_fde: reports.iter().map(|r| r.min_fde).sum::<f64>() / n,
            rf: reports.iter().map(|r| r.rf).sum::<f64>() / n,
            dao: reports.iter().map(|r| r.dao).sum::<f64>() / n,
            dac: reports.iter().map(|r| r.dac).sum::<f64>() / n,
            k: reports[0].k,
        })
    }
}

fn check_samples(samples: &[Vec<Pose>], gt: &[Pose]) -> Result<(), MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    for (index, s) in samples.iter().enumerate() {
        if s.len() != gt.len() {
            return Err(MetricsError::LengthMismatch {
                index,
                got: s.len(),
                expected: gt.len(),
            });
        }
    }
    Ok(())
}

/// Min over samples of the mean per-timestep displacement to gt.
pub fn min_ade(samples: &[Vec<Pose>], gt: &[Pose]) -> Result<f64, MetricsError> {
    check_samples(samples, gt)?;
    Ok(samples
        .iter()
        .map(|s| {
            s.iter().zip(gt).map(|(a, b)| a.dist(b)).sum::<f64>() / gt.len() as f64
        })
        .fold(f64::INFINITY, f64::min))
}

/// Min over samples of the final-timestep displacement to gt.
pub fn min_fde(samples: &[Vec<Pose>], gt: &[Pose]) -> Result<f64, MetricsError> {
    check_samples(samples, gt)?;
    let last = gt.len() - 1;
    Ok(samples
        .iter()
        .map(|s| s[last].dist(&gt[last]))
        .fold(f64::INFINITY, f64::min))
}

/// avgFDE / minFDE; defined as 1 when minFDE is zero (all-perfect or
/// deterministic-and-perfect sample sets).
pub fn rf(samples: &[Vec<Pose>], gt: &[Pose]) -> Result<f64, MetricsError> {
    check_samples(samples, gt)?;
    let last = gt.len() - 1;
    let fdes: Vec<f64> = samples.iter().map(|s| s[last].dist(&gt[last])).collect();
    let min = fdes.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        return Ok(1.0);
    }
    let avg = fdes.iter().sum::<f64>() / fdes.len() as f64;
    Ok(avg / min)
}

/// (distinct drivable cells occupied by any predicted point) / (drivable
/// cells), × 10⁴. Points off the grid are ignored.
pub fn dao(
    samples: &[Vec<Pose>],
    mask: &DrivableMask,
    frame: &GridFrame,
) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let drivable = mask.drivable_count();
    if drivable == 0 {
        return Err(MetricsError::NoDrivableCells);
    }
    let mut occupied: BTreeSet<(i64, i64)> = BTreeSet::new();
    for s in samples {
        for p in s {
            let (r, c) = frame.cell_of(p);
            if r >= 0
                && c >= 0
                && (r as usize) < mask.height
                && (c as usize) < mask.width
                && mask.at(r as usize, c as usize)
            {
                occupied.insert((r, c));
            }
        }
    }
    Ok(occupied.len() as f64 / drivable as f64 * DAO_SCALE)
}

/// Fraction of samples whose every point lies on a drivable cell; points
/// off the grid count as non-drivable.
pub fn dac(
    samples: &[Vec<Pose>],
    mask: &DrivableMask,
    frame: &GridFrame,
) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let ok = samples
        .iter()
        .filter(|s| s.iter().all(|p| mask.contains(frame, p)))
        .count();
    Ok(ok as f64 / samples.len() as f64)
}

/// All five metrics for one agent.
pub fn report(
    samples: &[Vec<Pose>],
    gt: &[Pose],
    mask: &DrivableMask,
    frame: &GridFrame,
) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        min_ade: min_ade(samples, gt)?,
        min_fde: min_fde(samples, gt)?,
        rf: rf(samples, gt)?,
        dao: dao(samples, mask, frame)?,
        dac: dac(samples, mask, frame)?,
        k: samples.len(),
    })
}
