//! Landmark and head-pose error metrics.

use std::fmt::Write as _;

use crate::data::PoseAngles;
use crate::error::{Error, Result};

/// Failure threshold and AUC integration limit.
pub const THRESHOLD: f64 = 0.1;

/// Sample points of the cumulative error curve used for the AUC.
pub const CED_GRID: usize = 1000;

fn mean_distance(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "NME needs equal non-empty point sets, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .sum();
    Ok(sum / gt.len() as f64)
}

/// Mean point error divided by the ground-truth distance between the two
/// outer eye corners at `corners`.
pub fn nme_interocular(pred: &[[f64; 2]], gt: &[[f64; 2]], corners: (usize, usize)) -> Result<f64> {
    let (a, b) = corners;
    if a == b || a >= gt.len() || b >= gt.len() {
        return Err(Error::InvalidArgument(format!(
            "invalid eye-corner indices {corners:?} for {} points",
            gt.len()
        )));
    }
    let d = (gt[a][0] - gt[b][0]).hypot(gt[a][1] - gt[b][1]);
    if d.is_nan() || d <= 0.0 {
        return Err(Error::InvalidArgument("inter-ocular distance is zero".into()));
    }
    Ok(mean_distance(pred, gt)? / d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    /// Smallest axis-aligned box containing every point.
    pub fn tight(points: &[[f64; 2]]) -> Self {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        BoundingBox {
            x: x0,
            y: y0,
            width: x1 - x0,
            height: y1 - y0,
        }
    }
}

/// Mean point error divided by `sqrt(width * height)` of `bbox`, or of the
/// tight box around `gt` when none is given.
pub fn nme_bbox(pred: &[[f64; 2]], gt: &[[f64; 2]], bbox: Option<BoundingBox>) -> Result<f64> {
    let b = bbox.unwrap_or_else(|| BoundingBox::tight(gt));
    if !(b.width > 0.0 && b.height > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "degenerate bounding box {}x{}",
            b.width, b.height
        )));
    }
    Ok(mean_distance(pred, gt)? / (b.width * b.height).sqrt())
}

/// Cumulative error distribution summary at one threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct CedSummary {
    /// Area under the CED on `[0, threshold]`, divided by the threshold.
    pub auc: f64,
    /// Fraction of errors strictly above the threshold.
    pub failure_rate: f64,
    /// `(error, fraction of samples with error <= it)` on the grid.
    pub curve: Vec<(f64, f64)>,
}

pub fn ced_auc_fr(errors: &[f64], threshold: f64) -> Result<CedSummary> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no errors to summarize".into()));
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidArgument(format!("threshold {threshold} must be positive")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let curve: Vec<(f64, f64)> = (0..CED_GRID)
        .map(|j| {
            let e = threshold * j as f64 / (CED_GRID - 1) as f64;
            let below = sorted.partition_point(|x| *x <= e);
            (e, below as f64 / n)
        })
        .collect();
    let area: f64 = curve
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    let failures = errors.iter().filter(|e| **e > threshold).count();
    Ok(CedSummary {
        auc: area / threshold,
        failure_rate: failures as f64 / n,
        curve,
    })
}

/// Per-angle mean absolute error in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseMae {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub avg: f64,
}

pub const POSE_HEADER: &str = "yaw,pitch,roll,avg";

impl PoseMae {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.yaw, self.pitch, self.roll, self.avg)
    }
}

pub fn pose_mae(preds: &[PoseAngles], gts: &[PoseAngles]) -> Result<PoseMae> {
    if preds.len() != gts.len() || gts.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "pose MAE needs equal non-empty sets, got {} and {}",
            preds.len(),
            gts.len()
        )));
    }
    let n = gts.len() as f64;
    let mut acc = [0.0; 3];
    for (p, g) in preds.iter().zip(gts) {
        acc[0] += (p.yaw - g.yaw).abs();
        acc[1] += (p.pitch - g.pitch).abs();
        acc[2] += (p.roll - g.roll).abs();
    }
    let [yaw, pitch, roll] = acc.map(|a| a / n);
    Ok(PoseMae {
        yaw,
        pitch,
        roll,
        avg: (yaw + pitch + roll) / 3.0,
    })
}

/// One sample's landmark error with its subset tag.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRecord {
    pub nme: f64,
    pub tag: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetRow {
    pub subset: String,
    pub count: usize,
    pub nme: f64,
    pub auc01: f64,
    pub fr01: f64,
}

pub const REPORT_HEADER: &str = "subset,count,nme,auc01,fr01";

impl SubsetRow {
    /// Metrics over `errors` under the label `subset`.
    pub fn summarize(subset: &str, errors: &[f64]) -> Result<Self> {
        let ced = ced_auc_fr(errors, THRESHOLD)?;
        Ok(SubsetRow {
            subset: subset.to_string(),
            count: errors.len(),
            nme: errors.iter().sum::<f64>() / errors.len() as f64,
            auc01: ced.auc,
            fr01: ced.failure_rate,
        })
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.subset, self.count, self.nme, self.auc01, self.fr01)
    }
}

/// One row per tag in `tags` order. Every record's tag must be listed;
/// tags without records produce no row.
pub fn subset_report(records: &[ErrorRecord], tags: &[&str]) -> Result<Vec<SubsetRow>> {
    if let Some(r) = records.iter().find(|r| !tags.contains(&r.tag.as_str())) {
        return Err(Error::InvalidArgument(format!("unknown subset tag `{}`", r.tag)));
    }
    let mut rows = Vec::new();
    for tag in tags {
        let errs: Vec<f64> = records.iter().filter(|r| r.tag == *tag).map(|r| r.nme).collect();
        if !errs.is_empty() {
            rows.push(SubsetRow::summarize(tag, &errs)?);
        }
    }
    Ok(rows)
}

pub fn report_csv(rows: &[SubsetRow]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        writeln!(s, "{}", r.csv_row()).expect("string write");
    }
    s
}
