//! Per-stage landmark and pose errors of a model on a dataset.

use std::fmt::Write as _;

use crate::architecture::{AcdcModel, POSE_SCALE_DEG};
use crate::autodiff::{Scalar, Tensor};
use crate::data::{Dataset, FaceTemplate, PoseAngles, Sample};
use crate::error::{Error, Result};
use crate::metrics::{self, nme_bbox, nme_interocular, PoseMae, SubsetRow};
use crate::training::Batch;

/// Subset tags by absolute ground-truth yaw: `[lo, hi)` in degrees.
pub const YAW_SUBSETS: [(&str, f64, f64); 3] = [
    ("yaw<20", 0.0, 20.0),
    ("yaw20-40", 20.0, 40.0),
    ("yaw>40", 40.0, f64::INFINITY),
];

pub const LARGE_YAW: &str = "yaw>40";

pub fn yaw_subset(yaw: f64) -> &'static str {
    let a = yaw.abs();
    YAW_SUBSETS
        .iter()
        .find(|(_, lo, hi)| a >= *lo && a < *hi)
        .map_or(LARGE_YAW, |s| s.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    Interocular,
    BoundingBox,
}

impl Normalization {
    pub fn label(self) -> &'static str {
        match self {
            Normalization::Interocular => "interocular",
            Normalization::BoundingBox => "bbox",
        }
    }
}

/// Per-sample errors of one markup at one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkupErrors {
    pub markup: String,
    /// Absent when the markup has no eye-corner pair.
    pub interocular: Option<Vec<f64>>,
    pub bbox: Vec<f64>,
}

impl MarkupErrors {
    /// Inter-ocular errors where defined, bounding-box errors otherwise.
    pub fn primary(&self) -> (Normalization, &[f64]) {
        match &self.interocular {
            Some(v) => (Normalization::Interocular, v),
            None => (Normalization::BoundingBox, &self.bbox),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `[stage][markup]`, annotated markups only, in chain order.
    pub errors: Vec<Vec<MarkupErrors>>,
    /// `[stage][sample]` predicted pose in degrees.
    pub poses: Vec<Vec<PoseAngles>>,
    /// Ground-truth pose per sample, when the dataset has it.
    pub truth: Option<Vec<PoseAngles>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl Evaluation {
    pub fn stages(&self) -> usize {
        self.errors.len()
    }

    fn markup(&self, stage: usize, markup: &str) -> Result<&MarkupErrors> {
        self.errors
            .get(stage)
            .and_then(|s| s.iter().find(|m| m.markup == markup))
            .ok_or_else(|| Error::InvalidArgument(format!("no errors for markup `{markup}` at stage index {stage}")))
    }

    /// Mean primary NME of `markup` at 0-based `stage`.
    pub fn nme(&self, stage: usize, markup: &str) -> Result<f64> {
        Ok(mean(self.markup(stage, markup)?.primary().1))
    }

    /// Mean primary NME over samples whose yaw falls in `subset`.
    pub fn subset_nme(&self, stage: usize, markup: &str, subset: &str) -> Result<Option<f64>> {
        let truth = self
            .truth
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("subsets need ground-truth pose".into()))?;
        let errs: Vec<f64> = self
            .markup(stage, markup)?
            .primary()
            .1
            .iter()
            .zip(truth)
            .filter(|(_, p)| yaw_subset(p.yaw) == subset)
            .map(|(e, _)| *e)
            .collect();
        Ok((!errs.is_empty()).then(|| mean(&errs)))
    }

    pub fn pose_mae(&self, stage: usize) -> Result<Option<PoseMae>> {
        match &self.truth {
            Some(t) => metrics::pose_mae(&self.poses[stage], t).map(Some),
            None => Ok(None),
        }
    }

    /// `stage,markup,normalization,subset,count,nme,auc01,fr01` rows: one per
    /// stage for every markup and normalization, then the yaw subsets.
    pub fn report_csv(&self) -> Result<String> {
        let mut s = String::from("stage,markup,normalization,");
        s.push_str(metrics::REPORT_HEADER);
        s.push('\n');
        let tags: Vec<&str> = YAW_SUBSETS.iter().map(|t| t.0).collect();
        for (i, stage) in self.errors.iter().enumerate() {
            for m in stage {
                let mut sets = vec![(Normalization::BoundingBox, &m.bbox)];
                if let Some(io) = &m.interocular {
                    sets.insert(0, (Normalization::Interocular, io));
                }
                for (norm, errs) in sets {
                    let mut rows = vec![SubsetRow::summarize("all", errs)?];
                    if let Some(truth) = &self.truth {
                        let recs: Vec<metrics::ErrorRecord> = errs
                            .iter()
                            .zip(truth)
                            .map(|(e, p)| metrics::ErrorRecord {
                                nme: *e,
                                tag: yaw_subset(p.yaw).to_string(),
                            })
                            .collect();
                        rows.extend(metrics::subset_report(&recs, &tags)?);
                    }
                    for r in rows {
                        writeln!(s, "{},{},{},{}", i + 1, m.markup, norm.label(), r.csv_row()).expect("string write");
                    }
                }
            }
        }
        Ok(s)
    }

    /// `stage,yaw,pitch,roll,avg`, empty without ground-truth pose.
    pub fn pose_csv(&self) -> Result<String> {
        let mut s = format!("stage,{}\n", metrics::POSE_HEADER);
        for i in 0..self.stages() {
            if let Some(m) = self.pose_mae(i)? {
                writeln!(s, "{},{}", i + 1, m.csv_row()).expect("string write");
            }
        }
        Ok(s)
    }
}

/// Inference-mode predictions for every sample, in order.
pub fn evaluate<T: Scalar>(model: &mut AcdcModel<T>, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if data.samples.is_empty() || batch_size == 0 {
        return Err(Error::InvalidArgument("evaluation needs samples and a positive batch size".into()));
    }
    let chain = model.chain().clone();
    let template = FaceTemplate::new(&chain)?;
    let markups: Vec<(usize, String)> = chain
        .all()
        .enumerate()
        .filter(|(_, m)| data.spec.markups.contains(&m.name))
        .map(|(k, m)| (k, m.name.clone()))
        .collect();
    let stages = model.config().stages;
    let mut errors: Vec<Vec<MarkupErrors>> = (0..stages)
        .map(|_| {
            markups
                .iter()
                .map(|(_, name)| MarkupErrors {
                    markup: name.clone(),
                    interocular: template.map(name).and_then(|m| m.interocular).map(|_| Vec::new()),
                    bbox: Vec::new(),
                })
                .collect()
        })
        .collect();
    let mut poses = vec![Vec::with_capacity(data.samples.len()); stages];
    for chunk in data.samples.chunks(batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch: Batch<T> = Batch::from_samples(&refs, &chain)?;
        let pred = model.predict(&batch.images)?;
        for (s, stage_errs) in errors.iter_mut().enumerate() {
            for ((k, name), slot) in markups.iter().zip(stage_errs.iter_mut()) {
                let corners = template.map(name).and_then(|m| m.interocular);
                let lm = &pred.landmarks[s][*k];
                for (n, sample) in chunk.iter().enumerate() {
                    let gt = &sample.landmarks[name].points;
                    let p = points_of(lm, n);
                    if let (Some(c), Some(io)) = (corners, slot.interocular.as_mut()) {
                        io.push(nme_interocular(&p, gt, c)?);
                    }
                    slot.bbox.push(nme_bbox(&p, gt, None)?);
                }
            }
            let pt = &pred.pose[s];
            for n in 0..chunk.len() {
                let v = &pt.data()[n * 3..n * 3 + 3];
                poses[s].push(PoseAngles::from_network_order(
                    [v[0], v[1], v[2]].map(|x| x.to_f64_lossy() * POSE_SCALE_DEG),
                ));
            }
        }
    }
    let truth = data.spec.pose.then(|| data.samples.iter().map(|s| s.pose.expect("pose dataset")).collect());
    Ok(Evaluation { errors, poses, truth })
}

fn points_of<T: Scalar>(lm: &Tensor<T>, n: usize) -> Vec<[f64; 2]> {
    let l = lm.shape()[1];
    lm.data()[n * l * 2..(n + 1) * l * 2]
        .chunks(2)
        .map(|c| [c[0].to_f64_lossy(), c[1].to_f64_lossy()])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::ModelConfig;
    use crate::data::{generate, DatasetSpec, GeneratorConfig};

    #[test]
    fn yaw_subsets_partition_the_range() {
        assert_eq!(yaw_subset(0.0), "yaw<20");
        assert_eq!(yaw_subset(-19.99), "yaw<20");
        assert_eq!(yaw_subset(20.0), "yaw20-40");
        assert_eq!(yaw_subset(-40.0), "yaw>40");
        assert_eq!(yaw_subset(89.0), "yaw>40");
    }

    #[test]
    fn report_has_one_row_per_stage_markup_and_normalization() {
        let mut spec = DatasetSpec::full("e", 6, 3, GeneratorConfig::new(32, vec![12, 8, 3], 6)).unwrap();
        spec.markups = vec!["12".into(), "3".into()];
        let data = generate(&spec).unwrap();
        let mut model = AcdcModel::<f32>::new(ModelConfig::toy(), 1).unwrap();
        let imgs: Vec<&Sample> = data.samples.iter().collect();
        let b: Batch<f32> = Batch::from_samples(&imgs, model.chain()).unwrap();
        assert!(evaluate(&mut model, &data, 4).is_err(), "moments are not calibrated");
        model.calibrate([&b.images]).unwrap();
        let ev = evaluate(&mut model, &data, 4).unwrap();
        assert_eq!(ev.stages(), 4);
        assert_eq!(ev.poses[0].len(), 6);
        assert!(ev.nme(3, "12").unwrap() > 0.0);
        assert!(ev.nme(0, "8").is_err());
        let csv = ev.report_csv().unwrap();
        let all = csv.lines().filter(|l| l.split(',').nth(3) == Some("all")).count();
        assert_eq!(all, 4 * 2 * 2);
        let subset_rows = csv.lines().skip(1).count() - all;
        assert!(subset_rows >= 4 * 2 * 2);
        assert_eq!(ev.pose_csv().unwrap().lines().count(), 5);
        let mae = ev.pose_mae(3).unwrap().unwrap();
        assert!(mae.avg >= 0.0);
    }
}
