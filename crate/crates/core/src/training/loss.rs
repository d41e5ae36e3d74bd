use crate::architecture::{StageOutput, Variant};
use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{Error, Result};

use super::batch::Batch;

fn check_lambdas(stages: &[StageOutput], lambdas: &[f64]) -> Result<()> {
    if lambdas.len() != stages.len() {
        return Err(Error::InvalidArgument(format!(
            "{} supervision weights for {} stages",
            lambdas.len(),
            stages.len()
        )));
    }
    Ok(())
}

/// `sum_i lambda_i sum_k (1/L_k) sum_l |s - s*| / W`, averaged over the batch.
/// Markups without targets are skipped.
pub fn landmark_loss<T: Scalar>(
    g: &mut Graph<T>,
    stages: &[StageOutput],
    batch: &Batch<T>,
    lambdas: &[f64],
) -> Result<Var> {
    check_lambdas(stages, lambdas)?;
    if !batch.has_landmarks() {
        return Err(Error::InvalidArgument("batch carries no landmark annotation".into()));
    }
    let n = batch.len() as f64;
    let w = batch.width as f64;
    let targets: Vec<Option<Var>> = batch
        .landmarks
        .iter()
        .map(|t| t.as_ref().map(|t| g.constant(t.clone())))
        .collect();
    let mut terms = Vec::new();
    for (stage, &lambda) in stages.iter().zip(lambdas) {
        for (k, target) in targets.iter().enumerate() {
            let Some(target) = *target else { continue };
            let pred = stage.landmarks(k);
            let count = g.shape(pred)[1] as f64;
            let l1 = g.l1_loss(pred, target)?;
            terms.push(g.scale(l1, T::of(lambda / (count * w * n))));
        }
    }
    g.add_all(&terms)
}

/// `sum_i lambda_i |Omega_i - Omega*|` in normalized angle units, averaged
/// over the batch.
pub fn pose_loss<T: Scalar>(g: &mut Graph<T>, stages: &[StageOutput], batch: &Batch<T>, lambdas: &[f64]) -> Result<Var> {
    check_lambdas(stages, lambdas)?;
    let target = batch
        .pose
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("batch carries no pose annotation".into()))?;
    let target = g.constant(target.clone());
    let n = batch.len() as f64;
    let mut terms = Vec::with_capacity(stages.len());
    for (stage, &lambda) in stages.iter().zip(lambdas) {
        let l1 = g.l1_loss(stage.pose, target)?;
        terms.push(g.scale(l1, T::of(lambda / n)));
    }
    g.add_all(&terms)
}

/// Loss nodes of one update. Absent terms contribute nothing.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub landmarks: Option<Var>,
    pub pose: Option<Var>,
}

/// Landmark loss over the annotated markups plus `pose_weight` times the
/// pose loss when the batch has pose and the variant supervises it.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    variant: Variant,
    stages: &[StageOutput],
    batch: &Batch<T>,
    lambdas: &[f64],
    pose_weight: f64,
) -> Result<LossTerms> {
    let landmarks = if batch.has_landmarks() {
        Some(landmark_loss(g, stages, batch, lambdas)?)
    } else {
        None
    };
    let pose = if variant.supervises_pose() && batch.pose.is_some() {
        Some(pose_loss(g, stages, batch, lambdas)?)
    } else {
        None
    };
    let mut terms = Vec::with_capacity(2);
    terms.extend(landmarks);
    if let Some(p) = pose {
        terms.push(g.scale(p, T::of(pose_weight)));
    }
    if terms.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "nothing to supervise: batch has no landmarks and variant {} takes no pose",
            variant.label()
        )));
    }
    let total = g.add_all(&terms)?;
    Ok(LossTerms {
        total,
        landmarks,
        pose,
    })
}
