//! Doubly-conditional fusion between cascade stages: spatial gating by the
//! fused attention mask, then channel gating by a pose-driven excitation.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::init::{gaussian, zeros};
use crate::autodiff::{Graph, ParamStore, Scalar, Var};
use crate::error::{shape_err, Result};

pub(crate) fn register<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    stage: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let f = cfg.fusion_channels();
    store.insert(&format!("stage{stage}.excite.weight"), gaussian(&[f, 3], 3, 1.0, rng))?;
    store.insert(&format!("stage{stage}.excite.bias"), zeros(&[f]))?;
    Ok(())
}

/// `[I | I*mask | H | H*mask]` along channels.
pub fn fuse_ac<T: Scalar>(g: &mut Graph<T>, image: Var, embedding: Var, mask: Var) -> Result<Var> {
    let (si, sh, sm) = (g.shape(image).to_vec(), g.shape(embedding).to_vec(), g.shape(mask).to_vec());
    if si.len() != 4 || sh.len() != 4 || sm.len() != 4 || sm[1] != 1 || si[2..] != sh[2..] || si[2..] != sm[2..] {
        return shape_err(
            "fuse_ac",
            format!("image {si:?}, embedding {sh:?}, mask {sm:?}"),
        );
    }
    let im = g.hadamard(image, mask)?;
    let hm = g.hadamard(embedding, mask)?;
    g.concat_channels(&[image, im, embedding, hm])
}

/// Excitation vector `sigmoid(W pose + b)`, `N x F`, from a normalized pose.
pub fn excitation<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, stage: usize, pose: Var) -> Result<Var> {
    let w = g.param_by_name(store, &format!("stage{stage}.excite.weight"))?;
    let b = g.param_by_name(store, &format!("stage{stage}.excite.bias"))?;
    let z = g.dense(pose, w, b)?;
    Ok(g.sigmoid(z))
}

/// Scale each channel of the fused features by its excitation value.
pub fn excite<T: Scalar>(g: &mut Graph<T>, fused: Var, excitation: Var) -> Result<Var> {
    g.hadamard(fused, excitation)
}
