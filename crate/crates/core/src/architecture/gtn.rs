//! Geometry transfer network, shared by every stage of the cascade.
//!
//! Two streams read overlapping channel windows of the stage embedding.
//! The 2d stream runs a chain of 1x1 transfer layers, one per 2d markup,
//! each feeding the next; the 3d stream has a single transfer layer whose
//! soft-argmax coordinates drive a linear pose head.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::init::{gaussian, zeros};
use super::markup::MarkupChain;
use crate::autodiff::{Graph, ParamStore, Scalar, Var};
use crate::error::{shape_err, Result};

/// Per-markup GTN output: transfer-layer logits, their spatial softmax,
/// and the soft-argmax coordinates.
#[derive(Clone, Copy, Debug)]
pub struct MarkupHead {
    pub pre_attention: Var,
    pub attention: Var,
    pub landmarks: Var,
}

#[derive(Clone, Debug)]
pub struct GtnOutput {
    /// Indexed like [`MarkupChain::get`]: 2d chain then 3d.
    pub heads: Vec<MarkupHead>,
    /// `N x 3` pose in normalized units.
    pub pose: Var,
}

pub(crate) fn register<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    chain: &MarkupChain,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let s = cfg.streams();
    for (name, window) in [("stream2d", s.two_d), ("stream3d", s.three_d)] {
        let c = window.len;
        store.insert(&format!("gtn.{name}.depthwise.weight"), gaussian(&[c, 1, 3, 3], 9, 1.0, rng))?;
        store.insert(&format!("gtn.{name}.pointwise.weight"), gaussian(&[s.width, c, 1, 1], c, 1.0, rng))?;
        store.insert(&format!("gtn.{name}.pointwise.bias"), zeros(&[s.width]))?;
    }
    let mut prev = s.width;
    for (k, m) in chain.two_d().iter().enumerate() {
        store.insert(&format!("gtn.transfer2d.{k}.weight"), gaussian(&[m.count, prev, 1, 1], prev, 1.0, rng))?;
        store.insert(&format!("gtn.transfer2d.{k}.bias"), zeros(&[m.count]))?;
        prev = m.count;
    }
    let l3 = chain.three_d().count;
    store.insert("gtn.transfer3d.weight", gaussian(&[l3, s.width, 1, 1], s.width, 1.0, rng))?;
    store.insert("gtn.transfer3d.bias", zeros(&[l3]))?;
    store.insert("gtn.pose.weight", gaussian(&[3, 2 * l3], 2 * l3, 1.0, rng))?;
    store.insert("gtn.pose.bias", zeros(&[3]))?;
    Ok(())
}

fn stream<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let dk = g.param_by_name(store, &format!("gtn.{name}.depthwise.weight"))?;
    let pk = g.param_by_name(store, &format!("gtn.{name}.pointwise.weight"))?;
    let pb = g.param_by_name(store, &format!("gtn.{name}.pointwise.bias"))?;
    g.depthwise_separable_conv(x, dk, pk, pb)
}

fn head<T: Scalar>(g: &mut Graph<T>, logits: Var) -> Result<MarkupHead> {
    let attention = g.spatial_softmax(logits)?;
    let landmarks = g.soft_argmax(attention)?;
    Ok(MarkupHead {
        pre_attention: logits,
        attention,
        landmarks,
    })
}

/// Run the shared GTN on a stage embedding `N x C x Y x X`.
pub fn gtn_forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    chain: &MarkupChain,
    embedding: Var,
) -> Result<GtnOutput> {
    let shape = g.shape(embedding).to_vec();
    let c = cfg.embedding_channels();
    if shape.len() != 4 || shape[1] != c {
        return shape_err("gtn_forward", format!("expected N x {c} x Y x X, got {shape:?}"));
    }
    let s = cfg.streams();
    let x2 = g.slice_channels(embedding, s.two_d.start, s.two_d.len)?;
    let x3 = g.slice_channels(embedding, s.three_d.start, s.three_d.len)?;
    let mut feat = stream(g, store, "stream2d", x2)?;
    let mut heads = Vec::with_capacity(chain.len());
    for k in 0..chain.depth() {
        let w = g.param_by_name(store, &format!("gtn.transfer2d.{k}.weight"))?;
        let b = g.param_by_name(store, &format!("gtn.transfer2d.{k}.bias"))?;
        feat = g.conv1x1(feat, w, b)?;
        heads.push(head(g, feat)?);
    }
    let f3 = stream(g, store, "stream3d", x3)?;
    let w = g.param_by_name(store, "gtn.transfer3d.weight")?;
    let b = g.param_by_name(store, "gtn.transfer3d.bias")?;
    let logits3 = g.conv1x1(f3, w, b)?;
    let h3 = head(g, logits3)?;
    heads.push(h3);

    let n = shape[0];
    let l3 = chain.three_d().count;
    let flat = g.reshape(h3.landmarks, &[n, 2 * l3])?;
    let size = T::of(cfg.image_size as f64);
    let centered = g.affine(flat, T::one() / size, T::of(-0.5));
    let pw = g.param_by_name(store, "gtn.pose.weight")?;
    let pb = g.param_by_name(store, "gtn.pose.bias")?;
    let pose = g.dense(centered, pw, pb)?;
    Ok(GtnOutput { heads, pose })
}
