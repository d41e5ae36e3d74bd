//! Thirteen-layer fully convolutional U-Net block: a 1x1 input projection,
//! six encoder convolutions (stride 2 on the 2nd and 4th) and six decoder
//! convolutions with bilinear upsampling and skip concatenation.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::init::{gaussian, ones, zeros};
use crate::autodiff::{running_moments, BnMode, Graph, ParamStore, Scalar, Var};
use crate::error::{shape_err, Result};

/// One 3x3 conv + batch norm + ReLU layer of the block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

/// The twelve 3x3 layers in execution order (the 1x1 projection excluded).
pub fn conv_layers(widths: &[usize; 6]) -> Vec<ConvLayer> {
    let w = widths;
    let l = |name, i, o, s| ConvLayer {
        name,
        in_channels: i,
        out_channels: o,
        stride: s,
    };
    vec![
        l("enc1", w[0], w[0], 1),
        l("enc2", w[0], w[1], 2),
        l("enc3", w[1], w[2], 1),
        l("enc4", w[2], w[3], 2),
        l("enc5", w[3], w[4], 1),
        l("enc6", w[4], w[5], 1),
        l("dec1", w[5], w[4], 1),
        l("dec2", w[4], w[3], 1),
        // upsample, concat enc3
        l("dec3", w[3] + w[2], w[2], 1),
        l("dec4", w[2], w[1], 1),
        // upsample, concat enc1
        l("dec5", w[1] + w[0], w[0], 1),
        l("dec6", w[0], w[0], 1),
    ]
}

/// Channels entering the block of `stage` (1-based).
pub fn block_input_channels(cfg: &ModelConfig, stage: usize) -> usize {
    if stage == 1 {
        cfg.in_channels
    } else {
        cfg.fusion_channels()
    }
}

pub(crate) fn register<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    stage: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let p = format!("stage{stage}.unet");
    let cin = block_input_channels(cfg, stage);
    let c0 = cfg.widths[0];
    store.insert(&format!("{p}.in.weight"), gaussian(&[c0, cin, 1, 1], cin, 1.0, rng))?;
    store.insert(&format!("{p}.in.bias"), zeros(&[c0]))?;
    for layer in conv_layers(&cfg.widths) {
        let (i, o) = (layer.in_channels, layer.out_channels);
        let q = format!("{p}.{}", layer.name);
        store.insert(&format!("{q}.conv.weight"), gaussian(&[o, i, 3, 3], i * 9, 2.0, rng))?;
        store.insert(&format!("{q}.conv.bias"), zeros(&[o]))?;
        store.insert(&format!("{q}.bn.gamma"), ones(&[o]))?;
        store.insert(&format!("{q}.bn.beta"), zeros(&[o]))?;
        store.insert_buffer(&format!("{q}.bn.running"), running_moments(o))?;
    }
    Ok(())
}

fn conv_bn_relu<T: Scalar>(
    g: &mut Graph<T>,
    store: &mut ParamStore<T>,
    prefix: &str,
    x: Var,
    stride: usize,
    mode: BnMode,
) -> Result<Var> {
    let w = g.param_by_name(store, &format!("{prefix}.conv.weight"))?;
    let b = g.param_by_name(store, &format!("{prefix}.conv.bias"))?;
    let y = g.conv2d(x, w, b, stride, 1)?;
    let gamma = g.param_by_name(store, &format!("{prefix}.bn.gamma"))?;
    let beta = g.param_by_name(store, &format!("{prefix}.bn.beta"))?;
    let y = g.batch_norm(y, gamma, beta, store.buffer_mut(&format!("{prefix}.bn.running"))?, mode)?;
    Ok(g.relu(y))
}

/// Stage embedding `H_i`: `N x C x Y x X` at the input resolution.
pub fn unet_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    stage: usize,
    input: Var,
    mode: BnMode,
) -> Result<Var> {
    let shape = g.shape(input).to_vec();
    let cin = block_input_channels(cfg, stage);
    if shape.len() != 4 || shape[1] != cin || shape[2] != cfg.image_size || shape[3] != cfg.image_size {
        return shape_err(
            "unet_block",
            format!(
                "stage {stage} expects N x {cin} x {s} x {s}, got {shape:?}",
                s = cfg.image_size
            ),
        );
    }
    let p = format!("stage{stage}.unet");
    let w = g.param_by_name(store, &format!("{p}.in.weight"))?;
    let b = g.param_by_name(store, &format!("{p}.in.bias"))?;
    let x = g.conv1x1(input, w, b)?;

    let layers = conv_layers(&cfg.widths);
    let run = |g: &mut Graph<T>, store: &mut ParamStore<T>, idx: usize, x: Var| {
        let l = &layers[idx];
        conv_bn_relu(g, store, &format!("{p}.{}", l.name), x, l.stride, mode)
    };
    let e1 = run(g, store, 0, x)?;
    let e2 = run(g, store, 1, e1)?;
    let e3 = run(g, store, 2, e2)?;
    let e4 = run(g, store, 3, e3)?;
    let e5 = run(g, store, 4, e4)?;
    let e6 = run(g, store, 5, e5)?;
    let d1 = run(g, store, 6, e6)?;
    let d2 = run(g, store, 7, d1)?;
    let u2 = g.bilinear_upsample2x(d2)?;
    let c3 = g.concat_channels(&[u2, e3])?;
    let d3 = run(g, store, 8, c3)?;
    let d4 = run(g, store, 9, d3)?;
    let u4 = g.bilinear_upsample2x(d4)?;
    let c5 = g.concat_channels(&[u4, e1])?;
    let d5 = run(g, store, 10, c5)?;
    run(g, store, 11, d5)
}
