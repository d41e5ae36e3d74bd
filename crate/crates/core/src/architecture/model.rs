use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::fusion::{self, excitation, excite, fuse_ac};
use super::gtn::{self, gtn_forward, MarkupHead};
use super::markup::MarkupChain;
use super::unet::{self, unet_block_forward};
use crate::autodiff::{BnMode, Graph, ParamStore, Scalar, Tensor, Var};
use crate::error::{shape_err, Result};

/// Everything one cascade stage produced, as nodes of the forward graph.
#[derive(Clone, Debug)]
pub struct StageOutput {
    /// 1-based stage index.
    pub stage: usize,
    /// `H_i`, `N x C x Y x X`.
    pub embedding: Var,
    /// One head per markup, 2d chain first then 3d.
    pub heads: Vec<MarkupHead>,
    /// `N x 3` (pitch, yaw, roll) in normalized units.
    pub pose: Var,
    /// `N x 1 x Y x X` fused attention mask.
    pub mask: Var,
    /// `N x F` excitation applied to this stage's input, AC-DC stages 2+ only.
    pub input_excitation: Option<Var>,
    /// `N x F x Y x X` fused features handed to the next stage.
    pub fused: Option<Var>,
}

impl StageOutput {
    /// `N x L x 2` landmark coordinates of markup `index`.
    pub fn landmarks(&self, index: usize) -> Var {
        self.heads[index].landmarks
    }
}

/// Plain-tensor results of an inference pass.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    /// Per stage, per markup: `N x L x 2`.
    pub landmarks: Vec<Vec<Tensor<T>>>,
    /// Per stage: `N x 3` normalized pose.
    pub pose: Vec<Tensor<T>>,
}

impl<T: Scalar> Prediction<T> {
    pub fn final_landmarks(&self, markup: usize) -> &Tensor<T> {
        &self.landmarks.last().expect("at least one stage")[markup]
    }

    pub fn final_pose(&self) -> &Tensor<T> {
        self.pose.last().expect("at least one stage")
    }
}

/// A cascade of U-Net stages sharing one geometry transfer network.
#[derive(Clone, Debug)]
pub struct AcdcModel<T: Scalar> {
    config: ModelConfig,
    chain: MarkupChain,
    store: ParamStore<T>,
}

impl<T: Scalar> AcdcModel<T> {
    /// Fresh parameters drawn from a seeded generator.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let chain = config.chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        gtn::register(&mut store, &config, &chain, &mut rng)?;
        for stage in 1..=config.stages {
            unet::register(&mut store, &config, stage, &mut rng)?;
            if stage > 1 && config.variant.uses_excitation() {
                fusion::register(&mut store, &config, stage, &mut rng)?;
            }
        }
        Ok(AcdcModel { config, chain, store })
    }

    /// Wrap an existing store; parameter names must match the config.
    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        let reference: AcdcModel<T> = AcdcModel::new(config.clone(), 0)?;
        for p in reference.store.params() {
            let t = store.by_name(&p.name)?;
            if t.shape() != p.tensor.shape() {
                return shape_err(
                    "from_store",
                    format!("`{}` is {:?}, expected {:?}", p.name, t.shape(), p.tensor.shape()),
                );
            }
        }
        let chain = config.chain()?;
        Ok(AcdcModel { config, chain, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn chain(&self) -> &MarkupChain {
        &self.chain
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn cast<U: Scalar>(&self) -> AcdcModel<U> {
        AcdcModel {
            config: self.config.clone(),
            chain: self.chain.clone(),
            store: self.store.cast(),
        }
    }

    /// Run every stage on `image` (`N x in_channels x W x W`).
    pub fn forward(&mut self, g: &mut Graph<T>, image: Var, mode: BnMode) -> Result<Vec<StageOutput>> {
        let cfg = &self.config;
        let mut outputs: Vec<StageOutput> = Vec::with_capacity(cfg.stages);
        let mut input = image;
        for stage in 1..=cfg.stages {
            let mut input_excitation = None;
            if let Some(prev) = outputs.last() {
                let fused = prev.fused.expect("non-final stage keeps its fusion output");
                input = fused;
                if cfg.variant.uses_excitation() {
                    let pose = if cfg.detach_pose { g.detach(prev.pose) } else { prev.pose };
                    let f = excitation(g, &self.store, stage, pose)?;
                    input = excite(g, fused, f)?;
                    input_excitation = Some(f);
                }
            }
            let embedding = unet_block_forward(g, &mut self.store, cfg, stage, input, mode)?;
            let gtn = gtn_forward(g, &self.store, cfg, &self.chain, embedding)?;
            let maps: Vec<Var> = gtn.heads.iter().map(|h| h.attention).collect();
            let mask = g.fused_mask(&maps)?;
            let fused = if stage < cfg.stages {
                Some(fuse_ac(g, image, embedding, mask)?)
            } else {
                None
            };
            outputs.push(StageOutput {
                stage,
                embedding,
                heads: gtn.heads,
                pose: gtn.pose,
                mask,
                input_excitation,
                fused,
            });
        }
        Ok(outputs)
    }

    /// Inference-mode forward pass returning plain tensors.
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let outs = self.forward(&mut g, x, BnMode::Infer)?;
        Ok(Prediction {
            landmarks: outs
                .iter()
                .map(|o| o.heads.iter().map(|h| g.value(h.landmarks).clone()).collect())
                .collect(),
            pose: outs.iter().map(|o| g.value(o.pose).clone()).collect(),
        })
    }

    /// Populate batch-norm running moments from training-mode passes over
    /// `batches` without touching parameters.
    pub fn calibrate<'a>(&mut self, batches: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<()> {
        for b in batches {
            let mut g = Graph::new();
            let x = g.constant(b.clone());
            self.forward(&mut g, x, BnMode::Train)?;
        }
        Ok(())
    }
}
