use crate::architecture::AcdcModel;
use crate::autodiff::{BnMode, Graph, Scalar};
use crate::data::{mix64, Dataset, Sample};
use crate::error::{Error, Result};

use super::adam::Adam;
use super::batch::{Batch, BatchSampler};
use super::config::{lr_schedule, TrainConfig};
use super::loss::total_loss;

pub const LOG_HEADER: &str = "update,dataset,loss_total,loss_landmarks,loss_pose,lr";

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRecord {
    /// 1-based count of completed updates.
    pub update: usize,
    pub dataset: String,
    pub loss_total: f64,
    pub loss_landmarks: f64,
    pub loss_pose: f64,
    pub lr: f64,
}

impl UpdateRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.update, self.dataset, self.loss_total, self.loss_landmarks, self.loss_pose, self.lr
        )
    }
}

/// Round-robin multi-dataset training of one model.
pub struct Trainer<'a, T: Scalar> {
    model: AcdcModel<T>,
    datasets: &'a [Dataset],
    config: TrainConfig,
    optimizer: Adam<T>,
    samplers: Vec<BatchSampler>,
    update: usize,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(model: AcdcModel<T>, datasets: &'a [Dataset], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mcfg = model.config();
        if config.lambdas.len() != mcfg.stages {
            return Err(Error::InvalidArgument(format!(
                "{} supervision weights for a {}-stage model",
                config.lambdas.len(),
                mcfg.stages
            )));
        }
        if datasets.is_empty() {
            return Err(Error::InvalidArgument("no training dataset".into()));
        }
        let mut samplers = Vec::with_capacity(datasets.len());
        for (i, d) in datasets.iter().enumerate() {
            let name = &d.spec.name;
            if d.spec.generator.image_size != mcfg.image_size {
                return Err(Error::InvalidArgument(format!(
                    "dataset `{name}` has {}px images, model expects {}px",
                    d.spec.generator.image_size, mcfg.image_size
                )));
            }
            for m in &d.spec.markups {
                let Some(k) = model.chain().index_of(m) else {
                    return Err(Error::InvalidArgument(format!(
                        "dataset `{name}` annotates markup `{m}` the model does not predict"
                    )));
                };
                let want = model.chain().get(k).count;
                let have = d.spec.generator.chain()?.get(k).count;
                if want != have {
                    return Err(Error::InvalidArgument(format!(
                        "markup `{m}` has {have} points in dataset `{name}`, model predicts {want}"
                    )));
                }
            }
            if d.spec.markups.is_empty() && !mcfg.variant.supervises_pose() {
                return Err(Error::InvalidArgument(format!(
                    "dataset `{name}` only has pose, which variant {} does not supervise",
                    mcfg.variant.label()
                )));
            }
            let seed = mix64(config.seed ^ mix64(i as u64 + 1));
            samplers.push(
                BatchSampler::new(d.samples.len(), config.batch_size, seed)
                    .map_err(|e| Error::InvalidArgument(format!("dataset `{name}`: {e}")))?,
            );
        }
        let optimizer = Adam::new(model.store(), config.beta1, config.beta2);
        Ok(Trainer {
            model,
            datasets,
            config,
            optimizer,
            samplers,
            update: 0,
        })
    }

    pub fn model(&self) -> &AcdcModel<T> {
        &self.model
    }

    pub fn into_model(self) -> AcdcModel<T> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn optimizer(&self) -> &Adam<T> {
        &self.optimizer
    }

    pub fn updates_done(&self) -> usize {
        self.update
    }

    pub fn finished(&self) -> bool {
        self.update >= self.config.updates
    }

    /// Index of the dataset the next update draws from.
    pub fn next_dataset(&self) -> usize {
        self.update % self.datasets.len()
    }

    /// One forward/backward/Adam update on the next dataset in turn.
    pub fn step(&mut self) -> Result<UpdateRecord> {
        let ds = self.next_dataset();
        let data = &self.datasets[ds];
        let indices = self.samplers[ds].next_indices();
        let samples: Vec<&Sample> = indices.iter().map(|&i| &data.samples[i]).collect();
        let batch = Batch::from_samples(&samples, self.model.chain())?;

        let mut g = Graph::new();
        let x = g.constant(batch.images.clone());
        let outputs = self.model.forward(&mut g, x, BnMode::Train)?;
        let variant = self.model.config().variant;
        let terms = total_loss(
            &mut g,
            variant,
            &outputs,
            &batch,
            &self.config.lambdas,
            self.config.pose_weight,
        )?;
        let grads = g.backward(terms.total)?;
        let lr = lr_schedule(self.update, self.config.updates, self.config.learning_rate);
        self.optimizer.step(self.model.store_mut(), grads.params(), lr)?;

        let value = |v: Option<_>| v.map_or(0.0, |v| g.value(v).item().to_f64_lossy());
        self.update += 1;
        Ok(UpdateRecord {
            update: self.update,
            dataset: data.spec.name.clone(),
            loss_total: value(Some(terms.total)),
            loss_landmarks: value(terms.landmarks),
            loss_pose: value(terms.pose),
            lr,
        })
    }

    /// Run the remaining updates, calling `hook` after each one.
    pub fn run(&mut self, mut hook: impl FnMut(&UpdateRecord, &AcdcModel<T>) -> Result<()>) -> Result<()> {
        while !self.finished() {
            let rec = self.step()?;
            hook(&rec, &self.model)?;
        }
        Ok(())
    }
}
