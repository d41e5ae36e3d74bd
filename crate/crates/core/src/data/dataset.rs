use serde::{Deserialize, Serialize};

use super::sample::{generate_sample, GeneratorConfig, Sample};
use super::template::FaceTemplate;
use crate::error::{Error, Result};

/// Environment variable capping generation threads.
pub const THREADS_ENV: &str = "ACDC_THREADS";

/// A reproducible synthetic dataset and the annotations it exposes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub size: usize,
    pub seed: u64,
    /// Markup names kept in the samples (`"24"`, `"5"`, `"3d"`, ...).
    pub markups: Vec<String>,
    pub pose: bool,
    pub generator: GeneratorConfig,
}

impl DatasetSpec {
    /// Every markup of the generator's chain plus pose.
    pub fn full(name: &str, size: usize, seed: u64, generator: GeneratorConfig) -> Result<Self> {
        let chain = generator.chain()?;
        Ok(DatasetSpec {
            name: name.to_string(),
            size,
            seed,
            markups: chain.all().map(|m| m.name.clone()).collect(),
            pose: true,
            generator,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        let chain = self.generator.chain()?;
        for m in &self.markups {
            if chain.index_of(m).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "dataset `{}`: unknown markup `{m}`",
                    self.name
                )));
            }
        }
        if self.markups.is_empty() && !self.pose {
            return Err(Error::InvalidArgument(format!(
                "dataset `{}` exposes no annotation",
                self.name
            )));
        }
        if self.size == 0 {
            return Err(Error::InvalidArgument(format!("dataset `{}` is empty", self.name)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Sample>,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_seed(dataset_seed: u64, index: usize) -> u64 {
    mix64(mix64(dataset_seed) ^ index as u64)
}

/// Worker count: available cores, capped by `ACDC_THREADS` when set.
pub fn generation_threads() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cores.min(cap),
        _ => cores,
    }
}

/// Drop annotations the spec does not expose.
pub fn strip(spec: &DatasetSpec, mut s: Sample) -> Sample {
    s.landmarks.retain(|k, _| spec.markups.contains(k));
    if !spec.pose {
        s.pose = None;
    }
    s
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    generate_with_threads(spec, generation_threads())
}

pub fn generate_with_threads(spec: &DatasetSpec, threads: usize) -> Result<Dataset> {
    spec.validate()?;
    let template = FaceTemplate::new(&spec.generator.chain()?)?;
    let threads = threads.clamp(1, spec.size);
    let chunk = spec.size.div_ceil(threads);
    let parts: Vec<Result<Vec<Sample>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let template = &template;
                scope.spawn(move || {
                    (t * chunk..((t + 1) * chunk).min(spec.size))
                        .map(|i| {
                            generate_sample(&spec.generator, template, sample_seed(spec.seed, i))
                                .map(|s| strip(spec, s))
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generator thread panicked"))
            .collect()
    });
    let mut samples = Vec::with_capacity(spec.size);
    for p in parts {
        samples.extend(p?);
    }
    Ok(Dataset {
        spec: spec.clone(),
        samples,
    })
}
