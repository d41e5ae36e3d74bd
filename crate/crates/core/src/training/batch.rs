use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::architecture::{MarkupChain, POSE_SCALE_DEG};
use crate::autodiff::{Scalar, Tensor};
use crate::data::{mix64, Sample};
use crate::error::{Error, Result};

/// Network-ready tensors for one minibatch drawn from a single dataset.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `N x 1 x W x W`, intensities in `[0, 1]`.
    pub images: Tensor<T>,
    /// Indexed like the markup chain; `N x L x 2` pixel targets where the
    /// markup is annotated.
    pub landmarks: Vec<Option<Tensor<T>>>,
    /// `N x 3` normalized pose in network order, when annotated.
    pub pose: Option<Tensor<T>>,
    pub width: usize,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_landmarks(&self) -> bool {
        self.landmarks.iter().any(Option::is_some)
    }

    /// Stack `samples`. An annotation is used only if every sample carries it.
    pub fn from_samples(samples: &[&Sample], chain: &MarkupChain) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (w, h) = (first.image.width, first.image.height);
        if w != h {
            return Err(Error::InvalidArgument(format!("images must be square, got {w}x{h}")));
        }
        let n = samples.len();
        let mut pixels = Vec::with_capacity(n * w * w);
        for s in samples {
            if (s.image.width, s.image.height) != (w, h) {
                return Err(Error::InvalidArgument("images in a batch differ in size".into()));
            }
            pixels.extend(s.image.unit_values().map(T::of));
        }
        let images = Tensor::new(&[n, 1, w, w], pixels)?;

        let mut landmarks = Vec::with_capacity(chain.len());
        for m in chain.all() {
            let present = samples.iter().filter(|s| s.has_markup(&m.name)).count();
            if present == 0 {
                landmarks.push(None);
                continue;
            }
            if present != n {
                return Err(Error::InvalidArgument(format!(
                    "markup `{}` is annotated on {present} of {n} batch samples",
                    m.name
                )));
            }
            let mut data = Vec::with_capacity(n * m.count * 2);
            for s in samples {
                let set = &s.landmarks[&m.name];
                if set.len() != m.count {
                    return Err(Error::InvalidArgument(format!(
                        "markup `{}` has {} points, expected {}",
                        m.name,
                        set.len(),
                        m.count
                    )));
                }
                data.extend(set.points.iter().flat_map(|p| [T::of(p[0]), T::of(p[1])]));
            }
            landmarks.push(Some(Tensor::new(&[n, m.count, 2], data)?));
        }

        let with_pose = samples.iter().filter(|s| s.has_pose()).count();
        let pose = if with_pose == 0 {
            None
        } else if with_pose != n {
            return Err(Error::InvalidArgument(format!(
                "pose is annotated on {with_pose} of {n} batch samples"
            )));
        } else {
            let data = samples
                .iter()
                .flat_map(|s| {
                    s.pose
                        .expect("checked")
                        .to_network_order()
                        .map(|a| T::of(a / POSE_SCALE_DEG))
                })
                .collect();
            Some(Tensor::new(&[n, 3], data)?)
        };
        Ok(Batch {
            images,
            landmarks,
            pose,
            width: w,
        })
    }
}

/// Endless shuffled minibatch indices over one dataset. Each pass uses a
/// fresh permutation seeded from `(seed, pass)`; a partial tail is dropped.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    len: usize,
    batch: usize,
    seed: u64,
    pass: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(len: usize, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 || len < batch {
            return Err(Error::InvalidArgument(format!(
                "dataset of {len} samples cannot supply batches of {batch}"
            )));
        }
        let mut s = BatchSampler {
            len,
            batch,
            seed,
            pass: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.seed ^ mix64(self.pass)));
        self.order = (0..self.len).collect();
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    /// Completed passes over the data.
    pub fn passes(&self) -> u64 {
        self.pass
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.len {
            self.pass += 1;
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec, GeneratorConfig};

    #[test]
    fn sampler_covers_each_pass_then_reshuffles() {
        let mut s = BatchSampler::new(10, 3, 7).unwrap();
        let mut first: Vec<usize> = (0..3).flat_map(|_| s.next_indices()).collect();
        assert_eq!(s.passes(), 0);
        first.sort_unstable();
        first.dedup();
        assert_eq!(first.len(), 9);
        s.next_indices();
        assert_eq!(s.passes(), 1);
        assert!(BatchSampler::new(2, 3, 0).is_err());
    }

    #[test]
    fn batch_normalizes_pixels_and_pose() {
        let mut spec = DatasetSpec::full("t", 2, 1, GeneratorConfig::new(32, vec![12, 8, 3], 6)).unwrap();
        spec.markups = vec!["8".into()];
        let d = generate(&spec).unwrap();
        let chain = spec.generator.chain().unwrap();
        let refs: Vec<&Sample> = d.samples.iter().collect();
        let b: Batch<f64> = Batch::from_samples(&refs, &chain).unwrap();
        assert_eq!(b.images.shape(), &[2, 1, 32, 32]);
        assert_eq!(b.images.data()[5], d.samples[0].image.pixels[5] as f64 / 255.0);
        assert!(b.landmarks[0].is_none() && b.landmarks[2].is_none() && b.landmarks[3].is_none());
        assert_eq!(b.landmarks[1].as_ref().unwrap().shape(), &[2, 8, 2]);
        let pose = d.samples[1].pose.unwrap();
        let t = b.pose.unwrap();
        assert_eq!(t.data()[3], pose.pitch / 90.0);
        assert_eq!(t.data()[4], pose.yaw / 90.0);
    }
}
