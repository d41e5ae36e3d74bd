//! Registry of finite-difference checks for every differentiable operator,
//! plus an end-to-end check of the full cascade.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::architecture::{AcdcModel, ModelConfig};
use crate::autodiff::check::{check_inputs, check_params, random_projection, CheckOutcome, ParamCheck, FD_STEP};
use crate::autodiff::{running_moments, BnMode, Buffer, CustomOp, Graph, ParamId, Tensor, Var};
use crate::data::{generate, DatasetSpec, GeneratorConfig, Sample};
use crate::error::Result;
use crate::training::{total_loss, Batch};

/// Tolerance for operators that are smooth everywhere.
pub const SMOOTH_TOLERANCE: f64 = 1e-4;

/// Tolerance for operators with kinks or data-dependent selection, and for
/// the composed model.
pub const KINK_TOLERANCE: f64 = 1e-3;

pub const REPORT_HEADER: &str = "operation,max_rel_error,tolerance,checked,passed";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub operation: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{},{}",
            self.operation,
            self.max_rel_error,
            self.tolerance,
            self.checked,
            self.passed()
        )
    }
}

pub fn report_csv(rows: &[CheckRow]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        writeln!(s, "{}", r.csv_row()).expect("string write");
    }
    s
}

type Build = Box<dyn FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// One registered operator: its inputs and a builder reducing its output
/// to a scalar.
pub struct OpCheck {
    pub name: &'static str,
    pub tolerance: f64,
    inputs: Vec<Tensor<f64>>,
    build: Build,
}

impl OpCheck {
    pub fn new(
        name: &'static str,
        tolerance: f64,
        inputs: Vec<Tensor<f64>>,
        build: impl FnMut(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        OpCheck {
            name,
            tolerance,
            inputs,
            build: Box::new(build),
        }
    }

    pub fn run(mut self, seed: u64) -> Result<CheckRow> {
        let CheckOutcome { max_rel_error, checked } = check_inputs(&self.inputs, &mut self.build, FD_STEP, None, seed)?;
        Ok(CheckRow {
            operation: self.name.to_string(),
            max_rel_error,
            tolerance: self.tolerance,
            checked,
        })
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Entries at least `gap` away from zero, so a finite-difference step
/// never crosses a kink at the origin.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Attention-like maps whose per-channel extremes and per-pixel winners
/// are separated by at least `gap` after min-max rescaling.
fn separated_maps(shapes: &[[usize; 4]], gap: f64, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    loop {
        let maps: Vec<Tensor<f64>> = shapes.iter().map(|s| uniform(s, 0.0, 1.0, rng)).collect();
        if mask_inputs_separated(&maps, gap) {
            return maps;
        }
    }
}

fn mask_inputs_separated(maps: &[Tensor<f64>], gap: f64) -> bool {
    let [n, _, h, w] = maps[0].shape()[..] else { return false };
    let s = h * w;
    let mut per_pixel: Vec<Vec<f64>> = vec![Vec::new(); n * s];
    for m in maps {
        let l = m.shape()[1];
        for (ch, vals) in m.data().chunks(s).enumerate() {
            let mut sorted = vals.to_vec();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|p| p[1] - p[0] < gap) {
                return false;
            }
            let (lo, range) = (sorted[0], sorted[s - 1] - sorted[0]);
            let i = ch / l;
            for (px, v) in vals.iter().enumerate() {
                per_pixel[i * s + px].push((v - lo) / range);
            }
        }
    }
    per_pixel.iter_mut().all(|v| {
        v.sort_by(|a, b| b.total_cmp(a));
        v.len() < 2 || v[0] - v[1] >= gap
    })
}

/// `y = x^2` with a configurable backward factor: 2 is correct.
pub struct Square {
    pub factor: f64,
}

impl CustomOp<f64> for Square {
    fn name(&self) -> &str {
        "square"
    }

    fn backward(&self, inputs: &[&Tensor<f64>], _output: &Tensor<f64>, grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![inputs[0]
            .data()
            .iter()
            .zip(grad_out)
            .map(|(x, g)| self.factor * x * g)
            .collect()]
    }
}

/// Check of a [`Square`] custom op with the given backward factor.
pub fn custom_square_check(name: &'static str, factor: f64, seed: u64) -> OpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OpCheck::new(name, SMOOTH_TOLERANCE, vec![uniform(&[3, 4], -1.0, 1.0, &mut rng)], move |g, v| {
        let out = Tensor::from_fn(g.shape(v[0]), |i| g.value(v[0]).data()[i].powi(2));
        let y = g.custom(&[v[0]], out, Box::new(Square { factor }));
        random_projection(g, y, 1)
    })
}

/// Every differentiable operator of the engine, one entry each.
pub fn registry(seed: u64) -> Vec<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let smooth = SMOOTH_TOLERANCE;
    let kink = KINK_TOLERANCE;
    let mut checks = vec![
        OpCheck::new("add", smooth, vec![uniform(&[2, 3, 4], -1.0, 1.0, r), uniform(&[2, 3, 4], -1.0, 1.0, r)], |g, v| {
            let y = g.add(v[0], v[1])?;
            random_projection(g, y, 2)
        }),
        OpCheck::new("affine", smooth, vec![uniform(&[2, 5], -1.0, 1.0, r)], |g, v| {
            let y = g.affine(v[0], 1.7, -0.3);
            random_projection(g, y, 3)
        }),
        OpCheck::new("scale", smooth, vec![uniform(&[7], -1.0, 1.0, r)], |g, v| {
            let y = g.scale(v[0], -2.5);
            random_projection(g, y, 4)
        }),
        OpCheck::new("sum", smooth, vec![uniform(&[3, 3], -1.0, 1.0, r)], |g, v| {
            let s = g.sum(v[0]);
            Ok(g.scale(s, 0.7))
        }),
        OpCheck::new(
            "add_all",
            smooth,
            vec![uniform(&[4], -1.0, 1.0, r), uniform(&[4], -1.0, 1.0, r), uniform(&[4], -1.0, 1.0, r)],
            |g, v| {
                let y = g.add_all(v)?;
                random_projection(g, y, 5)
            },
        ),
        OpCheck::new("reshape", smooth, vec![uniform(&[2, 6], -1.0, 1.0, r)], |g, v| {
            let y = g.reshape(v[0], &[3, 4])?;
            random_projection(g, y, 6)
        }),
        OpCheck::new("slice_channels", smooth, vec![uniform(&[2, 5, 3, 3], -1.0, 1.0, r)], |g, v| {
            let y = g.slice_channels(v[0], 1, 3)?;
            random_projection(g, y, 7)
        }),
        OpCheck::new("relu", kink, vec![away_from_zero(&[2, 3, 4, 4], 0.05, r)], |g, v| {
            let y = g.relu(v[0]);
            random_projection(g, y, 8)
        }),
        OpCheck::new("sigmoid", smooth, vec![uniform(&[2, 9], -3.0, 3.0, r)], |g, v| {
            let y = g.sigmoid(v[0]);
            random_projection(g, y, 9)
        }),
        OpCheck::new(
            "dense",
            smooth,
            vec![uniform(&[3, 4], -1.0, 1.0, r), uniform(&[5, 4], -1.0, 1.0, r), uniform(&[5], -1.0, 1.0, r)],
            |g, v| {
                let y = g.dense(v[0], v[1], v[2])?;
                random_projection(g, y, 10)
            },
        ),
        OpCheck::new(
            "concat_channels",
            smooth,
            vec![uniform(&[2, 2, 3, 3], -1.0, 1.0, r), uniform(&[2, 3, 3, 3], -1.0, 1.0, r)],
            |g, v| {
                let y = g.concat_channels(v)?;
                random_projection(g, y, 11)
            },
        ),
        OpCheck::new(
            "hadamard_elementwise",
            smooth,
            vec![uniform(&[2, 3, 4, 4], -1.0, 1.0, r), uniform(&[2, 3, 4, 4], -1.0, 1.0, r)],
            |g, v| {
                let y = g.hadamard(v[0], v[1])?;
                random_projection(g, y, 12)
            },
        ),
        OpCheck::new(
            "hadamard_channel_map",
            smooth,
            vec![uniform(&[2, 3, 4, 4], -1.0, 1.0, r), uniform(&[2, 1, 4, 4], -1.0, 1.0, r)],
            |g, v| {
                let y = g.hadamard(v[0], v[1])?;
                random_projection(g, y, 13)
            },
        ),
        OpCheck::new(
            "hadamard_spatial_vector",
            smooth,
            vec![uniform(&[2, 3, 4, 4], -1.0, 1.0, r), uniform(&[2, 3], -1.0, 1.0, r)],
            |g, v| {
                let y = g.hadamard(v[0], v[1])?;
                random_projection(g, y, 14)
            },
        ),
    ];

    let target = uniform(&[2, 4, 2], -1.0, 1.0, r);
    let offset = away_from_zero(&[2, 4, 2], 0.05, r);
    let pred = Tensor::from_fn(&[2, 4, 2], |i| target.data()[i] + offset.data()[i]);
    checks.push(OpCheck::new("l1_loss", kink, vec![pred, target], |g, v| g.l1_loss(v[0], v[1])));

    for (name, stride) in [("conv2d_stride1", 1), ("conv2d_stride2", 2)] {
        checks.push(OpCheck::new(
            name,
            smooth,
            vec![
                uniform(&[2, 3, 6, 6], -1.0, 1.0, r),
                uniform(&[4, 3, 3, 3], -1.0, 1.0, r),
                uniform(&[4], -1.0, 1.0, r),
            ],
            move |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], stride, 1)?;
                random_projection(g, y, 15)
            },
        ));
    }
    checks.push(OpCheck::new(
        "conv1x1",
        smooth,
        vec![
            uniform(&[2, 3, 4, 4], -1.0, 1.0, r),
            uniform(&[5, 3, 1, 1], -1.0, 1.0, r),
            uniform(&[5], -1.0, 1.0, r),
        ],
        |g, v| {
            let y = g.conv1x1(v[0], v[1], v[2])?;
            random_projection(g, y, 16)
        },
    ));
    checks.push(OpCheck::new(
        "depthwise_conv",
        smooth,
        vec![uniform(&[2, 3, 5, 5], -1.0, 1.0, r), uniform(&[3, 1, 3, 3], -1.0, 1.0, r)],
        |g, v| {
            let y = g.depthwise_conv(v[0], v[1])?;
            random_projection(g, y, 17)
        },
    ));
    checks.push(OpCheck::new(
        "depthwise_separable_conv",
        smooth,
        vec![
            uniform(&[2, 3, 5, 5], -1.0, 1.0, r),
            uniform(&[3, 1, 3, 3], -1.0, 1.0, r),
            uniform(&[4, 3, 1, 1], -1.0, 1.0, r),
            uniform(&[4], -1.0, 1.0, r),
        ],
        |g, v| {
            let y = g.depthwise_separable_conv(v[0], v[1], v[2], v[3])?;
            random_projection(g, y, 18)
        },
    ));
    checks.push(OpCheck::new(
        "bilinear_upsample2x",
        smooth,
        vec![uniform(&[2, 2, 3, 3], -1.0, 1.0, r)],
        |g, v| {
            let y = g.bilinear_upsample2x(v[0])?;
            random_projection(g, y, 19)
        },
    ));
    checks.push(OpCheck::new(
        "batch_norm_train",
        kink,
        vec![
            uniform(&[3, 2, 4, 4], -1.0, 1.0, r),
            uniform(&[2], 0.5, 1.5, r),
            uniform(&[2], -1.0, 1.0, r),
        ],
        |g, v| {
            let mut moments = Buffer {
                name: "check".into(),
                tensor: running_moments(2),
                initialized: false,
            };
            let y = g.batch_norm(v[0], v[1], v[2], &mut moments, BnMode::Train)?;
            random_projection(g, y, 20)
        },
    ));
    let stored = Tensor::new(&[2, 2], vec![0.1, -0.2, 0.8, 1.3]).expect("2x2 moments");
    checks.push(OpCheck::new(
        "batch_norm_infer",
        smooth,
        vec![
            uniform(&[3, 2, 4, 4], -1.0, 1.0, r),
            uniform(&[2], 0.5, 1.5, r),
            uniform(&[2], -1.0, 1.0, r),
        ],
        move |g, v| {
            let mut moments = Buffer {
                name: "check".into(),
                tensor: stored.clone(),
                initialized: true,
            };
            let y = g.batch_norm(v[0], v[1], v[2], &mut moments, BnMode::Infer)?;
            random_projection(g, y, 21)
        },
    ));
    checks.push(OpCheck::new(
        "spatial_softmax",
        smooth,
        vec![uniform(&[2, 3, 4, 4], -2.0, 2.0, r)],
        |g, v| {
            let y = g.spatial_softmax(v[0])?;
            random_projection(g, y, 22)
        },
    ));
    checks.push(OpCheck::new(
        "soft_argmax",
        smooth,
        vec![uniform(&[2, 3, 5, 4], -2.0, 2.0, r)],
        |g, v| {
            // Perturbing normalized maps directly would break their unit
            // mass, so the check differentiates through a softmax.
            let a = g.spatial_softmax(v[0])?;
            let y = g.soft_argmax(a)?;
            random_projection(g, y, 23)
        },
    ));
    checks.push(OpCheck::new(
        "fused_mask",
        kink,
        separated_maps(&[[1, 2, 4, 4], [1, 3, 4, 4]], 0.01, r),
        |g, v| {
            let y = g.fused_mask(v)?;
            random_projection(g, y, 24)
        },
    ));
    checks.push(custom_square_check("custom", 2.0, r.random()));
    checks
}

/// Run every registered check.
pub fn run_registry(seed: u64) -> Result<Vec<CheckRow>> {
    registry(seed).into_iter().map(|c| c.run(seed)).collect()
}

/// A freshly initialized cascade and a batch of two synthetic samples.
pub fn model_setup(cfg: &ModelConfig, seed: u64) -> Result<(AcdcModel<f64>, Batch<f64>)> {
    let cfg = cfg.clone();
    let gen = GeneratorConfig::new(cfg.image_size, cfg.markups.clone(), cfg.markup_3d);
    let data = generate(&DatasetSpec::full("gradcheck", 2, seed, gen)?)?;
    let model = AcdcModel::<f64>::new(cfg, seed)?;
    let refs: Vec<&Sample> = data.samples.iter().collect();
    let batch = Batch::from_samples(&refs, model.chain())?;
    Ok((model, batch))
}

/// Finite-difference step for the composed model. Thousands of relu units,
/// per-pixel maxima and L1 terms sit between a parameter and the loss, so
/// the step is kept small enough that few of them are crossed.
pub const MODEL_STEP: f64 = 1e-6;

/// Result of the end-to-end check. Entries whose one-sided differences
/// disagree crossed a kink; they are counted but not scored.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheck {
    pub row: CheckRow,
    pub kinks: usize,
}

/// Central differences of the training loss of the toy cascade against
/// backward, on `per_param` random entries of every parameter tensor.
pub fn end_to_end(cfg: &ModelConfig, seed: u64, per_param: usize) -> Result<ModelCheck> {
    let (mut model, batch) = model_setup(cfg, seed)?;
    // Halving weights towards earlier stages, as the training default.
    let lambdas: Vec<f64> = (0..cfg.stages).map(|i| 0.5f64.powi((cfg.stages - 1 - i) as i32)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let entries: Vec<(ParamId, usize)> = model
        .store()
        .ids()
        .flat_map(|id| {
            let n = model.store().get(id).tensor.numel();
            (0..per_param.min(n)).map(|_| (id, rng.random_range(0..n))).collect::<Vec<_>>()
        })
        .collect();
    let rows = check_params(
        &mut model,
        |m| m.store_mut(),
        |m, g| {
            let x = g.constant(batch.images.clone());
            let outs = m.forward(g, x, BnMode::Train)?;
            let variant = m.config().variant;
            Ok(total_loss(g, variant, &outs, &batch, &lambdas, 1.0)?.total)
        },
        &entries,
        MODEL_STEP,
    )?;
    let smooth: Vec<&ParamCheck> = rows.iter().filter(|r| !r.kink).collect();
    Ok(ModelCheck {
        row: CheckRow {
            operation: "model_end_to_end".into(),
            max_rel_error: smooth.iter().map(|r| r.rel_error).fold(0.0, f64::max),
            tolerance: KINK_TOLERANCE,
            checked: smooth.len(),
        },
        kinks: rows.len() - smooth.len(),
    })
}
