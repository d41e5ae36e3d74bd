use std::hint::black_box;

use acdc_bench::{dataset, model_config, tensor};
use acdc_core::architecture::AcdcModel;
use acdc_core::autodiff::{BnMode, Graph};
use acdc_core::data::Sample;
use acdc_core::training::{Batch, TrainConfig, Trainer};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for size in [32usize, 64] {
        let x = tensor(&[8, 16, size, size], 1);
        let k = tensor(&[16, 16, 3, 3], 2);
        let b = tensor(&[16], 3);
        group.bench_with_input(BenchmarkId::new("forward_backward", size), &size, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::<f32>::new();
                let (xv, kv, bv) = (g.input(x.clone()), g.input(k.clone()), g.input(b.clone()));
                let y = g.conv2d(xv, kv, bv, 1, 1).unwrap();
                let s = g.sum(y);
                black_box(g.backward(s).unwrap());
            })
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let x = tensor(&[8, 30, 32, 32], 4);
    c.bench_function("softmax_soft_argmax_mask", |bench| {
        bench.iter(|| {
            let mut g = Graph::<f32>::new();
            let v = g.input(x.clone());
            let a = g.spatial_softmax(v).unwrap();
            let p = g.soft_argmax(a).unwrap();
            let m = g.fused_mask(&[a]).unwrap();
            let sp = g.sum(p);
            let sm = g.sum(m);
            let total = g.add(sp, sm).unwrap();
            black_box(g.backward(total).unwrap());
        })
    });
}

fn cascade(c: &mut Criterion) {
    let mut group = c.benchmark_group("cascade");
    group.sample_size(10);
    for size in [32usize, 64] {
        let data = dataset(size, 8);
        let mut model = AcdcModel::<f32>::new(model_config(size), 1).unwrap();
        let refs: Vec<&Sample> = data.samples.iter().collect();
        let batch: Batch<f32> = Batch::from_samples(&refs, model.chain()).unwrap();
        group.bench_with_input(BenchmarkId::new("forward_train", size), &size, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let x = g.constant(batch.images.clone());
                black_box(model.forward(&mut g, x, BnMode::Train).unwrap().len())
            })
        });

        let datasets = [data.clone()];
        let mut cfg = TrainConfig::new(usize::MAX / 2, 1);
        cfg.batch_size = 8;
        let mut trainer = Trainer::new(AcdcModel::<f32>::new(model_config(size), 1).unwrap(), &datasets, cfg).unwrap();
        group.bench_with_input(BenchmarkId::new("training_update", size), &size, |bench, _| {
            bench.iter(|| black_box(trainer.step().unwrap().loss_total))
        });
    }
    group.finish();
}

criterion_group!(benches, conv, attention, cascade);
criterion_main!(benches);
