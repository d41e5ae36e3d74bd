use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{read_checkpoint, write_checkpoint};
use super::gtn::gtn_forward;
use super::*;
use crate::autodiff::{BnMode, Graph, SharingGroup, Tensor};
use crate::error::Error;

fn images(n: usize, size: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 1, size, size], |_| rng.random_range(0.0..1.0))
}

#[test]
fn stage_outputs_have_declared_shapes() {
    let mut m = AcdcModel::<f64>::new(ModelConfig::toy(), 3).unwrap();
    let mut g = Graph::new();
    let x = g.constant(images(2, 32, 0));
    let outs = m.forward(&mut g, x, BnMode::Train).unwrap();
    assert_eq!(outs.len(), 4);
    for o in &outs {
        assert_eq!(g.shape(o.embedding), &[2, 8, 32, 32]);
        assert_eq!(g.shape(o.mask), &[2, 1, 32, 32]);
        assert_eq!(g.shape(o.pose), &[2, 3]);
        for (k, count) in [12, 8, 3, 6].into_iter().enumerate() {
            assert_eq!(g.shape(o.landmarks(k)), &[2, count, 2]);
            assert_eq!(g.shape(o.heads[k].attention), &[2, count, 32, 32]);
        }
        assert_eq!(o.fused.map(|f| g.shape(f).to_vec()), (o.stage < 4).then(|| vec![2, 18, 32, 32]));
        assert_eq!(o.input_excitation.map(|f| g.shape(f).to_vec()), (o.stage > 1).then(|| vec![2, 18]));
    }
}

#[test]
fn full_size_config_fuses_to_130_channels() {
    let cfg = ModelConfig::full_size();
    assert_eq!(cfg.fusion_channels(), 130);
    let mut g: Graph<f32> = Graph::new();
    let img = g.constant(Tensor::full(&[1, 1, 4, 4], 0.5));
    let h = g.constant(Tensor::full(&[1, 64, 4, 4], 1.0));
    let mask = g.constant(Tensor::full(&[1, 1, 4, 4], 0.25));
    let f = fusion::fuse_ac(&mut g, img, h, mask).unwrap();
    assert_eq!(g.shape(f), &[1, 130, 4, 4]);
    let v = g.value(f).data();
    assert_eq!((v[0], v[16], v[32], v[16 * 66]), (0.5, 0.125, 1.0, 0.25));

    let m = AcdcModel::<f32>::new(cfg, 0).unwrap();
    for stage in 2..=4 {
        assert_eq!(m.store().by_name(&format!("stage{stage}.excite.weight")).unwrap().shape(), &[130, 3]);
        assert_eq!(m.store().by_name(&format!("stage{stage}.unet.in.weight")).unwrap().shape(), &[64, 130, 1, 1]);
    }
    assert_eq!(m.store().by_name("stage1.unet.in.weight").unwrap().shape(), &[64, 1, 1, 1]);
    assert!(m.parameter_count() > 0);
}

#[test]
fn gtn_is_one_set_of_weights_bound_once() {
    let mut m = AcdcModel::<f64>::new(ModelConfig::toy(), 5).unwrap();
    let mut g = Graph::new();
    let x = g.constant(images(2, 32, 1));
    m.forward(&mut g, x, BnMode::Train).unwrap();
    let mut gtn = 0;
    for id in m.store().ids() {
        let p = m.store().get(id);
        if p.group == SharingGroup::Shared("gtn".into()) {
            gtn += 1;
            assert_eq!(g.aliases(id).len(), 1, "{}", p.name);
        } else {
            assert!(matches!(p.group, SharingGroup::Stage(_)), "{}", p.name);
        }
    }
    assert_eq!(gtn, 3 * 2 + 2 * 3 + 2 + 2);
}

#[test]
fn gtn_outputs_are_bitwise_equal_across_stages_for_equal_inputs() {
    let mut m = AcdcModel::<f64>::new(ModelConfig::toy(), 6).unwrap();
    let mut g = Graph::new();
    let x = g.constant(images(2, 32, 2));
    let outs = m.forward(&mut g, x, BnMode::Train).unwrap();
    let e = g.value(outs[0].embedding).clone();
    let cfg = m.config().clone();
    let chain = m.chain().clone();
    let mut g2 = Graph::new();
    let mut results = Vec::new();
    for _ in 0..cfg.stages {
        let input = g2.constant(e.clone());
        results.push(gtn_forward(&mut g2, m.store(), &cfg, &chain, input).unwrap());
    }
    for r in &results {
        assert_eq!(g2.value(r.pose).data(), g.value(outs[0].pose).data());
        for (h, h0) in r.heads.iter().zip(&outs[0].heads) {
            assert_eq!(g2.value(h.landmarks).data(), g.value(h0.landmarks).data());
            assert_eq!(g2.value(h.attention).data(), g.value(h0.attention).data());
        }
    }
}

#[test]
fn excitation_weights_belong_to_one_stage() {
    let base = AcdcModel::<f64>::new(ModelConfig::toy(), 7).unwrap();
    let run = |m: &mut AcdcModel<f64>| {
        let mut g = Graph::new();
        let x = g.constant(images(2, 32, 3));
        let outs = m.forward(&mut g, x, BnMode::Train).unwrap();
        outs.iter()
            .map(|o| {
                (
                    o.input_excitation.map(|e| g.value(e).data().to_vec()),
                    g.value(o.embedding).data().to_vec(),
                )
            })
            .collect::<Vec<_>>()
    };
    let reference = run(&mut base.clone());
    let mut bumped = base.clone();
    for v in bumped.store_mut().by_name_mut("stage3.excite.weight").unwrap().data_mut() {
        *v += 0.5;
    }
    let after = run(&mut bumped);
    assert_eq!(after[0], reference[0]);
    assert_eq!(after[1], reference[1], "stage 2 must not see stage 3's weights");
    assert_ne!(after[2].0, reference[2].0);
    assert_ne!(after[3].1, reference[3].1);

    // Same pose, different stages: different excitations.
    let mut g = Graph::new();
    let pose = g.constant(Tensor::new(&[1, 3], vec![0.1, -0.3, 0.2]).unwrap());
    let e2 = fusion::excitation(&mut g, base.store(), 2, pose).unwrap();
    let e3 = fusion::excitation(&mut g, base.store(), 3, pose).unwrap();
    assert_ne!(g.value(e2).data(), g.value(e3).data());
    assert!(fusion::excitation(&mut g, base.store(), 1, pose).is_err());
}

#[test]
fn second_markup_loss_reaches_first_transfer_layer() {
    let mut m = AcdcModel::<f64>::new(ModelConfig::toy(), 8).unwrap();
    let mut g = Graph::new();
    let x = g.constant(images(2, 32, 4));
    let outs = m.forward(&mut g, x, BnMode::Train).unwrap();
    let target = g.constant(Tensor::full(&[2, 8, 2], 16.0));
    let loss = g.l1_loss(outs[0].landmarks(1), target).unwrap();
    let grads = g.backward(loss).unwrap();
    let t1 = m.store().id("gtn.transfer2d.0.weight").unwrap();
    assert!(grads.param(t1).unwrap().iter().any(|v| *v != 0.0));
    let t3 = m.store().id("gtn.transfer2d.2.weight").unwrap();
    assert!(grads.param(t3).is_none_or(|g| g.iter().all(|v| *v == 0.0)));
}

#[test]
fn variants_differ_only_in_excitation_parameters() {
    let mut cfg = ModelConfig::toy();
    let acdc = AcdcModel::<f32>::new(cfg.clone(), 1).unwrap();
    cfg.variant = Variant::Ac;
    let ac = AcdcModel::<f32>::new(cfg.clone(), 1).unwrap();
    cfg.variant = Variant::AcPose;
    let acpose = AcdcModel::<f32>::new(cfg, 1).unwrap();
    let names = |m: &AcdcModel<f32>| m.store().params().iter().map(|p| p.name.clone()).collect::<Vec<_>>();
    assert_eq!(names(&ac), names(&acpose));
    let extra: Vec<String> = names(&acdc).into_iter().filter(|n| !names(&ac).contains(n)).collect();
    assert_eq!(extra.len(), 6);
    assert!(extra.iter().all(|n| n.contains(".excite.")));
}

#[test]
fn same_seed_same_parameters() {
    let a = AcdcModel::<f32>::new(ModelConfig::toy(), 42).unwrap();
    let b = AcdcModel::<f32>::new(ModelConfig::toy(), 42).unwrap();
    let c = AcdcModel::<f32>::new(ModelConfig::toy(), 43).unwrap();
    for ((p, q), r) in a.store().params().iter().zip(b.store().params()).zip(c.store().params()) {
        assert_eq!(p.tensor.data(), q.tensor.data());
        if p.name.ends_with("weight") {
            assert_ne!(p.tensor.data(), r.tensor.data(), "{}", p.name);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let mut m = AcdcModel::<f32>::new(ModelConfig::toy(), 9).unwrap();
    m.calibrate([&images(2, 32, 5).cast::<f32>()]).unwrap();
    let mut first = Vec::new();
    write_checkpoint(&m, &mut first).unwrap();
    let mut loaded: AcdcModel<f32> = read_checkpoint(ModelConfig::toy(), &mut first.as_slice()).unwrap();
    let mut second = Vec::new();
    write_checkpoint(&loaded, &mut second).unwrap();
    assert_eq!(first, second);
    let x = images(1, 32, 6).cast::<f32>();
    let a = m.predict(&x).unwrap();
    let b = loaded.predict(&x).unwrap();
    assert_eq!(a.final_pose().data(), b.final_pose().data());

    let mut other = ModelConfig::toy();
    other.variant = Variant::Ac;
    assert!(matches!(
        read_checkpoint::<f32>(other, &mut first.as_slice()),
        Err(Error::DigestMismatch)
    ));
    assert!(read_checkpoint::<f32>(ModelConfig::toy(), &mut &first[..first.len() - 3]).is_err());
    let mut bad = first.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint::<f32>(ModelConfig::toy(), &mut bad.as_slice()), Err(Error::Checkpoint(_))));
}

#[test]
fn inference_before_calibration_is_rejected() {
    let mut m = AcdcModel::<f32>::new(ModelConfig::toy(), 0).unwrap();
    assert!(matches!(
        m.predict(&images(1, 32, 0).cast()),
        Err(Error::UninitializedMoments(_))
    ));
}
