use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::numerics::gradcheck::{check_input, check_parameters};
use crate::score_operator::{dsm_objective, draw_dsm_batch, Control, ScoreNet, ScoreOperator, TrainConfig};
use crate::sde::SdeConfig;

fn small_vae(d: usize, dz: usize, seed: u64) -> (Vae, ParameterStore) {
    let spec = VaeSpec {
        hidden: 7,
        beta: 3.0,
        ..VaeSpec::new(d, dz)
    };
    let vae = Vae::new(spec).unwrap();
    let mut store = ParameterStore::new();
    vae.init(&mut store, &mut rng::stream(seed, &[])).unwrap();
    (vae, store)
}

fn pixels(n: usize, d: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, &[rng::tag("px")]);
    Matrix::from_vec(n, d, (0..n * d).map(|_| rand::Rng::random::<f64>(&mut r)).collect()).unwrap()
}

fn zero_last_layer(vae_mlp_prefix: &str, layer: usize, store: &mut ParameterStore) {
    for suffix in ["w", "b"] {
        let name = format!("{vae_mlp_prefix}.{layer}.{suffix}");
        let shape = store.value(&name).unwrap().shape();
        store.set_value(&name, Matrix::zeros(shape.0, shape.1)).unwrap();
    }
}

#[test]
fn kl_vanishes_at_standard_normal_and_recon_is_entropy_at_half() {
    let (vae, mut store) = small_vae(6, 2, 1);
    zero_last_layer("vae.encoder", 2, &mut store);
    zero_last_layer("vae.decoder", 2, &mut store);
    let x = pixels(5, 6, 2).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let eps = rng::standard_normal_matrix(5, 2, &mut rng::stream(3, &[]));
    let l = vae.vae_loss(&store, &x, &eps).unwrap();
    assert_eq!(l.kl, 0.0);
    assert!((l.recon - 6.0 * std::f64::consts::LN_2).abs() < 1e-12, "{l:?}");
    assert_eq!(l.total, l.recon);
}

proptest! {
    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-5.0f64..5.0, 4), lv in prop::collection::vec(-6.0f64..4.0, 4)) {
        prop_assert!(kl_standard_normal(&mu, &lv) >= 0.0);
    }
}

#[test]
fn analytic_kl_matches_monte_carlo() {
    let mut r = rng::stream(11, &[]);
    for _ in 0..5 {
        let mu: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut r)).collect();
        let lv: Vec<f64> = (0..3).map(|_| { let e: f64 = StandardNormal.sample(&mut r); 0.8 * e }).collect();
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            for j in 0..3 {
                let e: f64 = StandardNormal.sample(&mut r);
                let z = mu[j] + (0.5 * lv[j]).exp() * e;
                // log q(z) - log p(z); the 2 pi terms cancel
                acc += -0.5 * lv[j] - 0.5 * e * e + 0.5 * z * z;
            }
        }
        let mc = acc / draws as f64;
        let exact = kl_standard_normal(&mu, &lv);
        assert!((mc - exact).abs() < 0.02 * exact, "mc {mc} exact {exact}");
    }
}

#[test]
fn vae_gradients_match_finite_differences() {
    for k in 0..6u64 {
        let (d, dz) = (3 + k as usize, 1 + (k as usize % 3));
        let (vae, mut store) = small_vae(d, dz, 20 + k);
        let x = pixels(4, d, k);
        let eps = rng::standard_normal_matrix(4, dz, &mut rng::stream(30 + k, &[]));
        let extra = rng::standard_normal_matrix(4, dz, &mut rng::stream(40 + k, &[]));
        let (_, tape) = vae.forward_tape(&store, &x, &eps).unwrap();
        vae.backward(&mut store, &tape, Some(&extra)).unwrap();
        // d/dθ [total + <extra, z>]
        let loss = |s: &ParameterStore| {
            let (l, t) = vae.forward_tape(s, &x, &eps)?;
            Ok(l.total + crate::numerics::gradcheck::dot(&extra, &t.z()))
        };
        let rep = check_parameters(&store, &loss, 1e-6, 10, k).unwrap();
        assert!(rep.max_rel_err < 1e-4, "config {k}: {rep:?}");
    }
}

#[test]
fn reparameterization_gradient_on_toy_vae() {
    // 2 pixels, 1 latent; 10^4 common draws of the same input.
    let (vae, mut store) = small_vae(2, 1, 5);
    let draws = 10_000;
    let x = Matrix::from_vec(draws, 2, [0.2, 0.9].repeat(draws)).unwrap();
    let eps = rng::standard_normal_matrix(draws, 1, &mut rng::stream(6, &[]));
    let (_, tape) = vae.forward_tape(&store, &x, &eps).unwrap();
    vae.backward(&mut store, &tape, None).unwrap();
    let loss = |s: &ParameterStore| Ok(vae.vae_loss(s, &x, &eps)?.total);
    let rep = check_parameters(&store, &loss, 1e-6, 6, 7).unwrap();
    assert!(rep.max_rel_err < 1e-3, "{rep:?}");
}

#[test]
fn vae_rejects_bad_pixels_and_shapes() {
    let (vae, store) = small_vae(3, 2, 1);
    let eps = Matrix::zeros(2, 2);
    let mut x = pixels(2, 3, 1);
    x.set(0, 0, 1.5);
    assert!(matches!(vae.vae_loss(&store, &x, &eps), Err(Error::Validation(_))));
    assert!(vae.vae_loss(&store, &pixels(2, 3, 1), &Matrix::zeros(2, 3)).is_err());
    assert!(Vae::new(VaeSpec { beta: 0.0, ..VaeSpec::new(3, 2) }).is_err());
    assert!(Vae::new(VaeSpec::new(3, 0)).is_err());
}

#[test]
fn multi_vae_loss_is_a_task_average() {
    let (vae, store) = small_vae(4, 2, 9);
    let a = SampleBatch::new(pixels(5, 4, 1), "a", 0);
    let b = SampleBatch::new(pixels(6, 4, 2), "b", 0);
    let la = multi_vae_loss(&vae, &store, std::slice::from_ref(&a), 3).unwrap();
    let eps = family_noise(3, "a", 5, 2);
    assert_eq!(la, vae.vae_loss(&store, &a.data, &eps).unwrap().total);
    let lb = multi_vae_loss(&vae, &store, std::slice::from_ref(&b), 3).unwrap();
    let ab = multi_vae_loss(&vae, &store, &[a.clone(), b.clone()], 3).unwrap();
    let ba = multi_vae_loss(&vae, &store, &[b.clone(), a.clone()], 3).unwrap();
    assert!((ab - ba).abs() < 1e-12);
    let aab = multi_vae_loss(&vae, &store, &[a.clone(), a, b], 3).unwrap();
    assert!((3.0 * aab - (2.0 * la + lb)).abs() < 1e-10);
}

#[test]
fn decoded_samples_are_probabilities_and_deterministic() {
    let (vae, store) = small_vae(5, 3, 2);
    let z = LatentBatch {
        z: rng::standard_normal_matrix(20, 3, &mut rng::stream(1, &[])).map(|v| 30.0 * v),
        family_id: "f".into(),
    };
    let a = decode_samples(&vae, &store, &z, 0).unwrap();
    assert!(a.data.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a.data, decode_samples(&vae, &store, &z, 0).unwrap().data);
    let bad = LatentBatch {
        z: Matrix::zeros(2, 4),
        family_id: "f".into(),
    };
    assert!(decode_samples(&vae, &store, &bad, 0).is_err());
}

fn latent_op(dz: usize, c: usize, seed: u64) -> (ScoreOperator<LatentScoreNet>, ParameterStore) {
    let spec = LatentNetSpec {
        width: 6,
        time_features: 3,
        time_sigma: 2.0,
        ..LatentNetSpec::scaled(dz, c)
    };
    let op = ScoreOperator::new(LatentScoreNet::new(spec).unwrap(), SdeConfig::vp(0.1, 20.0)).unwrap();
    let mut store = ParameterStore::new();
    op.net.init(&mut store, &mut rng::stream(seed, &[])).unwrap();
    (op, store)
}

#[test]
fn latent_net_gradients_match_finite_differences() {
    for k in 0..4u64 {
        let (op, mut store) = latent_op(2 + k as usize, 3, 50 + k);
        let d = op.net.data_dim();
        let sets: Vec<SampleBatch> = (0..3)
            .map(|i| SampleBatch::new(rng::standard_normal_matrix(10, d, &mut rng::stream(k, &[i])), format!("f{i}"), 0))
            .collect();
        let refs: Vec<&SampleBatch> = sets.iter().collect();
        let batch = draw_dsm_batch(&refs, 3, &op.sde, k, 0).unwrap();
        let cond = rng::standard_normal_matrix(3, 3, &mut rng::stream(60 + k, &[]));
        let out = dsm_objective(&op, &mut store, &cond, &batch, true).unwrap();
        let loss = |s: &ParameterStore| {
            let mut s = s.clone();
            Ok(dsm_objective(&op, &mut s, &cond, &batch, false)?.loss)
        };
        let mut rep = check_parameters(&store, &loss, 1e-6, 10, k).unwrap();
        let fc = |c: &Matrix| {
            let mut s = store.clone();
            Ok(dsm_objective(&op, &mut s, c, &batch, false)?.loss)
        };
        rep.merge(check_input(&cond, &out.dcond, &fc, 1e-6, "cond").unwrap());
        let fx = |x0: &Matrix| {
            let mut s = store.clone();
            let mut b = batch.clone();
            b.x0 = x0.clone();
            Ok(dsm_objective(&op, &mut s, &cond, &b, false)?.loss)
        };
        rep.merge(check_input(&batch.x0, &out.dx0, &fx, 1e-6, "x0").unwrap());
        assert!(rep.max_rel_err < 1e-4, "config {k}: {rep:?}");
    }
}

#[test]
fn latent_net_rejects_bad_shapes() {
    let (op, store) = latent_op(2, 3, 1);
    let x = Matrix::zeros(4, 2);
    assert!(op.score_single(&store, &[0.0; 3], &x, 0.5).is_ok());
    assert!(op.score_single(&store, &[0.0; 2], &x, 0.5).is_err());
    assert!(op.score_single(&store, &[0.0; 3], &Matrix::zeros(4, 3), 0.5).is_err());
}

fn toy_families(n_fam: usize, n: usize, d: usize) -> Vec<SampleBatch> {
    (0..n_fam)
        .map(|i| {
            let base = i as f64 / n_fam as f64;
            let x = pixels(n, d, i as u64).map(|v| (0.5 * v + 0.5 * base).clamp(0.0, 1.0));
            SampleBatch::new(x, format!("toy{i}"), 0)
        })
        .collect()
}

fn joint_setup(gamma: f64) -> (Vae, ScoreOperator<LatentScoreNet>, ParameterStore) {
    let spec = VaeSpec {
        hidden: 16,
        beta: 1.0,
        gamma,
        ..VaeSpec::new(8, 2)
    };
    let vae = Vae::new(spec).unwrap();
    let (op, mut store) = latent_op(2, 2, 3);
    vae.init(&mut store, &mut rng::stream(4, &[])).unwrap();
    (vae, op, store)
}

fn joint_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        steps_per_epoch: 10,
        batch_distributions: 3,
        batch_samples: 8,
        lr: 3e-3,
        ..TrainConfig::new(epochs, 17)
    }
}

#[test]
fn gamma_zero_reproduces_vae_only_run() {
    let data = toy_families(4, 30, 8);
    let cfg = joint_cfg(3);
    let (vae, op, mut joint) = joint_setup(0.0);
    let mut vae_only = ParameterStore::new();
    vae.init(&mut vae_only, &mut rng::stream(4, &[])).unwrap();
    let a = joint_train(&vae, Some(&op), &mut joint, &data, LatentEmbedding::Prototype, &cfg, &mut |_, _| {
        Ok(Control::Continue)
    })
    .unwrap();
    let b = joint_train::<LatentScoreNet>(&vae, None, &mut vae_only, &data, LatentEmbedding::Prototype, &cfg, &mut |_, _| {
        Ok(Control::Continue)
    })
    .unwrap();
    assert_eq!(a.steps.len(), 30);
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert!((x.vae - y.vae).abs() < 1e-12, "step {}: {} vs {}", x.step, x.vae, y.vae);
        assert_eq!(x.total, x.vae);
    }
    assert!(a.steps.iter().any(|r| r.sgm > 0.0));
}

#[test]
fn joint_trace_decomposes_and_training_is_deterministic() {
    let data = toy_families(4, 30, 8);
    let kme = rng::standard_normal_matrix(4, 2, &mut rng::stream(8, &[]));
    let cfg = joint_cfg(4);
    let run = || {
        let (vae, op, mut store) = joint_setup(0.5);
        let rep = joint_train(&vae, Some(&op), &mut store, &data, LatentEmbedding::Fixed(&kme), &cfg, &mut |_, _| {
            Ok(Control::Continue)
        })
        .unwrap();
        (rep, store)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a.total_trace(), b.total_trace());
    assert_eq!(sa.value("latent.up2.1.w").unwrap(), sb.value("latent.up2.1.w").unwrap());
    for r in &a.steps {
        assert_eq!(r.total, r.vae + 0.5 * r.sgm);
        assert_eq!(r.vae, r.recon + 1.0 * r.kl);
        assert!(r.kl.is_finite() && r.kl >= 0.0);
    }
    let first: f64 = a.steps[..5].iter().map(|r| r.total).sum();
    let last: f64 = a.steps[35..].iter().map(|r| r.total).sum();
    assert!(last < first, "{first} -> {last}");
    assert_eq!(a.epochs.len(), 4);
}

#[test]
fn joint_divergence_reports_both_traces() {
    let data = toy_families(3, 10, 8);
    let cfg = TrainConfig {
        divergence_threshold: 1e-3,
        ..joint_cfg(1)
    };
    let (vae, op, mut store) = joint_setup(1.0);
    let err = joint_train(&vae, Some(&op), &mut store, &data, LatentEmbedding::Prototype, &cfg, &mut |_, _| {
        Ok(Control::Continue)
    })
    .unwrap_err();
    match err {
        Error::JointDivergence {
            step,
            vae_trace,
            sgm_trace,
            ..
        } => {
            assert_eq!(step, 0);
            assert_eq!(vae_trace.len(), 1);
            assert_eq!(sgm_trace.len(), 1);
        }
        other => panic!("unexpected {other:?}"),
    }
    let bad = Matrix::zeros(2, 2);
    assert!(joint_train(&vae, Some(&op), &mut store, &data, LatentEmbedding::Fixed(&bad), &cfg, &mut |_, _| {
        Ok(Control::Continue)
    })
    .is_err());
}

#[test]
fn latent_generation_decodes_to_pixels() {
    let (vae, op, store) = joint_setup(1.0);
    let s = generate_latent(&vae, &op, &store, &[0.1, -0.2], 7, crate::score_operator::Sampler::ReverseSde, 20, 3, "g")
        .unwrap();
    assert_eq!(s.data.shape(), (7, 8));
    assert!(s.data.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
}
