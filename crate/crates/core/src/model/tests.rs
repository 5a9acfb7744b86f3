use candle_core::{DType, Device, Tensor, Var};

use super::*;
use crate::nn::Scope;

fn randn(shape: &[usize], seed: u64, dtype: DType) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
}

fn image(variant: &ModelVariant, n: usize, seed: u64) -> Tensor {
    let s = variant.input_size;
    randn(&[n, 3, s, s], seed, DType::F32).affine(0.5, 0.5).unwrap()
}

fn values(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

fn spatial(t: &Tensor) -> (usize, usize, usize) {
    let (_, c, h, w) = t.dims4().unwrap();
    (c, h, w)
}

fn build(v: &ModelVariant, seed: u64) -> Lanet {
    Lanet::new(
        v,
        &ModelInit {
            seed,
            ..Default::default()
        },
    )
    .unwrap()
}

#[test]
fn desk_encoder_strides() {
    let v = ModelVariant::desk(64);
    let m = build(&v, 0);
    let enc = m.encoder().forward(&image(&v, 1, 1), false).unwrap();
    let sizes: Vec<_> = enc.iter().map(|t| spatial(t).1).collect();
    assert_eq!(sizes, vec![16, 8, 4, 2]);
    let chans: Vec<_> = enc.iter().map(|t| spatial(t).0).collect();
    assert_eq!(chans, Backbone::ResnetSmall.stage_channels().to_vec());
}

#[test]
fn resnet50_encoder_channels() {
    let scope = scratch_scope(0, DType::F32);
    let enc = Encoder::new(&scope, Backbone::Resnet50).unwrap();
    let out = enc.forward(&randn(&[1, 3, 64, 64], 2, DType::F32), false).unwrap();
    let shapes: Vec<_> = out.iter().map(spatial).collect();
    assert_eq!(shapes, vec![(256, 16, 16), (512, 8, 8), (1024, 4, 4), (2048, 2, 2)]);
}

#[test]
fn bad_input_size_rejected() {
    let v = ModelVariant::desk(100);
    assert!(matches!(Lanet::new(&v, &ModelInit::default()), Err(Error::Config(_))));
    let bad_backbone = ModelVariant {
        backbone: "vgg16".into(),
        ..ModelVariant::desk(64)
    };
    assert!(Lanet::new(&bad_backbone, &ModelInit::default()).is_err());
    let m = build(&ModelVariant::desk(64), 0);
    assert!(m.forward(&randn(&[1, 3, 32, 32], 0, DType::F32), false).is_err());
}

#[test]
fn forward_shapes_and_range() {
    let v = ModelVariant::desk(64);
    let m = build(&v, 3);
    let out = m.forward(&image(&v, 2, 4), false).unwrap();
    let sizes: Vec<_> = out.per_stage.iter().map(|t| t.dims().to_vec()).collect();
    assert_eq!(sizes, vec![vec![2, 4, 2, 2], vec![2, 4, 4, 4], vec![2, 4, 8, 8], vec![2, 4, 16, 16]]);
    for s in 0..DECODER_DEPTH {
        assert_eq!(out.per_stage[s].dim(2).unwrap(), v.stage_size(s));
    }
    assert_eq!(out.final_map.dims(), &[2, 4, 64, 64]);
    for t in out.per_stage.iter().chain([&out.final_map]) {
        assert!(values(t).iter().all(|x| (0.0..=1.0).contains(x) && x.is_finite()));
    }
}

#[test]
fn stage_sizes_for_all_multiples_of_32() {
    for s in [32, 64, 96, 128, 512] {
        let v = ModelVariant::desk(s);
        let got: Vec<_> = (0..4).map(|i| v.stage_size(i)).collect();
        assert_eq!(got, vec![s / 32, s / 16, s / 8, s / 4]);
    }
}

#[test]
fn ablation_variants_share_output_shapes() {
    let v = ModelVariant::desk(64);
    let x = image(&v, 1, 5);
    let shapes: Vec<Vec<Vec<usize>>> = v
        .ablation_matrix()
        .iter()
        .map(|cell| {
            let out = build(cell, 0).forward(&x, false).unwrap();
            out.per_stage.iter().chain([&out.final_map]).map(|t| t.dims().to_vec()).collect()
        })
        .collect();
    assert!(shapes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn parameter_counts_strictly_ordered() {
    for base in [ModelVariant::desk(64), ModelVariant::full()] {
        let [b, l, f, full] = base.ablation_matrix().map(|c| build(&c, 0).num_parameters());
        assert!(b < l && b < f && l < full && f < full, "{b} {l} {f} {full}");
    }
}

#[test]
fn inference_is_bit_identical() {
    let v = ModelVariant::desk(64);
    let m = build(&v, 9);
    let x = image(&v, 1, 9);
    let a = m.forward(&x, false).unwrap();
    let b = m.forward(&x, false).unwrap();
    assert_eq!(values(&a.final_map), values(&b.final_map));
    let other = build(&v, 9).forward(&x, false).unwrap();
    assert_eq!(values(&a.final_map), values(&other.final_map));
}

#[test]
fn ham_shape_and_linear_memory() {
    let scope = scratch_scope(1, DType::F32);
    let ham = Ham::new(&scope, 2048, 256).unwrap();
    let out = ham.forward(&randn(&[1, 2048, 16, 16], 1, DType::F32), false).unwrap();
    assert_eq!(out.dims(), &[1, 256, 16, 16]);
    assert!(values(&out).iter().all(|v| v.is_finite()));

    let small = Ham::new(&scratch_scope(1, DType::F32), 32, 16).unwrap();
    let peak = |side: usize| {
        let mut trace = Vec::new();
        small
            .forward_traced(&randn(&[1, 32, side, side], 2, DType::F32), false, Some(&mut trace))
            .unwrap();
        *trace.iter().max().unwrap()
    };
    let (p16, p32) = (peak(16), peak(32));
    assert_eq!(p32, 4 * p16, "peak activation should scale with H·W");
}

#[test]
fn lam_gating() {
    let c = 6;
    let lam = Lam::new(&scratch_scope(2, DType::F32), c).unwrap();
    let x = randn(&[1, c, 5, 7], 3, DType::F32);
    let parts = lam.forward_parts(&x, false, None).unwrap();
    assert_eq!(parts.output.dims(), x.dims());
    assert!(values(parts.x_att.as_tensor()).iter().all(|v| (0.0..=1.0).contains(v)));

    let ones = AttentionVector::ones(1, c, DType::F32, &Device::Cpu).unwrap();
    let bypass = lam.forward_parts(&x, false, Some(&ones)).unwrap();
    assert_eq!(values(&bypass.output), values(&bypass.x_ort));

    for k in [0, 3, 5] {
        let hot = AttentionVector::one_hot(1, c, k, DType::F32, &Device::Cpu).unwrap();
        let out = lam.forward_parts(&x, false, Some(&hot)).unwrap().output;
        for j in 0..c {
            let ch = values(&out.narrow(1, j, 1).unwrap());
            if j == k {
                assert_eq!(ch, values(&parts.x_ort.narrow(1, j, 1).unwrap()));
            } else {
                assert!(ch.iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn fpb_range_and_no_sharing() {
    let v = ModelVariant::desk(64);
    let m = build(&v, 4);
    let (fpb1, _) = m.fpm(1).unwrap();
    let (fpb2, _) = m.fpm(2).unwrap();
    assert!(m.fpm(0).is_none());
    let x_enc4 = randn(&[1, 128, 2, 2], 5, DType::F32);
    let prev = randn(&[1, 32, 4, 4], 6, DType::F32);
    let a = fpb1.forward(&x_enc4, &prev).unwrap();
    let b = fpb2.forward(&x_enc4, &prev).unwrap();
    assert_eq!(a.channels(), v.decoder_channels[0]);
    assert!(values(a.as_tensor()).iter().all(|x| (0.0..=1.0).contains(x)));
    assert_ne!(values(a.as_tensor()), values(b.as_tensor()));
}

#[test]
fn ffb_shapes_and_gate() {
    let ffb = Ffb::new(&scratch_scope(3, DType::F32), 1024, 256, 128).unwrap();
    let skip = randn(&[1, 1024, 32, 32], 7, DType::F32);
    let prev = randn(&[1, 256, 16, 16], 8, DType::F32);
    let dev = Device::Cpu;
    let ones = AttentionVector::ones(1, 256, DType::F32, &dev).unwrap();
    let out = ffb.forward(&skip, &prev, &ones, false).unwrap();
    assert_eq!(out.dims(), &[1, 128, 32, 32]);

    let zero = AttentionVector::zeros(1, 256, DType::F32, &dev).unwrap();
    for z in ffb.gated_branches(&skip, &prev, &zero, false).unwrap() {
        assert!(values(&z).iter().all(|&v| v == 0.0));
    }

    let half = AttentionVector::filled(1, 256, 0.5, DType::F32, &dev).unwrap();
    let out_half = ffb.forward(&skip, &prev, &half, false).unwrap();
    let diff = (out - out_half).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
    assert!(diff > 0.0);

    let hot = AttentionVector::one_hot(1, 256, 7, DType::F32, &dev).unwrap();
    for z in ffb.gated_branches(&skip, &prev, &hot, false).unwrap() {
        let zeroed = z.narrow(1, 0, 7).unwrap();
        assert!(values(&zeroed).iter().all(|&v| v == 0.0));
    }

    let wrong = randn(&[1, 256, 15, 15], 9, DType::F32);
    assert!(ffb.forward(&skip, &wrong, &ones, false).is_err());
}

#[test]
fn screening_head_is_small_and_shares_segmentation() {
    let v = ModelVariant::desk(64);
    let lanet = build(&v, 11);
    let lasnet = build(&v.clone().with_screening_head(true), 11);
    let widths: usize = v.decoder_channels.iter().sum();
    let h = v.screening_hidden;
    assert_eq!(lasnet.num_parameters() - lanet.num_parameters(), widths * h + h + h * 2 + 2);
    for name in lasnet.store().names() {
        if lanet.store().get(&name).is_none() {
            assert!(name.starts_with("screening."), "{name}");
        }
    }

    let x = image(&v, 2, 12);
    let (seg, logits) = lasnet.forward_screening(&x, false).unwrap();
    assert_eq!(logits.dims(), &[2, 2]);
    let uncovered = lanet.load_shared(&lasnet.state_dict().unwrap()).unwrap();
    assert!(uncovered.is_empty());
    assert_eq!(values(&seg.final_map), values(&lanet.forward(&x, false).unwrap().final_map));
    assert!(matches!(lanet.forward_screening(&x, false), Err(Error::NoScreeningHead)));
}

#[test]
fn full_weights_do_not_load_into_base() {
    let v = ModelVariant::desk(64);
    let full = build(&v, 0);
    let base = build(&v.clone().with_modules(false, false), 0);
    assert!(matches!(base.load_state_dict(&full.state_dict().unwrap()), Err(Error::Incompatible(_))));
    let twin = build(&v, 5);
    twin.load_state_dict(&full.state_dict().unwrap()).unwrap();
    let x = image(&v, 1, 0);
    assert_eq!(
        values(&twin.forward(&x, false).unwrap().final_map),
        values(&full.forward(&x, false).unwrap().final_map)
    );
}

/// Norm-wise relative error between the autograd gradient of `f` at `x` and
/// central finite differences.
fn grad_check(x: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> f64 {
    let var = Var::from_tensor(x).unwrap();
    let loss = f(var.as_tensor());
    let analytic = values(loss.backward().unwrap().get(&var).unwrap());
    let base = values(x);
    let shape = x.dims().to_vec();
    let h = 1e-6;
    let eval = |v: &[f64]| -> f64 {
        let t = Tensor::from_vec(v.to_vec(), shape.as_slice(), &Device::Cpu).unwrap();
        f(&t).to_scalar::<f64>().unwrap()
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..base.len() {
        let mut up = base.clone();
        let mut dn = base.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
        num += (fd - analytic[i]).powi(2);
        den += fd.powi(2);
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

fn sum(t: Tensor) -> Tensor {
    t.sum_all().unwrap()
}

fn scope64(seed: u64) -> Scope {
    scratch_scope(seed, DType::F64)
}

#[test]
fn lam_gradient() {
    let lam = Lam::new(&scope64(20), 8).unwrap();
    let x = randn(&[1, 8, 6, 6], 21, DType::F64);
    let err = grad_check(&x, |x| sum(lam.forward(x, false).unwrap()));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn ham_gradient() {
    let ham = Ham::new(&scope64(22), 8, 8).unwrap();
    let x = randn(&[1, 8, 6, 6], 23, DType::F64);
    let err = grad_check(&x, |x| sum(ham.forward(x, false).unwrap()));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn fpb_gradient() {
    let fpb = Fpb::new(&scope64(24), 8, 8, 8).unwrap();
    let enc = randn(&[1, 8, 6, 6], 25, DType::F64);
    let dec = randn(&[1, 8, 6, 6], 26, DType::F64);
    let e1 = grad_check(&enc, |x| sum(fpb.forward(x, &dec).unwrap().as_tensor().clone()));
    let e2 = grad_check(&dec, |x| sum(fpb.forward(&enc, x).unwrap().as_tensor().clone()));
    assert!(e1 < 1e-4 && e2 < 1e-4, "{e1} {e2}");
}

#[test]
fn ffb_gradient() {
    let ffb = Ffb::new(&scope64(27), 8, 8, 8).unwrap();
    let skip = randn(&[1, 8, 6, 6], 28, DType::F64);
    let prev = randn(&[1, 8, 3, 3], 29, DType::F64);
    let gate = AttentionVector::new(randn(&[1, 8, 1, 1], 30, DType::F64).affine(0.4, 0.5).unwrap()).unwrap();
    let e1 = grad_check(&skip, |x| sum(ffb.forward(x, &prev, &gate, false).unwrap()));
    let e2 = grad_check(&prev, |x| sum(ffb.forward(&skip, x, &gate, false).unwrap()));
    assert!(e1 < 1e-4 && e2 < 1e-4, "{e1} {e2}");
}
