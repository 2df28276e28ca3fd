use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sftik_core::model::{
    count_flops, count_params, embed, forward, forward_batch, image_encoder_flops, init_params, param_layout,
    patchify_image, patchify_imu, stage_plan, Ablation, Fusion, ModelConfig, ModelInput, ModelParams, ParamVars,
    PatchMode,
};
use sftik_tensor::gradcheck::{grad_check_with, GradCheckConfig};
use sftik_tensor::{Tape, Tensor};

struct Inputs<T> {
    k: Tensor<T>,
    prev: Tensor<T>,
    cur: Tensor<T>,
}

fn random_inputs(cfg: &ModelConfig, seed: u64) -> Inputs<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = vec![cfg.image_channels, cfg.image_height, cfg.image_width];
    Inputs {
        k: Tensor::from_fn(vec![cfg.kin_channels, cfg.series_len], |_| rng.random_range(-1.0..1.0)),
        prev: Tensor::from_fn(img.clone(), |_| rng.random_range(0.0..1.0)),
        cur: Tensor::from_fn(img, |_| rng.random_range(0.0..1.0)),
    }
}

impl<T: sftik_tensor::Scalar> Inputs<T> {
    fn model_input(&self) -> ModelInput<'_, T> {
        ModelInput {
            kinematics: &self.k,
            image_prev: &self.prev,
            image_cur: &self.cur,
        }
    }
}

fn variants(base: ModelConfig) -> Vec<(&'static str, ModelConfig)> {
    vec![
        ("sandwich", base.clone()),
        ("early", ModelConfig { fusion: Fusion::Early, ..base.clone() }),
        ("late", ModelConfig { fusion: Fusion::Late, ..base.clone() }),
        ("no_prev_image", ModelConfig { ablation: Ablation::NoPrevImage, ..base.clone() }),
        ("no_imu", ModelConfig { ablation: Ablation::NoImu, ..base }),
    ]
}

/// Narrow model on the full-size token geometry.
fn narrow_default() -> ModelConfig {
    ModelConfig {
        d_emb: 16,
        heads: 2,
        n1: 1,
        n2: 1,
        ..ModelConfig::default()
    }
}

#[test]
fn default_shape_pipeline() {
    let cfg = ModelConfig::default();
    let x = random_inputs(&cfg, 0);
    assert_eq!(patchify_image(&x.cur, &cfg).unwrap().shape(), &[14, 3584]);
    assert_eq!(patchify_imu(&x.k, &cfg).unwrap().shape(), &[10, 190]);

    let params = init_params(&cfg, 0).unwrap();
    let mut tape = Tape::<f32>::new();
    let vars = ParamVars::register(&mut tape, &params, false).unwrap();
    let xf = Inputs { k: x.k.cast(), prev: x.prev.cast(), cur: x.cur.cast() };
    let out = forward(&mut tape, &vars, xf.model_input(), &cfg, None).unwrap();
    assert_eq!(tape.value(out.prediction).shape(), &[1, 100]);
    let tokens: Vec<usize> = out.stages.iter().map(|s| s.tokens).collect();
    assert_eq!(tokens, vec![24, 14, 38]);
    assert_eq!(out.attention.len(), 12 * 18);
}

#[test]
fn token_counts_per_variant() {
    let expect: [(&str, &[usize]); 5] = [
        ("sandwich", &[24, 14, 38]),
        ("early", &[38]),
        ("late", &[10, 14, 14, 38]),
        ("no_prev_image", &[10, 14, 24]),
        ("no_imu", &[14, 14, 28]),
    ];
    for ((name, cfg), (ename, want)) in variants(narrow_default()).into_iter().zip(expect) {
        assert_eq!(name, ename);
        let plan: Vec<usize> = stage_plan(&cfg).iter().map(|s| s.tokens).collect();
        assert_eq!(plan, want, "{name}");
        let depth: usize = stage_plan(&cfg)
            .iter()
            .filter(|s| !s.name.starts_with("stage1_") || s.name == "stage1_image")
            .map(|s| s.blocks)
            .sum();
        assert_eq!(depth, cfg.n1 + cfg.n2, "{name}");

        let params = init_params(&cfg, 1).unwrap().cast::<f64>();
        let mut tape = Tape::<f64>::new();
        let vars = ParamVars::register(&mut tape, &params, false).unwrap();
        let x = random_inputs(&cfg, 2);
        let out = forward(&mut tape, &vars, x.model_input(), &cfg, None).unwrap();
        assert_eq!(out.stages, stage_plan(&cfg), "{name}");
        assert_eq!(tape.value(out.prediction).shape(), &[1, 100]);
    }
}

#[test]
fn attention_rows_sum_to_one_everywhere() {
    for (name, cfg) in variants(ModelConfig::toy_gradcheck()) {
        let mut params = init_params(&cfg, 3).unwrap().cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in params.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        for seed in 0..3 {
            let mut tape = Tape::<f64>::new();
            let vars = ParamVars::register(&mut tape, &params, false).unwrap();
            let x = random_inputs(&cfg, seed);
            let out = forward(&mut tape, &vars, x.model_input(), &cfg, None).unwrap();
            assert!(!out.attention.is_empty());
            for &a in &out.attention {
                let a = tape.value(a);
                let (rows, cols) = a.dims2().unwrap();
                assert_eq!(rows, cols);
                for r in 0..rows {
                    let s: f64 = a.row(r).iter().sum();
                    assert!((s - 1.0).abs() < 1e-6, "{name}: row sum {s}");
                    assert!(a.row(r).iter().all(|&p| p >= 0.0));
                }
            }
        }
    }
}

#[test]
fn zero_weights_give_the_head_bias() {
    for (name, cfg) in variants(ModelConfig::toy_gradcheck()) {
        let mut params = init_params(&cfg, 0).unwrap().cast::<f64>();
        params.tensors.values_mut().for_each(|t| t.data_mut().fill(0.0));
        let bias = Tensor::from_fn(vec![cfg.out_len], |i| (i as f64 * 0.7).sin() * 10.0);
        *params.tensors.get_mut("head.fc2.bias").unwrap() = bias.clone();
        for seed in [1, 2] {
            let mut tape = Tape::<f64>::new();
            let vars = ParamVars::register(&mut tape, &params, false).unwrap();
            let x = random_inputs(&cfg, seed);
            let out = forward(&mut tape, &vars, x.model_input(), &cfg, None).unwrap();
            assert_eq!(tape.value(out.prediction).data(), bias.data(), "{name}");
        }
    }
}

#[test]
fn identical_images_embed_identically() {
    let cfg = ModelConfig::toy();
    let params = init_params(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = Tensor::<f32>::from_fn(vec![1, 224, 224], |_| rng.random_range(0.0..1.0));
    let copy = Tensor::new(img.shape().to_vec(), img.data().to_vec()).unwrap();
    let mut tape = Tape::<f32>::new();
    let vars = ParamVars::register(&mut tape, &params, false).unwrap();
    let a = embed(&mut tape, patchify_image(&img, &cfg).unwrap(), &vars, "image").unwrap();
    let b = embed(&mut tape, patchify_image(&copy, &cfg).unwrap(), &vars, "image").unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(tape.value(a)), bits(tape.value(b)));
    assert!(param_layout(&cfg).iter().all(|s| !s.name.contains("prev")));
}

#[test]
fn batched_forward_matches_single_samples() {
    let cfg = ModelConfig::toy_gradcheck();
    let params = init_params(&cfg, 7).unwrap().cast::<f64>();
    let xs: Vec<Inputs<f64>> = (0..3).map(|s| random_inputs(&cfg, 10 + s)).collect();
    let mut tape = Tape::<f64>::new();
    let vars = ParamVars::register(&mut tape, &params, false).unwrap();
    let inputs: Vec<ModelInput<f64>> = xs.iter().map(Inputs::model_input).collect();
    let batch = forward_batch(&mut tape, &vars, &inputs, &cfg, None).unwrap();
    for (x, b) in xs.iter().zip(&batch) {
        let mut t1 = Tape::<f64>::new();
        let v1 = ParamVars::register(&mut t1, &params, false).unwrap();
        let single = forward(&mut t1, &v1, x.model_input(), &cfg, None).unwrap();
        for (p, q) in t1.value(single.prediction).data().iter().zip(tape.value(b.prediction).data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn init_std_of_a_full_size_weight() {
    let cfg = ModelConfig::default();
    let params = init_params(&cfg, 0).unwrap();
    let w = params.get("stage2.0.attn.wq").unwrap();
    assert_eq!(w.shape(), &[768, 768]);
    let n = w.numel() as f64;
    let mean = w.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    assert!((0.015..=0.025).contains(&std), "{std}");
    assert!(w.data().iter().all(|v| v.abs() <= 0.04 + 1e-7));
    assert_eq!(params.numel(), count_params(&cfg));
}

#[test]
fn flops_match_the_published_scale() {
    let enc = |mode| {
        let cfg = ModelConfig { image_patch_mode: mode, ..ModelConfig::default() };
        image_encoder_flops(&cfg, 6).total_gflops
    };
    let (w, h, s) = (enc(PatchMode::Width), enc(PatchMode::Height), enc(PatchMode::Square));
    assert_eq!(w, h);
    assert!((w / 0.63 - 1.0).abs() <= 0.02, "{w}");
    assert!((s / 8.37 - 1.0).abs() <= 0.02, "{s}");
    let full = count_flops(&ModelConfig::default()).total_gflops;
    assert!((full / 3.31 - 1.0).abs() <= 0.02, "{full}");
}

/// Builds the mean-squared error of one forward pass against a fixed target.
fn toy_loss(
    cfg: &ModelConfig,
    names: &[String],
    x: &Inputs<f64>,
    target: &Tensor<f64>,
    ps: &[Tensor<f64>],
) -> sftik_tensor::Result<(Tape<f64>, ParamVars, sftik_tensor::Var)> {
    let mut tape = Tape::with_finite_check(true);
    let vars = ParamVars::register_named(&mut tape, names, ps, true).map_err(to_tensor_err)?;
    let out = forward(&mut tape, &vars, x.model_input(), cfg, None).map_err(to_tensor_err)?;
    let loss = tape.mse(out.prediction, target)?;
    Ok((tape, vars, loss))
}

fn to_tensor_err(e: sftik_core::Error) -> sftik_tensor::TensorError {
    sftik_tensor::TensorError::Contract(e.to_string())
}

/// Random weights of order one so every nonlinearity is exercised.
fn gradcheck_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = init_params(cfg, seed).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for (name, t) in p.tensors.iter_mut() {
        let scale = if name.ends_with("gamma") { 0.3 } else { 1.0 / (t.shape()[0] as f64).sqrt() };
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-1.0..1.0) * scale);
    }
    p
}

fn check_variant(cfg: &ModelConfig, coords: usize) -> f64 {
    let params = gradcheck_params(cfg, 21);
    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let tensors: Vec<Tensor<f64>> = params.tensors.values().cloned().collect();
    let x = random_inputs(cfg, 22);
    let target = Tensor::from_fn(vec![1, cfg.out_len], |i| (i as f64 * 0.4).cos());
    let value = |ps: &[Tensor<f64>]| {
        let (tape, _, loss) = toy_loss(cfg, &names, &x, &target, ps)?;
        Ok(tape.value(loss).data()[0])
    };
    let analytic = |ps: &[Tensor<f64>]| {
        let (tape, vars, loss) = toy_loss(cfg, &names, &x, &target, ps)?;
        let grads = tape.backward(loss)?;
        Ok(names
            .iter()
            .zip(ps)
            .map(|(n, p)| grads.get_or_zeros(vars.get(n).unwrap(), p.shape()))
            .collect())
    };
    let gc = GradCheckConfig { max_coords_per_tensor: coords, ..GradCheckConfig::default() };
    let report = grad_check_with(value, analytic, &tensors, &gc).unwrap();
    println!("max rel error {:.3e} over {} coords", report.max_rel_error, report.coords_checked);
    report.max_rel_error
}

#[test]
fn every_fusion_variant_passes_gradient_check() {
    for (name, cfg) in variants(ModelConfig::toy_gradcheck()) {
        let err = check_variant(&cfg, 24);
        assert!(err < 1e-4, "{name}: {err:.3e}");
    }
}
