use super::*;
use rand::{Rng, SeedableRng};

fn context(dims: usize, value: f64) -> BlendshapeClip {
    let mut c = BlendshapeClip::zeros(CONTEXT_FRAMES, dims);
    c.data.iter_mut().enumerate().for_each(|(i, v)| *v = value + 1e-3 * i as f64);
    c
}

fn silent_audio(frames: usize) -> Vec<Vec<f32>> {
    vec![vec![0.0; 4]; frames]
}

#[test]
fn schedule_examples() {
    let s = NoiseSchedule::default();
    assert_eq!(s.len(), 1000);
    assert!((s.alphas_cumprod[0] - (1.0 - 1e-4)).abs() < 1e-15);
    assert!(s.alphas_cumprod.windows(2).all(|w| w[1] < w[0]));
    assert!(s.betas.windows(2).all(|w| w[1] > w[0]));
    // independent product
    let mut prod = 1.0;
    for i in 0..1000 {
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
    }
    assert!((s.alphas_cumprod[999] - prod).abs() < 1e-15);
    assert!(prod < 0.01);
    let ts = s.timesteps(50).unwrap();
    assert_eq!(ts.len(), 50);
    assert_eq!((ts[0], ts[49]), (980, 0));
    assert!(s.timesteps(7).is_err());
}

#[test]
fn add_noise_examples() {
    let s = NoiseSchedule::default();
    let b0 = [0.3, -0.2, 0.9];
    let zero = [0.0; 3];
    let a = s.alphas_cumprod[500];
    let x = add_noise(&b0, 500, &zero, &s).unwrap();
    for (xi, bi) in x.iter().zip(&b0) {
        assert!((xi - a.sqrt() * bi).abs() < 1e-15);
    }
    let x = add_noise(&b0, 0, &[0.01, 0.01, 0.01], &s).unwrap();
    for (xi, bi) in x.iter().zip(&b0) {
        assert!((xi - bi).abs() < 2e-3);
    }
    // variance of b_n for b0 = 0 over many draws
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 100_000;
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = add_noise(&vec![0.0; n], 300, &eps, &s).unwrap();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let expect = 1.0 - s.alphas_cumprod[300];
    assert!((var / expect - 1.0).abs() < 0.02, "{var} vs {expect}");
}

#[test]
fn cfg_examples() {
    let c = [0.2, 0.7];
    let u = [0.5, 0.1];
    assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c.to_vec());
    assert_eq!(cfg_combine(&c, &c, 3.7).unwrap(), c.to_vec());
    assert_eq!(cfg_combine(&[1.0], &[0.0], 2.0).unwrap(), vec![2.0]);
    // scale s then 1/s with the same unconditional prediction recovers cond
    let g = cfg_combine(&c, &u, 1.2).unwrap();
    let back = cfg_combine(&g, &u, 1.0 / 1.2).unwrap();
    for (b, ci) in back.iter().zip(&c) {
        assert!((b - ci).abs() < 1e-15);
    }
    assert_eq!(cfg_combine2(&c, &u, &u, 1.0).unwrap(), c.to_vec());
}

#[test]
fn fixed_denoiser_converges_and_keeps_context() {
    let dims = 35;
    let mut target = BlendshapeClip::zeros(CLIP_FRAMES, dims);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    target.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    let ctx = context(dims, 0.4);
    let cond = Conditions {
        context: &ctx,
        audio: &silent_audio(CLIP_FRAMES),
        style: None,
    };
    let s = NoiseSchedule::default();
    for variance in [VarianceMode::Posterior, VarianceMode::TweedieCorrected] {
        let cfg = SamplerConfig {
            variance,
            ..SamplerConfig::default()
        };
        let out = sample(&FixedDenoiser(target.clone()), &cond, CLIP_FRAMES, &s, &cfg, 9).unwrap();
        assert_eq!(out.data[..CONTEXT_FRAMES * dims], ctx.data[..]);
        assert_eq!(out.data[CONTEXT_FRAMES * dims..], target.data[CONTEXT_FRAMES * dims..]);
    }
}

#[test]
fn prediction_is_clipped() {
    let dims = 3;
    let mut target = BlendshapeClip::zeros(CLIP_FRAMES, dims);
    target.data.iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 3.0 } else { -2.0 });
    let ctx = context(dims, 0.0);
    let cond = Conditions {
        context: &ctx,
        audio: &silent_audio(CLIP_FRAMES),
        style: None,
    };
    let out = sample(
        &FixedDenoiser(target),
        &cond,
        CLIP_FRAMES,
        &NoiseSchedule::default(),
        &SamplerConfig::default(),
        0,
    )
    .unwrap();
    assert!(out.data[CONTEXT_FRAMES * dims..]
        .iter()
        .all(|&v| v == CLIP_RANGE.0 || v == CLIP_RANGE.1));
}

#[test]
fn seeds_control_the_output() {
    let dims = 6;
    let s = NoiseSchedule::default();
    let toy = GaussianToyDenoiser::new(&s, 0.5, 0.15);
    let ctx = context(dims, 0.5);
    let cond = Conditions {
        context: &ctx,
        audio: &silent_audio(CLIP_FRAMES),
        style: None,
    };
    let cfg = SamplerConfig::default();
    let a = sample(&toy, &cond, CLIP_FRAMES, &s, &cfg, 1).unwrap();
    let b = sample(&toy, &cond, CLIP_FRAMES, &s, &cfg, 1).unwrap();
    let c = sample(&toy, &cond, CLIP_FRAMES, &s, &cfg, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn bad_shapes_rejected() {
    let s = NoiseSchedule::default();
    let ctx = context(4, 0.0);
    let wrong = BlendshapeClip::zeros(CLIP_FRAMES, 5);
    let cond = Conditions {
        context: &ctx,
        audio: &silent_audio(CLIP_FRAMES),
        style: None,
    };
    assert!(sample(&FixedDenoiser(wrong), &cond, CLIP_FRAMES, &s, &SamplerConfig::default(), 0).is_err());
    let short = Conditions {
        audio: &silent_audio(10),
        ..cond
    };
    let ok = BlendshapeClip::zeros(CLIP_FRAMES, 4);
    assert!(sample(&FixedDenoiser(ok), &short, CLIP_FRAMES, &s, &SamplerConfig::default(), 0).is_err());
}

#[test]
fn echo_denoiser_returns_its_window() {
    let rec = BlendshapeClip::new(60, 2, (0..120).map(|i| i as f64 / 200.0).collect()).unwrap();
    let d = EchoDenoiser {
        recorded: rec.clone(),
        frame_offset: 7,
    };
    let ctx = rec.slice(7, CONTEXT_FRAMES);
    let cond = Conditions {
        context: &ctx,
        audio: &silent_audio(CLIP_FRAMES),
        style: None,
    };
    let out = sample(&d, &cond, CLIP_FRAMES, &NoiseSchedule::default(), &SamplerConfig::default(), 3).unwrap();
    assert_eq!(out, rec.slice(7, CLIP_FRAMES));
    let far = EchoDenoiser {
        recorded: rec,
        frame_offset: 20,
    };
    assert!(sample(&far, &cond, CLIP_FRAMES, &NoiseSchedule::default(), &SamplerConfig::default(), 3).is_err());
}

fn clip(frames: usize, dims: usize, f: impl Fn(usize, usize) -> f64) -> BlendshapeClip {
    let mut c = BlendshapeClip::zeros(frames, dims);
    for i in 0..frames {
        for k in 0..dims {
            c.data[i * dims + k] = f(i, k);
        }
    }
    c
}

#[test]
fn loss_examples() {
    let a = clip(50, 3, |i, k| (i * 7 + k) as f64 * 0.01);
    assert_eq!(loss_simple(&a, &a).unwrap(), 0.0);
    assert_eq!(loss_velocity(&a, &a).unwrap(), 0.0);
    assert_eq!(loss_smooth(&clip(50, 3, |_, k| k as f64)), 0.0);
    // linear in time: no curvature; velocity against a constant target is
    // 49 * sum_k slope_k^2
    let slopes = [0.01, -0.02, 0.03];
    let lin = clip(50, 3, |i, k| 0.2 + slopes[k] * i as f64);
    assert!(loss_smooth(&lin) < 1e-24);
    let constant = clip(50, 3, |_, _| 0.4);
    let expect = 49.0 * slopes.iter().map(|s| s * s).sum::<f64>();
    assert!((loss_velocity(&lin, &constant).unwrap() - expect).abs() < 1e-12);
    let b = clip(50, 3, |i, k| (i * 7 + k) as f64 * 0.01 + 0.5);
    assert!((loss_simple(&a, &b).unwrap() - 150.0 * 0.25).abs() < 1e-9);
    assert!(loss_simple(&a, &clip(49, 3, |_, _| 0.0)).is_err());
}

fn orthonormal_rows(n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..d).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
        .collect()
}

#[test]
fn sync_loss_limits_and_symmetry() {
    let v = orthonormal_rows(50, 64);
    let low = sync_loss_with(&v, &v, &cosine_similarity(0.01)).unwrap();
    assert!(low < 1e-10, "{low:e}");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..16).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let b: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..16).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    assert_eq!(sync_loss(&a, &b).unwrap(), sync_loss(&b, &a).unwrap());
    assert!(sync_loss(&a, &b).unwrap() > 0.0);
    assert!(sync_loss(&a, &b[..49]).is_err());
}

#[test]
fn mock_denoiser_opens_with_loudness() {
    let names = ["jawOpen", "mouthClose", "noseSneer_L"];
    let d = MockAudioDenoiser::for_names(&names);
    let noisy = BlendshapeClip::zeros(CLIP_FRAMES, 3);
    let ctx = context(3, 0.0);
    let mut audio = vec![vec![crate::audio::LOG_FLOOR.ln() as f32 - 1.0; 8]; CLIP_FRAMES];
    audio[20] = vec![0.0; 8];
    let input = DenoiserInput {
        context: &ctx,
        noisy: &noisy,
        audio: &audio,
        style: None,
        step: 0,
        drop_audio: false,
        drop_style: false,
        drop_context: false,
    };
    let out = d.predict(&input).unwrap();
    assert_eq!(out.row(0)[0], 0.0);
    assert!(out.row(20)[0] > 0.5);
    assert_eq!(out.row(20)[2], 0.0);
    let dropped = d
        .predict(&DenoiserInput {
            drop_audio: true,
            ..input
        })
        .unwrap();
    assert!(dropped.data.iter().all(|&v| v == 0.0));
}

proptest::proptest! {
    #[test]
    fn unit_guidance_is_the_conditional_prediction(
        c in proptest::collection::vec(-2.0..2.0f64, 1..20),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = c.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        proptest::prop_assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c);
    }
}
