use super::*;
use crate::rotation::axis_angle;
use crate::synthetic::{random_params, random_sequence, RandomParamsConfig, SyntheticHead, SyntheticHeadConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn head() -> SyntheticHead {
    SyntheticHead::build(&SyntheticHeadConfig::small())
}

fn track_for(h: &SyntheticHead, seq: &[FaceParams]) -> LandmarkTrack {
    let cam = h.fit_camera();
    let frames = seq
        .iter()
        .map(|p| project_landmarks(&h.model, p, &cam).unwrap())
        .collect();
    LandmarkTrack::new(cam.width, cam.height, frames)
}

/// Random parameters away from the kinks of the constraint term.
fn interior_params(h: &SyntheticHead, rng: &mut ChaCha8Rng) -> FaceParams {
    let mut p = random_params(&h.model, rng, &RandomParamsConfig::default());
    p.beta.iter_mut().for_each(|b| *b = 0.05 + 0.9 * *b);
    p
}

#[test]
fn landmark_loss_examples() {
    let h = head();
    let cam = h.fit_camera();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = interior_params(&h, &mut rng);
    let labels = project_landmarks(&h.model, &p, &cam).unwrap();
    assert!(landmark_loss(&p, &labels, &h.model, &cam).unwrap() < 1e-10);
    let shifted = labels.translated(3.0, 4.0);
    assert!((landmark_loss(&p, &shifted, &h.model, &cam).unwrap() - 25.0).abs() < 1e-8);

    let mut single = shifted.clone();
    single.visible.iter_mut().for_each(|v| *v = false);
    single.visible[7] = true;
    single.points[7][0] += 2.0;
    let expect = 5.0f64.powi(2) + 4.0f64.powi(2);
    assert!((landmark_loss(&p, &single, &h.model, &cam).unwrap() - expect).abs() < 1e-8);

    single.visible[7] = false;
    assert!(matches!(
        landmark_loss(&p, &single, &h.model, &cam),
        Err(Error::NoVisibleLandmarks)
    ));
}

#[test]
fn regularizer_and_identity_examples() {
    let h = head();
    let mut p = FaceParams::neutral_for(&h.model);
    assert_eq!(regularizer(&p), 0.0);
    p.alpha[0] = 1.0;
    assert_eq!(regularizer(&p), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    p.alpha.iter_mut().for_each(|a| *a = rng.random_range(-1.0..1.0));
    p.beta.iter_mut().for_each(|b| *b = rng.random_range(0.0..1.0));
    let mut expect = 0.0;
    for v in p.alpha.iter().chain(&p.beta) {
        expect += v * v;
    }
    assert!((regularizer(&p) - expect).abs() < 1e-12);

    let a: Vec<f64> = (0..5).map(|i| i as f64 * 0.3).collect();
    assert_eq!(identity_consistency(&a, &a).unwrap(), 0.0);
    let mut b = a.clone();
    b[2] += 1.0;
    assert!((identity_consistency(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    assert!(identity_consistency(&a, &b[..4]).is_err());
}

#[test]
fn smoothness_examples() {
    let h = head();
    let p = FaceParams::neutral_for(&h.model);
    assert_eq!(param_smoothness(&vec![p.clone(); 4]).unwrap(), 0.0);
    let mut q = p.clone();
    q.beta[3] = 1.0;
    assert!((param_smoothness(&[p.clone(), q]).unwrap() - 1.0).abs() < 1e-15);

    // linear ramp in beta and translation: (F - 1) |slope|^2
    let slope_b = 0.01;
    let slope_t = [0.02, -0.01, 0.005];
    let seq: Vec<FaceParams> = (0..7)
        .map(|f| {
            let mut s = p.clone();
            s.beta.iter_mut().for_each(|b| *b = slope_b * f as f64);
            s.trans_head = slope_t.map(|v| v * f as f64);
            s
        })
        .collect();
    let per_step = slope_b * slope_b * p.beta.len() as f64 + slope_t.iter().map(|v| v * v).sum::<f64>();
    assert!((param_smoothness(&seq).unwrap() - 6.0 * per_step).abs() < 1e-12);

    // rotation about a fixed axis by a constant increment: |R_a - R_b|_F^2 = 4 (1 - cos d)
    let d = 0.1f64;
    let rot: Vec<FaceParams> = (0..4)
        .map(|f| {
            let mut s = p.clone();
            s.rot_head = matrix_to_rot6d(&axis_angle(Vector3::y(), d * f as f64));
            s
        })
        .collect();
    assert!((param_smoothness(&rot).unwrap() - 3.0 * 4.0 * (1.0 - d.cos())).abs() < 1e-12);
}

#[test]
fn rig_matches_full_model() {
    let h = head();
    let cam = h.fit_camera();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let p = interior_params(&h, &mut rng);
        let full = project_landmarks(&h.model, &p, &cam).unwrap();
        let rig = rig_landmarks(&h.model, &p, &cam).unwrap();
        for (a, b) in full.points.iter().zip(&rig) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }
}

fn check_all_terms(mode: AlphaMode) {
    let h = head();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth: Vec<FaceParams> = (0..3).map(|_| interior_params(&h, &mut rng)).collect();
    let track = track_for(&h, &truth);
    let cfg = FitConfig {
        alpha_mode: mode,
        ..FitConfig::default()
    };
    let problem = FitProblem::new(&h.model, &h.fit_camera(), &track, &cfg).unwrap();
    // evaluate away from the labels so every term has a non-trivial gradient
    let mut init: Vec<FaceParams> = (0..3).map(|_| interior_params(&h, &mut rng)).collect();
    if mode == AlphaMode::PerFrame {
        init[1].alpha.iter_mut().for_each(|a| *a += 0.1);
    }
    let x = problem.pack(&init).unwrap();
    for term in LossTerm::ALL {
        let err = gradient_check(&problem, term, &x, 1e-4).unwrap();
        assert!(err < 1e-4, "{term:?}: {err:e}");
    }
}

#[test]
fn gradients_match_finite_differences_shared() {
    check_all_terms(AlphaMode::Shared);
}

#[test]
fn gradients_match_finite_differences_per_frame() {
    check_all_terms(AlphaMode::PerFrame);
}

#[test]
fn regularizer_gradient_exact_and_interior_constraint_flat() {
    let h = head();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth: Vec<FaceParams> = (0..2).map(|_| interior_params(&h, &mut rng)).collect();
    let track = track_for(&h, &truth);
    let problem = FitProblem::new(&h.model, &h.fit_camera(), &track, &FitConfig::default()).unwrap();
    let x = problem.pack(&truth).unwrap();
    assert!(gradient_check(&problem, LossTerm::Regularizer, &x, 1e-4).unwrap() < 1e-8);
    let g = problem.term_gradient(&x, LossTerm::Constraint).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn shared_identity_has_zero_identity_term() {
    let h = head();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let seq = random_sequence(&h.model, &mut rng, 4, &RandomParamsConfig::default());
    let track = track_for(&h, &seq);
    let problem = FitProblem::new(&h.model, &h.fit_camera(), &track, &FitConfig::default()).unwrap();
    let b = problem.breakdown(&problem.pack(&seq).unwrap()).unwrap();
    assert_eq!(b.identity_consistency, 0.0);
    assert!(b.frames.iter().all(|f| f.landmark < 1e-10));
    assert!((b.smoothness - param_smoothness(&seq).unwrap()).abs() < 1e-9);
}

#[test]
fn truth_is_a_fixed_point_of_the_data_term() {
    // without priors the generating parameters are an exact stationary point
    let h = head();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seq = random_sequence(&h.model, &mut rng, 5, &RandomParamsConfig::default());
    let track = track_for(&h, &seq);
    let cfg = FitConfig {
        lambda_reg: 0.0,
        lambda_smooth: 0.0,
        iterations: 200,
        ..FitConfig::default()
    };
    let r = fit_sequence(&track, &h.model, &h.fit_camera(), Some(&seq), &cfg).unwrap();
    assert!(r.diagnostics.max_landmark_rmse() < 1e-3);
    let a = FitProblem::new(&h.model, &h.fit_camera(), &track, &cfg).unwrap();
    // compare decoded rotations: the raw 6D pairs are not orthonormal
    let clean = a.unpack(&a.pack(&seq).unwrap()).unwrap();
    let (x0, x1) = (a.pack(&clean).unwrap(), a.pack(&r.params).unwrap());
    let drift = x0.iter().zip(&x1).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    assert!(drift < 1e-4, "drift {drift:e}");
}

#[test]
fn empty_or_invisible_tracks_rejected() {
    let h = head();
    let cam = h.fit_camera();
    let empty = LandmarkTrack::new(224, 224, vec![]);
    assert!(fit_sequence(&empty, &h.model, &cam, None, &FitConfig::default()).is_err());
    let p = FaceParams::neutral_for(&h.model);
    let mut fr = project_landmarks(&h.model, &p, &cam).unwrap();
    fr.visible.iter_mut().for_each(|v| *v = false);
    let t = LandmarkTrack::new(224, 224, vec![fr]);
    assert!(fit_sequence(&t, &h.model, &cam, None, &FitConfig::default()).is_err());
    let bad = LandmarkTrack::new(224, 224, vec![LandmarkFrame::all_visible(vec![[1.0, 1.0]; 3])]);
    assert!(bad.validate(N_ROWS).is_err());
}

const N_ROWS: usize = crate::facemodel::N_LANDMARKS;

#[test]
fn loss_term_names_parse() {
    for (s, t) in [
        ("landmark", LossTerm::Landmark),
        ("regularizer", LossTerm::Regularizer),
        ("identity", LossTerm::Identity),
        ("smoothness", LossTerm::Smoothness),
        ("constraint", LossTerm::Constraint),
        ("total", LossTerm::Total),
    ] {
        assert_eq!(s.parse::<LossTerm>().unwrap(), t);
    }
    assert!("lm".parse::<LossTerm>().is_err());
}
