use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mouthsync::audio::{write_wav, Audio, SAMPLE_RATE};
use mouthsync::fit::project_landmarks;
use mouthsync::io::{load_clip, load_model, load_params, save_landmarks, save_model};
use mouthsync::pipeline::{FaceBox, LipsyncReport};
use mouthsync::synthetic::{SyntheticHead, SyntheticHeadConfig};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_mouthsync"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "mouthsync {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn lipsync_sim_is_reproducible_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = |d: &Path| {
        vec![
            "--seed".to_string(),
            "4".into(),
            "lipsync-sim".into(),
            "--small".into(),
            "--frames".into(),
            "6".into(),
            "--out-dir".into(),
            d.to_str().unwrap().into(),
        ]
    };
    let sa: Vec<String> = args(&a);
    let sb: Vec<String> = args(&b);
    run(&sa.iter().map(String::as_str).collect::<Vec<_>>());
    run(&sb.iter().map(String::as_str).collect::<Vec<_>>());
    for i in 0..6 {
        let name = format!("frames/{i:06}.png");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    assert!(!a.join("frames/000006.png").exists());
    let report: LipsyncReport = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.frames.len(), 6);
    assert_eq!(report.config.seed, 4);
    assert!(report.max_outside_change < 2.0 / 255.0);
    assert_eq!(load_params(&a.join("params.json")).unwrap().frames.len(), 6);
}

#[test]
fn fit_recovers_synthetic_landmarks() {
    let dir = tempfile::tempdir().unwrap();
    let head = SyntheticHead::build(&SyntheticHeadConfig::small());
    let model_path = dir.path().join("head.fkt");
    save_model(&model_path, &head.model).unwrap();
    let cam = head.fit_camera();
    let mut params = mouthsync::facemodel::FaceParams::neutral_for(&head.model);
    params.beta[0] = 0.4;
    let lms: Vec<_> = (0..3)
        .map(|_| project_landmarks(&head.model, &params, &cam).unwrap())
        .collect();
    let lm_path = dir.path().join("lms.jsonl");
    save_landmarks(&lm_path, &lms).unwrap();
    let out_path = dir.path().join("params.json");
    let out = run(&[
        "fit",
        "--model",
        p(&model_path),
        "--landmarks",
        p(&lm_path),
        "--out",
        p(&out_path),
    ]);
    let v = json_stdout(&out);
    assert_eq!(v["frames"], 3);
    assert!(v["landmark_rmse"].as_f64().unwrap() < 0.5, "{v}");
    let fitted = load_params(&out_path).unwrap();
    assert_eq!(fitted.frames.len(), 3);
    assert!(fitted.camera.is_some());

    let maps = dir.path().join("maps");
    run(&[
        "render-maps",
        "--model",
        p(&model_path),
        "--params",
        p(&out_path),
        "--frame",
        "2",
        "--resolution",
        "64",
        "--out-dir",
        p(&maps),
    ]);
    for tag in ["P", "S", "flow", "foreground"] {
        assert!(maps.join(format!("000002_{tag}.fmap")).exists());
        assert!(maps.join(format!("000002_{tag}.png")).exists());
    }
}

#[test]
fn decimate_reaches_target_and_keeps_symmetry_table() {
    let dir = tempfile::tempdir().unwrap();
    let head = SyntheticHead::build(&SyntheticHeadConfig::small());
    let model_path = dir.path().join("head.fkt");
    save_model(&model_path, &head.model).unwrap();
    let target = head.model.n_vertices() * 3 / 4;
    let out_path = dir.path().join("small.fkt");
    let plan_path = dir.path().join("plan.json");
    let out = run(&[
        "--seed",
        "1",
        "decimate",
        "--model",
        p(&model_path),
        "--target-verts",
        &target.to_string(),
        "--expr",
        "5",
        "--out",
        p(&out_path),
        "--plan",
        p(&plan_path),
    ]);
    let v = json_stdout(&out);
    let small = load_model(&out_path).unwrap();
    assert_eq!(v["vertices"][1].as_u64().unwrap() as usize, small.n_vertices());
    if v["reached_target"].as_bool().unwrap() {
        assert!(small.n_vertices() <= target);
    }
    assert_eq!(small.symmetry.len(), small.n_vertices());
    assert!(plan_path.exists());
}

#[test]
fn sample_bs_writes_a_fifty_frame_clip() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    let samples = (0..32_000)
        .map(|i| 0.3 * (i as f32 * 0.05).sin())
        .collect();
    write_wav(
        &wav,
        &Audio {
            sample_rate: SAMPLE_RATE,
            samples,
        },
    )
    .unwrap();
    let out_a = dir.path().join("a.bsc");
    let out_b = dir.path().join("b.bsc");
    for out in [&out_a, &out_b] {
        run(&["--seed", "3", "sample-bs", "--audio", p(&wav), "--out", p(out)]);
    }
    let clip = load_clip(&out_a).unwrap();
    assert_eq!(clip.clip.frames, 50);
    assert_eq!(clip.names.len(), clip.clip.dims);
    assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());
}

#[test]
fn delta_cl_metric_from_box_files() {
    let dir = tempfile::tempdir().unwrap();
    let bx = |y2: f64| FaceBox {
        y1: 0.0,
        y2,
        x1: 0.0,
        x2: 100.0,
    };
    let orig = dir.path().join("o.json");
    let lip = dir.path().join("l.json");
    fs::write(&orig, serde_json::to_vec(&[bx(100.0), bx(100.0)]).unwrap()).unwrap();
    fs::write(&lip, serde_json::to_vec(&[bx(110.0), bx(100.0)]).unwrap()).unwrap();
    let v = json_stdout(&run(&["metrics", "delta-cl", "--orig", p(&orig), "--lipsync", p(&lip)]));
    assert!((v["mean"].as_f64().unwrap() - 0.05).abs() < 1e-12);
}

#[test]
fn import_builds_a_model_from_obj_files() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = dir.path().join("shapes");
    fs::create_dir(&shapes).unwrap();
    let quad = |dz: f64| {
        format!("v -1 0 {dz}\nv 1 0 {dz}\nv 1 1 {dz}\nv -1 1 {dz}\nf 1 2 3 4\n")
    };
    fs::write(dir.path().join("neutral.obj"), quad(0.0)).unwrap();
    fs::write(shapes.join("jawOpen.obj"), quad(0.5)).unwrap();
    let out = dir.path().join("m.fkt");
    let v = json_stdout(&run(&[
        "import",
        "--neutral",
        p(&dir.path().join("neutral.obj")),
        "--shapes",
        p(&shapes),
        "--out",
        p(&out),
    ]));
    assert_eq!(v["vertices"], 4);
    assert_eq!(v["triangles"], 2);
    assert_eq!(v["mirrored_vertices"], 4);
    let m = load_model(&out).unwrap();
    assert_eq!(m.blendshape_names, vec!["jawOpen".to_string()]);
}

#[test]
fn invalid_input_fails_with_a_message() {
    let out = Command::new(env!("CARGO_BIN_EXE_mouthsync"))
        .args(["fit", "--model", "/nonexistent.fkt", "--landmarks", "x", "--out", "y"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
