use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mouthsync::audio::{read_wav, Audio, CLIP_SAMPLES, SAMPLE_RATE};
use mouthsync::camera::ProjectiveCamera;
use mouthsync::decimate::{decimate_symmetric, expression_quadrics, DecimationConfig};
use mouthsync::diffusion::{
    audio_embeddings, sample, BlendshapeClip, Conditions, Denoiser, FixedDenoiser,
    MockAudioDenoiser, NoiseSchedule, SamplerConfig, CLIP_FRAMES, CONTEXT_FRAMES,
};
use mouthsync::facemodel::{FaceModel, MouthIndexSet};
use mouthsync::fit::{fit_sequence, FitConfig, LandmarkTrack};
use mouthsync::image::Image;
use mouthsync::io::{
    import_obj_model, load_clip, load_landmarks, load_model, load_obj, load_params, save_clip,
    save_map, save_model, save_params, NamedClip, ParamsFile, TaggedMap,
};
use mouthsync::maps::{render_maps, SketchConfig};
use mouthsync::pipeline::{
    delta_cl, frame_file_name, lipsync_run, synthetic_scene, write_output, DenoiserKind, FaceBox,
    LipsyncConfig, LipsyncJob, MockGenerator, SceneConfig,
};
use mouthsync::synthetic::{SyntheticHead, SyntheticHeadConfig};
use mouthsync::warp::locality_metric;

#[derive(Parser)]
#[command(name = "mouthsync", version, about = "Blendshape-driven mouth lip-sync toolkit")]
struct Cli {
    /// Seed for every random choice of the command; overrides the seed of
    /// a `--config` file. Defaults to 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON configuration file (lip-sync configuration or job).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expression-aware symmetric decimation of a face model.
    Decimate(DecimateArgs),
    /// Render P, S, flow and foreground maps for fitted parameters.
    RenderMaps(RenderMapsArgs),
    /// Fit model parameters to a landmark track.
    Fit(FitArgs),
    /// Sample a 50-frame mouth blendshape clip from audio.
    SampleBs(SampleArgs),
    /// Run the lip-sync pipeline on the synthetic scene.
    LipsyncSim(LipsyncSimArgs),
    /// Run a lip-sync job described by the `--config` file.
    Lipsync(LipsyncArgs),
    /// Evaluation metrics.
    Metrics(MetricsArgs),
    /// Build an FKT1 model from OBJ meshes.
    Import(ImportArgs),
}

#[derive(Args)]
struct DecimateArgs {
    /// Input model; the built-in synthetic head when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    target_verts: usize,
    /// Number of sampled expressions.
    #[arg(long, default_value_t = 50)]
    expr: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct RenderMapsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Reference frame of the flow.
    #[arg(long, default_value_t = 0)]
    ref_frame: usize,
    /// Only this frame; all frames when omitted.
    #[arg(long)]
    frame: Option<usize>,
    /// Output resolution; the camera stored in the parameters is rescaled.
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    /// Image size the landmarks refer to.
    #[arg(long, default_value_t = 224)]
    width: usize,
    #[arg(long, default_value_t = 224)]
    height: usize,
    #[arg(long, default_value_t = 1015.0)]
    focal: f64,
    #[arg(long, default_value_t = 15.0)]
    camera_distance: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DenoiserChoice {
    Mock,
    File,
}

#[derive(Args)]
struct SampleArgs {
    /// 16 kHz mono WAV; the first two seconds are used.
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    style: Option<PathBuf>,
    /// Context frames; the first five frames of the style clip otherwise.
    #[arg(long)]
    context: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mock")]
    denoiser: DenoiserChoice,
    /// Clip returned by the `file` denoiser.
    #[arg(long)]
    denoiser_clip: Option<PathBuf>,
    /// Model whose mouth blendshape names label the clip columns.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LipsyncSimArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, value_enum)]
    denoiser: Option<SimDenoiser>,
    /// Use the small synthetic head.
    #[arg(long)]
    small: bool,
    /// Also write the input frames.
    #[arg(long)]
    write_input: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimDenoiser {
    Mock,
    Echo,
}

#[derive(Args)]
struct LipsyncArgs {}

#[derive(Args)]
struct MetricsArgs {
    #[command(subcommand)]
    metric: Metric,
}

#[derive(Subcommand)]
enum Metric {
    /// Mean of |(1 - K)(pred - ref)| over pixels and channels.
    Locality {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Mask PNG; its first channel is used, white = allowed to change.
        #[arg(long)]
        mask: PathBuf,
    },
    /// Chin-line displacement between two JSON arrays of face boxes.
    DeltaCl {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        lipsync: PathBuf,
    },
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    neutral: PathBuf,
    /// Directory of blendshape OBJs; the file stem is the name.
    #[arg(long)]
    shapes: PathBuf,
    /// Directory of identity OBJs, in file-name order.
    #[arg(long)]
    identity: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    mirror_tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn model_or_synthetic(path: Option<&Path>) -> Result<FaceModel> {
    match path {
        Some(p) => load_model(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(SyntheticHead::build(&SyntheticHeadConfig::standard()).model),
    }
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

fn lipsync_config(path: Option<&Path>, seed: Option<u64>) -> Result<LipsyncConfig> {
    let mut cfg: LipsyncConfig = match path {
        Some(p) => serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => LipsyncConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn decimate(args: &DecimateArgs, seed: u64) -> Result<()> {
    let model = model_or_synthetic(args.model.as_deref())?;
    let cfg = DecimationConfig::default();
    let quadrics = expression_quadrics(&model, args.expr, seed, &cfg)?;
    let (out, plan) = decimate_symmetric(&model, &quadrics, args.target_verts, &cfg)?;
    save_model(&args.out, &out)?;
    if let Some(p) = &args.plan {
        write_json(p, &plan)?;
    }
    print_json(&serde_json::json!({
        "vertices": [model.n_vertices(), out.n_vertices()],
        "triangles": [model.triangles.len(), out.triangles.len()],
        "reached_target": plan.reached_target,
    }))
}

fn render(args: &RenderMapsArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let file = load_params(&args.params)?;
    let params = file.to_params()?;
    if params.is_empty() {
        bail!("no frames in {}", args.params.display());
    }
    let Some(reference) = params.get(args.ref_frame) else {
        bail!("reference frame {} out of range", args.ref_frame);
    };
    let camera = file
        .camera
        .clone()
        .unwrap_or_else(|| ProjectiveCamera::default_fit(15.0))
        .resized(args.resolution, args.resolution);
    let frames: Vec<usize> = match args.frame {
        Some(f) if f < params.len() => vec![f],
        Some(f) => bail!("frame {f} out of range"),
        None => (0..params.len()).collect(),
    };
    fs::create_dir_all(&args.out_dir)?;
    for f in frames {
        let maps = render_maps(&model, reference, &params[f], &camera, &SketchConfig::default())?;
        let stem = format!("{f:06}");
        let flow_preview = Image::from_fn(3, maps.flow.height, maps.flow.width, |c, y, x| {
            if c == 2 {
                0.5
            } else {
                0.5 + maps.flow.get(c, y, x) / 32.0
            }
        });
        let p_preview = Image::from_fn(3, maps.p.height, maps.p.width, |c, y, x| {
            if maps.foreground.get(0, y, x) > 0.0 {
                0.5 + 0.4 * maps.p.get(c, y, x)
            } else {
                0.0
            }
        });
        for (tag, img, preview) in [
            ("P", &maps.p, p_preview),
            ("S", &maps.s, maps.s.clone()),
            ("flow", &maps.flow, flow_preview),
            ("foreground", &maps.foreground, maps.foreground.clone()),
        ] {
            save_map(
                &args.out_dir.join(format!("{stem}_{tag}.fmap")),
                &TaggedMap {
                    tag: tag.into(),
                    image: img.clone(),
                },
            )?;
            preview.save_png(&args.out_dir.join(format!("{stem}_{tag}.png")))?;
        }
    }
    Ok(())
}

fn fit(args: &FitArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let track = LandmarkTrack::new(args.width, args.height, load_landmarks(&args.landmarks)?);
    let camera = ProjectiveCamera::facing_origin(args.focal, args.width, args.height, args.camera_distance)?;
    camera.validate()?;
    let mut cfg = FitConfig::default();
    if let Some(n) = args.iters {
        cfg.iterations = n;
    }
    let result = fit_sequence(&track, &model, &camera, None, &cfg)?;
    save_params(&args.out, &ParamsFile::from_params(&result.params, Some(&camera)))?;
    let d = &result.diagnostics;
    print_json(&serde_json::json!({
        "frames": track.len(),
        "converged": d.converged,
        "iterations": d.iterations,
        "final_loss": d.final_loss,
        "landmark_rmse": d.landmark_rmse(),
        "max_constraint_violation": d.max_constraint_violation(),
    }))
}

fn two_seconds(audio: &Audio) -> Result<Audio> {
    if audio.sample_rate != SAMPLE_RATE {
        bail!("expected {SAMPLE_RATE} Hz audio, got {} Hz", audio.sample_rate);
    }
    Ok(Audio {
        sample_rate: audio.sample_rate,
        samples: audio.window(0, CLIP_SAMPLES),
    })
}

fn sample_bs(args: &SampleArgs, seed: u64) -> Result<()> {
    let audio = two_seconds(&read_wav(&args.audio)?)?;
    let embeddings = audio_embeddings(&mouthsync::audio::mel_chunk(&audio)?);
    let style = args.style.as_deref().map(load_clip).transpose()?;
    let names: Vec<String> = match (&args.model, &style) {
        (Some(p), _) => {
            let m = load_model(p)?;
            let set = MouthIndexSet::from_prefixes(&m)?;
            set.indices().iter().map(|&i| m.blendshape_names[i].clone()).collect()
        }
        (None, Some(s)) if !s.names.is_empty() => s.names.clone(),
        _ => {
            let m = SyntheticHead::build(&SyntheticHeadConfig::small()).model;
            let set = MouthIndexSet::from_prefixes(&m)?;
            set.indices().iter().map(|&i| m.blendshape_names[i].clone()).collect()
        }
    };
    let dims = names.len();
    let context = match (&args.context, &style) {
        (Some(p), _) => load_clip(p)?.clip,
        (None, Some(s)) if s.clip.frames >= CONTEXT_FRAMES => s.clip.slice(0, CONTEXT_FRAMES),
        _ => BlendshapeClip::zeros(CONTEXT_FRAMES, dims),
    };
    let denoiser: Box<dyn Denoiser> = match args.denoiser {
        DenoiserChoice::Mock => Box::new(MockAudioDenoiser::for_names(&names)),
        DenoiserChoice::File => {
            let Some(p) = &args.denoiser_clip else {
                bail!("--denoiser file needs --denoiser-clip");
            };
            Box::new(FixedDenoiser(load_clip(p)?.clip))
        }
    };
    let cond = Conditions {
        context: &context,
        audio: &embeddings,
        style: style.as_ref().map(|s| &s.clip),
    };
    let clip = sample(
        denoiser.as_ref(),
        &cond,
        CLIP_FRAMES,
        &NoiseSchedule::default(),
        &SamplerConfig::default(),
        seed,
    )?;
    save_clip(&args.out, &NamedClip { names, clip })?;
    Ok(())
}

fn lipsync_sim(args: &LipsyncSimArgs, seed: Option<u64>, config: Option<&Path>) -> Result<()> {
    let mut cfg = lipsync_config(config, seed)?;
    if let Some(d) = args.denoiser {
        cfg.denoiser = match d {
            SimDenoiser::Mock => DenoiserKind::Mock,
            SimDenoiser::Echo => DenoiserKind::Echo,
        };
    }
    let scene = synthetic_scene(&SceneConfig {
        frames: args.frames,
        seed: cfg.seed,
        head: if args.small {
            SyntheticHeadConfig::small()
        } else {
            SyntheticHeadConfig::standard()
        },
        ..SceneConfig::default()
    })?;
    let out = lipsync_run(&scene.input(), &scene.head.model, &MockGenerator, &cfg)?;
    write_output(&args.out_dir, &out, Some(&cfg.fit_camera()?))?;
    if args.write_input {
        let dir = args.out_dir.join("input");
        fs::create_dir_all(&dir)?;
        for (i, f) in scene.frames.iter().enumerate() {
            f.save_png(&dir.join(frame_file_name(i)))?;
        }
    }
    let r = &out.report;
    print_json(&serde_json::json!({
        "frames": r.frames.len(),
        "delta_cl_mean": r.delta_cl_mean,
        "mean_locality": r.mean_locality,
        "max_outside_change": r.max_outside_change,
        "fit_converged": r.fit_converged,
        "flags": r.flags,
    }))
}

fn lipsync_job(config: Option<&Path>) -> Result<()> {
    let Some(path) = config else {
        bail!("lipsync needs --config job.json");
    };
    let job: LipsyncJob = serde_json::from_slice(&fs::read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let report = job.run()?;
    print_json(&serde_json::json!({
        "frames": report.frames.len(),
        "delta_cl_mean": report.delta_cl_mean,
        "flags": report.flags,
    }))
}

fn metrics(args: &MetricsArgs) -> Result<()> {
    match &args.metric {
        Metric::Locality {
            pred,
            reference,
            mask,
        } => {
            let a = Image::load_png(pred)?;
            let b = Image::load_png(reference)?;
            let m = Image::load_png(mask)?;
            let k = Image::new(1, m.height, m.width, m.plane(0).to_vec())?;
            print_json(&serde_json::json!({ "locality": locality_metric(&a, &b, &k)? }))
        }
        Metric::DeltaCl { orig, lipsync } => {
            let o: Vec<FaceBox> = serde_json::from_slice(&fs::read(orig)?)?;
            let l: Vec<FaceBox> = serde_json::from_slice(&fs::read(lipsync)?)?;
            print_json(&delta_cl(&o, &l)?)
        }
    }
}

fn import(args: &ImportArgs) -> Result<()> {
    let neutral = load_obj(&args.neutral)?;
    let shapes = files_with_ext(&args.shapes, "obj")?
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, load_obj(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let identity = match &args.identity {
        Some(d) => files_with_ext(d, "obj")?
            .iter()
            .map(|p| Ok(load_obj(p)?))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let model = import_obj_model(&neutral, &identity, &shapes, args.mirror_tolerance)?;
    let paired = model
        .symmetry
        .iter()
        .enumerate()
        .filter(|(i, &j)| *i != j as usize)
        .count();
    save_model(&args.out, &model)?;
    print_json(&serde_json::json!({
        "vertices": model.n_vertices(),
        "triangles": model.triangles.len(),
        "blendshapes": model.n_blendshapes(),
        "identity": model.n_identity(),
        "mirrored_vertices": paired,
    }))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let config = cli.config.as_deref();
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Decimate(a) => decimate(a, seed),
        Command::RenderMaps(a) => render(a),
        Command::Fit(a) => fit(a),
        Command::SampleBs(a) => sample_bs(a, seed),
        Command::LipsyncSim(a) => lipsync_sim(a, cli.seed, config),
        Command::Lipsync(LipsyncArgs {}) => lipsync_job(config),
        Command::Metrics(a) => metrics(a),
        Command::Import(a) => import(a),
    }
}
