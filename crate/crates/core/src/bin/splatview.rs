use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splatview::io::{self, gen_synthetic, Pose, Preset, SyntheticSpec, TextureKind};
use splatview::optim::{harmonize, write_trace_csv, OptimConfig, Trainer};
use splatview::render::{render_novel, select_views, LinearHead, RenderOptions};
use splatview::serve::{self, ServeOptions};
use splatview::{CameraModel, Error, Scene};

#[derive(Parser)]
#[command(name = "splatview", version, about = "Multi-view point splatting: render, optimize, harmonize, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Leave-one-out optimization of per-view attributes.
    Optimize(OptimizeArgs),
    /// Render a novel view to an image.
    Render(RenderArgs),
    /// Optimize per-view exposure coefficients.
    Harmonize(HarmonizeArgs),
    /// Print the views selected for a pose as JSON.
    Select(SelectArgs),
    /// Write a synthetic scene.
    Synth(SynthArgs),
    /// Serve renders over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = splatview::optim::DEFAULT_PATCH)]
    patch: usize,
    /// Output directory (defaults to overwriting the scene).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Pose JSON file.
    #[arg(long, conflicts_with = "view", required_unless_present = "view")]
    pose: Option<PathBuf>,
    /// Render from a stored view's camera.
    #[arg(long)]
    view: Option<u32>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Layered approximation instead of sorted compositing.
    #[arg(long)]
    fast: bool,
    #[arg(long, default_value_t = 9)]
    k: usize,
    /// Depth-test samples.
    #[arg(long = "s", default_value_t = 1)]
    samples: usize,
    /// .png, .ppm or .pfm
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HarmonizeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also optimize colors.
    #[arg(long)]
    colors: bool,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    k: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// textured-plane, two-walls or box-corner
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 3)]
    views: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// checker or value-noise
    #[arg(long, default_value = "value-noise")]
    texture: String,
    /// Arc spanned by the cameras, degrees.
    #[arg(long, default_value_t = 30.0)]
    arc: f64,
    /// Relative depth noise applied to --noisy-views.
    #[arg(long, default_value_t = 0.0)]
    depth_noise: f64,
    #[arg(long, value_delimiter = ',')]
    noisy_views: Vec<u32>,
    /// `ID:FACTOR`; the view's colors are divided by FACTOR.
    #[arg(long)]
    exposure: Vec<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

/// Exit status 1: bad arguments. 2: bad data or a failed run.
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = splatview::init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Optimize(a) => optimize(a),
        Command::Render(a) => render(a),
        Command::Harmonize(a) => run_harmonize(a),
        Command::Select(a) => select(a),
        Command::Synth(a) => synth(a),
        Command::Serve(a) => run_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load(dir: &Path) -> Result<(Scene, LinearHead), Error> {
    let (scene, head) = io::load_scene_with_head(dir)?;
    Ok((scene, head.unwrap_or_else(LinearHead::identity)))
}

fn read_pose(path: &Path) -> Result<Pose, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Pose::from_json(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })
}

fn optimize(a: OptimizeArgs) -> Outcome {
    let config = OptimConfig {
        iterations: a.iters,
        patch_size: a.patch,
        seed: a.seed,
        ..Default::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let (mut scene, head) = load(&a.scene)?;
    let out = a.out.unwrap_or_else(|| a.scene.clone());
    if a.iters == 0 {
        io::save_scene_with_head(&scene, Some(&head), &out)?;
        return Ok(());
    }
    let mut trainer = Trainer::new(&scene, head, config)?;
    for _ in 0..a.iters {
        if let Some(loss) = trainer.loo_step(&mut scene)? {
            log::info!("iteration {}: loss {loss:.6}", trainer.iteration());
        }
    }
    if let Some(last) = trainer.trace.last() {
        println!("{{\"iterations\": {}, \"finalLoss\": {}}}", a.iters, last.loss);
    }
    io::save_scene_with_head(&scene, Some(&trainer.head), &out)?;
    if let Some(path) = a.trace {
        write_trace_csv(&trainer.trace, &path)?;
    }
    Ok(())
}

fn render_camera(scene: &Scene, pose: Option<&Path>, view: Option<u32>, width: Option<usize>, height: Option<usize>) -> Result<CameraModel, Error> {
    let (base, w, h): (CameraModel, Option<usize>, Option<usize>) = match (pose, view) {
        (Some(p), _) => {
            let mut pose = read_pose(p)?;
            pose.width = width.or(pose.width);
            pose.height = height.or(pose.height);
            return pose.camera(&scene.views[0].camera);
        }
        (None, Some(id)) => {
            let v = scene.view(id).ok_or_else(|| Error::invalid(format!("scene has no view {id}")))?;
            (v.camera.clone(), width, height)
        }
        (None, None) => return Err(Error::invalid("either a pose or a view is required")),
    };
    let (w, h) = (w.unwrap_or(base.width), h.unwrap_or(base.height));
    Ok(if (w, h) == (base.width, base.height) { base } else { base.resized(w, h) })
}

fn render(a: RenderArgs) -> Outcome {
    if a.k == 0 || a.samples == 0 {
        return Err(usage("--k and --s must be at least 1"));
    }
    if matches!(a.width, Some(0)) || matches!(a.height, Some(0)) {
        return Err(usage("resolution must be positive"));
    }
    let ext = a.out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    if !matches!(ext.as_deref(), Some("png" | "ppm" | "pfm")) {
        return Err(usage("--out must end in .png, .ppm or .pfm"));
    }
    let (scene, head) = load(&a.scene)?;
    let camera = render_camera(&scene, a.pose.as_deref(), a.view, a.width, a.height)?;
    let opts = RenderOptions {
        k: a.k,
        samples: a.samples,
        fast: a.fast,
        ..Default::default()
    };
    let r = render_novel(&scene, &camera, &opts, &head)?;
    match ext.as_deref() {
        Some("png") => {
            let bytes = io::encode_png(&r.color)?;
            std::fs::write(&a.out, bytes).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
        }
        Some("ppm") => io::write_ppm(&a.out, &r.color)?,
        _ => io::write_pfm(&a.out, &r.color)?,
    }
    let ids: Vec<String> = r.view_ids.iter().map(|i| i.to_string()).collect();
    log::info!("rendered {}x{} from views {}", r.width, r.height, ids.join(","));
    Ok(())
}

fn run_harmonize(a: HarmonizeArgs) -> Outcome {
    let config = OptimConfig {
        iterations: a.iters,
        seed: a.seed,
        harmonize_colors: a.colors,
        ..Default::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let (mut scene, head) = load(&a.scene)?;
    let result = harmonize(&mut scene, &config)?;
    io::save_scene_with_head(&scene, Some(&head), &a.out)?;
    let mu: serde_json::Map<String, serde_json::Value> = result.mu.iter().map(|(id, m)| (id.to_string(), serde_json::json!(m))).collect();
    println!("{}", serde_json::json!({ "mu": mu }));
    if let Some(path) = a.trace {
        write_trace_csv(&result.trace, &path)?;
    }
    Ok(())
}

fn select(a: SelectArgs) -> Outcome {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let (scene, _) = load(&a.scene)?;
    let camera = read_pose(&a.pose)?.camera(&scene.views[0].camera)?;
    let all: Vec<usize> = (0..scene.views.len()).collect();
    let sel = select_views(&scene, &all, &camera, a.k, &RenderOptions::default().select)?;
    println!(
        "{}",
        serde_json::json!({ "ids": sel.ids, "coverage": sel.coverage, "fallbackFrom": sel.fallback_from })
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let preset: Preset = a.preset.parse().map_err(|e: Error| usage(e.to_string()))?;
    let texture: TextureKind = a.texture.parse().map_err(|e: Error| usage(e.to_string()))?;
    let exposure = a
        .exposure
        .iter()
        .map(|s| {
            let (id, f) = s.split_once(':').ok_or_else(|| usage(format!("bad exposure {s:?}, expected ID:FACTOR")))?;
            let id = id.parse::<u32>().map_err(|_| usage(format!("bad view id in {s:?}")))?;
            let f = f.parse::<f64>().map_err(|_| usage(format!("bad factor in {s:?}")))?;
            Ok((id, f))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let spec = SyntheticSpec {
        preset,
        width: a.width,
        height: a.height,
        views: a.views,
        arc_degrees: a.arc,
        texture,
        depth_noise: a.depth_noise,
        noisy_views: a.noisy_views,
        exposure,
        seed: a.seed,
        ..Default::default()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let s = gen_synthetic(&spec)?;
    io::save_scene(&s.scene, &a.out)?;
    if !spec.exposure.is_empty() {
        let mu: serde_json::Map<String, serde_json::Value> = s.true_mu.iter().map(|(id, m)| (id.to_string(), serde_json::json!(m))).collect();
        let path = a.out.join("true_mu.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&mu).expect("plain json")).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}

fn run_serve(a: ServeArgs) -> Outcome {
    let (scene, head) = load(&a.scene)?;
    let handle = serve::start(scene, head, &format!("{}:{}", a.host, a.port), ServeOptions::default())?;
    eprintln!("listening on http://{}:{}", a.host, handle.port());
    handle.join();
    Ok(())
}
