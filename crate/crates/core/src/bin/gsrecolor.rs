//! Command line front end: synth, train, render, edit, eval, serve, ablate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use gsrecolor::ablation::{run_ablation, AblationConfig};
use gsrecolor::appearance::ColorMode;
use gsrecolor::checkpoint::Checkpoint;
use gsrecolor::editing::{create_session, EditConfig, EditSession};
use gsrecolor::image::Image;
use gsrecolor::metrics::evaluate_recolor;
use gsrecolor::render::{Renderer, Shading};
use gsrecolor::scene::{recolor_oracle, synth_scene, Scene, SceneSpec};
use gsrecolor::service::{self, AppState, Loaded};
use gsrecolor::training::{TrainConfig, Trainer};
use gsrecolor::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "gsrecolor", version, about = "Appearance training and recoloring for frozen Gaussian splat scenes")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a scene with oracle materials from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Swap this object's oracle albedo after synthesis (ground truth for recolor edits).
        #[arg(long, requires = "albedo")]
        recolor_object: Option<u32>,
        #[arg(long, value_parser = parse_rgb)]
        albedo: Option<[f64; 3]>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the appearance model on a scene.
    Train {
        #[arg(long)]
        scene: PathBuf,
        /// JSON training config; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Batches of tiles from a single view instead of multi-view mini-batches.
        #[arg(long)]
        mono_view: bool,
        /// Single-MLP baseline instead of the diffuse/specular split.
        #[arg(long)]
        vanilla: bool,
        /// Comma-separated view ids excluded from training.
        #[arg(long, value_delimiter = ',')]
        holdout: Option<Vec<u32>>,
    },
    /// Render a training view or an arbitrary pose.
    Render(RenderArgs),
    /// Fine-tune a recolor session against edited views.
    Edit {
        #[command(flatten)]
        model: ModelArgs,
        /// Edited image for a view, as `VIEW_ID=path.png`; repeat for more views.
        #[arg(long = "edit", required = true, value_parser = parse_edit)]
        edits: Vec<(u32, PathBuf)>,
        /// JSON edit config; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        wide: bool,
        /// Session file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM of held-out renders against a scene's images.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        session: Option<PathBuf>,
        /// Ground-truth scene; defaults to the training scene.
        #[arg(long)]
        gt_scene: Option<PathBuf>,
        /// Build the ground truth by recoloring this object's oracle albedo.
        #[arg(long)]
        recolor_object: Option<u32>,
        #[arg(long, value_parser = parse_rgb)]
        albedo: Option<[f64; 3]>,
        #[arg(long, value_delimiter = ',', required = true)]
        holdout: Vec<u32>,
        /// Also report PSNR restricted to this object.
        #[arg(long)]
        mask_object: Option<u32>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Start the HTTP service (bind address from the environment, see --help).
    Serve {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        session_dir: Option<PathBuf>,
        /// Overrides the bind address environment variable.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Run the DC/MV/DS toggle grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, conflicts_with = "pose")]
    view: Option<u32>,
    /// 12 comma-separated numbers, row-major world-to-camera.
    #[arg(long)]
    pose: Option<String>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Specular scale.
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    #[arg(long)]
    session: Option<PathBuf>,
    /// Render the soft segmentation of the session instead of colors.
    #[arg(long, requires = "session")]
    mask: bool,
    /// Write the scene's stored image for --view instead of rendering.
    #[arg(long, requires = "view", conflicts_with_all = ["session", "mask"])]
    ground_truth: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_edit(s: &str) -> std::result::Result<(u32, PathBuf), String> {
    let (id, path) = s.split_once('=').ok_or("expected VIEW_ID=path.png")?;
    Ok((id.parse().map_err(|e| format!("bad view id: {e}"))?, PathBuf::from(path)))
}

fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|c| c.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected r,g,b".to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_png(path: &Path) -> Result<Image> {
    Image::decode_png(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn load_model(args: &ModelArgs) -> Result<(Renderer, Checkpoint)> {
    let scene = Scene::load(&args.scene)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    if ckpt.scene_hash != scene.geometry_hash() {
        return Err(Error::config("checkpoint was trained on a different scene"));
    }
    Ok((Renderer::new(Arc::new(scene), Arc::new(ckpt.model.clone())), ckpt))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::config(e.to_string()))?;
    }
    match cli.command {
        Command::Synth {
            spec,
            seed,
            recolor_object,
            albedo,
            out,
        } => {
            let mut spec: SceneSpec = read_json(&spec)?;
            if let Some(s) = seed {
                spec.rng_seed = s;
            }
            let mut scene = synth_scene(&spec)?;
            if let (Some(obj), Some(a)) = (recolor_object, albedo) {
                scene = recolor_oracle(&scene, obj, a)?;
            }
            scene.save(&out)?;
            println!("wrote {} ({} gaussians, {} views)", out.display(), scene.gaussians.len(), scene.views.len());
        }
        Command::Train {
            scene,
            config,
            out,
            steps,
            seed,
            mono_view,
            vanilla,
            holdout,
        } => {
            let scene = Scene::load(&scene)?;
            let mut tc: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = steps {
                tc.steps = s;
            }
            if let Some(s) = seed {
                tc.rng_seed = s;
            }
            if mono_view {
                tc.multiview = false;
            }
            if vanilla {
                tc.model.mode = ColorMode::Vanilla;
            }
            if let Some(h) = holdout {
                tc.holdout_views = h;
            }
            let total = tc.steps;
            let mut trainer = Trainer::new(&scene, tc)?;
            let ckpt = trainer.run(|step, r| {
                if step % 100 == 0 || step == total {
                    eprintln!("step {step:>5}  loss {:.6}  l1 {:.6}  spec {:.6}", r.loss, r.l1, r.penalty);
                }
            })?;
            ckpt.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Render(a) if a.ground_truth => {
            let scene = Scene::load(&a.model.scene)?;
            let png = scene.view(a.view.unwrap_or(0))?.pixels.encode_png()?;
            write_file(&a.out, &png)?;
            println!("wrote {}", a.out.display());
        }
        Command::Render(a) => {
            let (renderer, ckpt) = load_model(&a.model)?;
            let camera = match (&a.view, &a.pose) {
                (Some(id), _) => {
                    let c = renderer.scene.view(*id)?.camera.clone();
                    match (a.width, a.height) {
                        (None, None) => c,
                        (w, h) => c.resized(w.unwrap_or(c.width), h.unwrap_or(c.height)),
                    }
                }
                (None, Some(p)) => {
                    let pose = service::parse_pose(p)?;
                    let r = &renderer.scene.views.first().ok_or_else(|| Error::config("scene has no views"))?.camera;
                    renderer.camera_for_pose(&pose, a.width.unwrap_or(r.width), a.height.unwrap_or(r.height))?
                }
                (None, None) => return Err(Error::config("give --view or --pose")),
            };
            let session = a
                .session
                .as_ref()
                .map(|p| EditSession::load(p, &renderer, ckpt.hash()?))
                .transpose()?;
            let png = match (&session, a.mask) {
                (Some(s), true) => s.render_mask(&renderer, &camera)?.encode_png()?,
                (Some(s), false) => s.render_edited(&renderer, &camera, a.s)?.encode_png()?,
                (None, _) => renderer.render(&camera, Shading::Base { s: a.s })?.encode_png()?,
            };
            write_file(&a.out, &png)?;
            println!("wrote {}", a.out.display());
        }
        Command::Edit {
            model,
            edits,
            config,
            steps,
            seed,
            wide,
            out,
        } => {
            let (renderer, ckpt) = load_model(&model)?;
            let mut ec: EditConfig = match config {
                Some(p) => read_json(&p)?,
                None => EditConfig::default(),
            };
            if let Some(s) = steps {
                ec.steps = s;
            }
            if let Some(s) = seed {
                ec.seed = s;
            }
            if wide {
                ec.wide_finetune = true;
            }
            let (first_view, first_path) = &edits[0];
            let mut session = create_session(&renderer, ckpt.hash()?, "cli", *first_view, &read_png(first_path)?, ec)?;
            for (view, path) in &edits[1..] {
                session.add_edit_view(&renderer, *view, &read_png(path)?)?;
            }
            let report = session.finetune(&renderer, None)?;
            session.save(&out)?;
            println!(
                "{} steps, loss {:.6} -> {:.6}{}; wrote {}",
                report.steps_run,
                report.initial_loss,
                report.best_loss,
                if report.stopped_early { " (plateau)" } else { "" },
                out.display()
            );
        }
        Command::Eval {
            model,
            session,
            gt_scene,
            recolor_object,
            albedo,
            holdout,
            mask_object,
            json,
        } => {
            let (renderer, ckpt) = load_model(&model)?;
            let session = session.map(|p| EditSession::load(&p, &renderer, ckpt.hash()?)).transpose()?;
            let mut gt = match gt_scene {
                Some(p) => Scene::load(&p)?,
                None => (*renderer.scene).clone(),
            };
            if let Some(obj) = recolor_object {
                let a = albedo.ok_or_else(|| Error::config("--recolor-object needs --albedo r,g,b"))?;
                gt = recolor_oracle(&gt, obj, a)?;
            }
            let rep = evaluate_recolor(&renderer, session.as_ref(), &gt, &holdout, mask_object)?;
            print!("{}", rep.to_table(if session.is_some() { "edited" } else { "base" }));
            if let Some(p) = json {
                let text = serde_json::to_string_pretty(&rep).map_err(|e| Error::Format(e.to_string()))?;
                write_file(&p, text.as_bytes())?;
            }
        }
        Command::Serve {
            scene,
            checkpoint,
            session_dir,
            bind,
        } => {
            let loaded = match (scene, checkpoint) {
                (Some(s), Some(c)) => {
                    let mut l = Loaded::new(Scene::load(&s)?, &Checkpoint::load(&c)?)?;
                    if let Some(d) = session_dir {
                        l = l.with_session_dir(d)?;
                    }
                    Some(l)
                }
                (None, None) => None,
                _ => return Err(Error::config("--scene and --checkpoint go together")),
            };
            let bind = bind.unwrap_or_else(service::bind_address);
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on {bind}");
            rt.block_on(service::serve(AppState::new(loaded), &bind))?;
        }
        Command::Ablate { config, seed, json } => {
            let mut ac: AblationConfig = read_json(&config)?;
            if let Some(s) = seed {
                ac.train.rng_seed = s;
                ac.edit.seed = s;
            }
            let report = run_ablation(&ac)?;
            print!("{}", report.to_table());
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
            match json {
                Some(p) => write_file(&p, text.as_bytes())?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
