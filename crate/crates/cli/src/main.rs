//! `depthq`: generate fixtures, render synthetic frames, evaluate depth
//! quality and tabulate results.
//!
//! Exit codes: 0 success, 2 usage error, 3 pipeline error.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use depthq_core::deproject::deproject_image;
use depthq_core::fixturegen::{
    generate_descriptor, generate_fixture_mesh, parse_descriptor, write_descriptor, FixtureError, PatternId,
    PatternParams,
};
use depthq_core::meshio::{parse_depth_pgm, parse_intrinsics, parse_stl, write_ply_pointcloud, write_stl};
use depthq_core::metrics::{crop_to_roi_in_frame, Evaluator};
use depthq_core::register::{parse_corners, register_cloud, RegistrationConfig, DEFAULT_REJECT_RMS};
use depthq_core::synth::{fronto_parallel_pose, render_scene_bundle, NoiseModel, SyntheticScene, SYNTH_DEPTH_SCALE};
use depthq_core::meshio::CameraIntrinsics;
use sha2::{Digest, Sha256};

use report::{render_compare, EvaluationFile};

#[derive(Parser)]
#[command(name = "depthq", version, about = "Depth quality evaluation against known fixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a fixture reference mesh (STL) and its descriptor.
    Fixture {
        /// cylinders-vertical, cylinders-horizontal, spheres or angled-plates.
        #[arg(long)]
        pattern: String,
        /// JSON object overriding individual pattern parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out_mesh: PathBuf,
        #[arg(long)]
        out_desc: PathBuf,
    },
    /// Render a synthetic frame bundle of a fixture.
    Synth {
        #[arg(long)]
        desc: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        /// Camera to backplate distance, meters.
        #[arg(long)]
        distance: f64,
        /// Gaussian depth noise, meters.
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Raw depth units per meter.
        #[arg(long, default_value_t = SYNTH_DEPTH_SCALE)]
        depth_scale: f64,
        /// Intrinsics file; defaults to a 640x480 camera with f = 600 px.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one or more depth frames against the reference mesh.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        depth: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        corners: Vec<PathBuf>,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        desc: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        /// Error tolerance t, meters (ROI growth and inlier threshold).
        #[arg(long, default_value_t = 0.002, allow_negative_numbers = true)]
        tolerance: f64,
        /// Camera name shown by `compare`.
        #[arg(long)]
        label: Option<String>,
        /// Largest accepted corner fit residual, meters.
        #[arg(long, default_value_t = DEFAULT_REJECT_RMS)]
        reject_rms: f64,
        /// Read corner depths from the depth frame at the nearest pixel.
        #[arg(long)]
        sample_corner_depth: bool,
        /// Also write the registered, cropped cloud of the first frame (PLY).
        #[arg(long)]
        out_cloud: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate evaluation reports: rows are fixtures, columns are labels.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the CSV table here instead of standard output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Pipeline { stage: &'static str, err: anyhow::Error },
}

impl Failure {
    fn pipeline(stage: &'static str) -> impl FnOnce(anyhow::Error) -> Failure {
        move |err| Failure::Pipeline { stage, err }
    }
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_params(pattern: PatternId, file: Option<&Path>) -> Result<PatternParams, Failure> {
    let defaults = PatternParams::defaults(pattern);
    let Some(file) = file else { return Ok(defaults) };
    let text = read_text(file).map_err(|e| Failure::Usage(format!("{e:#}")))?;
    let overrides: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
    let serde_json::Value::Object(mut merged) = serde_json::to_value(&defaults).expect("params serialize") else {
        unreachable!()
    };
    for (k, v) in overrides {
        if !merged.contains_key(&k) {
            return Err(Failure::Usage(format!("{}: unknown parameter `{k}`", file.display())));
        }
        if k == "pattern_id" && v != merged[&k] {
            return Err(Failure::Usage(format!("{}: pattern_id conflicts with --pattern {pattern}", file.display())));
        }
        merged.insert(k, v);
    }
    serde_json::from_value(serde_json::Value::Object(merged))
        .map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))
}

fn cmd_fixture(pattern: &str, params: Option<&Path>, out_mesh: &Path, out_desc: &Path) -> Result<(), Failure> {
    let id: PatternId = pattern.parse().map_err(|e: FixtureError| Failure::Usage(e.to_string()))?;
    let params = load_params(id, params)?;
    let usage_or = |e: FixtureError| match e {
        FixtureError::InvalidParams(_) => Failure::Usage(e.to_string()),
        other => Failure::Pipeline { stage: "fixture", err: other.into() },
    };
    let mesh = generate_fixture_mesh(&params).map_err(usage_or)?;
    let desc = generate_descriptor(&params).map_err(usage_or)?;
    write(out_mesh, write_stl(&mesh)).map_err(Failure::pipeline("write"))?;
    write(out_desc, write_descriptor(&desc)).map_err(Failure::pipeline("write"))?;
    println!("{id}: {} triangles -> {}, descriptor -> {}", mesh.face_count(), out_mesh.display(), out_desc.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    desc: &Path,
    mesh: &Path,
    distance: f64,
    noise: NoiseModel,
    seed: u64,
    depth_scale: f64,
    intrinsics: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(Failure::Usage(format!("--distance must be positive, got {distance}")));
    }
    if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
        return Err(Failure::Usage(format!("--noise-sigma must be non-negative, got {}", noise.sigma)));
    }
    if !(0.0..=1.0).contains(&noise.dropout) {
        return Err(Failure::Usage(format!("--dropout must lie in [0, 1], got {}", noise.dropout)));
    }
    if !(depth_scale > 0.0 && depth_scale.is_finite()) {
        return Err(Failure::Usage(format!("--depth-scale must be positive, got {depth_scale}")));
    }
    let load = || -> anyhow::Result<_> {
        let descriptor = parse_descriptor(&read_text(desc)?).with_context(|| desc.display().to_string())?;
        let mesh = parse_stl(&read(mesh)?).with_context(|| mesh.display().to_string())?;
        let intr = match intrinsics {
            Some(p) => parse_intrinsics(&read_text(p)?).with_context(|| p.display().to_string())?.0,
            None => CameraIntrinsics::vga(),
        };
        Ok((descriptor, mesh, intr))
    };
    let (descriptor, mesh, intrinsics) = load().map_err(Failure::pipeline("load"))?;
    let scene = SyntheticScene {
        pose: fronto_parallel_pose(&descriptor, distance),
        mesh,
        descriptor,
        intrinsics,
        depth_scale,
        noise,
        seed,
    };
    let paths = render_scene_bundle(&scene, out).map_err(|e| Failure::Pipeline { stage: "synth", err: e.into() })?;
    println!("bundle written to {} (depth {})", out.display(), paths.depth.display());
    Ok(())
}

struct EvaluateArgs<'a> {
    depth: &'a [PathBuf],
    corners: &'a [PathBuf],
    intrinsics: &'a Path,
    desc: &'a Path,
    mesh: &'a Path,
    tolerance: f64,
    label: Option<&'a str>,
    reject_rms: f64,
    sample_corner_depth: bool,
    out_cloud: Option<&'a Path>,
    out: &'a Path,
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    if !(a.tolerance > 0.0 && a.tolerance.is_finite()) {
        return Err(Failure::Usage(format!("--tolerance must be positive, got {}", a.tolerance)));
    }
    if !(a.reject_rms > 0.0) {
        return Err(Failure::Usage(format!("--reject-rms must be positive, got {}", a.reject_rms)));
    }
    if a.depth.len() != a.corners.len() {
        return Err(Failure::Usage(format!(
            "{} --depth files but {} --corners files; give one corners file per frame",
            a.depth.len(),
            a.corners.len()
        )));
    }
    let mut inputs = std::collections::BTreeMap::new();
    let mut load_shared = || -> anyhow::Result<_> {
        let intr_text = read_text(a.intrinsics)?;
        let desc_text = read_text(a.desc)?;
        let mesh_bytes = read(a.mesh)?;
        for (p, b) in [(a.intrinsics, intr_text.as_bytes()), (a.desc, desc_text.as_bytes()), (a.mesh, &mesh_bytes[..])] {
            inputs.insert(p.display().to_string(), digest(b));
        }
        let (intr, scale) = parse_intrinsics(&intr_text).with_context(|| a.intrinsics.display().to_string())?;
        let desc = parse_descriptor(&desc_text).with_context(|| a.desc.display().to_string())?;
        let mesh = parse_stl(&mesh_bytes).with_context(|| a.mesh.display().to_string())?;
        Ok((intr, scale, desc, mesh))
    };
    let (intr, scale, desc, mesh) = load_shared().map_err(Failure::pipeline("load"))?;
    let evaluator = Evaluator::new(&mesh, &desc).map_err(|e| Failure::Pipeline { stage: e.stage(), err: e.into() })?;
    let cfg = RegistrationConfig { reject_rms: a.reject_rms };

    let mut frames = Vec::with_capacity(a.depth.len());
    let mut first_cloud = None;
    for (k, (dpath, cpath)) in a.depth.iter().zip(a.corners).enumerate() {
        let load_frame = || -> anyhow::Result<_> {
            let dbytes = read(dpath)?;
            let ctext = read_text(cpath)?;
            let img = parse_depth_pgm(&dbytes).with_context(|| dpath.display().to_string())?;
            let obs = parse_corners(&ctext).with_context(|| cpath.display().to_string())?;
            if img.depth_scale() != scale {
                anyhow::bail!(
                    "{}: depth scale {} differs from {} in {}",
                    dpath.display(),
                    img.depth_scale(),
                    scale,
                    a.intrinsics.display()
                );
            }
            Ok((digest(&dbytes), digest(ctext.as_bytes()), img, obs))
        };
        let (ddig, cdig, img, obs) = load_frame().map_err(Failure::pipeline("load"))?;
        let obs = if a.sample_corner_depth {
            obs.with_depths_from(&img).map_err(|e| Failure::Pipeline { stage: "register", err: e.into() })?
        } else {
            obs
        };
        let cloud = deproject_image(&img, &intr, None).map_err(|e| Failure::Pipeline { stage: "deproject", err: e.into() })?;
        let mut rep = evaluator
            .evaluate(&cloud, &obs, &intr, scale, a.tolerance, &cfg)
            .map_err(|e| Failure::Pipeline { stage: e.stage(), err: anyhow::Error::new(e).context(format!("frame {}", dpath.display())) })?;
        rep.label = a.label.map(str::to_owned);
        rep.inputs = inputs.clone();
        rep.inputs.insert(dpath.display().to_string(), ddig);
        rep.inputs.insert(cpath.display().to_string(), cdig);
        if k == 0 && a.out_cloud.is_some() {
            first_cloud = Some((cloud, obs));
        }
        frames.push(rep);
    }

    let file = EvaluationFile::new(a.label.map(str::to_owned), desc.pattern_id, a.tolerance, frames);
    let cloud_bytes = match (a.out_cloud, first_cloud) {
        (Some(_), Some((cloud, obs))) => {
            let (reg, _) = register_cloud(&cloud, &obs, &intr, scale, &desc, &cfg)
                .map_err(|e| Failure::Pipeline { stage: "register", err: e.into() })?;
            let cropped = crop_to_roi_in_frame(&reg, &desc.roi_box, &desc.roi_frame, a.tolerance)
                .map_err(|e| Failure::Pipeline { stage: "crop", err: e.into() })?;
            Some(write_ply_pointcloud(&cropped))
        }
        _ => None,
    };
    write(a.out, file.to_json()).map_err(Failure::pipeline("write"))?;
    if let (Some(path), Some(bytes)) = (a.out_cloud, cloud_bytes) {
        write(path, bytes).map_err(Failure::pipeline("write"))?;
    }
    println!("{}", file.summary_row());
    Ok(())
}

fn cmd_compare(reports: &[PathBuf], csv: Option<&Path>) -> Result<(), Failure> {
    let mut files = Vec::with_capacity(reports.len());
    for p in reports {
        let text = read_text(p).map_err(Failure::pipeline("load"))?;
        let f = EvaluationFile::from_json(&text)
            .with_context(|| format!("parsing {}", p.display()))
            .map_err(Failure::pipeline("load"))?;
        files.push(f);
    }
    let out = render_compare(&files);
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", out.table);
    match csv {
        Some(path) => write(path, &out.csv).map_err(Failure::pipeline("write"))?,
        None => print!("\n{}", out.csv),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fixture { pattern, params, out_mesh, out_desc } => {
            cmd_fixture(&pattern, params.as_deref(), &out_mesh, &out_desc)
        }
        Command::Synth { desc, mesh, distance, noise_sigma, dropout, seed, depth_scale, intrinsics, out } => cmd_synth(
            &desc,
            &mesh,
            distance,
            NoiseModel { sigma: noise_sigma, dropout },
            seed,
            depth_scale,
            intrinsics.as_deref(),
            &out,
        ),
        Command::Evaluate {
            depth,
            corners,
            intrinsics,
            desc,
            mesh,
            tolerance,
            label,
            reject_rms,
            sample_corner_depth,
            out_cloud,
            out,
        } => cmd_evaluate(EvaluateArgs {
            depth: &depth,
            corners: &corners,
            intrinsics: &intrinsics,
            desc: &desc,
            mesh: &mesh,
            tolerance,
            label: label.as_deref(),
            reject_rms,
            sample_corner_depth,
            out_cloud: out_cloud.as_deref(),
            out: &out,
        }),
        Command::Compare { reports, csv } => cmd_compare(&reports, csv.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline { stage, err }) => {
            eprintln!("error [{stage}]: {err:#}");
            ExitCode::from(3)
        }
    }
}
