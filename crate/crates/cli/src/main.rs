use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use facade_loc::camera::CameraRecord;
use facade_loc::gml::{filter_faces, parse_citygml, DirImageStore, FilterPolicy, IngestOptions, TextureDir};
use facade_loc::pipeline::{
    build_pairs, emit_report, report::ALL_FORMATS, run_evaluation, CameraRef, FaceRef, MatchSource, PairManifest, PairSpec, PipelineError,
    RunConfig, RunReport, VisibilityRule,
};
use facade_loc::synth::{self, generate_scene, SceneConfig};

#[derive(Parser)]
#[command(name = "facade-loc", version, about = "Camera localization against textured CityGML facades")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a CityGML file into textured faces (JSON).
    Ingest {
        gml: PathBuf,
        /// Texture directory; defaults to the GML file's directory.
        #[arg(long)]
        textures: Option<PathBuf>,
        /// Added to every z coordinate (e.g. geoid correction).
        #[arg(long, default_value_t = 0.0)]
        vertical_offset: f64,
        /// Drop faces with small or mostly empty textures.
        #[arg(long)]
        filter: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic scene with manifests for builtin and ground-truth matches.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Scene config (JSON); unspecified fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, allow_hyphen_values = true)]
        yaw: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        pitch: Option<f64>,
    },
    /// Build a pair manifest from faces and camera records by visibility.
    Pairs {
        #[arg(long = "gml", required = true)]
        gml: Vec<PathBuf>,
        #[arg(long = "camera", required = true)]
        cameras: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        min_overlap: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate every pair of a manifest and write the report.
    Run {
        /// Pair manifest; relative paths resolve against its directory.
        #[arg(long)]
        manifest: PathBuf,
        /// Run config (JSON); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// RANSAC inlier threshold in pixels [default: 10].
        #[arg(long)]
        ransac_threshold: Option<f64>,
        /// Pixels, or `off`.
        #[arg(long)]
        resize_long_edge: Option<String>,
        /// Force one match source for all pairs.
        #[arg(long)]
        matcher: Option<MatcherArg>,
        /// Output directory for report.json, summary.csv and curves.svg.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads [default: all cores].
        #[arg(long)]
        jobs: Option<usize>,
        /// Leave runtimes and timestamps out for byte-stable output.
        #[arg(long)]
        no_timing: bool,
    },
    /// Re-emit CSV and SVG (and JSON) from a report JSON.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MatcherArg {
    Builtin,
    File,
}

enum Failure {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Validation(_) => Failure::Validation(e.to_string()),
            PipelineError::Runtime(_) => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write(path: &Path, body: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn ingest(gml: &Path, textures: Option<PathBuf>, vertical_offset: f64, filter: bool, out: Option<PathBuf>) -> Result<(), Failure> {
    let dir = textures.unwrap_or_else(|| parent(gml));
    let opts = IngestOptions {
        vertical_offset_m: vertical_offset,
        ..Default::default()
    };
    let mut ingest = parse_citygml(&read(gml)?, &TextureDir(dir.clone()), &opts).map_err(|e| invalid(format!("{}: {e}", gml.display())))?;
    if filter {
        let outcome = filter_faces(&ingest.faces, &FilterPolicy::default(), &DirImageStore::new(&dir));
        ingest.faces = outcome.kept;
        ingest.warnings.extend(outcome.warnings);
    }
    for w in &ingest.warnings {
        log::warn!("{}: {:?}: {}", w.face_id, w.kind, w.detail);
    }
    let json = serde_json::to_string_pretty(&ingest).context("serializing faces")?;
    match out {
        Some(p) => write(&p, &json)?,
        None => {
            let _ = writeln!(std::io::stdout().lock(), "{json}");
        }
    }
    Ok(())
}

fn synth_cmd(out: &Path, config: Option<PathBuf>, seed: Option<u64>, yaw: Option<f64>, pitch: Option<f64>) -> Result<(), Failure> {
    let mut cfg: SceneConfig = match config {
        Some(p) => serde_json::from_slice(&read(&p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => SceneConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(y) = yaw {
        cfg.yaw_deg = y;
    }
    if let Some(p) = pitch {
        cfg.pitch_deg = p;
    }
    let scene = generate_scene(&cfg).map_err(|e| match e {
        synth::SynthError::Config(_) | synth::SynthError::FacadeBehindCamera => invalid(e.to_string()),
        other => Failure::Runtime(other.into()),
    })?;
    scene.write(out).context("writing scene")?;
    let pair = |id: &str, matches| PairSpec {
        pair_id: id.into(),
        gml: synth::GML_FILE.into(),
        face_id: synth::FACE_ID.into(),
        camera_image: synth::VIEW_FILE.into(),
        camera: synth::CAMERA_FILE.into(),
        matches,
        method: None,
    };
    let builtin = PairManifest {
        pairs: vec![pair("synth", MatchSource::Builtin)],
        ..Default::default()
    };
    let gt = PairManifest {
        pairs: vec![pair("synth", MatchSource::File(synth::GT_MATCHES_FILE.into()))],
        ..Default::default()
    };
    write(&out.join("manifest.json"), &builtin.to_json())?;
    write(&out.join("manifest_gt.json"), &gt.to_json())?;
    write(
        &out.join("scene_config.json"),
        &serde_json::to_string_pretty(&cfg).context("serializing config")?,
    )?;
    println!("wrote scene to {}", out.display());
    Ok(())
}

fn pairs_cmd(gmls: &[PathBuf], cameras: &[PathBuf], min_overlap: f64, out: &Path) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&min_overlap) {
        return Err(invalid(format!("--min-overlap {min_overlap} outside [0, 1]")));
    }
    let base = parent(out);
    let base = std::path::absolute(&base).unwrap_or(base);
    let mut faces = Vec::new();
    for g in gmls {
        let ingest = parse_citygml(&read(g)?, &TextureDir(parent(g)), &IngestOptions::default())
            .map_err(|e| invalid(format!("{}: {e}", g.display())))?;
        let path = std::path::absolute(g).unwrap_or_else(|_| g.clone());
        faces.extend(ingest.faces.into_iter().map(|face| FaceRef { gml: path.clone(), face }));
    }
    let mut cams = Vec::new();
    for c in cameras {
        let record = CameraRecord::from_json(&read(c)?).map_err(|e| invalid(format!("{}: {e}", c.display())))?;
        let path = std::path::absolute(c).unwrap_or_else(|_| c.clone());
        cams.push(CameraRef { record_path: path, record });
    }
    let manifest = build_pairs(&faces, &cams, &VisibilityRule { min_overlap }, &base);
    write(out, &manifest.to_json())?;
    println!("{} pairs", manifest.pairs.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_cmd(
    manifest_path: &Path,
    config: Option<PathBuf>,
    seed: Option<u64>,
    threshold: Option<f64>,
    resize: Option<String>,
    matcher: Option<MatcherArg>,
    out: &Path,
    jobs: Option<usize>,
    no_timing: bool,
) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(p) => RunConfig::from_json(&read(&p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = threshold {
        cfg.ransac.threshold = t;
    }
    if let Some(r) = resize {
        cfg.resize_long_edge = match r.as_str() {
            "off" => None,
            px => Some(
                px.parse()
                    .map_err(|_| invalid(format!("--resize-long-edge: expected pixels or `off`, got {px:?}")))?,
            ),
        };
    }
    if jobs.is_some() {
        cfg.jobs = jobs;
    }
    if no_timing {
        cfg.timing = false;
    }
    cfg.validate()?;
    let mut manifest = PairManifest::from_json(&read(manifest_path)?)?;
    match matcher {
        Some(MatcherArg::Builtin) => manifest.pairs.iter_mut().for_each(|p| p.matches = MatchSource::Builtin),
        Some(MatcherArg::File) => {
            if let Some(p) = manifest.pairs.iter().find(|p| p.matches == MatchSource::Builtin) {
                return Err(invalid(format!("--matcher file: pair {:?} has no match file", p.pair_id)));
            }
        }
        None => {}
    }
    let report = run_evaluation(&manifest, &parent(manifest_path), &cfg)?;
    let written = emit_report(&report, out, &ALL_FORMATS)?;
    let failures = report.pairs.iter().filter(|p| p.failure).count();
    println!("{} pairs evaluated, {failures} failed", report.pairs.len());
    for w in written {
        println!("wrote {}", w.display());
    }
    Ok(())
}

fn report_cmd(path: &Path, out: &Path) -> Result<(), Failure> {
    let report = RunReport::from_json(&read(path)?)?;
    let recomputed = report.recompute_summary()?;
    if recomputed != report.summary {
        return Err(invalid("report summary does not match its per-pair results"));
    }
    for w in emit_report(&report, out, &ALL_FORMATS)? {
        println!("wrote {}", w.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Ingest {
            gml,
            textures,
            vertical_offset,
            filter,
            out,
        } => ingest(&gml, textures, vertical_offset, filter, out),
        Command::Synth {
            out,
            config,
            seed,
            yaw,
            pitch,
        } => synth_cmd(&out, config, seed, yaw, pitch),
        Command::Pairs {
            gml,
            cameras,
            min_overlap,
            out,
        } => pairs_cmd(&gml, &cameras, min_overlap, &out),
        Command::Run {
            manifest,
            config,
            seed,
            ransac_threshold,
            resize_long_edge,
            matcher,
            out,
            jobs,
            no_timing,
        } => run_cmd(
            &manifest,
            config,
            seed,
            ransac_threshold,
            resize_long_edge,
            matcher,
            &out,
            jobs,
            no_timing,
        ),
        Command::Report { report, out } => report_cmd(&report, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
