//! The `annocar` command-line tool.

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::annotation::{parse_scene, scene_to_string, LoadError, Scene};
use crate::config::{thresholds_fragment, Config};
use crate::geometry::RangeBand;
use crate::inject::{inject, InjectionSpec};
use crate::report::{evaluate_scenes, to_json, write_ap_csv, write_car_csv, DiffReport, EvaluationReport, RunManifest};
use crate::taxonomy::{calibrate_thresholds, diff_versions, CalibrationSample, ErrorCounts, ErrorType, DEFAULT_COVERAGE};
use crate::tracking::track_scene;
use crate::{exit_code, Error};

#[derive(Debug, Parser)]
#[command(name = "annocar", version, about = "Annotation-effort evaluation for 3D object detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags accepted by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Shared {
    /// TOML config file (dotted keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path; standard output when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Worker threads for scene-level parallelism. Defaults to all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write a CSV table here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Range bands as `min:max` pairs, comma separated (e.g. `0:30,30:50`).
    #[arg(long)]
    pub bands: Option<String>,
    /// Class vocabulary, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    /// Matching gate in meters.
    #[arg(long)]
    pub gate_m: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score prediction scenes against ground truth: CAR per stratum and AP per class.
    Evaluate {
        /// Directory of ground-truth scene files.
        #[arg(long)]
        gt: PathBuf,
        /// Directory of prediction scene files, paired by scene_id.
        #[arg(long)]
        pred: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Derive error thresholds from repeated manual annotations.
    Calibrate {
        /// JSON array of {"reference": box, "manual": box} objects.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = DEFAULT_COVERAGE)]
        coverage: f64,
        #[command(flatten)]
        shared: Shared,
    },
    /// Refine frame-wise detections into tracked annotations.
    Track {
        /// Scene file, or a directory of scene files (then --out is a directory).
        input: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Count errors between a model-generated scene and its corrected version.
    Diff {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corrected: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Generate a model-origin scene with a prescribed error composition.
    Inject {
        #[arg(long)]
        gt: PathBuf,
        /// JSON injection spec: {"counts": {"FN": 2, ...}, "magnitudes": {...}, "rng_seed": 1}.
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Check scene files against the format invariants.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        shared: Shared,
    },
}

/// Parse `0:30,30:50` into range bands.
pub fn parse_bands(text: &str) -> Result<Vec<RangeBand>, Error> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (lo, hi) = item
                .split_once(':')
                .ok_or_else(|| Error::Invalid(format!("band {item:?} is not of the form min:max")))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Invalid(format!("band {item:?}: {s:?} is not a number")))
            };
            RangeBand::new(num(lo)?, num(hi)?).map_err(|e| Error::Invalid(e.to_string()))
        })
        .collect()
}

fn effective_config(shared: &Shared) -> Result<Config, Error> {
    let mut cfg = match &shared.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(g) = shared.gate_m {
        cfg.matching.gate_m = g;
    }
    if let Some(b) = &shared.bands {
        cfg.eval.bands = parse_bands(b)?;
    }
    if !shared.classes.is_empty() {
        cfg.eval.classes = shared.classes.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

const DEFAULT_THRESHOLDS_WARNING: &str =
    "using uncalibrated default thresholds (0.5 m, 10 deg, 0.2 scale deficit); run `annocar calibrate` for data-specific values";

fn threshold_warnings(cfg: &Config) -> Vec<String> {
    if cfg.default_thresholds {
        log::warn!("{DEFAULT_THRESHOLDS_WARNING}");
        vec![DEFAULT_THRESHOLDS_WARNING.to_string()]
    } else {
        Vec::new()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn load(path: &Path) -> Result<(Scene, Vec<u8>), Error> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Invalid(format!("{}: not UTF-8: {e}", path.display())))?;
    let scene = parse_scene(&text, &path.display().to_string())?;
    Ok((scene, text.into_bytes()))
}

/// `*.json` files of a directory in file-name order.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Error> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Invalid("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Invalid(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Latest `meta.created_at` among the inputs; the manifest timestamp.
fn latest_created_at<'a>(scenes: impl IntoIterator<Item = &'a Scene>) -> String {
    scenes
        .into_iter()
        .map(|s| s.meta.created_at.as_str())
        .max()
        .unwrap_or("")
        .to_string()
}

fn load_dir(dir: &Path, label: &str, manifest: &mut RunManifest) -> Result<Vec<Scene>, Error> {
    let files = json_files(dir)?;
    let loaded: Vec<(Scene, Vec<u8>)> = files.par_iter().map(|p| load(p)).collect::<Result<_, _>>()?;
    let mut scenes = Vec::with_capacity(loaded.len());
    for (path, (scene, bytes)) in files.iter().zip(loaded) {
        manifest.add_input(format!("{label}/{}", file_name(path)), &bytes);
        scenes.push(scene);
    }
    log::info!("loaded {} {label} scenes from {}", scenes.len(), dir.display());
    Ok(scenes)
}

fn sibling_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

fn write_csv(path: &Path, f: impl FnOnce(fs::File) -> csv::Result<()>) -> Result<(), Error> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f(file).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn cmd_evaluate(gt_dir: &Path, pred_dir: &Path, shared: &Shared) -> Result<i32, Error> {
    let cfg = effective_config(shared)?;
    let mut warnings = threshold_warnings(&cfg);
    let mut manifest = RunManifest::new("evaluate", &cfg, "");

    let report = with_pool(shared.jobs, || -> Result<EvaluationReport, Error> {
        let gt = load_dir(gt_dir, "gt", &mut manifest)?;
        let pred = load_dir(pred_dir, "pred", &mut manifest)?;
        manifest.timestamp = latest_created_at(gt.iter().chain(&pred));
        let ev = evaluate_scenes(&gt, &pred, &cfg)?;
        log::info!("evaluated {} scenes, {} CAR rows, {} AP rows", gt.len(), ev.car.len(), ev.ap.len());
        warnings.extend(ev.warnings);
        Ok(EvaluationReport {
            manifest: manifest.clone(),
            config: cfg.clone(),
            warnings: warnings.clone(),
            car: ev.car,
            ap: ev.ap,
        })
    })??;

    emit(shared.out.as_deref(), &to_json(&report))?;
    if let Some(path) = &shared.csv {
        write_csv(path, |f| write_car_csv(&report.car, f))?;
        let ap_path = sibling_with_suffix(path, "_ap");
        write_csv(&ap_path, |f| write_ap_csv(&report.ap, f))?;
    }
    Ok(exit_code::OK)
}

fn cmd_calibrate(pairs: &Path, coverage: f64, shared: &Shared) -> Result<i32, Error> {
    let bytes = read(pairs)?;
    let samples: Vec<CalibrationSample> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Invalid(format!("{}: {e}", pairs.display())))?;
    let th = calibrate_thresholds(&samples, coverage)?;
    let fragment = thresholds_fragment(&th);
    print!("{fragment}");
    if let Some(out) = &shared.out {
        fs::write(out, &fragment).map_err(|e| Error::io(out, e))?;
    }
    Ok(exit_code::OK)
}

fn cmd_track(input: &Path, shared: &Shared) -> Result<i32, Error> {
    let cfg = effective_config(shared)?;
    if input.is_dir() {
        let out_dir = shared
            .out
            .as_deref()
            .ok_or_else(|| Error::Invalid("tracking a directory needs --out <dir>".into()))?;
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let files = json_files(input)?;
        let results: Vec<(PathBuf, String)> = with_pool(shared.jobs, || {
            files
                .par_iter()
                .map(|p| -> Result<(PathBuf, String), Error> {
                    let (scene, _) = load(p)?;
                    let tracked = track_scene(&scene, &cfg.tracker)?;
                    log::info!("tracked {}", p.display());
                    Ok((out_dir.join(file_name(p)), scene_to_string(&tracked)))
                })
                .collect::<Result<_, _>>()
        })??;
        for (path, text) in results {
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    } else {
        let (scene, _) = load(input)?;
        let tracked = with_pool(shared.jobs, || track_scene(&scene, &cfg.tracker))??;
        emit(shared.out.as_deref(), &scene_to_string(&tracked))?;
    }
    Ok(exit_code::OK)
}

fn cmd_diff(model: &Path, corrected: &Path, shared: &Shared) -> Result<i32, Error> {
    let cfg = effective_config(shared)?;
    let warnings = threshold_warnings(&cfg);
    let (m, m_bytes) = load(model)?;
    let (c, c_bytes) = load(corrected)?;
    if m.scene_id != c.scene_id {
        return Err(Error::Invalid(format!(
            "scene ids differ: model {:?}, corrected {:?}",
            m.scene_id, c.scene_id
        )));
    }
    let frames = diff_versions(&m, &c, &cfg.thresholds, cfg.matching.gate_m)?;
    let mut manifest = RunManifest::new("diff", &cfg, latest_created_at([&m, &c]));
    manifest.add_input(format!("model/{}", file_name(model)), &m_bytes);
    manifest.add_input(format!("corrected/{}", file_name(corrected)), &c_bytes);
    let report = DiffReport {
        manifest,
        config: cfg,
        warnings,
        scene_id: c.scene_id.clone(),
        total: frames.iter().copied().sum(),
        frames,
    };
    emit(shared.out.as_deref(), &to_json(&report))?;
    if let Some(path) = &shared.csv {
        write_csv(path, |f| write_diff_csv(&report.frames, f))?;
    }
    Ok(exit_code::OK)
}

fn write_diff_csv(frames: &[ErrorCounts], out: fs::File) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = vec!["frame".into(), "n_gt".into(), "n_matched".into()];
    header.extend(ErrorType::ALL.iter().map(|e| e.name().to_string()));
    w.write_record(&header)?;
    for (i, c) in frames.iter().enumerate() {
        let mut rec = vec![i.to_string(), c.n_gt.to_string(), c.n_matched.to_string()];
        rec.extend(ErrorType::ALL.iter().map(|e| c.get(*e).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_inject(gt: &Path, spec: &Path, shared: &Shared) -> Result<i32, Error> {
    let cfg = effective_config(shared)?;
    let (scene, _) = load(gt)?;
    let spec_bytes = read(spec)?;
    let spec: InjectionSpec = serde_json::from_slice(&spec_bytes)
        .map_err(|e| Error::Invalid(format!("{}: {e}", spec.display())))?;
    let out = inject(&scene, &spec, &cfg.thresholds, cfg.matching.gate_m, &cfg.eval.classes)?;
    emit(shared.out.as_deref(), &scene_to_string(&out))?;
    Ok(exit_code::OK)
}

fn cmd_validate(files: &[PathBuf]) -> Result<i32, Error> {
    let mut code = exit_code::OK;
    let mut stdout = io::stdout().lock();
    for path in files {
        let shown = path.display();
        let line = match load(path) {
            Ok(_) => format!("{shown}: ok\n"),
            Err(Error::Load(LoadError::Invariant { violations, .. })) => {
                code = code.max(exit_code::DATA);
                violations.iter().map(|v| format!("{shown}: {v}\n")).collect()
            }
            Err(Error::Io { source, .. }) => {
                code = code.max(exit_code::IO);
                format!("{shown}: cannot read: {source}\n")
            }
            Err(e) => {
                code = code.max(e.exit_code());
                format!("{shown}: {e}\n")
            }
        };
        stdout
            .write_all(line.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(code)
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32, Error> {
    match &cli.command {
        Command::Evaluate { gt, pred, shared } => cmd_evaluate(gt, pred, shared),
        Command::Calibrate {
            pairs,
            coverage,
            shared,
        } => cmd_calibrate(pairs, *coverage, shared),
        Command::Track { input, shared } => cmd_track(input, shared),
        Command::Diff {
            model,
            corrected,
            shared,
        } => cmd_diff(model, corrected, shared),
        Command::Inject { gt, spec, shared } => cmd_inject(gt, spec, shared),
        Command::Validate { files, .. } => cmd_validate(files),
    }
}

/// Entry point shared by the binary: parse, run, report errors on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit_code::DATA } else { exit_code::OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
