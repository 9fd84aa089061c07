//! Subcommand implementations. Each writes its artifacts into
//! `paths.output_dir` and finishes with a manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use eofm::ablation::{run_ablation, table_markdown, write_table_csv, AblationSettings};
use eofm::io::{load_image, load_vector_field, save_colormap_png, save_field, save_image, BitDepth};
use eofm::speckle::{read_bubbles_csv, write_bubbles_csv};
use eofm::{
    compare, detect_bubbles, estimate, generate_phantom, solve_background, track_bubbles, Bubble, ImagePair,
    ScalarField, VectorField,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::LoadedConfig;
use crate::CliError;

/// Record of one run, enough to reproduce its outputs.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config: String,
    outputs: Vec<OutputRecord>,
}

#[derive(Serialize)]
struct OutputRecord {
    file: String,
    sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects written files and emits the manifest.
pub struct Run<'a> {
    command: &'a str,
    config: &'a LoadedConfig,
    out_dir: PathBuf,
    outputs: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    pub fn new(command: &'a str, config: &'a LoadedConfig) -> Result<Self, CliError> {
        let out_dir = config.config.paths.output_dir.clone();
        fs::create_dir_all(&out_dir).map_err(|e| CliError::Output(format!("{}: {e}", out_dir.display())))?;
        Ok(Self {
            command,
            config,
            out_dir,
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))
    }

    fn bubbles(&mut self, name: &str, bubbles: &[Bubble]) -> Result<(), CliError> {
        let p = self.path(name);
        let f = File::create(&p).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
        let mut w = BufWriter::new(f);
        write_bubbles_csv(&mut w, bubbles)?;
        w.flush().map_err(|e| CliError::Output(format!("{}: {e}", p.display())))
    }

    /// Colormap PNG over the field's own range.
    fn colormap(&mut self, name: &str, field: &ScalarField) -> Result<(), CliError> {
        let (lo, hi) = (field.min(), field.max());
        let range = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let p = self.path(name);
        save_colormap_png(&p, field, range)?;
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        let config = self.config.canonical();
        let mut outputs = Vec::new();
        for p in &self.outputs {
            let bytes = fs::read(p).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
            outputs.push(OutputRecord {
                file: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.config.config.seed,
            config_sha256: sha256_hex(config.as_bytes()),
            config,
            outputs,
        };
        let path = self.out_dir.join(format!("manifest_{}.json", self.command));
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Resolve an input path; explicitly configured paths must exist.
fn require(config: &LoadedConfig, explicit: &Option<PathBuf>, default: &str, key: &str) -> Result<PathBuf, CliError> {
    let (path, _) = config.input_path(explicit, default);
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!(
            "{key}: input {} does not exist (run `eofm simulate` or set {key})",
            path.display()
        )))
    }
}

/// Optional input: present if configured or if the default file exists.
fn optional(config: &LoadedConfig, explicit: &Option<PathBuf>, default: &str, key: &str) -> Result<Option<PathBuf>, CliError> {
    let (path, is_explicit) = config.input_path(explicit, default);
    match (path.is_file(), is_explicit) {
        (true, _) => Ok(Some(path)),
        (false, true) => Err(CliError::Usage(format!("{key}: input {} does not exist", path.display()))),
        (false, false) => Ok(None),
    }
}

fn load_pair(config: &LoadedConfig) -> Result<ImagePair, CliError> {
    let paths = &config.config.paths;
    let f0 = require(config, &paths.frame0, "frame0.png", "paths.frame0")?;
    let f1 = require(config, &paths.frame1, "frame1.png", "paths.frame1")?;
    Ok(ImagePair::new(load_image(f0)?, load_image(f1)?)?)
}

fn read_bubbles(path: &Path) -> Result<Vec<Bubble>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(read_bubbles_csv(BufReader::new(f))?)
}

fn track(config: &LoadedConfig, pair: &ImagePair) -> Result<Vec<Bubble>, CliError> {
    let params = config.tracker();
    let detected = detect_bubbles(pair.frame0(), params.min_area, params.max_area, params.threshold)?;
    Ok(track_bubbles(pair, &detected, &params)?)
}

/// Bubbles for a flow run: none when β = 0, the configured table when set,
/// otherwise tracked from the frames.
fn flow_bubbles(config: &LoadedConfig, pair: &ImagePair) -> Result<Vec<Bubble>, CliError> {
    if config.config.solver.beta == 0.0 {
        return Ok(Vec::new());
    }
    match &config.config.paths.bubbles {
        Some(p) if p.is_file() => read_bubbles(p),
        Some(p) => Err(CliError::Usage(format!("paths.bubbles: input {} does not exist", p.display()))),
        None => track(config, pair),
    }
}

fn background_field(config: &LoadedConfig, pair: &ImagePair) -> Result<VectorField, CliError> {
    let g = *pair.geometry();
    let bc = config.boundary(&g)?;
    let e = &config.config.elasticity;
    Ok(solve_background(&g, &config.material(), &bc, e.tol, e.max_iter)?)
}

pub fn simulate(config: &LoadedConfig) -> Result<PathBuf, CliError> {
    let spec = config.phantom_spec();
    let bc = config.boundary(&spec.geometry)?;
    let phantom = generate_phantom(&spec, &config.material(), &bc)?;
    let mut run = Run::new("simulate", config)?;
    let p = run.path("frame0.png");
    save_image(&p, phantom.pair.frame0(), BitDepth::Sixteen)?;
    let p = run.path("frame1.png");
    save_image(&p, phantom.pair.frame1(), BitDepth::Sixteen)?;
    let p = run.path("truth.fld");
    save_field(&p, &phantom.truth)?;
    run.bubbles("bubbles.csv", &phantom.bubbles)?;
    println!(
        "simulated {}x{} pair, {} bubbles, max |u| {:.4}",
        spec.geometry.width(),
        spec.geometry.height(),
        phantom.bubbles.len(),
        phantom.truth.max_abs()
    );
    run.finish()
}

pub fn track_cmd(config: &LoadedConfig) -> Result<PathBuf, CliError> {
    let pair = load_pair(config)?;
    let tracked = track(config, &pair)?;
    let mut run = Run::new("track", config)?;
    run.bubbles("tracked.csv", &tracked)?;
    println!("tracked {} bubbles", tracked.len());
    run.finish()
}

pub fn background(config: &LoadedConfig) -> Result<PathBuf, CliError> {
    let g = match optional(config, &config.config.paths.frame0, "frame0.png", "paths.frame0")? {
        Some(p) => *load_image(p)?.geometry(),
        None => config.geometry(),
    };
    let bc = config.boundary(&g)?;
    let e = &config.config.elasticity;
    let u = solve_background(&g, &config.material(), &bc, e.tol, e.max_iter)?;
    let mut run = Run::new("background", config)?;
    let p = run.path("background.fld");
    save_field(&p, &u)?;
    run.colormap("background_u1.png", &u.component(0))?;
    run.colormap("background_u2.png", &u.component(1))?;
    println!("background on {}x{}, max |u| {:.4}", g.width(), g.height(), u.max_abs());
    run.finish()
}

/// Shared body of `flow` and `eofm`.
fn estimate_and_report(config: &LoadedConfig, name: &str, with_background: bool) -> Result<PathBuf, CliError> {
    let pair = load_pair(config)?;
    let bubbles = flow_bubbles(config, &pair)?;
    let mut cfg = config.solver();
    if with_background {
        cfg.background = Some(background_field(config, &pair)?);
    }
    let bc = config.boundary(pair.geometry())?;
    let u = estimate(&pair, &bubbles, &cfg, &bc, config.config.multiscale.levels)?;
    let truth = optional(config, &config.config.paths.truth, "truth.fld", "paths.truth")?;

    let mut run = Run::new(name, config)?;
    let p = run.path(&format!("{name}.fld"));
    save_field(&p, &u)?;
    // report on the field as stored so that `eval` reproduces it exactly
    let u = load_vector_field(&p)?;
    if config.config.solver.beta > 0.0 {
        run.bubbles(&format!("{name}_bubbles.csv"), &bubbles)?;
    }
    run.colormap(&format!("{name}_u1.png"), &u.component(0))?;
    run.colormap(&format!("{name}_u2.png"), &u.component(1))?;
    match truth {
        Some(t) => {
            let truth = load_vector_field(t)?;
            let report = compare(&u, &truth)?;
            write_report(&mut run, name, &report)?;
            run.colormap(&format!("{name}_error_u1.png"), &report.abs_map_u1)?;
            run.colormap(&format!("{name}_error_u2.png"), &report.abs_map_u2)?;
            print!("{report}");
        }
        None => println!("no ground truth; field written without error report"),
    }
    run.finish()
}

fn write_report(run: &mut Run<'_>, name: &str, report: &eofm::ErrorReport) -> Result<(), CliError> {
    run.text(&format!("{name}_report.txt"), &report.to_key_value())?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    run.text(&format!("{name}_report.csv"), &String::from_utf8(csv).expect("csv is utf-8"))
}

pub fn flow(config: &LoadedConfig) -> Result<PathBuf, CliError> {
    estimate_and_report(config, "flow", false)
}

pub fn eofm(config: &LoadedConfig) -> Result<PathBuf, CliError> {
    estimate_and_report(config, "eofm", config.config.solver.background)
}

pub fn eval(config: &LoadedConfig) -> Result<PathBuf, CliError> {
    let paths = &config.config.paths;
    let field = require(config, &paths.field, "eofm.fld", "paths.field")?;
    let truth = require(config, &paths.truth, "truth.fld", "paths.truth")?;
    let report = compare(&load_vector_field(field)?, &load_vector_field(truth)?)?;
    let mut run = Run::new("eval", config)?;
    write_report(&mut run, "eval", &report)?;
    print!("{report}");
    run.finish()
}

pub fn ablation(config: &LoadedConfig) -> Result<PathBuf, CliError> {
    let spec = config.phantom_spec();
    let bc = config.boundary(&spec.geometry)?;
    let material = config.material();
    let phantom = generate_phantom(&spec, &material, &bc)?;
    let s = &config.config.solver;
    let settings = AblationSettings {
        alpha: s.alpha,
        beta: s.beta,
        sigma: s.sigma,
        levels: config.config.multiscale.levels,
        tracker: config.tracker(),
        lin_tol: s.lin_tol,
        lin_max_iter: s.lin_max_iter,
        elasticity_tol: config.config.elasticity.tol,
        elasticity_max_iter: config.config.elasticity.max_iter,
    };
    let rows = run_ablation(&phantom, &material, &bc, &settings)?;
    let mut run = Run::new("ablation", config)?;
    let mut csv = Vec::new();
    write_table_csv(&rows, &mut csv)?;
    run.text("ablation.csv", &String::from_utf8(csv).expect("csv is utf-8"))?;
    let md = table_markdown(&rows);
    run.text("ablation.md", &md)?;
    print!("{md}");
    run.finish()
}
