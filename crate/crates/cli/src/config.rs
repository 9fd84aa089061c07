//! Experiment configuration: TOML file, `--set` overrides and validation.
//!
//! Every error names where the offending value came from: a `file:line`
//! position, the `--set` flag that supplied it, or the built-in defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use eofm::{
    BoundaryMode, BoundarySpec, Edge, GridGeometry, MaterialParams, PhantomSpec, Segment, SegmentKind,
    SolverConfig, TrackerParams,
};
use serde::{Deserialize, Serialize};
use toml_edit::{DocumentMut, ImDocument, Item, Table};

#[derive(Debug, thiserror::Error)]
#[error("{location}: {message}")]
pub struct ConfigError {
    pub location: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub phantom: PhantomSection,
    pub material: MaterialSection,
    pub boundary: BoundarySection,
    pub solver: SolverSection,
    pub multiscale: MultiscaleSection,
    pub tracker: TrackerSection,
    pub elasticity: ElasticitySection,
    pub paths: PathsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: PhantomSpec::default().seed,
            phantom: PhantomSection::default(),
            material: MaterialSection::default(),
            boundary: BoundarySection::default(),
            solver: SolverSection::default(),
            multiscale: MultiscaleSection::default(),
            tracker: TrackerSection::default(),
            elasticity: ElasticitySection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub width: usize,
    pub height: usize,
    /// Defaults to the grid center.
    pub inclusion_center: Option<[f64; 2]>,
    pub inclusion_radius: f64,
    pub stiffness_ratio: f64,
    pub n_bubbles: usize,
    pub bubble_radius_min: f64,
    pub bubble_radius_max: f64,
    pub compression: f64,
    pub speckle_contrast: f64,
    pub speckle_blur: f64,
    pub image_blur: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let d = PhantomSpec::default();
        Self {
            width: d.geometry.width(),
            height: d.geometry.height(),
            inclusion_center: None,
            inclusion_radius: d.inclusion_radius,
            stiffness_ratio: d.stiffness_ratio,
            n_bubbles: d.n_bubbles,
            bubble_radius_min: d.bubble_radius_range.0,
            bubble_radius_max: d.bubble_radius_range.1,
            compression: d.compression,
            speckle_contrast: d.speckle_contrast,
            speckle_blur: d.speckle_blur,
            image_blur: d.image_blur,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSection {
    pub lambda: f64,
    pub mu: f64,
}

impl Default for MaterialSection {
    fn default() -> Self {
        let d = MaterialParams::default();
        Self {
            lambda: d.lambda,
            mu: d.mu,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryPreset {
    /// Top fixed, bottom pushed up by `phantom.compression`, sides free.
    #[default]
    Compression,
    /// No boundary condition at all.
    Natural,
    /// The segments listed under `[[boundary.segments]]`.
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKindName {
    Dirichlet,
    TractionFree,
    Natural,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    pub edge: String,
    pub start: usize,
    pub end: usize,
    pub kind: SegmentKindName,
    #[serde(default)]
    pub value: [f64; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySection {
    pub preset: BoundaryPreset,
    pub segments: Vec<SegmentSection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcModeName {
    Natural,
    Hard,
    Weak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub bc_mode: BcModeName,
    /// Penalty weight of the weak boundary mode.
    pub gamma: f64,
    /// Use the homogeneous elasticity solution as background field.
    pub background: bool,
    pub lin_tol: f64,
    pub lin_max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            alpha: d.alpha,
            beta: d.beta,
            sigma: d.sigma,
            bc_mode: BcModeName::Hard,
            gamma: 100.0,
            background: true,
            lin_tol: d.lin_tol,
            lin_max_iter: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiscaleSection {
    pub levels: usize,
}

impl Default for MultiscaleSection {
    fn default() -> Self {
        Self { levels: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub threshold: f64,
    pub min_area: usize,
    pub max_area: usize,
    pub patch_radius: usize,
    pub search_radius: usize,
    pub min_score: f64,
    pub consistency_check: bool,
    pub consistency_tolerance: usize,
    pub median_filter: bool,
    pub median_threshold: f64,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let d = TrackerParams::default();
        Self {
            threshold: d.threshold,
            min_area: d.min_area,
            max_area: d.max_area,
            patch_radius: d.patch_radius,
            search_radius: d.search_radius,
            min_score: d.min_score,
            consistency_check: d.consistency.is_some(),
            consistency_tolerance: d.consistency.unwrap_or(1),
            median_filter: d.median_test.is_some(),
            median_threshold: d.median_test.unwrap_or(eofm::speckle::MEDIAN_THRESHOLD),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticitySection {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ElasticitySection {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

/// Input paths default to the files `simulate` writes into `output_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub output_dir: PathBuf,
    pub frame0: Option<PathBuf>,
    pub frame1: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub bubbles: Option<PathBuf>,
    pub field: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            frame0: None,
            frame1: None,
            truth: None,
            bubbles: None,
            field: None,
        }
    }
}

/// A configuration together with the text it was read from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    source: Option<(PathBuf, String)>,
    overrides: Vec<(String, String)>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_error(origin: &str, text: &str, e: &toml::de::Error) -> ConfigError {
    let location = match e.span() {
        Some(span) => format!("{origin}:{}", line_of(text, span.start)),
        None => origin.to_string(),
    };
    ConfigError {
        location,
        message: e.message().to_string(),
    }
}

fn apply_override(doc: &mut DocumentMut, spec: &str) -> Result<(String, String), ConfigError> {
    let bad = |message: String| ConfigError {
        location: format!("--set {spec}"),
        message,
    };
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| bad("expected section.key=value".into()))?;
    let (key, raw) = (key.trim(), raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) || parts.len() > 2 {
        return Err(bad(format!("`{key}` is not a key or section.key")));
    }
    let value: toml_edit::Value = raw
        .parse()
        .unwrap_or_else(|_| toml_edit::Value::from(raw.to_string()));
    let table = doc.as_table_mut();
    if parts.len() == 1 {
        table.insert(parts[0], Item::Value(value));
    } else {
        let section = table
            .entry(parts[0])
            .or_insert_with(|| Item::Table(Table::new()))
            .as_table_like_mut()
            .ok_or_else(|| bad(format!("`{}` is not a section", parts[0])))?;
        section.insert(parts[1], Item::Value(value));
    }
    Ok((key.to_string(), raw.to_string()))
}

impl LoadedConfig {
    /// Read `path` (or start from the defaults) and apply `overrides`, each
    /// of the form `section.key=value`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let source = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError {
                    location: p.display().to_string(),
                    message: format!("cannot read config: {e}"),
                })?;
                Some((p.to_path_buf(), text))
            }
            None => None,
        };
        let text = source.as_ref().map_or("", |(_, t)| t.as_str());
        let origin = source
            .as_ref()
            .map_or_else(|| "<defaults>".to_string(), |(p, _)| p.display().to_string());
        // the file alone must parse; later failures are the overrides' fault
        toml::from_str::<ExperimentConfig>(text).map_err(|e| parse_error(&origin, text, &e))?;
        let mut doc: DocumentMut = text.parse().map_err(|e: toml_edit::TomlError| ConfigError {
            location: origin.clone(),
            message: e.to_string(),
        })?;
        let mut applied = Vec::new();
        for spec in overrides {
            applied.push(apply_override(&mut doc, spec)?);
            toml::from_str::<ExperimentConfig>(&doc.to_string()).map_err(|e| ConfigError {
                location: format!("--set {spec}"),
                message: e.message().to_string(),
            })?;
        }
        let config = toml::from_str(&doc.to_string()).map_err(|e| parse_error("<effective config>", "", &e))?;
        let loaded = Self {
            config,
            source,
            overrides: applied,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Where the value of `key` (`section.key` or `boundary.segments[i].key`)
    /// came from.
    pub fn locate(&self, key: &str) -> String {
        if let Some((k, v)) = self.overrides.iter().rev().find(|(k, _)| k == key) {
            return format!("--set {k}={v}");
        }
        let Some((path, text)) = &self.source else {
            return "<defaults>".into();
        };
        let found = ImDocument::parse(text.as_str()).ok().and_then(|doc| {
            let (section, rest) = key.split_once('.')?;
            let root = doc.as_table();
            let (name, index) = match rest.split_once('[') {
                Some((name, tail)) => (name, Some(tail)),
                None => (rest, None),
            };
            let span = match index {
                None => match root.get(section)?.as_table_like()?.get_key_value(name) {
                    Some((k, _)) => k.span(),
                    None => root.get_key_value(section).and_then(|(k, _)| k.span()),
                },
                Some(tail) => {
                    let (i, field) = tail.split_once("].")?;
                    let i: usize = i.parse().ok()?;
                    let entry = root.get(section)?.as_table()?.get(name)?.as_array_of_tables()?.get(i)?;
                    entry.get_key_value(field).and_then(|(k, _)| k.span()).or_else(|| entry.span())
                }
            }?;
            Some(line_of(text, span.start))
        });
        match found {
            Some(line) => format!("{}:{line}", path.display()),
            None => format!("{} (default for {key})", path.display()),
        }
    }

    fn error(&self, key: &str, message: String) -> ConfigError {
        ConfigError {
            location: self.locate(key),
            message: format!("{key}: {message}"),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        let check = |key: &str, ok: bool, msg: &str| if ok { Ok(()) } else { Err(self.error(key, msg.to_string())) };
        let positive = |key: &str, v: f64| check(key, v.is_finite() && v > 0.0, &format!("must be positive, got {v}"));
        let nonneg = |key: &str, v: f64| check(key, v.is_finite() && v >= 0.0, &format!("must be nonnegative, got {v}"));

        let p = &c.phantom;
        check("phantom.width", p.width >= 3, &format!("must be at least 3, got {}", p.width))?;
        check("phantom.height", p.height >= 3, &format!("must be at least 3, got {}", p.height))?;
        positive("phantom.inclusion_radius", p.inclusion_radius)?;
        positive("phantom.stiffness_ratio", p.stiffness_ratio)?;
        positive("phantom.bubble_radius_min", p.bubble_radius_min)?;
        check(
            "phantom.bubble_radius_max",
            p.bubble_radius_max.is_finite() && p.bubble_radius_max >= p.bubble_radius_min,
            &format!("must be at least bubble_radius_min, got {}", p.bubble_radius_max),
        )?;
        check(
            "phantom.speckle_contrast",
            (0.0..=0.4).contains(&p.speckle_contrast),
            &format!("must lie in [0, 0.4], got {}", p.speckle_contrast),
        )?;
        nonneg("phantom.speckle_blur", p.speckle_blur)?;
        nonneg("phantom.image_blur", p.image_blur)?;
        check("phantom.compression", p.compression.is_finite(), "must be finite")?;
        let spec = self.phantom_spec();
        spec.validate()
            .map_err(|e| self.error("phantom.inclusion_center", strip(e)))?;

        nonneg("material.lambda", c.material.lambda)?;
        positive("material.mu", c.material.mu)?;

        let s = &c.solver;
        positive("solver.alpha", s.alpha)?;
        nonneg("solver.beta", s.beta)?;
        positive("solver.sigma", s.sigma)?;
        if s.bc_mode == BcModeName::Weak {
            positive("solver.gamma", s.gamma)?;
        }
        positive("solver.lin_tol", s.lin_tol)?;
        check("solver.lin_max_iter", s.lin_max_iter >= 1, "must be at least 1")?;
        check("multiscale.levels", c.multiscale.levels >= 1, "must be at least 1")?;

        let t = &c.tracker;
        check(
            "tracker.threshold",
            t.threshold > 0.0 && t.threshold < 1.0,
            &format!("must lie in (0, 1), got {}", t.threshold),
        )?;
        check("tracker.min_area", t.min_area >= 1, "must be at least 1")?;
        check(
            "tracker.max_area",
            t.max_area >= t.min_area,
            &format!("must be at least min_area ({}), got {}", t.min_area, t.max_area),
        )?;
        check("tracker.patch_radius", t.patch_radius >= 2, &format!("must be at least 2, got {}", t.patch_radius))?;
        check("tracker.search_radius", t.search_radius >= 1, "must be at least 1")?;
        check(
            "tracker.min_score",
            (-1.0..=1.0).contains(&t.min_score),
            &format!("must lie in [-1, 1], got {}", t.min_score),
        )?;
        positive("tracker.median_threshold", t.median_threshold)?;

        positive("elasticity.tol", c.elasticity.tol)?;
        check("elasticity.max_iter", c.elasticity.max_iter >= 1, "must be at least 1")?;

        for (i, seg) in c.boundary.segments.iter().enumerate() {
            let key = format!("boundary.segments[{i}].edge");
            seg.edge
                .parse::<Edge>()
                .map_err(|_| self.error(&key, format!("unknown edge `{}`", seg.edge)))?;
        }
        match c.boundary.preset {
            BoundaryPreset::Custom => {
                let g = self.geometry();
                self.boundary(&g).map(|_| ())
            }
            _ => check(
                "boundary.preset",
                c.boundary.segments.is_empty(),
                "segments are only read with preset = \"custom\"",
            ),
        }
    }

    /// Grid of the phantom.
    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(self.config.phantom.width, self.config.phantom.height).expect("validated geometry")
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        let p = &self.config.phantom;
        let geometry = GridGeometry::new(p.width.max(3), p.height.max(3)).expect("validated geometry");
        PhantomSpec {
            geometry,
            inclusion_center: p
                .inclusion_center
                .unwrap_or([(p.width as f64 - 1.0) / 2.0, (p.height as f64 - 1.0) / 2.0]),
            inclusion_radius: p.inclusion_radius,
            stiffness_ratio: p.stiffness_ratio,
            n_bubbles: p.n_bubbles,
            bubble_radius_range: (p.bubble_radius_min, p.bubble_radius_max),
            compression: p.compression,
            speckle_contrast: p.speckle_contrast,
            speckle_blur: p.speckle_blur,
            image_blur: p.image_blur,
            seed: self.config.seed,
        }
    }

    pub fn material(&self) -> MaterialParams {
        MaterialParams::new(self.config.material.lambda, self.config.material.mu).expect("validated material")
    }

    /// Boundary conditions on `geometry`.
    pub fn boundary(&self, geometry: &GridGeometry) -> Result<BoundarySpec, ConfigError> {
        let b = &self.config.boundary;
        match b.preset {
            BoundaryPreset::Compression => Ok(BoundarySpec::compression(geometry, self.config.phantom.compression)),
            BoundaryPreset::Natural => Ok(BoundarySpec::natural()),
            BoundaryPreset::Custom => {
                let segments = b
                    .segments
                    .iter()
                    .map(|s| Segment {
                        edge: s.edge.parse().unwrap_or(Edge::Top),
                        start: s.start,
                        end: s.end,
                        kind: match s.kind {
                            SegmentKindName::Dirichlet => SegmentKind::Dirichlet(s.value),
                            SegmentKindName::TractionFree => SegmentKind::TractionFree,
                            SegmentKindName::Natural => SegmentKind::Natural,
                        },
                    })
                    .collect();
                BoundarySpec::new(geometry, segments).map_err(|e| self.error("boundary.segments", strip(e)))
            }
        }
    }

    pub fn solver(&self) -> SolverConfig {
        let s = &self.config.solver;
        SolverConfig {
            alpha: s.alpha,
            beta: s.beta,
            sigma: s.sigma,
            per_bubble_weights: None,
            bc_mode: match s.bc_mode {
                BcModeName::Natural => BoundaryMode::Natural,
                BcModeName::Hard => BoundaryMode::DirichletHard,
                BcModeName::Weak => BoundaryMode::DirichletWeak { gamma: s.gamma },
            },
            background: None,
            lin_tol: s.lin_tol,
            lin_max_iter: s.lin_max_iter,
        }
    }

    pub fn tracker(&self) -> TrackerParams {
        let t = &self.config.tracker;
        TrackerParams {
            threshold: t.threshold,
            min_area: t.min_area,
            max_area: t.max_area,
            patch_radius: t.patch_radius,
            search_radius: t.search_radius,
            min_score: t.min_score,
            consistency: t.consistency_check.then_some(t.consistency_tolerance),
            median_test: t.median_filter.then_some(t.median_threshold),
        }
    }

    /// Canonical TOML of the effective configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(&self.config).expect("configuration serializes")
    }

    /// `paths.<name>` if set, else `<output_dir>/<default>`, and whether
    /// it was set explicitly.
    pub fn input_path(&self, explicit: &Option<PathBuf>, default: &str) -> (PathBuf, bool) {
        match explicit {
            Some(p) => (p.clone(), true),
            None => (self.config.paths.output_dir.join(default), false),
        }
    }
}

/// Message of a library error without its category prefix.
fn strip(e: eofm::Error) -> String {
    match e {
        eofm::Error::InvalidParameter(m) | eofm::Error::InvalidBoundary(m) | eofm::Error::InvalidGeometry(m) => m,
        other => other.to_string(),
    }
}

impl fmt::Display for LoadedConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}
