//! The five-configuration comparison on one phantom.
//!
//! | test | β   | multiscale | background | boundary |
//! |------|-----|------------|------------|----------|
//! | 1    | 0.5 | yes        | no         | natural  |
//! | 2    | 0   | no         | no         | natural  |
//! | 3    | 0   | yes        | yes        | hard     |
//! | 4    | 0.5 | no         | yes        | hard     |
//! | 5    | 0.5 | yes        | yes        | hard     |
//!
//! All tests share α = 0.8 and σ = 5.

use std::io::Write;

use serde::Serialize;

use crate::boundary::BoundarySpec;
use crate::elasticity::{solve_background, MaterialParams};
use crate::eofm::{BoundaryMode, SolverConfig};
use crate::error::{Error, Result};
use crate::evaluation::{compare, format_percent, ErrorReport};
use crate::field::VectorField;
use crate::multiscale::estimate;
use crate::phantom::Phantom;
use crate::speckle::{detect_bubbles, track_bubbles, Bubble, TrackerParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationTest {
    pub id: usize,
    pub alpha: f64,
    pub beta: f64,
    pub multiscale: bool,
    pub background: bool,
    pub bc_mode: BoundaryMode,
}

/// The five standard configurations, in order.
pub fn standard_tests(alpha: f64, beta: f64) -> [AblationTest; 5] {
    let t = |id, beta, multiscale, background, bc_mode| AblationTest {
        id,
        alpha,
        beta,
        multiscale,
        background,
        bc_mode,
    };
    [
        t(1, beta, true, false, BoundaryMode::Natural),
        t(2, 0.0, false, false, BoundaryMode::Natural),
        t(3, 0.0, true, true, BoundaryMode::DirichletHard),
        t(4, beta, false, true, BoundaryMode::DirichletHard),
        t(5, beta, true, true, BoundaryMode::DirichletHard),
    ]
}

/// Settings shared by every test of a run.
#[derive(Clone, Debug)]
pub struct AblationSettings {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub levels: usize,
    pub tracker: TrackerParams,
    pub lin_tol: f64,
    pub lin_max_iter: usize,
    /// Tolerance of the background elasticity solve.
    pub elasticity_tol: f64,
    pub elasticity_max_iter: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            alpha: solver.alpha,
            beta: solver.beta,
            sigma: solver.sigma,
            levels: 4,
            tracker: TrackerParams::default(),
            lin_tol: solver.lin_tol,
            lin_max_iter: 100_000,
            elasticity_tol: 1e-10,
            elasticity_max_iter: 200_000,
        }
    }
}

/// Detect bubbles in frame 0 and track them into frame 1.
pub fn track_phantom(phantom: &Phantom, params: &TrackerParams) -> Result<Vec<Bubble>> {
    let detected = detect_bubbles(phantom.pair.frame0(), params.min_area, params.max_area, params.threshold)?;
    track_bubbles(&phantom.pair, &detected, params)
}

/// Inputs shared by all tests: tracked bubbles and the homogeneous
/// background displacement.
#[derive(Clone, Debug)]
pub struct AblationInputs {
    pub bubbles: Vec<Bubble>,
    pub background: VectorField,
}

pub fn prepare_inputs(
    phantom: &Phantom,
    material: &MaterialParams,
    bc: &BoundarySpec,
    settings: &AblationSettings,
) -> Result<AblationInputs> {
    let bubbles = track_phantom(phantom, &settings.tracker)?;
    let background = solve_background(
        phantom.pair.geometry(),
        material,
        bc,
        settings.elasticity_tol,
        settings.elasticity_max_iter,
    )?;
    Ok(AblationInputs { bubbles, background })
}

/// Run one configuration and return its estimate.
pub fn run_test(
    phantom: &Phantom,
    inputs: &AblationInputs,
    bc: &BoundarySpec,
    test: &AblationTest,
    settings: &AblationSettings,
) -> Result<VectorField> {
    let cfg = SolverConfig {
        alpha: test.alpha,
        beta: test.beta,
        sigma: settings.sigma,
        per_bubble_weights: None,
        bc_mode: test.bc_mode,
        background: test.background.then(|| inputs.background.clone()),
        lin_tol: settings.lin_tol,
        lin_max_iter: settings.lin_max_iter,
    };
    let bubbles: &[Bubble] = if test.beta > 0.0 { &inputs.bubbles } else { &[] };
    let levels = if test.multiscale { settings.levels } else { 1 };
    estimate(&phantom.pair, bubbles, &cfg, bc, levels)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub test: AblationTest,
    pub report: ErrorReport,
}

/// Run all five configurations.
pub fn run_ablation(
    phantom: &Phantom,
    material: &MaterialParams,
    bc: &BoundarySpec,
    settings: &AblationSettings,
) -> Result<Vec<AblationRow>> {
    let inputs = prepare_inputs(phantom, material, bc, settings)?;
    standard_tests(settings.alpha, settings.beta)
        .iter()
        .map(|test| {
            let u = run_test(phantom, &inputs, bc, test, settings)?;
            Ok(AblationRow {
                test: *test,
                report: compare(&u, &phantom.truth)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct CsvRow {
    test: usize,
    alpha: f64,
    beta: f64,
    multiscale: &'static str,
    e_rel_u: String,
    e_rel_u1: String,
    e_rel_u2: String,
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Table as CSV with columns test, α, β, multiscale and the three relative
/// errors in percent.
pub fn write_table_csv<W: Write>(rows: &[AblationRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(CsvRow {
            test: r.test.id,
            alpha: r.test.alpha,
            beta: r.test.beta,
            multiscale: yes_no(r.test.multiscale),
            e_rel_u: format_percent(r.report.e_rel_u),
            e_rel_u1: format_percent(r.report.e_rel_u1),
            e_rel_u2: format_percent(r.report.e_rel_u2),
        })
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Table as Markdown.
pub fn table_markdown(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "| Test | α | β | multiscale | e_rel(u) % | e_rel(u1) % | e_rel(u2) % |\n|---|---|---|---|---|---|---|\n",
    );
    let pct = |v: Option<f64>| v.map_or_else(|| "undefined".into(), |p| format!("{p:.2}"));
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.test.id,
            r.test.alpha,
            r.test.beta,
            yes_no(r.test.multiscale),
            pct(r.report.e_rel_u),
            pct(r.report.e_rel_u1),
            pct(r.report.e_rel_u2)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridGeometry;
    use crate::phantom::{generate_phantom, PhantomSpec};

    #[test]
    fn standard_matrix() {
        let t = standard_tests(0.8, 0.5);
        assert_eq!(t.map(|t| t.beta), [0.5, 0.0, 0.0, 0.5, 0.5]);
        assert_eq!(t.map(|t| t.multiscale), [true, false, true, false, true]);
        assert_eq!(t.map(|t| t.background), [false, false, true, true, true]);
        assert!(t.iter().all(|t| t.alpha == 0.8));
    }

    #[test]
    fn small_run_produces_five_rows() {
        let spec = PhantomSpec {
            geometry: GridGeometry::new(64, 64).unwrap(),
            inclusion_center: [31.5, 31.5],
            inclusion_radius: 10.0,
            n_bubbles: 20,
            compression: 2.0,
            ..PhantomSpec::default()
        };
        let mat = MaterialParams::default();
        let bc = spec.boundary();
        let phantom = generate_phantom(&spec, &mat, &bc).unwrap();
        let settings = AblationSettings {
            levels: 3,
            ..AblationSettings::default()
        };
        let rows = run_ablation(&phantom, &mat, &bc, &settings).unwrap();
        assert_eq!(rows.len(), 5);
        let mut buf = Vec::new();
        write_table_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().unwrap().clone();
        assert_eq!(
            headers.iter().collect::<Vec<_>>(),
            ["test", "alpha", "beta", "multiscale", "e_rel_u", "e_rel_u1", "e_rel_u2"]
        );
        for record in reader.records() {
            let record = record.unwrap();
            for i in [1, 2, 4, 5, 6] {
                assert!(record[i].parse::<f64>().is_ok());
            }
        }
        assert_eq!(table_markdown(&rows).lines().count(), 7);
    }
}
