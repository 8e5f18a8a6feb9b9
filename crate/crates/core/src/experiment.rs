//! Configuration-driven runs of the whole pipeline: growth check, critical
//! points, indices, connection counts, complex and homology, plus the
//! invariant checks and plot data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critical_search::{
    multistart_search, palais_smale_diagnostic, CriticalPoint, CriticalPointRecord, DedupCollision,
    NewtonConfig, PalaisSmaleConfig,
};
use crate::discretization::{build_grid, GridSpec};
use crate::error::{Error, Result};
use crate::flow::{
    connections_from, BoundaryRecord, ConnectionCount, FlowConfig, Limit, Metric, Trajectory,
};
use crate::functional::{validate_growth, EnergyFunctional, GSpec, GrowthReport, Potential};
use crate::morse_complex::{
    assemble, betti_numbers, check_boundary_square, ComplexRecord, CountTable, HomologyResult,
    UnresolvedPair,
};
use crate::spectral::{build_hyperbolic, verify_linear_lyapunov};

/// Potential by family name. Without `alpha` the closed-form bound of the
/// family is used; with it, β and δ are fitted on `window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GConfig {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_window")]
    pub window: (f64, f64),
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_window() -> (f64, f64) {
    (-10.0, 10.0)
}

fn default_samples() -> usize {
    2001
}

impl GConfig {
    pub fn named(name: &str, params: &[f64]) -> Self {
        Self {
            name: name.into(),
            params: params.to_vec(),
            alpha: None,
            window: default_window(),
            samples: default_samples(),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn gspec(&self) -> Result<GSpec> {
        let potential = Potential::from_name(&self.name, &self.params)?;
        Ok(match self.alpha {
            None => GSpec::named(potential),
            Some(alpha) => GSpec::fitted(potential, alpha, self.window, self.samples),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub lyapunov_radius: f64,
    pub lyapunov_samples: usize,
    pub palais_smale: PalaisSmaleConfig,
    /// Recount connections with the other descent metric.
    pub metric_cross_check: bool,
    /// Recount connections with dt and epsilon_shoot halved.
    pub refinement_check: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            lyapunov_radius: 1e-2,
            lyapunov_samples: 50,
            palais_smale: PalaisSmaleConfig::default(),
            metric_cross_check: false,
            refinement_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub grid: GridSpec,
    pub p: f64,
    pub g: GConfig,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub checks: CheckConfig,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl ExperimentConfig {
    pub fn new(name: &str, grid: GridSpec, p: f64, g: GConfig) -> Self {
        Self {
            name: name.into(),
            grid,
            p,
            g,
            newton: NewtonConfig::default(),
            flow: FlowConfig::default(),
            checks: CheckConfig::default(),
            outputs: None,
            rng_seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Checks the config and builds the functional.
    pub fn functional(&self) -> Result<EnergyFunctional> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "experiment name '{}' is not a plain file stem",
                self.name
            )));
        }
        self.newton.validate()?;
        self.flow.validate()?;
        let grid = Arc::new(build_grid(self.grid.clone())?);
        EnergyFunctional::new(grid, self.p, self.g.gspec()?)
    }
}

/// Independent generator for one pipeline stage.
pub fn substream(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

const STREAM_NEWTON: u64 = 1;
const STREAM_LYAPUNOV: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Growth,
    CriticalPoints,
    Connections,
    Homology,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: Stage,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSummary {
    pub solves: usize,
    pub widened: bool,
    pub any_degenerate: bool,
    pub symmetry_closed: Option<bool>,
    pub collisions: Vec<DedupCollision>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectionSummary {
    pub hi: usize,
    pub shot_limits: Vec<(f64, Limit)>,
    pub boundaries: Vec<BoundaryRecord>,
    pub bisection_flows: usize,
    pub unresolved: Vec<String>,
    pub tangency_suspects: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config: ExperimentConfig,
    pub growth: GrowthReport,
    pub stages: Vec<StageStatus>,
    pub critical_points: Vec<CriticalPointRecord>,
    pub search: Option<SearchSummary>,
    pub connections: Vec<ConnectionSummary>,
    pub counts: Vec<ConnectionCount>,
    pub complex: Option<ComplexRecord>,
    pub boundary_squared_zero: Option<bool>,
    pub homology: Option<HomologyResult>,
    pub checks: Vec<CheckResult>,
    pub all_checks_passed: bool,
    /// Wall-clock seconds per stage; the only nondeterministic part.
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentReport {
    /// JSON with timings removed, for reproducibility comparisons.
    pub fn canonical_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.timings.clear();
        Ok(serde_json::to_string(&r)?)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn betti(&self) -> Option<&[usize]> {
        self.homology.as_ref().map(|h| h.betti.as_slice())
    }
}

/// Everything a run produced, including the fields and trajectories that do not
/// go into the JSON report.
pub struct RunArtifacts {
    pub report: ExperimentReport,
    pub functional: Option<EnergyFunctional>,
    pub points: Vec<CriticalPoint>,
    /// (label, trajectory) for every shot.
    pub trajectories: Vec<(String, Trajectory)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub through: Stage,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            through: Stage::Homology,
        }
    }
}

/// Connection counts of every point of index 1 or 2 against the points one
/// index lower.
pub struct FlowStage {
    pub table: CountTable,
    pub summaries: Vec<ConnectionSummary>,
    pub trajectories: Vec<(String, Trajectory)>,
}

pub fn count_all(f: &EnergyFunctional, points: &[CriticalPoint], cfg: &FlowConfig) -> FlowStage {
    let mut table = CountTable::default();
    let mut summaries = Vec::new();
    let mut trajectories = Vec::new();
    for hi in points.iter().filter(|p| p.index() >= 1) {
        let lower: Vec<&CriticalPoint> = points
            .iter()
            .filter(|p| p.index() + 1 == hi.index())
            .collect();
        if lower.is_empty() {
            table.resolved_sources.push(hi.id);
            continue;
        }
        let unresolved = |reason: String| {
            lower.iter().map(move |lo| UnresolvedPair {
                hi: hi.id,
                lo: lo.id,
                reason: reason.clone(),
            })
        };
        if hi.index() > 2 {
            table.unresolved.extend(unresolved(format!(
                "index {} is outside the counting path",
                hi.index()
            )));
            continue;
        }
        match connections_from(f, hi, points, cfg) {
            Ok(rep) => {
                for (k, shot) in rep.shots.iter().enumerate() {
                    trajectories.push((format!("cp{}_shot{k:02}", hi.id), shot.trajectory.clone()));
                }
                if rep.unresolved.is_empty() {
                    table.resolved_sources.push(hi.id);
                    for lo in &lower {
                        let raw = rep.counts.get(&lo.id).copied().unwrap_or(0);
                        table.counts.push(ConnectionCount {
                            hi: hi.id,
                            lo: lo.id,
                            raw,
                            mod2: (raw % 2) as u8,
                        });
                    }
                } else {
                    table
                        .unresolved
                        .extend(unresolved(rep.unresolved.join("; ")));
                }
                summaries.push(ConnectionSummary {
                    hi: hi.id,
                    shot_limits: rep.shot_limits,
                    boundaries: rep.boundaries,
                    bisection_flows: rep.bisection_flows,
                    unresolved: rep.unresolved,
                    tangency_suspects: rep.tangency_suspects,
                });
            }
            Err(e) => table.unresolved.extend(unresolved(e.to_string())),
        }
    }
    FlowStage {
        table,
        summaries,
        trajectories,
    }
}

fn mod2_table(counts: &[ConnectionCount]) -> Vec<(usize, usize, u8)> {
    let mut t: Vec<_> = counts.iter().map(|c| (c.hi, c.lo, c.mod2)).collect();
    t.sort_unstable();
    t
}

fn push(checks: &mut Vec<CheckResult>, name: &str, pass: bool, detail: String) {
    checks.push(CheckResult {
        name: name.into(),
        pass,
        detail,
    });
}

pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Ok(run_with(config, RunOptions::default())?.report)
}

/// Runs the pipeline through `opts.through`. Configuration errors are returned
/// as `Err`; failures of later stages are recorded in the report.
pub fn run_with(config: &ExperimentConfig, opts: RunOptions) -> Result<RunArtifacts> {
    let mut timings = BTreeMap::new();
    let mut stages = Vec::new();
    let mut checks = Vec::new();
    let clock = Instant::now();

    let f = config.functional()?;
    let g = f.gspec();
    let growth = validate_growth(g, config.p, config.g.window, config.g.samples)?;
    push(
        &mut checks,
        "growth_condition",
        growth.pass,
        format!(
            "alpha {} < 2p = {}, max excess {:.3e} on {:?}",
            growth.alpha,
            2.0 * config.p,
            growth.max_excess,
            growth.window
        ),
    );
    stages.push(StageStatus {
        stage: Stage::Growth,
        ok: growth.pass,
        error: None,
    });
    timings.insert("growth".to_string(), clock.elapsed().as_secs_f64());

    let report = ExperimentReport {
        name: config.name.clone(),
        config: config.clone(),
        growth,
        stages,
        critical_points: Vec::new(),
        search: None,
        connections: Vec::new(),
        counts: Vec::new(),
        complex: None,
        boundary_squared_zero: None,
        homology: None,
        checks,
        all_checks_passed: false,
        timings,
    };
    let mut artifacts = RunArtifacts {
        report,
        functional: None,
        points: Vec::new(),
        trajectories: Vec::new(),
    };
    let report = &mut artifacts.report;

    if opts.through >= Stage::CriticalPoints {
        let t = Instant::now();
        let mut newton = config.newton.clone();
        newton.rng_seed = substream(config.rng_seed, STREAM_NEWTON).next_u64();
        match multistart_search(&f, &newton) {
            Ok(search) => {
                report.stages.push(StageStatus {
                    stage: Stage::CriticalPoints,
                    ok: !search.points.is_empty(),
                    error: None,
                });
                point_checks(&f, &search.points, config, &newton, &mut report.checks)?;
                if let Some(closed) = search.symmetry_closed {
                    push(
                        &mut report.checks,
                        "symmetry_closure",
                        closed,
                        "G is even: the set is closed under u -> -u".into(),
                    );
                }
                report.critical_points = search.points.iter().map(|p| p.record(None)).collect();
                report.search = Some(SearchSummary {
                    solves: search.solves,
                    widened: search.widened,
                    any_degenerate: search.any_degenerate,
                    symmetry_closed: search.symmetry_closed,
                    collisions: search.collisions,
                });
                artifacts.points = search.points;
            }
            Err(e) => {
                report.stages.push(StageStatus {
                    stage: Stage::CriticalPoints,
                    ok: false,
                    error: Some(e.to_string()),
                });
            }
        }
        report
            .timings
            .insert("critical_points".into(), t.elapsed().as_secs_f64());
    }

    let points = &artifacts.points;
    if opts.through >= Stage::Connections && !points.is_empty() {
        let t = Instant::now();
        let stage = count_all(&f, points, &config.flow);
        let ok = stage.table.unresolved.is_empty();
        report.stages.push(StageStatus {
            stage: Stage::Connections,
            ok,
            error: (!ok).then(|| {
                let u = &stage.table.unresolved[0];
                format!("unresolved pair ({}, {}): {}", u.hi, u.lo, u.reason)
            }),
        });
        trajectory_checks(&f, &stage.trajectories, config, points, &mut report.checks)?;
        if config.checks.metric_cross_check || config.checks.refinement_check {
            let mut variants = Vec::new();
            if config.checks.metric_cross_check {
                let metric = match config.flow.metric {
                    Metric::Stiffness => Metric::Euclidean,
                    Metric::Euclidean => Metric::Stiffness,
                };
                variants.push((
                    "metric_robustness",
                    FlowConfig {
                        metric,
                        ..config.flow.clone()
                    },
                ));
            }
            if config.checks.refinement_check {
                let fc = &config.flow;
                variants.push((
                    "refinement_robustness",
                    FlowConfig {
                        dt_init: fc.dt_init / 2.0,
                        dt_max: fc.dt_max / 2.0,
                        epsilon_shoot: fc.epsilon_shoot / 2.0,
                        ..fc.clone()
                    },
                ));
            }
            let base = mod2_table(&stage.table.counts);
            let base_limits: Vec<_> = stage
                .summaries
                .iter()
                .map(|s| s.shot_limits.iter().map(|x| x.1).collect::<Vec<_>>())
                .collect();
            for (name, cfg) in variants {
                let other = count_all(&f, points, &cfg);
                let limits: Vec<_> = other
                    .summaries
                    .iter()
                    .map(|s| s.shot_limits.iter().map(|x| x.1).collect::<Vec<_>>())
                    .collect();
                let same_counts =
                    other.table.unresolved.is_empty() && mod2_table(&other.table.counts) == base;
                let pass = ok && same_counts && limits == base_limits;
                push(
                    &mut report.checks,
                    name,
                    pass,
                    format!(
                        "mod-2 counts equal: {same_counts}, shot limits equal: {}",
                        limits == base_limits
                    ),
                );
            }
        }
        report.counts = stage.table.counts.clone();
        report.connections = stage.summaries;
        artifacts.trajectories = stage.trajectories;
        report
            .timings
            .insert("connections".into(), t.elapsed().as_secs_f64());

        if opts.through >= Stage::Homology {
            let t = Instant::now();
            match assemble(points, &stage.table) {
                Ok(cc) => {
                    let square = check_boundary_square(&cc);
                    report.boundary_squared_zero = Some(square);
                    report.complex = Some(cc.record());
                    push(
                        &mut report.checks,
                        "boundary_squared_zero",
                        square,
                        "d_k d_(k+1) = 0 over GF(2)".into(),
                    );
                    match betti_numbers(&cc) {
                        Ok(h) => {
                            let contractible = h.betti.first() == Some(&1)
                                && h.betti.iter().skip(1).all(|&b| b == 0);
                            push(
                                &mut report.checks,
                                "contractible_homology",
                                contractible,
                                format!("betti {:?}", h.betti),
                            );
                            let chi: i64 = h
                                .betti
                                .iter()
                                .enumerate()
                                .map(|(k, &b)| if k % 2 == 0 { b as i64 } else { -(b as i64) })
                                .sum();
                            push(
                                &mut report.checks,
                                "euler_characteristic",
                                chi == cc.euler_characteristic(),
                                format!("chain {} vs homology {chi}", cc.euler_characteristic()),
                            );
                            report.homology = Some(h);
                            report.stages.push(StageStatus {
                                stage: Stage::Homology,
                                ok: true,
                                error: None,
                            });
                        }
                        Err(e) => report.stages.push(StageStatus {
                            stage: Stage::Homology,
                            ok: false,
                            error: Some(e.to_string()),
                        }),
                    }
                }
                Err(e) => report.stages.push(StageStatus {
                    stage: Stage::Homology,
                    ok: false,
                    error: Some(e.to_string()),
                }),
            }
            report
                .timings
                .insert("homology".into(), t.elapsed().as_secs_f64());
        }
    }

    report.all_checks_passed =
        report.stages.iter().all(|s| s.ok) && report.checks.iter().all(|c| c.pass);
    report
        .timings
        .insert("total".into(), clock.elapsed().as_secs_f64());
    artifacts.functional = Some(f);
    Ok(artifacts)
}

fn point_checks(
    f: &EnergyFunctional,
    points: &[CriticalPoint],
    config: &ExperimentConfig,
    newton: &NewtonConfig,
    checks: &mut Vec<CheckResult>,
) -> Result<()> {
    let grid = f.grid();
    push(
        checks,
        "critical_count_not_two",
        points.len() != 2,
        format!("{} critical points", points.len()),
    );
    push(
        checks,
        "nonempty_critical_set",
        !points.is_empty(),
        format!("{} critical points", points.len()),
    );
    let degenerate: Vec<usize> = points
        .iter()
        .filter(|p| !p.nondegenerate)
        .map(|p| p.id)
        .collect();
    push(
        checks,
        "nondegenerate",
        degenerate.is_empty(),
        format!("degenerate ids {degenerate:?}"),
    );
    let mut worst: f64 = 0.0;
    for p in points {
        worst = worst.max(grid.dual_norm(&f.gradient(&p.u)?));
    }
    push(
        checks,
        "critical_residuals",
        worst <= newton.newton_tol,
        format!("max dual residual {worst:.3e}"),
    );
    let sylvester = points
        .iter()
        .all(|p| p.index() == p.spectral.hessian_negative_count);
    push(
        checks,
        "index_inertia_agreement",
        sylvester,
        "pencil index equals negative inertia of the Hessian".into(),
    );

    let mut rng = substream(config.rng_seed, STREAM_LYAPUNOV);
    let (mut lyap_ok, mut trace_ok) = (true, true);
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut worst_trace: f64 = 0.0;
    for p in points.iter().filter(|p| p.nondegenerate) {
        let l = build_hyperbolic(&p.spectral)?;
        let r = verify_linear_lyapunov(
            f,
            &p.u,
            &p.spectral,
            &l,
            config.checks.lyapunov_radius,
            config.checks.lyapunov_samples,
            &mut rng,
        )?;
        lyap_ok &= r.pass;
        worst_ratio = worst_ratio.max(r.max_ratio);
        let expected = 2.0 * p.index() as f64 - l.dim() as f64;
        let err = (l.trace() - expected).abs();
        worst_trace = worst_trace.max(err);
        trace_ok &= err <= 1e-10;
    }
    push(
        checks,
        "linear_lyapunov",
        lyap_ok,
        format!(
            "radius {}, {} samples per point, worst ratio {worst_ratio:.3e}",
            config.checks.lyapunov_radius, config.checks.lyapunov_samples
        ),
    );
    push(
        checks,
        "hyperbolic_trace",
        trace_ok,
        format!("|tr L - (2 index - dim)| <= {worst_trace:.3e}"),
    );
    Ok(())
}

fn trajectory_checks(
    f: &EnergyFunctional,
    trajectories: &[(String, Trajectory)],
    config: &ExperimentConfig,
    points: &[CriticalPoint],
    checks: &mut Vec<CheckResult>,
) -> Result<()> {
    let monotone = trajectories
        .iter()
        .all(|(_, t)| t.energies.windows(2).all(|w| w[1] < w[0]));
    push(
        checks,
        "strict_energy_decrease",
        monotone,
        format!("{} trajectories", trajectories.len()),
    );
    let mut ps = config.checks.palais_smale.clone();
    ps.bound = ps
        .bound
        .min(config.flow.escape_radius_for(f.grid(), points));
    let mut failures = Vec::new();
    for (label, t) in trajectories
        .iter()
        .filter(|(_, t)| t.limit != Limit::Escaped)
    {
        if !palais_smale_diagnostic(f, &t.states, &ps)?.pass {
            failures.push(label.clone());
        }
    }
    push(
        checks,
        "palais_smale",
        failures.is_empty(),
        format!("failing trajectories {failures:?}"),
    );
    Ok(())
}

/// Writes `{name}_report.json`, `{name}_counts.json` and one field CSV per
/// critical point into `dir`. Returns the files written.
pub fn write_outputs(artifacts: &RunArtifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let name = &artifacts.report.name;
    let mut report = artifacts.report.clone();
    let mut written = Vec::new();
    if let Some(f) = &artifacts.functional {
        for (rec, p) in report.critical_points.iter_mut().zip(&artifacts.points) {
            let file = format!("{name}_cp{}.csv", p.id);
            f.grid().write_field_csv(&p.u, &dir.join(&file))?;
            rec.field_ref = Some(file.clone());
            written.push(dir.join(file));
        }
    }
    let path = dir.join(format!("{name}_report.json"));
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    written.push(path);
    let path = dir.join(format!("{name}_counts.json"));
    fs::write(&path, serde_json::to_string_pretty(&report.counts)?)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    EnergyLandscape,
    Trajectories,
    Spectrum,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy_landscape" => Ok(PlotKind::EnergyLandscape),
            "trajectories" => Ok(PlotKind::Trajectories),
            "spectrum" => Ok(PlotKind::Spectrum),
            other => Err(Error::Config(format!(
                "unknown plot kind '{other}' (expected energy_landscape, trajectories or spectrum)"
            ))),
        }
    }
}

impl PlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::EnergyLandscape => "energy_landscape",
            PlotKind::Trajectories => "trajectories",
            PlotKind::Spectrum => "spectrum",
        }
    }
}

/// Side length of the energy-landscape grid.
pub const LANDSCAPE_RESOLUTION: usize = 41;

/// Writes CSV plot data named `{experiment}_{kind}.csv` (one file per
/// trajectory for `trajectories`, with a `_{label}` suffix).
pub fn emit_plotdata(artifacts: &RunArtifacts, kind: PlotKind, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let name = &artifacts.report.name;
    let stem = format!("{name}_{}", kind.as_str());
    match kind {
        PlotKind::Spectrum => {
            let path = dir.join(format!("{stem}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["cp_id", "eigenvalue_rank", "eigenvalue"])?;
            for p in &artifacts.points {
                for (rank, ev) in p.spectral.eigenvalues.iter().enumerate() {
                    w.write_record([p.id.to_string(), rank.to_string(), format!("{ev:e}")])?;
                }
            }
            w.flush()?;
            Ok(vec![path])
        }
        PlotKind::Trajectories => {
            let mut out = Vec::new();
            for (label, t) in &artifacts.trajectories {
                let path = dir.join(format!("{stem}_{label}.csv"));
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["step", "energy", "residual"])?;
                for k in 0..t.states.len() {
                    w.write_record([
                        t.steps[k].to_string(),
                        format!("{:e}", t.energies[k]),
                        format!("{:e}", t.residuals[k]),
                    ])?;
                }
                w.flush()?;
                out.push(path);
            }
            Ok(out)
        }
        PlotKind::EnergyLandscape => {
            let f = artifacts
                .functional
                .as_ref()
                .ok_or_else(|| Error::Refused("energy landscape needs the functional".into()))?;
            let grid = f.grid();
            if grid.dim() != 1 {
                return Err(Error::Refused(
                    "energy landscape is only defined in one dimension".into(),
                ));
            }
            let modes: Vec<DVector<f64>> = [1usize, 2]
                .iter()
                .map(|&k| {
                    let m = grid.sine_mode(&[k]);
                    let n = grid.stiffness_norm(&m);
                    m / n
                })
                .collect();
            let mut extent: f64 = 1.0;
            for p in &artifacts.points {
                let ku = grid.stiffness_apply(&p.u);
                for m in &modes {
                    extent = extent.max(1.25 * m.dot(&ku).abs());
                }
            }
            let path = dir.join(format!("{stem}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["a1", "a2", "energy"])?;
            let n = LANDSCAPE_RESOLUTION;
            for i in 0..n {
                for j in 0..n {
                    let a = -extent + 2.0 * extent * i as f64 / (n - 1) as f64;
                    let b = -extent + 2.0 * extent * j as f64 / (n - 1) as f64;
                    let e = f.energy(&(&modes[0] * a + &modes[1] * b))?;
                    w.write_record([format!("{a:e}"), format!("{b:e}"), format!("{e:e}")])?;
                }
            }
            w.flush()?;
            Ok(vec![path])
        }
    }
}

/// Thread pool capped by `MORSELAB_THREADS`, if that variable is set.
pub fn thread_pool_from_env() -> Result<Option<rayon::ThreadPool>> {
    match std::env::var("MORSELAB_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                Error::Config(format!(
                    "MORSELAB_THREADS must be a positive integer, got '{v}'"
                ))
            })?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(Some(pool))
        }
        Err(_) => Ok(None),
    }
}
