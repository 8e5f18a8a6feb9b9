//! Negative gradient flow and connection counting.
//!
//! The flow u̇ = -M⁻¹ df(u) is integrated by explicit Euler with step control:
//! a step is kept only if the energy strictly decreases (with an Armijo margin),
//! otherwise dt is halved. Trajectories stop when they settle near a critical
//! point of lower energy, leave a ball, or run out of steps.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critical_search::CriticalPoint;
use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::functional::EnergyFunctional;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// H¹₀ gradient, M = K.
    Stiffness,
    /// Coefficient-space gradient, M = I.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub metric: Metric,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_grow: f64,
    /// Armijo fraction in the decrease test f(u⁺) ≤ f(u) - c·dt·⟨df, M⁻¹df⟩.
    pub decrease_check: f64,
    /// Stiffness-norm radius for "has reached a critical point".
    pub limit_tol: f64,
    /// Dual-norm residual required together with `limit_tol`.
    pub limit_residual: f64,
    /// `None` means 10 × the largest critical-point norm (at least 10).
    pub escape_radius: Option<f64>,
    pub max_steps: usize,
    /// Shooting offset along unstable directions, in the Gram norm.
    pub epsilon_shoot: f64,
    /// Smallest angular bracket in the boundary bisection.
    pub bisect_tol: f64,
    /// Largest closest approach for which a refined boundary is attributed to a
    /// saddle; `None` means 0.1 × the smallest distance between critical points.
    pub pass_tol: Option<f64>,
    pub circle_samples: usize,
    /// Keep every n-th accepted state.
    pub store_every: usize,
    /// Trailing states always kept.
    pub tail_keep: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Stiffness,
            dt_init: 1e-3,
            dt_min: 1e-14,
            dt_max: 1.0,
            dt_grow: 1.5,
            decrease_check: 1e-4,
            limit_tol: 1e-3,
            limit_residual: 1e-2,
            escape_radius: None,
            max_steps: 1_000_000,
            epsilon_shoot: 5e-2,
            bisect_tol: 1e-10,
            pass_tol: None,
            circle_samples: 64,
            store_every: 50,
            tail_keep: 8,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt_init", self.dt_init),
            ("dt_min", self.dt_min),
            ("dt_max", self.dt_max),
            ("limit_tol", self.limit_tol),
            ("limit_residual", self.limit_residual),
            ("epsilon_shoot", self.epsilon_shoot),
            ("bisect_tol", self.bisect_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.dt_min > self.dt_init || self.dt_init > self.dt_max {
            return Err(Error::Config("need dt_min <= dt_init <= dt_max".into()));
        }
        if !(self.dt_grow >= 1.0) {
            return Err(Error::Config("dt_grow must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.decrease_check) {
            return Err(Error::Config("decrease_check must lie in [0, 1)".into()));
        }
        if let Some(r) = self.pass_tol {
            if !(r > 0.0) {
                return Err(Error::Config(format!("pass_tol must be positive, got {r}")));
            }
        }
        if let Some(r) = self.escape_radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!(
                    "escape_radius must be positive, got {r}"
                )));
            }
        }
        if self.max_steps == 0 || self.store_every == 0 || self.circle_samples < 3 {
            return Err(Error::Config(
                "max_steps, store_every must be >= 1 and circle_samples >= 3".into(),
            ));
        }
        Ok(())
    }

    pub fn pass_tol_for(&self, grid: &Grid, crit: &[CriticalPoint]) -> f64 {
        self.pass_tol.unwrap_or_else(|| {
            let mut sep = f64::INFINITY;
            for (i, a) in crit.iter().enumerate() {
                for b in &crit[i + 1..] {
                    sep = sep.min(grid.stiffness_distance(&a.u, &b.u));
                }
            }
            0.1 * sep
        })
    }

    pub fn escape_radius_for(&self, grid: &Grid, crit: &[CriticalPoint]) -> f64 {
        self.escape_radius.unwrap_or_else(|| {
            let largest = crit
                .iter()
                .map(|c| grid.stiffness_norm(&c.u))
                .fold(0.0, f64::max);
            (10.0 * largest).max(10.0)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    CriticalPoint(usize),
    Escaped,
    Exhausted,
}

impl Limit {
    pub fn point(self) -> Option<usize> {
        match self {
            Limit::CriticalPoint(id) => Some(id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Thinned states; the first is the start, the last is the final state.
    pub states: Vec<DVector<f64>>,
    /// Accepted-step counter of each stored state.
    pub steps: Vec<usize>,
    pub energies: Vec<f64>,
    /// Dual-norm residuals of the stored states.
    pub residuals: Vec<f64>,
    pub limit: Limit,
    pub accepted: usize,
    pub rejected: usize,
    /// Smallest stiffness distance to each critical point along the path, in `crit` order.
    pub closest: Vec<f64>,
    pub final_dt: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory stores its start")
    }
}

/// Critical point within `limit_tol` of `u`, if any. Two candidates are an error.
pub fn classify_limit(
    grid: &Grid,
    u: &DVector<f64>,
    crit: &[CriticalPoint],
    limit_tol: f64,
) -> Result<Option<usize>> {
    let mut hit: Option<usize> = None;
    for c in crit {
        if grid.stiffness_distance(u, &c.u) <= limit_tol {
            if let Some(prev) = hit {
                return Err(Error::AmbiguousLimit(prev, c.id));
            }
            hit = Some(c.id);
        }
    }
    Ok(hit)
}

struct Stored {
    step: usize,
    u: DVector<f64>,
    energy: f64,
    residual: f64,
}

fn metric_direction(grid: &Grid, metric: Metric, g: &DVector<f64>) -> DVector<f64> {
    match metric {
        Metric::Stiffness => grid.stiffness_solve(g),
        Metric::Euclidean => g.clone(),
    }
}

/// Integrates the descent flow from `u0`. Critical points count as limits only
/// if their energy does not exceed the current energy.
pub fn integrate_descent(
    f: &EnergyFunctional,
    u0: &DVector<f64>,
    cfg: &FlowConfig,
    crit: &[CriticalPoint],
) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = f.grid();
    grid.check_field(u0)?;
    let escape = cfg.escape_radius_for(grid, crit);

    let mut u = u0.clone();
    let (mut e, mut g) = f.energy_and_gradient(&u)?;
    let mut dir = metric_direction(grid, cfg.metric, &g);
    let mut dt = cfg.dt_init;
    let mut closest = vec![f64::INFINITY; crit.len()];
    let mut kept: Vec<Stored> = Vec::new();
    let mut tail: VecDeque<Stored> = VecDeque::with_capacity(cfg.tail_keep + 1);
    let (mut accepted, mut rejected) = (0usize, 0usize);

    let residual_of = |g: &DVector<f64>, dir: &DVector<f64>| match cfg.metric {
        Metric::Stiffness => g.dot(dir).max(0.0).sqrt(),
        Metric::Euclidean => grid.dual_norm(g),
    };
    kept.push(Stored {
        step: 0,
        u: u.clone(),
        energy: e,
        residual: residual_of(&g, &dir),
    });

    let limit = loop {
        let mut candidate: Option<usize> = None;
        let mut residual: Option<f64> = None;
        for (slot, c) in closest.iter_mut().zip(crit) {
            let d = grid.stiffness_distance(&u, &c.u);
            *slot = slot.min(d);
            if d <= cfg.limit_tol && c.energy <= e {
                let r = *residual.get_or_insert_with(|| residual_of(&g, &dir));
                if r <= cfg.limit_residual {
                    if let Some(prev) = candidate {
                        return Err(Error::AmbiguousLimit(prev, c.id));
                    }
                    candidate = Some(c.id);
                }
            }
        }
        if let Some(id) = candidate {
            break Limit::CriticalPoint(id);
        }
        if grid.stiffness_norm(&u) > escape {
            break Limit::Escaped;
        }
        if accepted >= cfg.max_steps {
            break Limit::Exhausted;
        }

        let slope = g.dot(&dir);
        let step = loop {
            let trial = &u - &dir * dt;
            let et = f.energy(&trial)?;
            if et.is_finite() && et < e && et <= e - cfg.decrease_check * dt * slope {
                break Some((trial, et));
            }
            rejected += 1;
            dt *= 0.5;
            if dt < cfg.dt_min {
                break None;
            }
        };
        let Some((next, _)) = step else {
            break Limit::Exhausted;
        };
        u = next;
        (e, g) = f.energy_and_gradient(&u)?;
        dir = metric_direction(grid, cfg.metric, &g);
        accepted += 1;
        dt = (dt * cfg.dt_grow).min(cfg.dt_max);

        if cfg.tail_keep > 0 {
            if tail.len() == cfg.tail_keep {
                tail.pop_front();
            }
            tail.push_back(Stored {
                step: accepted,
                u: u.clone(),
                energy: e,
                residual: f64::NAN,
            });
        }
        if accepted % cfg.store_every == 0 {
            kept.push(Stored {
                step: accepted,
                u: u.clone(),
                energy: e,
                residual: residual_of(&g, &dir),
            });
        }
    };

    let last_kept = kept.last().map_or(0, |s| s.step);
    for mut s in tail.into_iter().filter(|s| s.step > last_kept) {
        let gs = f.gradient(&s.u)?;
        s.residual = grid.dual_norm(&gs);
        kept.push(s);
    }
    if kept.last().map(|s| s.step) != Some(accepted) {
        kept.push(Stored {
            step: accepted,
            u: u.clone(),
            energy: e,
            residual: residual_of(&g, &dir),
        });
    }

    let mut traj = Trajectory {
        states: Vec::with_capacity(kept.len()),
        steps: Vec::with_capacity(kept.len()),
        energies: Vec::with_capacity(kept.len()),
        residuals: Vec::with_capacity(kept.len()),
        limit,
        accepted,
        rejected,
        closest,
        final_dt: dt,
    };
    for s in kept {
        traj.states.push(s.u);
        traj.steps.push(s.step);
        traj.energies.push(s.energy);
        traj.residuals.push(s.residual);
    }
    Ok(traj)
}

/// One trajectory started on the linearized unstable manifold.
#[derive(Debug, Clone)]
pub struct Shot {
    /// ±1 for index 1; the angle θ for index 2.
    pub parameter: f64,
    pub trajectory: Trajectory,
}

fn unstable_start(cp: &CriticalPoint, eps: f64, parameter: f64) -> DVector<f64> {
    let v = &cp.spectral.eigenvectors;
    match cp.index() {
        1 => &cp.u + v.column(0) * (eps * parameter),
        _ => &cp.u + (v.column(0) * parameter.cos() + v.column(1) * parameter.sin()) * eps,
    }
}

/// Sample angles θ_k = 2π(k + 1/2)/n.
pub fn circle_angles(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 2.0 * PI * (k as f64 + 0.5) / n as f64)
        .collect()
}

/// Shoots from `cp` along its unstable directions: two shots for index 1,
/// `circle_samples` shots around the unstable circle for index 2.
pub fn shoot_unstable(
    f: &EnergyFunctional,
    cp: &CriticalPoint,
    cfg: &FlowConfig,
    crit: &[CriticalPoint],
) -> Result<Vec<Shot>> {
    cfg.validate()?;
    if !cp.nondegenerate {
        return Err(Error::Degenerate(format!(
            "critical point {} is degenerate",
            cp.id
        )));
    }
    let params = match cp.index() {
        0 => {
            return Err(Error::Refused(format!(
                "critical point {} is a minimum: no unstable directions",
                cp.id
            )))
        }
        1 => vec![1.0, -1.0],
        2 => circle_angles(cfg.circle_samples),
        k => {
            return Err(Error::Refused(format!(
                "shooting from index {k} is not supported"
            )))
        }
    };
    params
        .into_par_iter()
        .map(|t| {
            let trajectory =
                integrate_descent(f, &unstable_start(cp, cfg.epsilon_shoot, t), cfg, crit)?;
            Ok(Shot {
                parameter: t,
                trajectory,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectionReport {
    pub hi: usize,
    /// Raw number of connecting orbits to each lower point (by id).
    pub counts: BTreeMap<usize, usize>,
    pub shot_limits: Vec<(f64, Limit)>,
    /// Extra trajectories spent in boundary bisection.
    pub bisection_flows: usize,
    pub unresolved: Vec<String>,
    pub boundaries: Vec<BoundaryRecord>,
    /// Saddles hit by a sample run whose neighbours flow to the same minimum.
    pub tangency_suspects: Vec<usize>,
    #[serde(skip)]
    pub shots: Vec<Shot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionCount {
    pub hi: usize,
    pub lo: usize,
    pub raw: usize,
    pub mod2: u8,
}

fn limit_index(l: Limit, crit: &[CriticalPoint]) -> Option<usize> {
    l.point()
        .and_then(|id| crit.iter().find(|c| c.id == id))
        .map(|c| c.index())
}

/// Counts connecting orbits from `hi` to every point of index one lower.
pub fn connections_from(
    f: &EnergyFunctional,
    hi: &CriticalPoint,
    crit: &[CriticalPoint],
    cfg: &FlowConfig,
) -> Result<ConnectionReport> {
    let shots = shoot_unstable(f, hi, cfg, crit)?;
    let shot_limits: Vec<(f64, Limit)> = shots
        .iter()
        .map(|s| (s.parameter, s.trajectory.limit))
        .collect();
    let mut report = ConnectionReport {
        hi: hi.id,
        counts: BTreeMap::new(),
        shot_limits: shot_limits.clone(),
        bisection_flows: 0,
        unresolved: Vec::new(),
        boundaries: Vec::new(),
        tangency_suspects: Vec::new(),
        shots: Vec::new(),
    };
    let target = hi.index() - 1;

    for &(t, l) in &shot_limits {
        match limit_index(l, crit) {
            Some(k) if k == target || (hi.index() == 2 && k == 0) => {}
            _ => report
                .unresolved
                .push(format!("shot {t:.6} from point {} ended as {l:?}", hi.id)),
        }
    }
    report.shots = shots;
    if !report.unresolved.is_empty() {
        return Ok(report);
    }

    if hi.index() == 1 {
        for &(_, l) in &shot_limits {
            *report.counts.entry(l.point().unwrap()).or_default() += 1;
        }
        return Ok(report);
    }

    // index 2: walk the sampled circle
    let n = shot_limits.len();
    let limits: Vec<Limit> = shot_limits.iter().map(|s| s.1).collect();
    let is_saddle = |l: Limit| limit_index(l, crit) == Some(1);
    if limits.iter().all(|&l| l == limits[0]) {
        if is_saddle(limits[0]) {
            report.unresolved.push(format!(
                "every circle sample from point {} ends at saddle {:?}",
                hi.id, limits[0]
            ));
        }
        return Ok(report);
    }
    // runs of equal limits, cyclically; start at a position where the limit changes
    let start = (0..n)
        .find(|&k| limits[k] != limits[(k + n - 1) % n])
        .unwrap();
    let mut runs: Vec<(usize, usize, Limit)> = Vec::new(); // (first, last, limit), indices mod n
    for k in start..start + n {
        let idx = k % n;
        match runs.last_mut() {
            Some(r) if r.2 == limits[idx] => r.1 = idx,
            _ => runs.push((idx, idx, limits[idx])),
        }
    }
    let m = runs.len();
    let mut gaps = Vec::new();
    for r in 0..m {
        let (_, _, l) = runs[r];
        let prev = runs[(r + m - 1) % m].2;
        let next = runs[(r + 1) % m].2;
        if is_saddle(l) {
            if prev != next {
                *report.counts.entry(l.point().unwrap()).or_default() += 1;
            } else {
                *report.counts.entry(l.point().unwrap()).or_default() += 2;
                report.tangency_suspects.push(l.point().unwrap());
            }
        } else if !is_saddle(next) {
            // two minima basins meet between the last sample of this run and the first of the next
            let a = runs[r].1;
            let b = runs[(r + 1) % m].0;
            let ta = shot_limits[a].0;
            let mut tb = shot_limits[b].0;
            if tb < ta {
                tb += 2.0 * PI;
            }
            gaps.push((ta, tb, l, next));
        }
    }

    let resolved: Vec<Result<Vec<BoundaryRecord>>> = gaps
        .into_par_iter()
        .map(|(ta, tb, la, lb)| bisect_boundary(f, hi, crit, cfg, ta, tb, la, lb))
        .collect();
    for records in resolved {
        for b in records? {
            report.bisection_flows += b.flows;
            match b.saddle {
                Some(s) => *report.counts.entry(s).or_default() += 1,
                None => report.unresolved.push(format!(
                    "boundary between {:?} and {:?} near angle {:.12} from point {} did not resolve to a saddle \
                     (closest saddle approach {:.3e})",
                    b.between.0, b.between.1, b.angles.0, hi.id, b.approach
                )),
            }
            report.boundaries.push(b);
        }
    }
    Ok(report)
}

/// Outcome of refining one boundary between two basins on the unstable circle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub angles: (f64, f64),
    pub between: (Limit, Limit),
    pub saddle: Option<usize>,
    /// Closest stiffness-norm approach to the attributed (or nearest) saddle.
    pub approach: f64,
    pub flows: usize,
}

/// Bisects the angular bracket [ta, tb] whose ends flow to different minima.
/// The boundary belongs to the saddle that the refined trajectories pass
/// closest to: immediately once a trajectory converges to a saddle or passes
/// within `limit_tol`, otherwise at the end of the bisection if the best
/// approach is within `pass_tol` and at most half the runner-up.
#[allow(clippy::too_many_arguments)]
fn bisect_boundary(
    f: &EnergyFunctional,
    hi: &CriticalPoint,
    crit: &[CriticalPoint],
    cfg: &FlowConfig,
    ta: f64,
    tb: f64,
    la: Limit,
    lb: Limit,
) -> Result<Vec<BoundaryRecord>> {
    let pass_tol = cfg.pass_tol_for(f.grid(), crit);
    let saddles: Vec<usize> = (0..crit.len())
        .filter(|&k| crit[k].index() + 1 == hi.index())
        .collect();
    let flow_at =
        |t: f64| integrate_descent(f, &unstable_start(hi, cfg.epsilon_shoot, t), cfg, crit);
    let ranked = |best: &[f64]| {
        let mut r: Vec<(f64, usize)> = saddles.iter().map(|&k| (best[k], k)).collect();
        r.sort_by(|x, y| x.0.total_cmp(&y.0));
        r
    };
    let mut out = Vec::new();
    let mut stack = vec![(ta, tb, la, lb)];
    while let Some((a0, b0, la, lb)) = stack.pop() {
        let (mut a, mut b) = (a0, b0);
        let mut best = vec![f64::INFINITY; crit.len()];
        for t in [a, b] {
            for (x, c) in best.iter_mut().zip(flow_at(t)?.closest) {
                *x = x.min(c);
            }
        }
        let mut flows = 2;
        let record = |saddle: Option<usize>, approach: f64, flows: usize| BoundaryRecord {
            angles: (a0, b0),
            between: (la, lb),
            saddle,
            approach,
            flows,
        };
        loop {
            let r = ranked(&best);
            let close = |k: usize| r.get(k).map_or(f64::INFINITY, |x| x.0);
            if close(0) <= cfg.limit_tol && close(1) > cfg.limit_tol {
                out.push(record(Some(crit[r[0].1].id), close(0), flows));
                break;
            }
            let mid = 0.5 * (a + b);
            if b - a < cfg.bisect_tol || mid <= a || mid >= b {
                let ok = close(0) <= pass_tol && close(1) >= 2.0 * close(0);
                out.push(record(ok.then(|| crit[r[0].1].id), close(0), flows));
                break;
            }
            let traj = flow_at(mid)?;
            flows += 1;
            for (x, c) in best.iter_mut().zip(&traj.closest) {
                *x = x.min(*c);
            }
            let lm = traj.limit;
            if lm == la {
                a = mid;
            } else if lm == lb {
                b = mid;
            } else {
                match limit_index(lm, crit) {
                    Some(k) if k + 1 == hi.index() => {
                        let id = lm.point().unwrap();
                        let pos = crit.iter().position(|c| c.id == id).unwrap();
                        out.push(record(Some(id), traj.closest[pos], flows));
                    }
                    Some(0) => {
                        stack.push((a, mid, la, lm));
                        stack.push((mid, b, lm, lb));
                    }
                    _ => out.push(record(None, f64::INFINITY, flows)),
                }
                break;
            }
        }
    }
    Ok(out)
}

/// Connection count between two points whose indices differ by one.
pub fn count_connections(
    f: &EnergyFunctional,
    hi: &CriticalPoint,
    lo: &CriticalPoint,
    crit: &[CriticalPoint],
    cfg: &FlowConfig,
) -> Result<ConnectionCount> {
    if !hi.nondegenerate || !lo.nondegenerate {
        return Err(Error::Degenerate(format!(
            "pair ({}, {}) contains a degenerate point",
            hi.id, lo.id
        )));
    }
    if hi.index() != lo.index() + 1 {
        return Err(Error::Refused(format!(
            "connection counting needs index difference 1, got {} and {}",
            hi.index(),
            lo.index()
        )));
    }
    let report = connections_from(f, hi, crit, cfg)?;
    if !report.unresolved.is_empty() {
        return Err(Error::Unresolved {
            hi: hi.id,
            lo: lo.id,
            reason: report.unresolved.join("; "),
        });
    }
    let raw = report.counts.get(&lo.id).copied().unwrap_or(0);
    Ok(ConnectionCount {
        hi: hi.id,
        lo: lo.id,
        raw,
        mod2: (raw % 2) as u8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical_search::{classify_point, multistart_search, NewtonConfig};
    use crate::discretization::{build_grid, GridSpec};
    use crate::functional::{GSpec, Potential};
    use std::sync::Arc;

    fn double_well(n: usize, lambda: f64) -> EnergyFunctional {
        let grid = Arc::new(build_grid(GridSpec::interval(1.0, n)).unwrap());
        let g = GSpec::fitted(
            Potential::DoubleWell { lambda, kappa: 1.0 },
            3.5,
            (-10.0, 10.0),
            2001,
        );
        EnergyFunctional::new(grid, 2.0, g).unwrap()
    }

    #[test]
    fn convex_flow_reaches_the_minimum() {
        let grid = Arc::new(build_grid(GridSpec::interval(1.0, 32)).unwrap());
        let f = EnergyFunctional::new(grid.clone(), 2.0, GSpec::zero()).unwrap();
        let zero = classify_point(&f, 0, grid.zeros(), 0.0, 1e-8).unwrap();
        let u0 = grid.sine_mode(&[1]) * 1e-2 + grid.sine_mode(&[3]) * 1e-2;
        for metric in [Metric::Stiffness, Metric::Euclidean] {
            let cfg = FlowConfig {
                metric,
                ..FlowConfig::default()
            };
            let t = integrate_descent(&f, &u0, &cfg, std::slice::from_ref(&zero)).unwrap();
            assert_eq!(t.limit, Limit::CriticalPoint(0), "{metric:?}");
            assert!(t.energies.windows(2).all(|w| w[1] < w[0]));
            assert_eq!(t.steps[0], 0);
            assert_eq!(*t.steps.last().unwrap(), t.accepted);
        }
    }

    #[test]
    fn flow_without_targets_escapes_or_exhausts() {
        let grid = Arc::new(build_grid(GridSpec::interval(1.0, 16)).unwrap());
        let f = EnergyFunctional::new(grid.clone(), 2.0, GSpec::linear(1.0)).unwrap();
        let cfg = FlowConfig {
            max_steps: 200,
            ..FlowConfig::default()
        };
        let t = integrate_descent(&f, &grid.sine_mode(&[1]), &cfg, &[]).unwrap();
        assert_eq!(t.limit, Limit::Exhausted);
        assert!(t.accepted <= 200);
    }

    #[test]
    fn classify_limit_cases() {
        let grid = Arc::new(build_grid(GridSpec::interval(1.0, 16)).unwrap());
        let f = EnergyFunctional::new(grid.clone(), 2.0, GSpec::zero()).unwrap();
        let a = classify_point(&f, 0, grid.zeros(), 0.0, 1e-8).unwrap();
        let mut b = a.clone();
        b.id = 1;
        b.u = grid.sine_mode(&[1]) * 1e-4;
        assert_eq!(
            classify_limit(&grid, &a.u, std::slice::from_ref(&a), 1e-3).unwrap(),
            Some(0)
        );
        assert_eq!(
            classify_limit(
                &grid,
                &(grid.sine_mode(&[1])),
                std::slice::from_ref(&a),
                1e-3
            )
            .unwrap(),
            None
        );
        assert!(matches!(
            classify_limit(&grid, &a.u, &[a.clone(), b], 1e-3),
            Err(Error::AmbiguousLimit(0, 1))
        ));
    }

    #[test]
    fn shooting_refuses_minima() {
        let grid = Arc::new(build_grid(GridSpec::interval(1.0, 16)).unwrap());
        let f = EnergyFunctional::new(grid.clone(), 2.0, GSpec::zero()).unwrap();
        let zero = classify_point(&f, 0, grid.zeros(), 0.0, 1e-8).unwrap();
        let err = shoot_unstable(
            &f,
            &zero,
            &FlowConfig::default(),
            std::slice::from_ref(&zero),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Refused(_)));
    }

    #[test]
    fn mountain_pass_connects_to_both_minima() {
        let f = double_well(32, 15.0);
        let crit = multistart_search(&f, &NewtonConfig::default())
            .unwrap()
            .points;
        assert_eq!(crit.len(), 3);
        let saddle = &crit[2];
        assert_eq!(saddle.index(), 1);
        let cfg = FlowConfig::default();
        for lo in &crit[..2] {
            let c = count_connections(&f, saddle, lo, &crit, &cfg).unwrap();
            assert_eq!((c.raw, c.mod2), (1, 1));
        }
        let err = count_connections(&f, &crit[0], &crit[1], &crit, &cfg).unwrap_err();
        assert!(matches!(err, Error::Refused(_)));
    }

    #[test]
    fn index_two_origin_connects_to_both_saddles() {
        let f = double_well(32, 50.0);
        let crit = multistart_search(&f, &NewtonConfig::default())
            .unwrap()
            .points;
        let indices: Vec<usize> = crit.iter().map(|c| c.index()).collect();
        assert_eq!(indices, vec![0, 0, 1, 1, 2]);
        let cfg = FlowConfig::default();
        let top = &crit[4];
        let shots = shoot_unstable(&f, top, &cfg, &crit).unwrap();
        assert_eq!(shots.len(), 64);
        for lo in &crit[2..4] {
            let c = count_connections(&f, top, lo, &crit, &cfg).unwrap();
            assert_eq!(c.mod2, 1);
        }
        let report = connections_from(&f, top, &crit, &cfg).unwrap();
        assert!(report.boundaries.iter().all(|b| b.saddle.is_some()));
        assert!(report.tangency_suspects.is_empty());
    }

    #[test]
    fn circle_angles_avoid_axes() {
        let t = circle_angles(4);
        assert!((t[0] - PI / 4.0).abs() < 1e-15);
        assert!((t[3] - 7.0 * PI / 4.0).abs() < 1e-15);
    }
}
