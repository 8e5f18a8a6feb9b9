//! Critical points by damped, deflated, multistart Newton.
//!
//! Each solve drives the covector df(u) to zero. Previously found roots u_i are
//! removed by multiplying the residual with Π_i (1/‖u - u_i‖² + 1) in the
//! stiffness norm. For that residual the Newton step is a rescaled undeflated
//! step, δ = δ_N / (1 - ∇log m · δ_N), so only the plain Hessian is ever
//! factorized.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::banded_lu_solve;
use crate::error::{Error, Result};
use crate::functional::EnergyFunctional;
use crate::spectral::{analyze, SpectralData, SpectralSummary, DEFAULT_REL_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Damping {
    /// Step shrink factor on a failed merit test.
    pub shrink: f64,
    /// Sufficient-decrease fraction of the merit test.
    pub armijo: f64,
    /// Smallest step fraction tried before the step is taken anyway.
    pub min_step: f64,
}

impl Default for Damping {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            armijo: 1e-4,
            min_step: 1.0 / 1024.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub max_iters: usize,
    /// Tolerance on the stiffness-dual norm of df.
    pub newton_tol: f64,
    pub damping: Damping,
    /// Distinctness radius in the stiffness norm; `None` means 1e-4 × domain diameter.
    pub dedup_radius: Option<f64>,
    /// Number of smooth random seeds, on top of the low-mode seeds.
    pub seed_count: usize,
    pub rng_seed: u64,
    /// Low Dirichlet modes per axis used for structured seeds.
    pub seed_modes: usize,
    /// Seed amplitudes (sup norm).
    pub amplitudes: Vec<f64>,
    /// How often one seed is re-solved after it produced a new root.
    pub deflation_depth: usize,
    /// Seeds solved concurrently against the same deflation list.
    pub round_size: usize,
    /// Iterations without a 1% merit improvement before a solve is abandoned.
    pub stagnation_iters: usize,
    /// Stiffness-norm radius beyond which an iterate counts as divergent.
    pub divergence_radius: f64,
    pub spectral_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            newton_tol: 1e-10,
            damping: Damping::default(),
            dedup_radius: None,
            seed_count: 12,
            rng_seed: 0,
            seed_modes: 3,
            amplitudes: vec![0.5, 2.0, 4.0],
            deflation_depth: 3,
            round_size: 8,
            stagnation_iters: 15,
            divergence_radius: 1e4,
            spectral_tol: DEFAULT_REL_TOL,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        let positive = [
            ("newton_tol", self.newton_tol),
            ("damping.shrink", self.damping.shrink),
            ("damping.min_step", self.damping.min_step),
            ("divergence_radius", self.divergence_radius),
            ("spectral_tol", self.spectral_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.damping.shrink >= 1.0 {
            return Err(Error::Config("damping.shrink must be below 1".into()));
        }
        if let Some(r) = self.dedup_radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!(
                    "dedup_radius must be positive, got {r}"
                )));
            }
        }
        if self.round_size == 0 {
            return Err(Error::Config("round_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dedup_radius_for(&self, f: &EnergyFunctional) -> f64 {
        self.dedup_radius.unwrap_or(1e-4 * f.grid().diameter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NewtonFailure {
    MaxIters,
    Stagnated,
    Diverged,
    /// Converged, but onto (or next to) a deflated root.
    DeflatedRoot,
    NonFinite,
}

#[derive(Debug, Clone)]
pub enum NewtonOutcome {
    Converged {
        u: DVector<f64>,
        residual: f64,
        iters: usize,
        gradient_steps: usize,
    },
    Failed {
        u: DVector<f64>,
        residual: f64,
        iters: usize,
        gradient_steps: usize,
        reason: NewtonFailure,
    },
}

impl NewtonOutcome {
    pub fn converged(&self) -> Option<&DVector<f64>> {
        match self {
            NewtonOutcome::Converged { u, .. } => Some(u),
            NewtonOutcome::Failed { .. } => None,
        }
    }
}

/// log m and ∇log m for the deflation factor m(u) = Π (1/d_i² + 1),
/// d_i² = (u - u_i)ᵀ K (u - u_i).
fn deflation_terms(
    f: &EnergyFunctional,
    u: &DVector<f64>,
    roots: &[DVector<f64>],
) -> (f64, DVector<f64>) {
    let grid = f.grid();
    let mut log_m = 0.0;
    let mut grad = DVector::zeros(u.len());
    for r in roots {
        let diff = u - r;
        let kd = grid.stiffness_apply(&diff);
        let d2 = diff.dot(&kd).max(f64::MIN_POSITIVE);
        log_m += (1.0 / d2 + 1.0).ln();
        grad -= kd * (2.0 / (d2 * (d2 + 1.0)));
    }
    (log_m, grad)
}

fn merit(f: &EnergyFunctional, u: &DVector<f64>, roots: &[DVector<f64>]) -> Result<(f64, f64)> {
    let r = f.gradient(u)?;
    let res = f.grid().dual_norm(&r);
    let (log_m, _) = deflation_terms(f, u, roots);
    Ok((res, res * log_m.exp()))
}

pub fn newton_solve(
    f: &EnergyFunctional,
    u0: &DVector<f64>,
    cfg: &NewtonConfig,
    deflation: &[DVector<f64>],
) -> Result<NewtonOutcome> {
    cfg.validate()?;
    f.grid().check_field(u0)?;
    let grid = f.grid();
    let dedup = cfg.dedup_radius_for(f);
    let mut u = u0.clone();
    let mut gradient_steps = 0;
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let (mut res, mut mer) = merit(f, &u, deflation)?;

    for iter in 0..cfg.max_iters {
        if !res.is_finite() || !mer.is_finite() {
            return Ok(NewtonOutcome::Failed {
                u,
                residual: res,
                iters: iter,
                gradient_steps,
                reason: NewtonFailure::NonFinite,
            });
        }
        if res <= cfg.newton_tol {
            if deflation
                .iter()
                .any(|r| grid.stiffness_distance(&u, r) <= dedup)
            {
                return Ok(NewtonOutcome::Failed {
                    u,
                    residual: res,
                    iters: iter,
                    gradient_steps,
                    reason: NewtonFailure::DeflatedRoot,
                });
            }
            return Ok(NewtonOutcome::Converged {
                u,
                residual: res,
                iters: iter,
                gradient_steps,
            });
        }
        if grid.stiffness_norm(&u) > cfg.divergence_radius {
            return Ok(NewtonOutcome::Failed {
                u,
                residual: res,
                iters: iter,
                gradient_steps,
                reason: NewtonFailure::Diverged,
            });
        }
        if mer < 0.99 * best {
            best = mer;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.stagnation_iters {
                return Ok(NewtonOutcome::Failed {
                    u,
                    residual: res,
                    iters: iter,
                    gradient_steps,
                    reason: NewtonFailure::Stagnated,
                });
            }
        }

        let r = f.gradient(&u)?;
        let a = f.hessian(&u)?;
        let newton_dir = banded_lu_solve(a, grid.bandwidth(), &(-&r));
        let mut step = match newton_dir {
            Some(d) => d,
            None => {
                gradient_steps += 1;
                -grid.stiffness_solve(&r)
            }
        };
        if !deflation.is_empty() {
            let (_, g) = deflation_terms(f, &u, deflation);
            let denom = 1.0 - g.dot(&step);
            if denom.abs() > 1e-12 && denom.is_finite() {
                step /= denom;
            }
        }

        let mut alpha = 1.0;
        loop {
            let trial = &u + &step * alpha;
            let (tr, tm) = merit(f, &trial, deflation)?;
            let last = alpha * cfg.damping.shrink < cfg.damping.min_step;
            if (tm.is_finite() && tm <= (1.0 - cfg.damping.armijo * alpha) * mer) || last {
                u = trial;
                res = tr;
                mer = tm;
                break;
            }
            alpha *= cfg.damping.shrink;
        }
    }
    if res <= cfg.newton_tol {
        return Ok(NewtonOutcome::Converged {
            u,
            residual: res,
            iters: cfg.max_iters,
            gradient_steps,
        });
    }
    Ok(NewtonOutcome::Failed {
        u,
        residual: res,
        iters: cfg.max_iters,
        gradient_steps,
        reason: NewtonFailure::MaxIters,
    })
}

#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub id: usize,
    pub u: DVector<f64>,
    pub energy: f64,
    pub residual: f64,
    pub spectral: SpectralData,
    pub nondegenerate: bool,
}

impl CriticalPoint {
    pub fn index(&self) -> usize {
        self.spectral.index
    }

    pub fn record(&self, field_ref: Option<String>) -> CriticalPointRecord {
        CriticalPointRecord {
            id: self.id,
            energy: self.energy,
            residual: self.residual,
            index: self.spectral.index,
            gap: self.spectral.gap,
            mu_plus: self.spectral.mu_plus,
            nondegenerate: self.nondegenerate,
            spectrum: self.spectral.summary(8),
            field_ref,
        }
    }
}

/// JSON form of a critical point; the field itself is stored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointRecord {
    pub id: usize,
    pub energy: f64,
    pub residual: f64,
    pub index: usize,
    pub gap: f64,
    pub mu_plus: Option<f64>,
    pub nondegenerate: bool,
    pub spectrum: SpectralSummary,
    pub field_ref: Option<String>,
}

pub fn classify_point(
    f: &EnergyFunctional,
    id: usize,
    u: DVector<f64>,
    residual: f64,
    rel_tol: f64,
) -> Result<CriticalPoint> {
    let energy = f.energy(&u)?;
    let spectral = analyze(f, &u, rel_tol)?;
    let nondegenerate = spectral.nondegenerate;
    Ok(CriticalPoint {
        id,
        u,
        energy,
        residual,
        spectral,
        nondegenerate,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupCollision {
    pub existing: usize,
    pub distance: f64,
    pub index_mismatch: bool,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub points: Vec<CriticalPoint>,
    pub any_degenerate: bool,
    pub collisions: Vec<DedupCollision>,
    pub solves: usize,
    /// Set when a first pass found exactly two points and the search was widened.
    pub widened: bool,
    /// `Some(closed)` when G is even: whether the set is closed under u ↦ -u.
    pub symmetry_closed: Option<bool>,
}

/// Structured seeds from low Dirichlet modes plus smooth random fields.
pub fn seed_fields(f: &EnergyFunctional, cfg: &NewtonConfig) -> Vec<DVector<f64>> {
    let grid = f.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let k = cfg.seed_modes.max(1);
    let mut modes: Vec<Vec<usize>> = match grid.dim() {
        1 => (1..=k).map(|j| vec![j]).collect(),
        _ => (1..=k)
            .flat_map(|i| (1..=k).map(move |j| vec![i, j]))
            .collect(),
    };
    // lowest frequencies first; mixed seeds only use the first k of them
    modes.sort_by_key(|m| (m.iter().map(|j| j * j).sum::<usize>(), m.clone()));
    let shapes: Vec<DVector<f64>> = modes.iter().map(|m| grid.sine_mode(m)).collect();

    let mut seeds = vec![grid.zeros()];
    for &amp in &cfg.amplitudes {
        for s in &shapes {
            seeds.push(s * amp);
            seeds.push(s * -amp);
        }
    }
    let low = shapes.len().min(k);
    for i in 0..low {
        for j in i + 1..low {
            let amp = cfg.amplitudes.iter().copied().fold(0.0, f64::max).max(1.0);
            for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let ca = rng.gen_range(0.25..1.0) * a * amp;
                let cb = rng.gen_range(0.25..1.0) * b * amp;
                seeds.push(&shapes[i] * ca + &shapes[j] * cb);
            }
        }
    }
    let (lo, hi) = cfg
        .amplitudes
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &a| {
            (lo.min(a), hi.max(a))
        });
    let (lo, hi) = if lo.is_finite() {
        (lo, hi.max(lo))
    } else {
        (0.5, 1.0)
    };
    for _ in 0..cfg.seed_count {
        let noise = DVector::from_fn(grid.n_dofs(), |_, _| rng.gen_range(-1.0..1.0));
        let smooth = grid.stiffness_solve(&noise);
        let sup = smooth.amax();
        if sup > 0.0 {
            let amp = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            seeds.push(smooth * (amp / sup));
        }
    }
    seeds
}

pub fn multistart_search(f: &EnergyFunctional, cfg: &NewtonConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let first = search_pass(f, cfg)?;
    if first.points.len() != 2 {
        return Ok(first);
    }
    let mut wide = cfg.clone();
    wide.seed_count = (cfg.seed_count * 2).max(8);
    wide.seed_modes = cfg.seed_modes + 2;
    wide.amplitudes = cfg.amplitudes.iter().flat_map(|&a| [a, 2.0 * a]).collect();
    wide.rng_seed = cfg.rng_seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut second = search_pass(f, &wide)?;
    second.widened = true;
    second.solves += first.solves;
    Ok(second)
}

fn search_pass(f: &EnergyFunctional, cfg: &NewtonConfig) -> Result<SearchResult> {
    let grid = f.grid();
    let dedup = cfg.dedup_radius_for(f);
    let mut queue: Vec<(DVector<f64>, usize)> =
        seed_fields(f, cfg).into_iter().map(|s| (s, 0)).collect();
    queue.reverse();
    let mut found: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut collisions = Vec::new();
    let mut solves = 0;

    while !queue.is_empty() {
        let take = cfg.round_size.min(queue.len());
        let round: Vec<(DVector<f64>, usize)> = (0..take).filter_map(|_| queue.pop()).collect();
        let roots: Vec<DVector<f64>> = found.iter().map(|(u, _)| u.clone()).collect();
        let outcomes: Vec<Result<NewtonOutcome>> = round
            .par_iter()
            .map(|(seed, _)| newton_solve(f, seed, cfg, &roots))
            .collect();
        solves += round.len();
        let mut requeue = Vec::new();
        for ((seed, depth), outcome) in round.into_iter().zip(outcomes) {
            if let NewtonOutcome::Converged { u, residual, .. } = outcome? {
                match found
                    .iter()
                    .enumerate()
                    .map(|(i, (v, _))| (i, grid.stiffness_distance(&u, v)))
                    .find(|&(_, d)| d <= dedup)
                {
                    Some((existing, distance)) => collisions.push((existing, distance, u)),
                    None => {
                        found.push((u, residual));
                        if depth < cfg.deflation_depth {
                            requeue.push((seed, depth + 1));
                        }
                    }
                }
            }
        }
        // re-solved seeds go first so deflation explores from the same start
        for item in requeue.into_iter().rev() {
            queue.push(item);
        }
    }

    let classified = found
        .into_par_iter()
        .map(|(u, residual)| classify_point(f, 0, u, residual, cfg.spectral_tol))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..classified.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&classified[a], &classified[b]);
        p.energy
            .total_cmp(&q.energy)
            .then_with(|| p.u[0].total_cmp(&q.u[0]))
    });
    let mut final_id = vec![0; classified.len()];
    for (id, &k) in order.iter().enumerate() {
        final_id[k] = id;
    }
    let collisions = collisions
        .into_iter()
        .map(|(k, distance, u)| {
            let index = analyze(f, &u, cfg.spectral_tol)?.index;
            Ok(DedupCollision {
                existing: final_id[k],
                distance,
                index_mismatch: index != classified[k].index(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut slots: Vec<Option<CriticalPoint>> = classified.into_iter().map(Some).collect();
    let points: Vec<CriticalPoint> = order
        .iter()
        .enumerate()
        .map(|(id, &k)| {
            let mut p = slots[k].take().expect("each slot taken once");
            p.id = id;
            p
        })
        .collect();
    let any_degenerate = points.iter().any(|p| !p.nondegenerate);
    let symmetry_closed = f.potential().is_even().then(|| {
        points.iter().all(|p| {
            let neg = -&p.u;
            points
                .iter()
                .any(|q| grid.stiffness_distance(&neg, &q.u) <= dedup)
        })
    });
    Ok(SearchResult {
        points,
        any_degenerate,
        collisions,
        solves,
        widened: false,
        symmetry_closed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PalaisSmaleConfig {
    /// Sup bound on the stiffness norm.
    pub bound: f64,
    /// Dual-norm residual below which the sequence counts as a PS sequence.
    pub residual_tol: f64,
    /// Most trailing small-residual states used in the Cauchy test.
    pub tail: usize,
    pub cauchy_tol: f64,
}

impl Default for PalaisSmaleConfig {
    fn default() -> Self {
        Self {
            bound: 1e3,
            residual_tol: 1e-2,
            tail: 5,
            cauchy_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PalaisSmaleReport {
    pub states: usize,
    pub sup_norm: f64,
    pub bounded: bool,
    pub final_residual: f64,
    pub residual_to_zero: bool,
    /// Largest pairwise stiffness distance among the trailing small-residual states.
    pub tail_spread: f64,
    pub cauchy_tail: bool,
    pub pass: bool,
}

/// Checks a sequence of states for boundedness and, when its residuals vanish,
/// for a Cauchy tail. Energies and residuals are recomputed from `f`.
pub fn palais_smale_diagnostic(
    f: &EnergyFunctional,
    states: &[DVector<f64>],
    cfg: &PalaisSmaleConfig,
) -> Result<PalaisSmaleReport> {
    if states.is_empty() {
        return Err(Error::Config(
            "Palais-Smale diagnostic needs a nonempty sequence".into(),
        ));
    }
    let grid = f.grid();
    let sup_norm = states
        .iter()
        .map(|u| grid.stiffness_norm(u))
        .fold(0.0, f64::max);
    let bounded = sup_norm.is_finite() && sup_norm <= cfg.bound;
    let residuals = states
        .iter()
        .map(|u| Ok(grid.dual_norm(&f.gradient(u)?)))
        .collect::<Result<Vec<f64>>>()?;
    let final_residual = *residuals.last().unwrap();
    let residual_to_zero = final_residual <= cfg.residual_tol;
    // the Cauchy test looks at the trailing run of small-residual states
    let small = residuals
        .iter()
        .rev()
        .take_while(|&&r| r <= cfg.residual_tol)
        .count();
    let tail = &states[states.len() - small.min(cfg.tail.max(1))..];
    let mut tail_spread: f64 = 0.0;
    for (i, a) in tail.iter().enumerate() {
        for b in &tail[i + 1..] {
            tail_spread = tail_spread.max(grid.stiffness_distance(a, b));
        }
    }
    let cauchy_tail = tail_spread < cfg.cauchy_tol;
    let pass = bounded && (!residual_to_zero || cauchy_tail);
    Ok(PalaisSmaleReport {
        states: states.len(),
        sup_norm,
        bounded,
        final_residual,
        residual_to_zero,
        tail_spread,
        cauchy_tail,
        pass,
    })
}
