//! The quasilinear energy f(u) = (1/2p)∫(1+|∇u|²)^p + ∫G(u) on a grid, with its
//! first and second differentials.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discretization::{check_exponent, pow_real, Grid};
use crate::error::{Error, Result};

/// Lower-order potential G together with G' and G''.
#[derive(Debug, Clone, Copy)]
pub enum Potential {
    Zero,
    /// G(t) = c t
    Linear {
        c: f64,
    },
    /// G(t) = -(λ/2) t²
    Quadratic {
        lambda: f64,
    },
    /// G(t) = -(λ/2) t² + (κ/4) t⁴
    DoubleWell {
        lambda: f64,
        kappa: f64,
    },
    /// Any C² function given by value and first two derivatives. Not configurable
    /// from experiment files.
    Custom {
        label: &'static str,
        g: fn(f64) -> f64,
        g1: fn(f64) -> f64,
        g2: fn(f64) -> f64,
    },
}

impl Potential {
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Linear { c } => c * t,
            Potential::Quadratic { lambda } => -0.5 * lambda * t * t,
            Potential::DoubleWell { lambda, kappa } => {
                let t2 = t * t;
                -0.5 * lambda * t2 + 0.25 * kappa * t2 * t2
            }
            Potential::Custom { g, .. } => g(t),
        }
    }

    #[inline]
    pub fn d1(&self, t: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Linear { c } => c,
            Potential::Quadratic { lambda } => -lambda * t,
            Potential::DoubleWell { lambda, kappa } => -lambda * t + kappa * t * t * t,
            Potential::Custom { g1, .. } => g1(t),
        }
    }

    #[inline]
    pub fn d2(&self, t: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Linear { .. } => 0.0,
            Potential::Quadratic { lambda } => -lambda,
            Potential::DoubleWell { lambda, kappa } => -lambda + 3.0 * kappa * t * t,
            Potential::Custom { g2, .. } => g2(t),
        }
    }

    /// True when G(-t) = G(t), so the energy is invariant under u ↦ -u.
    pub fn is_even(&self) -> bool {
        matches!(
            self,
            Potential::Zero | Potential::Quadratic { .. } | Potential::DoubleWell { .. }
        )
    }

    pub fn name(&self) -> String {
        match *self {
            Potential::Zero => "zero".into(),
            Potential::Linear { c } => format!("linear({c})"),
            Potential::Quadratic { lambda } => format!("quadratic({lambda})"),
            Potential::DoubleWell { lambda, kappa } => format!("doublewell({lambda},{kappa})"),
            Potential::Custom { label, .. } => label.into(),
        }
    }

    /// Builds a member of the named family from `name` and its parameters.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        let want = |k: usize| {
            if params.len() == k {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "potential '{name}' takes {k} parameters, got {}",
                    params.len()
                )))
            }
        };
        match name {
            "zero" => want(0).map(|_| Potential::Zero),
            "linear" => want(1).map(|_| Potential::Linear { c: params[0] }),
            "quadratic" => want(1).map(|_| Potential::Quadratic { lambda: params[0] }),
            "doublewell" => want(2).map(|_| Potential::DoubleWell {
                lambda: params[0],
                kappa: params[1],
            }),
            other => Err(Error::Config(format!("unknown potential '{other}'"))),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Potential::Zero | Potential::Custom { .. } => vec![],
            Potential::Linear { c } => vec![c],
            Potential::Quadratic { lambda } => vec![lambda],
            Potential::DoubleWell { lambda, kappa } => vec![lambda, kappa],
        }
    }
}

/// G together with the constants of the growth bound |G(t)| ≤ β|t|^α + δ.
#[derive(Debug, Clone, Copy)]
pub struct GSpec {
    pub potential: Potential,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl GSpec {
    /// Named potential with its natural growth exponent and a closed-form bound.
    pub fn named(potential: Potential) -> Self {
        let (alpha, beta, delta) = match potential {
            Potential::Zero => (0.0, 0.0, 0.0),
            Potential::Linear { c } => (1.0, c.abs(), 0.0),
            Potential::Quadratic { lambda } => (2.0, 0.5 * lambda.abs(), 0.0),
            // (|λ|/2)t² ≤ (|λ|/4)(t⁴ + 1)
            Potential::DoubleWell { lambda, kappa } => (
                4.0,
                0.25 * (lambda.abs() + kappa.abs()),
                0.25 * lambda.abs(),
            ),
            Potential::Custom { .. } => (0.0, 0.0, 0.0),
        };
        Self {
            potential,
            alpha,
            beta,
            delta,
        }
    }

    pub fn zero() -> Self {
        Self::named(Potential::Zero)
    }

    pub fn linear(c: f64) -> Self {
        Self::named(Potential::Linear { c })
    }

    pub fn quadratic(lambda: f64) -> Self {
        Self::named(Potential::Quadratic { lambda })
    }

    pub fn double_well(lambda: f64, kappa: f64) -> Self {
        Self::named(Potential::DoubleWell { lambda, kappa })
    }

    /// Replaces (α, β, δ) by α and the smallest β, δ that make the bound hold
    /// on the sampled window: δ covers |t| ≤ 1, β covers the rest.
    pub fn fitted(potential: Potential, alpha: f64, window: (f64, f64), samples: usize) -> Self {
        let ts = sample_window(window, samples);
        let delta = ts
            .iter()
            .filter(|t| t.abs() <= 1.0)
            .map(|&t| potential.value(t).abs())
            .fold(0.0, f64::max);
        let beta = ts
            .iter()
            .filter(|t| t.abs() > 1.0)
            .map(|&t| (potential.value(t).abs() - delta).max(0.0) / pow_real(t.abs(), alpha))
            .fold(0.0, f64::max);
        Self {
            potential,
            alpha,
            beta,
            delta,
        }
    }
}

fn sample_window((lo, hi): (f64, f64), samples: usize) -> Vec<f64> {
    let n = samples.max(2);
    let mut ts: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    if lo < 0.0 && hi > 0.0 {
        ts.push(0.0);
    }
    ts
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub potential: String,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub p: f64,
    pub window: (f64, f64),
    pub samples: usize,
    /// max over samples of |G(t)| - (β|t|^α + δ)
    pub max_excess: f64,
    pub worst_t: f64,
    pub alpha_ok: bool,
    pub bound_ok: bool,
    pub pass: bool,
}

/// Samples the growth bound on a window. A failed bound is a report outcome.
pub fn validate_growth(
    g: &GSpec,
    p: f64,
    window: (f64, f64),
    samples: usize,
) -> Result<GrowthReport> {
    if samples < 2 {
        return Err(Error::Config(format!(
            "growth validation needs at least 2 samples, got {samples}"
        )));
    }
    if !(window.0 < window.1) {
        return Err(Error::Config(format!("empty growth window {window:?}")));
    }
    let mut max_excess = f64::NEG_INFINITY;
    let mut worst_t = window.0;
    let mut bound_ok = true;
    for t in sample_window(window, samples) {
        let bound = g.beta * pow_real(t.abs(), g.alpha) + g.delta;
        let value = g.potential.value(t).abs();
        let excess = value - bound;
        if excess > max_excess {
            max_excess = excess;
            worst_t = t;
        }
        // equality cases must survive rounding in the two evaluation paths
        if excess > 8.0 * f64::EPSILON * value.max(bound) {
            bound_ok = false;
        }
    }
    let alpha_ok = g.alpha >= 0.0 && g.alpha < 2.0 * p && g.beta >= 0.0 && g.delta >= 0.0;
    Ok(GrowthReport {
        potential: g.potential.name(),
        alpha: g.alpha,
        beta: g.beta,
        delta: g.delta,
        p,
        window,
        samples,
        max_excess,
        worst_t,
        alpha_ok,
        bound_ok,
        pass: alpha_ok && bound_ok,
    })
}

#[derive(Debug, Clone)]
pub struct EnergyFunctional {
    grid: Arc<Grid>,
    p: f64,
    g: GSpec,
}

impl EnergyFunctional {
    pub fn new(grid: Arc<Grid>, p: f64, g: GSpec) -> Result<Self> {
        check_exponent(p, grid.dim())?;
        if !(g.alpha >= 0.0 && g.alpha < 2.0 * p) {
            return Err(Error::Config(format!(
                "growth exponent alpha = {} must lie in [0, 2p) = [0, {})",
                g.alpha,
                2.0 * p
            )));
        }
        if g.beta < 0.0 || g.delta < 0.0 {
            return Err(Error::Config(
                "growth constants beta, delta must be nonnegative".into(),
            ));
        }
        Ok(Self { grid, p, g })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn gspec(&self) -> &GSpec {
        &self.g
    }

    pub fn potential(&self) -> &Potential {
        &self.g.potential
    }

    pub fn n_dofs(&self) -> usize {
        self.grid.n_dofs()
    }

    pub fn energy(&self, u: &DVector<f64>) -> Result<f64> {
        self.grid.check_field(u)?;
        Ok(self.energy_unchecked(u.as_slice()))
    }

    pub(crate) fn energy_unchecked(&self, u: &[f64]) -> f64 {
        let dim = self.grid.dim();
        let p = self.p;
        let mut acc = 0.0;
        for cell in self.grid.cells() {
            let g = cell.gradient(dim, u);
            let q = 1.0 + g[0] * g[0] + g[1] * g[1];
            acc += pow_real(q, p) / (2.0 * p) + self.g.potential.value(cell.average(u));
        }
        acc * self.grid.cell_volume()
    }

    /// Covector df(u)[e_j] for every nodal basis function e_j.
    pub fn gradient(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.grid.check_field(u)?;
        let (d, k) = self.split_unchecked(u.as_slice());
        Ok(d + k)
    }

    /// Energy and gradient from a single sweep over the cells.
    pub fn energy_and_gradient(&self, u: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.grid.check_field(u)?;
        let s = u.as_slice();
        let dim = self.grid.dim();
        let p = self.p;
        let vol = self.grid.cell_volume();
        let mut e = 0.0;
        let mut grad = DVector::zeros(u.len());
        for cell in self.grid.cells() {
            let g = cell.gradient(dim, s);
            let q = 1.0 + g[0] * g[0] + g[1] * g[1];
            let qp1 = pow_real(q, p - 1.0);
            let a = cell.average(s);
            e += qp1 * q / (2.0 * p) + self.g.potential.value(a);
            for (axis, stencil) in cell.grad.iter().enumerate().take(dim) {
                for t in stencil {
                    grad[t.dof] += vol * qp1 * g[axis] * t.coef;
                }
            }
            let d1 = self.g.potential.d1(a);
            for t in &cell.avg {
                grad[t.dof] += vol * d1 * t.coef;
            }
        }
        Ok((e * vol, grad))
    }

    /// Splits df = D + K into the gradient-term and potential-term covectors.
    pub fn operator_split(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.grid.check_field(u)?;
        Ok(self.split_unchecked(u.as_slice()))
    }

    fn split_unchecked(&self, u: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let dim = self.grid.dim();
        let vol = self.grid.cell_volume();
        let mut d = DVector::zeros(u.len());
        let mut k = DVector::zeros(u.len());
        for cell in self.grid.cells() {
            let g = cell.gradient(dim, u);
            let q = 1.0 + g[0] * g[0] + g[1] * g[1];
            let w = vol * pow_real(q, self.p - 1.0);
            for (axis, stencil) in cell.grad.iter().enumerate().take(dim) {
                for t in stencil {
                    d[t.dof] += w * g[axis] * t.coef;
                }
            }
            let d1 = vol * self.g.potential.d1(cell.average(u));
            for t in &cell.avg {
                k[t.dof] += d1 * t.coef;
            }
        }
        (d, k)
    }

    /// Mass matrix weighted by G''(u) at the cell averages.
    pub fn potential_hessian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.grid.check_field(u)?;
        let s = u.as_slice();
        let weights: Vec<f64> = self
            .grid
            .cells()
            .iter()
            .map(|c| self.g.potential.d2(c.average(s)))
            .collect();
        self.grid.weighted_mass(&weights)
    }

    /// Dense second differential A[i][j] = d²f(u)[e_i, e_j].
    pub fn hessian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut a = self.grid.gram_matrix(u, self.p)?.matrix;
        let s = u.as_slice();
        let weights: Vec<f64> = self
            .grid
            .cells()
            .iter()
            .map(|c| self.g.potential.d2(c.average(s)))
            .collect();
        self.grid.add_weighted_mass(&mut a, &weights)?;
        Ok(a)
    }

    /// A(u) v without assembling A.
    pub fn hessian_apply(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.grid.check_field(u)?;
        self.grid.check_field(v)?;
        let (us, vs) = (u.as_slice(), v.as_slice());
        let dim = self.grid.dim();
        let vol = self.grid.cell_volume();
        let p = self.p;
        let mut out = DVector::zeros(u.len());
        for cell in self.grid.cells() {
            let g = cell.gradient(dim, us);
            let gv = cell.gradient(dim, vs);
            let q = 1.0 + g[0] * g[0] + g[1] * g[1];
            let w1 = vol * pow_real(q, p - 1.0);
            let w2 = vol * 2.0 * (p - 1.0) * pow_real(q, p - 2.0) * (g[0] * gv[0] + g[1] * gv[1]);
            for (axis, stencil) in cell.grad.iter().enumerate().take(dim) {
                for t in stencil {
                    out[t.dof] += (w1 * gv[axis] + w2 * g[axis]) * t.coef;
                }
            }
            let m = vol * self.g.potential.d2(cell.average(us)) * cell.average(vs);
            for t in &cell.avg {
                out[t.dof] += m * t.coef;
            }
        }
        Ok(out)
    }

    /// d²f(u)[v, v].
    pub fn hessian_form(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        self.grid.check_field(u)?;
        self.grid.check_field(v)?;
        let (us, vs) = (u.as_slice(), v.as_slice());
        let dim = self.grid.dim();
        let p = self.p;
        let mut acc = 0.0;
        for cell in self.grid.cells() {
            let g = cell.gradient(dim, us);
            let gv = cell.gradient(dim, vs);
            let q = 1.0 + g[0] * g[0] + g[1] * g[1];
            let dot = g[0] * gv[0] + g[1] * gv[1];
            let av = cell.average(vs);
            acc += pow_real(q, p - 1.0) * (gv[0] * gv[0] + gv[1] * gv[1])
                + 2.0 * (p - 1.0) * pow_real(q, p - 2.0) * dot * dot
                + self.g.potential.d2(cell.average(us)) * av * av;
        }
        Ok(acc * self.grid.cell_volume())
    }
}
