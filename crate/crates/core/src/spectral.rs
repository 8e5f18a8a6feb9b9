//! Morse index and nondegeneracy from the symmetric-definite pencil A v = λ B v,
//! where A is the Hessian and B the Gram matrix of the weighted product at the
//! critical point.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::EnergyFunctional;

/// Default nondegeneracy tolerance, relative to the largest |λ|.
pub const DEFAULT_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Pencil eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    /// B-orthonormal eigenvectors, one per column, in eigenvalue order.
    pub eigenvectors: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub index: usize,
    pub gap: f64,
    pub mu_plus: Option<f64>,
    /// Absolute tolerance the index and gap were judged against.
    pub tol: f64,
    pub nondegenerate: bool,
    /// Number of negative eigenvalues of A alone.
    pub hessian_negative_count: usize,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn negative_basis(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.index).into_owned()
    }

    pub fn b_norm_squared(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.gram * v))
    }

    /// B-orthogonal projection onto the negative eigenspace.
    pub fn project_negative(&self, x: &DVector<f64>) -> DVector<f64> {
        let v = self.eigenvectors.columns(0, self.index);
        let coeffs = v.transpose() * (&self.gram * x);
        v * coeffs
    }

    pub fn summary(&self, keep: usize) -> SpectralSummary {
        SpectralSummary {
            eigenvalues: self.eigenvalues.iter().take(keep).copied().collect(),
            index: self.index,
            gap: self.gap,
            mu_plus: self.mu_plus,
            nondegenerate: self.nondegenerate,
        }
    }
}

/// Serializable digest of [`SpectralData`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<f64>,
    pub index: usize,
    pub gap: f64,
    pub mu_plus: Option<f64>,
    pub nondegenerate: bool,
}

pub fn analyze(f: &EnergyFunctional, u: &DVector<f64>, rel_tol: f64) -> Result<SpectralData> {
    if !(rel_tol > 0.0) {
        return Err(Error::Config(format!(
            "spectral tolerance must be positive, got {rel_tol}"
        )));
    }
    let a = f.hessian(u)?;
    let b = f.grid().gram_matrix(u, f.p())?.matrix;
    let (eigenvalues, eigenvectors) = solve_pencil(&a, &b)?;

    let scale = eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let tol = rel_tol * scale.max(f64::MIN_POSITIVE);
    let index = eigenvalues.iter().filter(|&&l| l < -tol).count();
    let gap = eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, l| m.min(l.abs()));
    let mu_plus = eigenvalues.iter().copied().find(|&l| l > 0.0);

    let a_eigs = a.clone().symmetric_eigen().eigenvalues;
    let a_scale = a_eigs.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let hessian_negative_count = a_eigs.iter().filter(|&&l| l < -rel_tol * a_scale).count();

    Ok(SpectralData {
        eigenvalues,
        eigenvectors,
        gram: b,
        index,
        gap,
        mu_plus,
        tol,
        nondegenerate: gap > tol,
        hessian_negative_count,
    })
}

/// Solves A v = λ B v for symmetric A and SPD B through the Cholesky factor of B.
pub fn solve_pencil(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Gram matrix of the weighted product".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Numeric("triangular solve in pencil reduction".into()))?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Numeric("triangular solve in pencil reduction".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::try_new(c, f64::EPSILON, 0).ok_or_else(|| {
        Error::Numeric(format!(
            "symmetric eigensolver did not converge on a {n}x{n} pencil"
        ))
    })?;
    let y = l
        .transpose()
        .solve_upper_triangular(&eig.eigenvectors)
        .ok_or_else(|| Error::Numeric("back-substitution of pencil eigenvectors".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| y[(r, order[c])]);
    Ok((values, vectors))
}

/// L = id on the negative eigenspace and -id on its B-orthogonal complement W.
#[derive(Debug, Clone)]
pub struct HyperbolicOperator {
    negative: DMatrix<f64>,
    b_negative: DMatrix<f64>,
}

pub fn build_hyperbolic(sd: &SpectralData) -> Result<HyperbolicOperator> {
    if !sd.nondegenerate {
        return Err(Error::Degenerate(format!(
            "pencil gap {:e} does not exceed tolerance {:e}",
            sd.gap, sd.tol
        )));
    }
    let negative = sd.negative_basis();
    let b_negative = &sd.gram * &negative;
    Ok(HyperbolicOperator {
        negative,
        b_negative,
    })
}

impl HyperbolicOperator {
    pub fn dim(&self) -> usize {
        self.negative.nrows()
    }

    pub fn index(&self) -> usize {
        self.negative.ncols()
    }

    pub fn project_negative(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.negative * (self.b_negative.transpose() * x)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.project_negative(x) * 2.0 - x
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        &self.negative * self.b_negative.transpose() * 2.0 - DMatrix::identity(n, n)
    }

    /// Trace computed from the projector, 2·tr(V₋ᵀBV₋) - n.
    pub fn trace(&self) -> f64 {
        let t: f64 = (0..self.index())
            .map(|k| self.negative.column(k).dot(&self.b_negative.column(k)))
            .sum();
        2.0 * t - self.dim() as f64
    }
}

/// Uniform direction with unit B-norm.
pub(crate) fn random_direction<R: Rng>(n: usize, gram: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let nn = v.dot(&(gram * &v));
        if nn > 1e-300 {
            return v / nn.sqrt();
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub radius: f64,
    pub samples: usize,
    /// Largest df(ū+x)[Lx] / ‖x‖²_B over the samples.
    pub max_ratio: f64,
    pub violations: usize,
    pub worst_sample: Option<Vec<f64>>,
    pub pass: bool,
}

/// Checks df(ū+x)[Lx] < 0 on samples with ‖x‖_B ≤ radius.
pub fn verify_linear_lyapunov<R: Rng>(
    f: &EnergyFunctional,
    u_bar: &DVector<f64>,
    sd: &SpectralData,
    l: &HyperbolicOperator,
    radius: f64,
    samples: usize,
    rng: &mut R,
) -> Result<LyapunovReport> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let n = u_bar.len();
    let mut max_ratio = f64::NEG_INFINITY;
    let mut violations = 0;
    let mut worst_sample = None;
    for _ in 0..samples {
        let s = 1.0 - rng.gen::<f64>();
        let x = random_direction(n, &sd.gram, rng) * (radius * s);
        let lx = l.apply(&x);
        let ratio = f.gradient(&(u_bar + &x))?.dot(&lx) / sd.b_norm_squared(&x);
        if !(ratio < 0.0) {
            violations += 1;
            worst_sample = Some(x.iter().copied().collect());
        }
        if ratio > max_ratio {
            max_ratio = ratio;
        }
    }
    Ok(LyapunovReport {
        radius,
        samples,
        max_ratio,
        violations,
        worst_sample,
        pass: violations == 0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub radius: f64,
    pub samples: usize,
    /// min of d²f(u)[v,v]/‖v‖²_B over v in W.
    pub w_min_ratio: Option<f64>,
    /// max of the same ratio over v in the negative eigenspace.
    pub negative_max_ratio: Option<f64>,
    pub pass: bool,
}

/// Samples the local uniform convexity on W and concavity on the negative
/// eigenspace near ū. The first sample of each family is the extreme eigenvector
/// evaluated at ū itself.
pub fn convexity_probe<R: Rng>(
    f: &EnergyFunctional,
    u_bar: &DVector<f64>,
    sd: &SpectralData,
    radius: f64,
    samples: usize,
    rng: &mut R,
) -> Result<ConvexityReport> {
    if !sd.nondegenerate {
        return Err(Error::Degenerate(
            "convexity probe needs a nondegenerate point".into(),
        ));
    }
    if !(radius >= 0.0) {
        return Err(Error::Config(format!(
            "radius must be nonnegative, got {radius}"
        )));
    }
    let n = u_bar.len();
    let k = sd.index;
    let has_w = k < n;
    let has_neg = k > 0;
    let mut w_min = has_w.then_some(f64::INFINITY);
    let mut neg_max = has_neg.then_some(f64::NEG_INFINITY);

    for s in 0..samples.max(1) {
        let u = if s == 0 {
            u_bar.clone()
        } else {
            u_bar + random_direction(n, &sd.gram, rng) * (radius * rng.gen::<f64>())
        };
        if let Some(m) = w_min.as_mut() {
            let v = if s == 0 {
                sd.eigenvectors.column(k).into_owned()
            } else {
                let r = random_direction(n, &sd.gram, rng);
                &r - sd.project_negative(&r)
            };
            let nv = sd.b_norm_squared(&v);
            if nv > 0.0 {
                *m = m.min(f.hessian_form(&u, &v)? / nv);
            }
        }
        if let Some(m) = neg_max.as_mut() {
            let v = if s == 0 {
                sd.eigenvectors.column(k - 1).into_owned()
            } else {
                sd.project_negative(&random_direction(n, &sd.gram, rng))
            };
            let nv = sd.b_norm_squared(&v);
            if nv > 0.0 {
                *m = m.max(f.hessian_form(&u, &v)? / nv);
            }
        }
    }
    let pass = w_min.is_none_or(|m| m > 0.0) && neg_max.is_none_or(|m| m < 0.0);
    Ok(ConvexityReport {
        radius,
        samples,
        w_min_ratio: w_min,
        negative_max_ratio: neg_max,
        pass,
    })
}
