//! Gaussian states over `n` bosonic modes and exact linear-optics maps.
//!
//! Phase-space vectors are ordered `x₁, p₁, …, x_n, p_n` with `a = x + i p`.
//! The measured quadrature at LO phase `θ` is `X(θ) = x cos θ − p sin θ`, so
//! `X(π/2)` plays the role of the conjugate quadrature `P`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{QpaError, Result};

/// Vacuum quadrature variance.
pub const SIGMA_VAC: f64 = 0.25;

const SYMMETRY_TOL: f64 = 1e-12;
const CONTRACTION_TOL: f64 = 1e-9;

/// Mean vector and covariance matrix of a Gaussian state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Single-mode squeezed vacuum parameters. `theta` is the LO phase at which
/// the quadrature variance is minimal; it is only meaningful modulo π.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezedVacuumSpec {
    pub r: f64,
    pub theta: f64,
}

impl SqueezedVacuumSpec {
    pub fn new(r: f64, theta: f64) -> Result<Self> {
        if !r.is_finite() || r < 0.0 {
            return Err(QpaError::domain(format!("squeezing parameter must be finite and >= 0, got {r}")));
        }
        if !theta.is_finite() {
            return Err(QpaError::domain("squeezing angle must be finite"));
        }
        Ok(Self { r, theta: theta.rem_euclid(PI) })
    }
}

impl GaussianState {
    /// Builds a state after checking symmetry and the uncertainty relation.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || dim % 2 != 0 || cov.nrows() != dim || cov.ncols() != dim {
            return Err(QpaError::domain(format!(
                "mean of length {} and covariance {}x{} do not describe n modes",
                dim,
                cov.nrows(),
                cov.ncols()
            )));
        }
        let state = Self { mean, cov };
        if state.asymmetry() > SYMMETRY_TOL * state.cov.amax().max(1.0) {
            return Err(QpaError::domain("covariance matrix is not symmetric"));
        }
        if !state.satisfies_uncertainty(1e-10) {
            return Err(QpaError::domain("covariance violates the uncertainty relation"));
        }
        Ok(state)
    }

    pub fn n_modes(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn asymmetry(&self) -> f64 {
        (&self.cov - self.cov.transpose()).amax()
    }

    /// Checks `cov + i·σ_vac·Ω ⪰ 0` through the real symmetric embedding of
    /// the Hermitian matrix, whose spectrum is that of the Hermitian one doubled.
    pub fn satisfies_uncertainty(&self, tol: f64) -> bool {
        let dim = self.cov.nrows();
        let omega = symplectic_form(dim / 2) * SIGMA_VAC;
        let mut embed = DMatrix::zeros(2 * dim, 2 * dim);
        embed.view_mut((0, 0), (dim, dim)).copy_from(&self.cov);
        embed.view_mut((dim, dim), (dim, dim)).copy_from(&self.cov);
        embed.view_mut((0, dim), (dim, dim)).copy_from(&(-&omega));
        embed.view_mut((dim, 0), (dim, dim)).copy_from(&omega);
        let eig = SymmetricEigen::new(embed);
        eig.eigenvalues.min() >= -tol
    }

    /// `det(cov) / σ_vac^{2n}`; equals 1 for pure states.
    pub fn normalized_determinant(&self) -> f64 {
        self.cov.determinant() / SIGMA_VAC.powi(2 * self.n_modes() as i32)
    }

    /// Variance of the linear functional `v · (x₁, p₁, …)`.
    pub fn functional_variance(&self, v: &DVector<f64>) -> f64 {
        (v.transpose() * &self.cov * v)[(0, 0)]
    }

    /// Covariance of two linear functionals.
    pub fn functional_covariance(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (u.transpose() * &self.cov * v)[(0, 0)]
    }

    /// Reduced state of one mode.
    pub fn mode(&self, mode: usize) -> Result<GaussianState> {
        self.check_mode(mode)?;
        let i = 2 * mode;
        Ok(Self {
            mean: self.mean.rows(i, 2).into_owned(),
            cov: self.cov.view((i, i), (2, 2)).into_owned(),
        })
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.n_modes() {
            return Err(QpaError::domain(format!(
                "mode index {mode} out of range for a {}-mode state",
                self.n_modes()
            )));
        }
        Ok(())
    }

    /// Tensor product with another state.
    pub fn tensor(&self, other: &GaussianState) -> GaussianState {
        let (a, b) = (self.mean.len(), other.mean.len());
        let mut mean = DVector::zeros(a + b);
        mean.rows_mut(0, a).copy_from(&self.mean);
        mean.rows_mut(a, b).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(a + b, a + b);
        cov.view_mut((0, 0), (a, a)).copy_from(&self.cov);
        cov.view_mut((a, a), (b, b)).copy_from(&other.cov);
        GaussianState { mean, cov }
    }
}

/// Block-diagonal symplectic form with `[[0, 1], [-1, 0]]` blocks.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

pub fn vacuum(n_modes: usize) -> Result<GaussianState> {
    if n_modes == 0 {
        return Err(QpaError::domain("a state needs at least one mode"));
    }
    Ok(GaussianState {
        mean: DVector::zeros(2 * n_modes),
        cov: DMatrix::identity(2 * n_modes, 2 * n_modes) * SIGMA_VAC,
    })
}

/// Phase-space direction of the quadrature `X(θ)` of a single mode.
fn quadrature_direction(theta: f64) -> (f64, f64) {
    (theta.cos(), -theta.sin())
}

pub fn squeezed_vacuum(spec: SqueezedVacuumSpec) -> GaussianState {
    let (ux, up) = quadrature_direction(spec.theta);
    let (vx, vp) = quadrature_direction(spec.theta + PI / 2.0);
    let small = (-2.0 * spec.r).exp() * SIGMA_VAC;
    let large = (2.0 * spec.r).exp() * SIGMA_VAC;
    let cov = DMatrix::from_row_slice(
        2,
        2,
        &[
            small * ux * ux + large * vx * vx,
            small * ux * up + large * vx * vp,
            small * up * ux + large * vp * vx,
            small * up * up + large * vp * vp,
        ],
    );
    GaussianState { mean: DVector::zeros(2), cov }
}

/// Pure-loss channel of transmission `eta` on one mode.
pub fn apply_loss(state: &GaussianState, mode: usize, eta: f64) -> Result<GaussianState> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(QpaError::domain(format!("efficiency must lie in [0, 1], got {eta}")));
    }
    state.check_mode(mode)?;
    let dim = state.mean.len();
    let mut scale = DVector::from_element(dim, 1.0);
    let s = eta.sqrt();
    scale[2 * mode] = s;
    scale[2 * mode + 1] = s;

    let mean = state.mean.component_mul(&scale);
    let mut cov = state.cov.clone();
    for i in 0..dim {
        for j in 0..dim {
            cov[(i, j)] *= scale[i] * scale[j];
        }
    }
    for k in [2 * mode, 2 * mode + 1] {
        cov[(k, k)] += (1.0 - eta) * SIGMA_VAC;
    }
    Ok(GaussianState { mean, cov })
}

/// Real `2m×2n` phase-space matrix of the mode map `a' = M a`.
pub fn phase_space_matrix(matrix: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (m, n) = matrix.shape();
    let mut t = DMatrix::zeros(2 * m, 2 * n);
    for i in 0..m {
        for j in 0..n {
            let z = matrix[(i, j)];
            t[(2 * i, 2 * j)] = z.re;
            t[(2 * i, 2 * j + 1)] = -z.im;
            t[(2 * i + 1, 2 * j)] = z.im;
            t[(2 * i + 1, 2 * j + 1)] = z.re;
        }
    }
    t
}

/// Applies `a_out = M a_in` for an `m×n` contraction `M`.
///
/// When `M` is not unitary the norm deficit is filled with vacuum, i.e. the
/// map is the restriction of a larger unitary whose extra inputs are vacuum.
pub fn apply_linear_network(state: &GaussianState, matrix: &DMatrix<Complex64>) -> Result<GaussianState> {
    if matrix.ncols() != state.n_modes() {
        return Err(QpaError::domain(format!(
            "network has {} inputs but the state has {} modes",
            matrix.ncols(),
            state.n_modes()
        )));
    }
    if matrix.nrows() == 0 {
        return Err(QpaError::domain("network must have at least one output"));
    }
    let t = phase_space_matrix(matrix);
    let ttt = &t * t.transpose();
    let deficit = DMatrix::identity(ttt.nrows(), ttt.ncols()) - &ttt;
    let min_eig = SymmetricEigen::new(deficit.clone()).eigenvalues.min();
    if min_eig < -CONTRACTION_TOL {
        return Err(QpaError::domain(format!(
            "network is not a contraction (largest singular value squared exceeds 1 by {:.3e})",
            -min_eig
        )));
    }
    let mean = &t * &state.mean;
    let mut cov = &t * &state.cov * t.transpose() + deficit * SIGMA_VAC;
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianState { mean, cov })
}

/// Phase-space functional measuring `X(θ)` of the mode `Σ w_j a_j`.
pub fn quadrature_functional(weights: &[Complex64], theta: f64) -> DVector<f64> {
    let rot = Complex64::from_polar(1.0, theta);
    let mut v = DVector::zeros(2 * weights.len());
    for (j, w) in weights.iter().enumerate() {
        let z = w * rot;
        v[2 * j] = z.re;
        v[2 * j + 1] = -z.im;
    }
    v
}

/// Variance of `X(θ)` for the mode `Σ w_j a_j`. If `‖w‖ < 1` the remaining
/// weight is treated as a vacuum admixture.
pub fn quadrature_variance(state: &GaussianState, weights: &[Complex64], theta: f64) -> Result<f64> {
    if weights.len() != state.n_modes() {
        return Err(QpaError::domain(format!(
            "{} weights for a {}-mode state",
            weights.len(),
            state.n_modes()
        )));
    }
    let norm_sq: f64 = weights.iter().map(|w| w.norm_sqr()).sum();
    if norm_sq == 0.0 {
        return Err(QpaError::domain("weight vector is zero"));
    }
    if norm_sq > 1.0 + CONTRACTION_TOL {
        return Err(QpaError::domain(format!("weight vector norm squared {norm_sq} exceeds 1")));
    }
    let v = quadrature_functional(weights, theta);
    Ok(state.functional_variance(&v) + (1.0 - norm_sq).max(0.0) * SIGMA_VAC)
}

/// Closed-form `X(θ)` variance of squeezed vacuum sent through loss `eta`,
/// squeezed along `θ = 0`.
pub fn lossy_squeezed_variance(r: f64, eta: f64, theta: f64) -> f64 {
    let (c, s) = (theta.cos(), theta.sin());
    SIGMA_VAC * (eta * ((-2.0 * r).exp() * c * c + (2.0 * r).exp() * s * s) + 1.0 - eta)
}

/// Covariance of a lossy squeezed vacuum in the measured `(X, P)` plane,
/// where `X = X(0)` and `P = X(π/2) = −p`.
fn lossy_squeezed_cov(r: f64, theta: f64, eta: f64) -> Result<DMatrix<f64>> {
    let spec = SqueezedVacuumSpec::new(r, theta)?;
    let mut cov = apply_loss(&squeezed_vacuum(spec), 0, eta)?.cov;
    cov[(0, 1)] = -cov[(0, 1)];
    cov[(1, 0)] = -cov[(1, 0)];
    Ok(cov)
}

/// Wigner function of a squeezed vacuum (squeezed along `theta`) after loss
/// `eta`, on the measured `(X, P)` plane. The squeezed axis points along
/// `(cos θ, sin θ)`.
pub fn wigner_density(r: f64, theta: f64, eta: f64, x: f64, p: f64) -> Result<f64> {
    let cov = lossy_squeezed_cov(r, theta, eta)?;
    let det = cov.determinant();
    let inv = cov
        .try_inverse()
        .ok_or_else(|| QpaError::numerical("singular Wigner covariance"))?;
    let q = nalgebra::Vector2::new(x, p);
    let quad = (q.transpose() * inv.fixed_view::<2, 2>(0, 0) * q)[(0, 0)];
    Ok((-0.5 * quad).exp() / (2.0 * PI * det.sqrt()))
}

/// Half-maximum contour of a single-mode Wigner function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WignerEllipse {
    /// Semi-axis along the squeezed direction.
    pub minor: f64,
    /// Semi-axis along the antisqueezed direction.
    pub major: f64,
    /// Angle of the minor axis from the `X` axis, radians in `[0, π)`.
    pub orientation: f64,
}

pub fn wigner_half_max_ellipse(r: f64, theta: f64, eta: f64) -> Result<WignerEllipse> {
    let cov = lossy_squeezed_cov(r, theta, eta)?;
    let eig = SymmetricEigen::new(cov);
    let (i_min, i_max) = if eig.eigenvalues[0] <= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let scale = (2.0 * std::f64::consts::LN_2).sqrt();
    let dir = eig.eigenvectors.column(i_min);
    Ok(WignerEllipse {
        minor: scale * eig.eigenvalues[i_min].sqrt(),
        major: scale * eig.eigenvalues[i_max].sqrt(),
        orientation: dir[1].atan2(dir[0]).rem_euclid(PI),
    })
}
