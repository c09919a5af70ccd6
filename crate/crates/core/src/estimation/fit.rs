//! Bounded Levenberg–Marquardt least squares and the squeezing model fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{QpaError, Result};
use crate::experiments::output::{sig9, CsvTable};

use super::model_variance_db;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the relative parameter step.
    pub xtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 500, xtol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub residual_norm: f64,
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["parameter", "value", "stderr"]);
        for i in 0..self.names.len() {
            t.push(vec![self.names[i].clone(), sig9(self.values[i]), sig9(self.stderr[i])]);
        }
        t
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], lower: &[f64], upper: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    for k in 0..x.len() {
        let h = 1e-7 * x[k].abs().max(1e-6);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] = (x[k] + h).min(upper[k]);
        xm[k] = (x[k] - h).max(lower[k]);
        let (rp, rm) = (f(&xp), f(&xm));
        let span = xp[k] - xm[k];
        for i in 0..r0.len() {
            jac[(i, k)] = (rp[i] - rm[i]) / span;
        }
    }
    jac
}

/// Minimizes `‖f(x)‖²` over the box `[lower, upper]` with a projected
/// Levenberg–Marquardt iteration and a central-difference Jacobian.
pub fn least_squares<F>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    names: &[&str],
    options: FitOptions,
) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let p = x0.len();
    if lower.len() != p || upper.len() != p || names.len() != p {
        return Err(QpaError::domain("parameter, bound and name lists differ in length"));
    }
    if (0..p).any(|k| !(lower[k] <= upper[k])) {
        return Err(QpaError::domain("lower bound exceeds upper bound"));
    }
    let project = |x: &mut Vec<f64>| {
        for k in 0..p {
            x[k] = x[k].clamp(lower[k], upper[k]);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let mut r = f(&x);
    if r.len() < p {
        return Err(QpaError::domain("fewer residuals than parameters"));
    }
    let mut cost = norm(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jac = jacobian(&f, &x, &r, lower, upper);
        let jtj = jac.transpose() * &jac;
        let mut g = jac.transpose() * DVector::from_column_slice(&r);
        // parameters on a bound with the descent direction pointing out are held
        let held: Vec<bool> =
            (0..p).map(|k| (x[k] <= lower[k] && g[k] > 0.0) || (x[k] >= upper[k] && g[k] < 0.0)).collect();
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            for k in (0..p).filter(|&k| held[k]) {
                a.row_mut(k).fill(0.0);
                a.column_mut(k).fill(0.0);
                a[(k, k)] = 1.0;
                g[k] = 0.0;
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 4.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial);
            let r_trial = f(&trial);
            let c_trial = norm(&r_trial);
            if c_trial.is_finite() && c_trial < cost {
                let dx = norm(&trial.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
                let small = dx <= options.xtol * (norm(&x) + options.xtol);
                x = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        // no downhill step left at any damping: a minimum to working precision
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(QpaError::numerical(format!(
            "least squares did not converge in {} iterations (residual norm {cost:.6e})",
            options.max_iterations
        )));
    }
    let jac = jacobian(&f, &x, &r, lower, upper);
    let jtj = jac.transpose() * &jac;
    let dof = (r.len() - p).max(1) as f64;
    let s2 = cost * cost / dof;
    let covariance = jtj.clone().try_inverse().map(|inv| inv * s2).unwrap_or_else(|| DMatrix::from_element(p, p, f64::NAN));
    let stderr = (0..p).map(|k| covariance[(k, k)].max(0.0).sqrt()).collect();
    Ok(FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        values: x,
        stderr,
        residual_norm: cost,
        covariance,
        iterations,
    })
}

/// Squeezing and antisqueezing levels at one pump power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpPoint {
    pub power_mw: f64,
    pub squeezing_db: f64,
    pub antisqueezing_db: f64,
}

fn pump_residuals(data: &[PumpPoint], eta: f64, mu: f64) -> Vec<f64> {
    data.iter()
        .flat_map(|d| {
            let r = mu * d.power_mw.sqrt();
            [
                model_variance_db(r, eta, -1.0) - d.squeezing_db,
                model_variance_db(r, eta, 1.0) - d.antisqueezing_db,
            ]
        })
        .collect()
}

/// Fits `(eta, mu)` with `r = μ√P` to both branches of a pump-power sweep.
pub fn fit_pump_sweep(data: &[PumpPoint]) -> Result<FitResult> {
    let mut powers: Vec<f64> = data.iter().map(|d| d.power_mw).collect();
    powers.sort_by(|a, b| a.total_cmp(b));
    powers.dedup();
    if powers.len() < 3 {
        return Err(QpaError::domain("pump sweep needs at least three distinct powers"));
    }
    if powers[0] < 0.0 {
        return Err(QpaError::domain("pump power must be >= 0"));
    }
    let cost = |eta: f64, mu: f64| norm(&pump_residuals(data, eta, mu));
    let mut start = (0.1, 0.1, f64::INFINITY);
    for i in 0..40 {
        let eta = 10f64.powf(-4.0 + 4.0 * i as f64 / 39.0);
        for k in 0..40 {
            let mu = 10f64.powf(-3.0 + 3.0 * k as f64 / 39.0);
            let c = cost(eta, mu);
            if c < start.2 {
                start = (eta, mu, c);
            }
        }
    }
    least_squares(
        |x: &[f64]| pump_residuals(data, x[0], x[1]),
        &[start.0, start.1],
        &[0.0, 0.0],
        &[1.0, 10.0],
        &["eta", "mu"],
        FitOptions::default(),
    )
}

/// One configuration of a proportional-efficiency data set: the classical
/// profile value (peak-normalized) and the measured levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub profile: f64,
    pub squeezing_db: f64,
    pub antisqueezing_db: Option<f64>,
}

fn profile_residuals(data: &[ProfilePoint], eta_c: f64, r: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * data.len());
    for d in data {
        let eta = eta_c * d.profile;
        out.push(model_variance_db(r, eta, -1.0) - d.squeezing_db);
        if let Some(a) = d.antisqueezing_db {
            out.push(model_variance_db(r, eta, 1.0) - a);
        }
    }
    out
}

/// Fits `η = η_c × profile` with `r` constrained to `r_bounds`.
pub fn fit_proportional_eta(data: &[ProfilePoint], r_bounds: (f64, f64)) -> Result<FitResult> {
    if data.is_empty() {
        return Err(QpaError::domain("no data points"));
    }
    if data.iter().any(|d| !(d.profile >= 0.0)) {
        return Err(QpaError::domain("classical profile contains negative values"));
    }
    let (r_lo, r_hi) = r_bounds;
    if !(r_lo > 0.0 && r_lo <= r_hi) {
        return Err(QpaError::domain("r bounds must satisfy 0 < lower <= upper"));
    }
    let peak = data.iter().map(|d| d.profile).fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(QpaError::domain("classical profile is identically zero"));
    }
    let eta_max = 1.0 / peak;
    let cost = |eta_c: f64, r: f64| norm(&profile_residuals(data, eta_c, r));
    let mut start = (0.01, r_lo, f64::INFINITY);
    for i in 0..60 {
        let eta_c = eta_max * 10f64.powf(-5.0 + 5.0 * i as f64 / 59.0);
        for k in 0..11 {
            let r = r_lo + (r_hi - r_lo) * k as f64 / 10.0;
            let c = cost(eta_c, r);
            if c < start.2 {
                start = (eta_c, r, c);
            }
        }
    }
    least_squares(
        |x: &[f64]| profile_residuals(data, x[0], x[1]),
        &[start.0, start.1],
        &[0.0, r_lo],
        &[eta_max, r_hi],
        &["eta_c", "r"],
        FitOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::receiver::rng;
    use rand_distr::{Distribution, Normal};

    fn pump_data(eta: f64, mu: f64, noise: f64, seed: u64) -> Vec<PumpPoint> {
        let mut rng = rng(seed);
        let n = Normal::new(0.0, noise.max(1e-300)).unwrap();
        (0..=10)
            .map(|k| {
                let p = 250.0 * k as f64;
                let r = mu * p.sqrt();
                let jitter = |rng: &mut _| if noise > 0.0 { n.sample(rng) } else { 0.0 };
                PumpPoint {
                    power_mw: p,
                    squeezing_db: model_variance_db(r, eta, -1.0) + jitter(&mut rng),
                    antisqueezing_db: model_variance_db(r, eta, 1.0) + jitter(&mut rng),
                }
            })
            .collect()
    }

    #[test]
    fn least_squares_fits_a_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let fit = least_squares(
            |p: &[f64]| xs.iter().map(|x| p[0] * x + p[1] - (2.5 * x - 1.0)).collect(),
            &[0.0, 0.0],
            &[-10.0, -10.0],
            &[10.0, 10.0],
            &["slope", "offset"],
            FitOptions::default(),
        )
        .unwrap();
        assert!((fit.get("slope").unwrap() - 2.5).abs() < 1e-9);
        assert!((fit.get("offset").unwrap() + 1.0).abs() < 1e-9);
        assert!(fit.residual_norm < 1e-9);
    }

    #[test]
    fn bounds_are_respected() {
        let fit = least_squares(|p: &[f64]| vec![p[0] - 3.0, 0.0], &[0.0], &[-1.0], &[1.0], &["a"], FitOptions::default())
            .unwrap();
        assert_eq!(fit.values[0], 1.0);
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let opts = FitOptions { max_iterations: 1, xtol: 0.0 };
        let err = least_squares(
            |p: &[f64]| vec![(p[0] - 1.0).powi(3), (p[1] + 2.0).powi(3)],
            &[5.0, 5.0],
            &[-10.0, -10.0],
            &[10.0, 10.0],
            &["a", "b"],
            opts,
        );
        assert!(matches!(err, Err(QpaError::Numerical(_))));
    }

    #[test]
    fn noiseless_pump_sweep_recovered() {
        let data = pump_data(0.016, 0.038, 0.0, 0);
        assert_eq!(data[0].squeezing_db, 0.0);
        assert_eq!(data[0].antisqueezing_db, 0.0);
        let fit = fit_pump_sweep(&data).unwrap();
        assert!((fit.get("eta").unwrap() - 0.016).abs() < 1e-6);
        assert!((fit.get("mu").unwrap() - 0.038).abs() < 1e-6);
        let truth = norm(&pump_residuals(&data, 0.016, 0.038));
        assert!(fit.residual_norm <= truth + 1e-9);
    }

    #[test]
    fn noisy_pump_sweep_within_five_percent() {
        let data = pump_data(0.016, 0.038, 0.012, 9);
        let fit = fit_pump_sweep(&data).unwrap();
        assert!((fit.get("eta").unwrap() / 0.016 - 1.0).abs() < 0.05);
        assert!((fit.get("mu").unwrap() / 0.038 - 1.0).abs() < 0.05);
        assert!(fit.stderr.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn pump_sweep_needs_three_powers() {
        let data = pump_data(0.016, 0.038, 0.0, 0);
        assert!(fit_pump_sweep(&data[..2]).is_err());
    }

    #[test]
    fn proportional_fit_recovers_generating_values() {
        let profile = [1.0, 0.8, 0.55, 0.3, 0.12, 0.05];
        let data: Vec<ProfilePoint> = profile
            .iter()
            .map(|&p| ProfilePoint {
                profile: p,
                squeezing_db: model_variance_db(0.761, 0.021 * p, -1.0),
                antisqueezing_db: Some(model_variance_db(0.761, 0.021 * p, 1.0)),
            })
            .collect();
        let fit = fit_proportional_eta(&data, (0.729, 0.767)).unwrap();
        assert!((fit.get("eta_c").unwrap() - 0.021).abs() < 1e-7);
        assert!((fit.get("r").unwrap() - 0.761).abs() < 1e-6);
        let truth = norm(&profile_residuals(&data, 0.021, 0.761));
        assert!(fit.residual_norm <= truth + 1e-9);
    }

    #[test]
    fn flat_profile_inverts_the_model() {
        let data = vec![
            ProfilePoint {
                profile: 1.0,
                squeezing_db: model_variance_db(0.75, 0.02, -1.0),
                antisqueezing_db: Some(model_variance_db(0.75, 0.02, 1.0)),
            };
            4
        ];
        let fit = fit_proportional_eta(&data, (0.729, 0.767)).unwrap();
        assert!((fit.get("eta_c").unwrap() - 0.02).abs() < 1e-7);
    }

    #[test]
    fn negative_profile_rejected() {
        let data = [ProfilePoint { profile: -0.1, squeezing_db: 0.0, antisqueezing_db: None }];
        assert!(fit_proportional_eta(&data, (0.7, 0.8)).is_err());
    }
}
