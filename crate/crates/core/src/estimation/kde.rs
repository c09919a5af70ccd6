//! Squeezing and antisqueezing levels from the edges of the window-variance
//! distribution.
//!
//! Under a uniform phase ramp the window variances follow an arcsine-shaped
//! distribution between `ΔX₋²` and `ΔX₊²`, blurred by the finite-window
//! sampling noise and the kernel. The KDE derivative peaks just outside each
//! edge. The edge levels are recovered by matching those peak locations with
//! the same locations computed for the blurred model distribution.

use std::f64::consts::{FRAC_PI_2, LN_10};

use crate::error::{QpaError, Result};
use crate::experiments::output::{sig9, CsvTable};

use super::VarianceSeries;

pub const KDE_GRID_POINTS: usize = 2048;
const MIN_WINDOWS: usize = 50;
const MODEL_PHASES: usize = 512;
const MODE_FRACTION: f64 = 0.2;
const MAX_INVERSION_STEPS: usize = 200;

/// Gaussian kernel density estimate with Silverman's bandwidth.
#[derive(Debug, Clone)]
pub struct GaussianKde {
    data: Vec<f64>,
    bandwidth: f64,
}

impl GaussianKde {
    pub fn silverman(data: &[f64]) -> Result<Self> {
        if data.len() < 2 {
            return Err(QpaError::domain("KDE needs at least two points"));
        }
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let sd = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mut sorted = data.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let bandwidth = 0.9 * spread * n.powf(-0.2);
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(QpaError::numerical("KDE is degenerate: the data have zero spread"));
        }
        Ok(Self { data: data.to_vec(), bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let s: f64 = self.data.iter().map(|d| (-0.5 * ((x - d) / h).powi(2)).exp()).sum();
        s / (self.data.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let s: f64 = self
            .data
            .iter()
            .map(|d| {
                let z = (x - d) / h;
                -z * (-0.5 * z * z).exp()
            })
            .sum();
        s / (self.data.len() as f64 * h * h * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// Evaluation grid spanning the data range ±3 bandwidths.
    pub fn grid(&self) -> Vec<f64> {
        let lo = self.data.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * self.bandwidth;
        let hi = self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * self.bandwidth;
        linspace(lo, hi, KDE_GRID_POINTS)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Left and right edge locations of a sampled density: the maximum of the
/// derivative below the first significant mode and the minimum above the
/// last, refined by quadratic interpolation.
pub fn edge_locations(grid: &[f64], density: &[f64], derivative: &[f64]) -> Result<(f64, f64)> {
    let n = grid.len();
    let peak = density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let is_mode = |i: usize| {
        i > 0 && i + 1 < n && density[i] >= density[i - 1] && density[i] > density[i + 1] && density[i] >= MODE_FRACTION * peak
    };
    let first = (0..n).find(|&i| is_mode(i));
    let last = (0..n).rev().find(|&i| is_mode(i));
    let (first, last) = match (first, last) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(QpaError::numerical("density has no interior mode on the grid")),
    };
    let left = (0..first).max_by(|&a, &b| derivative[a].total_cmp(&derivative[b]));
    let right = (last + 1..n).min_by(|&a, &b| derivative[a].total_cmp(&derivative[b]));
    match (left, right) {
        (Some(l), Some(r)) => Ok((refine(grid, derivative, l), refine(grid, derivative, r))),
        _ => Err(QpaError::numerical("density edge lies on the grid boundary")),
    }
}

fn refine(grid: &[f64], y: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= grid.len() {
        return grid[i];
    }
    let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
    let den = y0 - 2.0 * y1 + y2;
    let offset = if den != 0.0 { (0.5 * (y0 - y2) / den).clamp(-1.0, 1.0) } else { 0.0 };
    grid[i] + offset * (grid[1] - grid[0])
}

/// Edge locations of the KDE of window variances drawn from a uniform-phase
/// distribution between `lo` and `hi`, each window variance `V` blurred by a
/// Gaussian of width `√((rel·V)² + h²)`.
fn model_edges(lo: f64, hi: f64, rel: f64, h: f64) -> Result<(f64, f64)> {
    let levels: Vec<(f64, f64)> = (0..MODEL_PHASES)
        .map(|k| {
            let th = (k as f64 + 0.5) * FRAC_PI_2 / MODEL_PHASES as f64;
            let v = lo * th.cos().powi(2) + hi * th.sin().powi(2);
            (v, ((rel * v).powi(2) + h * h).sqrt())
        })
        .collect();
    let s_max = levels.iter().map(|l| l.1).fold(0.0, f64::max);
    let grid = linspace(lo - 5.0 * s_max, hi + 5.0 * s_max, KDE_GRID_POINTS);
    let mut density = vec![0.0; grid.len()];
    let mut derivative = vec![0.0; grid.len()];
    for (i, &x) in grid.iter().enumerate() {
        let (mut d, mut dd) = (0.0, 0.0);
        for &(v, s) in &levels {
            let z = (x - v) / s;
            if z.abs() > 9.0 {
                continue;
            }
            let g = (-0.5 * z * z).exp() / s;
            d += g;
            dd -= z * g / s;
        }
        density[i] = d;
        derivative[i] = dd;
    }
    edge_locations(&grid, &density, &derivative)
}

/// Squeezing and antisqueezing levels relative to the vacuum reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezingEstimate {
    pub squeezing_db: f64,
    pub antisqueezing_db: f64,
    pub error_db: f64,
    /// Mean vacuum window variance.
    pub shot_reference: f64,
    /// Edge variances in the units of the input series.
    pub squeezed_variance: f64,
    pub antisqueezed_variance: f64,
}

impl SqueezingEstimate {
    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["quantity", "db", "err_db"]);
        t.push(vec!["squeezing".into(), sig9(self.squeezing_db), sig9(self.error_db)]);
        t.push(vec!["antisqueezing".into(), sig9(self.antisqueezing_db), sig9(self.error_db)]);
        t
    }

    /// Antisqueezing/squeezing variance ratio.
    pub fn ratio(&self) -> f64 {
        self.antisqueezed_variance / self.squeezed_variance
    }
}

/// Estimates the squeezing (antisqueezing) level from the left (right) edge of
/// the squeezed window-variance KDE, relative to the vacuum mean.
///
/// The raw edges are the derivative extrema of the KDE. Under the
/// uniform-phase precondition the edge levels are symmetric about the mean
/// window variance, and their half-separation is the one whose blurred model
/// KDE has the same edge spread. The blur combines the relative
/// window-variance spread of the vacuum series with the KDE bandwidth. The
/// error bar is the vacuum spread propagated to dB.
pub fn kde_squeezing_estimate(squeezed: &VarianceSeries, vacuum: &VarianceSeries) -> Result<SqueezingEstimate> {
    if squeezed.len() < MIN_WINDOWS || vacuum.len() < MIN_WINDOWS {
        return Err(QpaError::domain(format!(
            "need at least {MIN_WINDOWS} windows per series, got {} and {}",
            squeezed.len(),
            vacuum.len()
        )));
    }
    let shot = vacuum.mean_variance();
    let spread = vacuum.variance_spread();
    if !(shot > 0.0) || !(spread > 0.0) {
        return Err(QpaError::numerical("vacuum series is degenerate"));
    }
    let rel = spread / shot;
    let kde = GaussianKde::silverman(&squeezed.variances)?;
    let grid = kde.grid();
    let density: Vec<f64> = grid.iter().map(|&x| kde.density(x)).collect();
    let derivative: Vec<f64> = grid.iter().map(|&x| kde.derivative(x)).collect();
    let (left, right) = edge_locations(&grid, &density, &derivative)?;
    let center = squeezed.mean_variance();
    let half = solve_half_separation(center, right - left, rel, kde.bandwidth())?;
    let (lo, hi) = (center - half, center + half);
    if !(lo > 0.0) {
        return Err(QpaError::numerical("estimated squeezed variance is not positive"));
    }
    Ok(SqueezingEstimate {
        squeezing_db: 10.0 * (lo / shot).log10(),
        antisqueezing_db: 10.0 * (hi / shot).log10(),
        error_db: 10.0 / LN_10 * rel,
        shot_reference: shot,
        squeezed_variance: lo,
        antisqueezed_variance: hi,
    })
}

/// Half-separation `d ≥ 0` of the model levels `center ± d` whose blurred
/// KDE edges are `spread` apart (false position, Illinois variant).
fn solve_half_separation(center: f64, spread: f64, rel: f64, h: f64) -> Result<f64> {
    let excess = |d: f64| -> Result<f64> {
        let (ml, mr) = model_edges(center - d, center + d, rel, h)?;
        Ok(mr - ml - spread)
    };
    let (mut a, mut fa) = (0.0, excess(0.0)?);
    if fa >= 0.0 {
        return Ok(0.0);
    }
    // the model edges lie outside the levels, so the spread exceeds 2d
    let (mut b, mut fb) = (0.5 * spread, excess(0.5 * spread)?);
    if fb < 0.0 {
        return Err(QpaError::numerical("edge spread could not be bracketed"));
    }
    let mut side = 0;
    for _ in 0..MAX_INVERSION_STEPS {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = excess(c)?;
        if fc == 0.0 || (b - a).abs() <= 1e-12 * center.abs() {
            return Ok(c);
        }
        if (fc < 0.0) == (fa < 0.0) {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    Err(QpaError::numerical("edge inversion did not converge"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::receiver::rng;
    use rand_distr::{ChiSquared, Distribution};

    fn series(variances: Vec<f64>) -> VarianceSeries {
        let n = variances.len();
        VarianceSeries { window_size: 0, means: vec![0.0; n], timestamps: vec![0.0; n], variances }
    }

    /// Window variances with the exact finite-window distribution.
    fn windows(levels: &[f64], window: usize, seed: u64) -> VarianceSeries {
        let mut rng = rng(seed);
        let chi = ChiSquared::new((window - 1) as f64).unwrap();
        series(levels.iter().map(|v| v * chi.sample(&mut rng) / (window - 1) as f64).collect())
    }

    fn ramp_levels(lo: f64, hi: f64, n: usize, phase0: f64) -> Vec<f64> {
        (0..n)
            .map(|k| {
                let th = phase0 + std::f64::consts::PI * k as f64 / n as f64;
                lo * th.cos().powi(2) + hi * th.sin().powi(2)
            })
            .collect()
    }

    #[test]
    fn silverman_bandwidth_of_known_sample() {
        let data: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let kde = GaussianKde::silverman(&data).unwrap();
        let sd = (100.0f64 * 101.0 / 12.0).sqrt();
        let iqr = 49.5;
        let expected = 0.9 * sd.min(iqr / 1.34) * 100f64.powf(-0.2);
        assert!((kde.bandwidth() - expected).abs() < 1e-12);
        assert!(GaussianKde::silverman(&[1.0; 10]).is_err());
    }

    #[test]
    fn gaussian_edges_sit_one_sigma_out() {
        let grid = linspace(-6.0, 6.0, 4001);
        let d: Vec<f64> = grid.iter().map(|x| (-0.5 * x * x).exp()).collect();
        let dd: Vec<f64> = grid.iter().map(|x| -x * (-0.5 * x * x).exp()).collect();
        let (l, r) = edge_locations(&grid, &d, &dd).unwrap();
        assert!((l + 1.0).abs() < 1e-5 && (r - 1.0).abs() < 1e-5);
    }

    #[test]
    fn model_inversion_is_self_consistent() {
        let (lo, hi) = (0.98, 1.06);
        let (l, r) = model_edges(lo, hi, 0.003, 0.006).unwrap();
        assert!(l < lo && r > hi);
        let d = solve_half_separation(0.5 * (lo + hi), r - l, 0.003, 0.006).unwrap();
        assert!((d - 0.5 * (hi - lo)).abs() < 1e-9);
        let (l, r) = model_edges(1.0, 1.0, 0.003, 0.006).unwrap();
        assert_eq!(solve_half_separation(1.0, 0.99 * (r - l), 0.003, 0.006).unwrap(), 0.0);
    }

    #[test]
    fn vacuum_against_vacuum_is_zero_within_error() {
        let vac = windows(&[1.0; 300], 260_000, 1);
        let other = windows(&[1.0; 300], 260_000, 2);
        let est = kde_squeezing_estimate(&other, &vac).unwrap();
        assert!(est.squeezing_db.abs() < est.error_db, "{est:?}");
        assert!(est.antisqueezing_db.abs() < est.error_db, "{est:?}");
    }

    #[test]
    fn fixed_phase_gives_coinciding_levels() {
        // a single Gaussian peak: the edge spread carries no separation
        // beyond its sampling noise, and the midpoint is the fixed level
        let vac = windows(&[1.0; 200], 260_000, 3);
        let sq = windows(&[0.98358; 200], 260_000, 4);
        let est = kde_squeezing_estimate(&sq, &vac).unwrap();
        let mid = 0.5 * (est.squeezed_variance + est.antisqueezed_variance) / est.shot_reference;
        assert!((10.0 * mid.log10() - 10.0 * 0.98358f64.log10()).abs() < est.error_db, "{est:?}");
        assert!(est.antisqueezing_db - est.squeezing_db < 3.0 * est.error_db, "{est:?}");
    }

    #[test]
    fn ramp_levels_recovered() {
        let (eta, r) = (0.016f64, 0.761f64);
        let lo = super::super::model_variance(r, eta, -1.0);
        let hi = super::super::model_variance(r, eta, 1.0);
        let vac = windows(&[1.0; 200], 260_000, 5);
        let sq = windows(&ramp_levels(lo, hi, 200, 0.3), 260_000, 6);
        let est = kde_squeezing_estimate(&sq, &vac).unwrap();
        assert!((est.squeezing_db - 10.0 * lo.log10()).abs() < est.error_db, "{est:?}");
        assert!((est.antisqueezing_db - 10.0 * hi.log10()).abs() < est.error_db, "{est:?}");
        assert!(est.squeezing_db <= est.antisqueezing_db);
    }

    #[test]
    fn too_few_windows_rejected() {
        let s = windows(&[1.0; 49], 1000, 0);
        assert!(kde_squeezing_estimate(&s, &s).is_err());
    }
}

