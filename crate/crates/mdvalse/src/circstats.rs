//! Circular statistics: modified-Bessel ratios, the mean-resultant function
//! `A(kappa) = I1(kappa)/I0(kappa)` and its inverse, von Mises trigonometric
//! moments, and moment-matching projection of gridded densities onto
//! independent von Mises factors.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{wrap_angle, Shape};

/// Concentrations are capped here; beyond it the von Mises is numerically a
/// point mass and ratio recursions start to overflow.
pub const KAPPA_MAX: f64 = 1e6;

/// Per-component frequency posterior: D independent von Mises factors.
#[derive(Debug, Clone, PartialEq)]
pub struct VonMisesProduct {
    pub mu: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl VonMisesProduct {
    pub fn new(mu: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        if mu.len() != kappa.len() || mu.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "mu length {} vs kappa length {}",
                mu.len(),
                kappa.len()
            )));
        }
        if kappa.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
            return Err(Error::InvalidArgument("kappa must be finite and >= 0".into()));
        }
        let mu = mu.into_iter().map(wrap_angle).collect();
        let kappa = kappa.into_iter().map(|k| k.min(KAPPA_MAX)).collect();
        Ok(VonMisesProduct { mu, kappa })
    }

    /// Uninformative factor: zero mean, zero concentration in every dimension.
    pub fn flat(ndim: usize) -> Self {
        VonMisesProduct { mu: vec![0.0; ndim], kappa: vec![0.0; ndim] }
    }

    pub fn ndim(&self) -> usize {
        self.mu.len()
    }
}

/// `I_{nu+1}(x) / I_nu(x)` via the Gauss continued fraction (Lentz) for
/// moderate `x`, switching to the large-argument asymptotic series when the
/// expansion is accurate at this order.
fn ratio_succ(nu: usize, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let v = nu as f64;
    if x >= 100.0f64.max(4.0 * (v + 1.0) * (v + 1.0)) {
        return asymptotic_series(v + 1.0, x) / asymptotic_series(v, x);
    }
    // Lentz's algorithm on t = x / (2(nu+1) + x^2/(2(nu+2) + ...)).
    let tiny = 1e-300;
    let mut f = tiny;
    let mut c = f;
    let mut d = 0.0;
    let mut k = 1usize;
    loop {
        let a = if k == 1 { x } else { x * x };
        let b = 2.0 * (v + k as f64);
        d = b + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 || k > 2_000_000 {
            break;
        }
        k += 1;
    }
    f
}

/// Truncated asymptotic series `sum_k t_k` with
/// `I_nu(x) ~ e^x/sqrt(2 pi x) * sum_k t_k`, `t_0 = 1`,
/// `t_{k+1} = -t_k (4 nu^2 - (2k+1)^2) / (8 x (k+1))`.
fn asymptotic_series(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..30 {
        let kf = k as f64;
        term *= -(mu - (2.0 * kf + 1.0) * (2.0 * kf + 1.0)) / (8.0 * x * (kf + 1.0));
        sum += term;
        if term.abs() < 1e-17 {
            break;
        }
    }
    sum
}

/// Mean-resultant function `A(kappa) = I1(kappa)/I0(kappa)`.
pub fn mean_resultant_a(kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidArgument(format!("kappa {kappa} must be finite and >= 0")));
    }
    Ok(ratio_succ(0, kappa))
}

/// `ln I0(kappa)`: power series below the asymptotic crossover, otherwise
/// `kappa - ln(2 pi kappa)/2` with the first correction terms.
pub fn ln_i0(kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidArgument(format!("kappa {kappa} must be finite and >= 0")));
    }
    if kappa < 50.0 {
        let x = kappa * kappa / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200u32 {
            term *= x / ((k * k) as f64);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        Ok(sum.ln())
    } else {
        let inv = 1.0 / kappa;
        let corr = 1.0 + inv * (0.125 + inv * (0.070_312_5 + inv * (0.073_242_187_5 + inv * 0.112_152_099_609_375)));
        Ok(kappa - 0.5 * (2.0 * PI * kappa).ln() + corr.ln())
    }
}

/// Derivative of `A`: `A'(kappa) = 1 - A/kappa - A^2` (with the `kappa -> 0`
/// limit `1/2`).
fn mean_resultant_a_prime(kappa: f64, a: f64) -> f64 {
    if kappa < 1e-8 {
        0.5
    } else {
        1.0 - a / kappa - a * a
    }
}

/// Inverse of the mean-resultant function: returns `kappa` with
/// `A(kappa) = r`, clamped to [`KAPPA_MAX`].
pub fn a_inverse(r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("ratio {r} must lie in [0, 1)")));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let a_max = ratio_succ(0, KAPPA_MAX);
    if r >= a_max {
        return Ok(KAPPA_MAX);
    }
    // Fisher's closed-form start, then safeguarded Newton on A(kappa) - r.
    let mut kappa = if r < 0.53 {
        2.0 * r + r.powi(3) + 5.0 * r.powi(5) / 6.0
    } else if r < 0.85 {
        -0.4 + 1.39 * r + 0.43 / (1.0 - r)
    } else {
        1.0 / (2.0 * (1.0 - r))
    };
    kappa = kappa.clamp(1e-12, KAPPA_MAX);
    let mut lo = 0.0;
    let mut hi = KAPPA_MAX;
    for _ in 0..200 {
        let a = ratio_succ(0, kappa);
        let resid = a - r;
        if resid > 0.0 {
            hi = kappa;
        } else {
            lo = kappa;
        }
        if resid.abs() <= 1e-13 {
            break;
        }
        let step = resid / mean_resultant_a_prime(kappa, a);
        let mut next = kappa - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - kappa).abs() <= 1e-14 * kappa.max(1.0) {
            kappa = next;
            break;
        }
        kappa = next;
    }
    Ok(kappa.min(KAPPA_MAX))
}

/// `I_n(kappa) / I_0(kappa)` for all orders `0..=max_order` in one pass.
///
/// The top-order successive ratio comes from the continued fraction (or the
/// asymptotic series for large `kappa`), lower ratios follow from the exact
/// downward recurrence `t_{m-1} = 1 / (2m/kappa + t_m)`, and cumulative
/// products telescope down to order zero.
pub fn bessel_ratio_vec(max_order: usize, kappa: f64) -> Result<Vec<f64>> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidArgument(format!("kappa {kappa} must be finite and >= 0")));
    }
    let mut out = vec![0.0; max_order + 1];
    out[0] = 1.0;
    if max_order == 0 {
        return Ok(out);
    }
    if kappa == 0.0 {
        return Ok(out); // I_n(0) = 0 for n >= 1
    }
    // t[m] = I_{m+1}/I_m for m = 0..max_order-1
    let mut t = vec![0.0; max_order];
    t[max_order - 1] = ratio_succ(max_order - 1, kappa);
    for m in (1..max_order).rev() {
        t[m - 1] = 1.0 / (2.0 * m as f64 / kappa + t[m]);
    }
    let mut prod = 1.0;
    for n in 1..=max_order {
        prod *= t[n - 1];
        out[n] = prod.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// `I_n(kappa) / I_0(kappa)` for a single order.
pub fn bessel_ratio_n(n: usize, kappa: f64) -> Result<f64> {
    Ok(bessel_ratio_vec(n, kappa)?[n])
}

/// Expectation of `prod_d exp(j * order_d * theta_d)` under an independent
/// von Mises product: `prod_d (I_{n_d}(kappa_d)/I_0(kappa_d)) exp(j n_d mu_d)`.
pub fn vm_trig_moment(vm: &VonMisesProduct, orders: &[usize]) -> Result<Complex64> {
    if orders.len() != vm.ndim() {
        return Err(Error::DimensionMismatch(format!(
            "orders length {} vs {} dims",
            orders.len(),
            vm.ndim()
        )));
    }
    let mut z = Complex64::new(1.0, 0.0);
    for (d, &ord) in orders.iter().enumerate() {
        let r = bessel_ratio_n(ord, vm.kappa[d])?;
        z *= r * Complex64::from_polar(1.0, ord as f64 * vm.mu[d]);
    }
    Ok(z)
}

/// Project a gridded log-density onto independent von Mises factors by
/// circular moment matching per dimension.
///
/// `log_density` is a row-major grid over the Cartesian product of
/// `grid_angles`; the maximum is subtracted before exponentiation.
pub fn project_grid_to_vm(log_density: &[f64], grid_angles: &[Vec<f64>]) -> Result<VonMisesProduct> {
    if grid_angles.is_empty() {
        return Err(Error::InvalidArgument("need at least one dimension".into()));
    }
    let dims: Vec<usize> = grid_angles.iter().map(|a| a.len()).collect();
    let shape = Shape::new(dims)?;
    if log_density.len() != shape.len() {
        return Err(Error::DimensionMismatch(format!(
            "grid has {} cells but {} log-density values given",
            shape.len(),
            log_density.len()
        )));
    }
    if log_density.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidArgument("non-finite log-density value".into()));
    }
    let max = log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("all-(-inf) log-density grid".into()));
    }
    let d = shape.ndim();
    let mut z = 0.0;
    let mut r = vec![Complex64::new(0.0, 0.0); d];
    shape.for_each_index(|flat, idx| {
        let p = (log_density[flat] - max).exp();
        z += p;
        for (dd, &i) in idx.iter().enumerate() {
            r[dd] += p * Complex64::from_polar(1.0, grid_angles[dd][i]);
        }
    });
    let mut mu = Vec::with_capacity(d);
    let mut kappa = Vec::with_capacity(d);
    for rd in r {
        let rd = rd / z;
        mu.push(if rd.norm() > 0.0 { rd.arg() } else { 0.0 });
        kappa.push(a_inverse(rd.norm().min(1.0 - 1e-12))?);
    }
    VonMisesProduct::new(mu, kappa)
}

/// Laplace-style concentration from inverse-Hessian diagonals:
/// `kappa_i = A^{-1}(exp(c * h_i))` with `h_i < 0`.
///
/// The matching constant `c` defaults to 1/2 elsewhere (Gaussian
/// moment matching); callers may select other values.
pub fn hessian_to_kappa(hess_inv_diag: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!("matching constant {c} must be > 0")));
    }
    let mut out = Vec::with_capacity(hess_inv_diag.len());
    for &h in hess_inv_diag {
        if !(h < 0.0) || !h.is_finite() {
            return Err(Error::Numerical(format!(
                "inverse-Hessian diagonal {h} is not strictly negative"
            )));
        }
        out.push(a_inverse((c * h).exp().min(1.0 - 1e-12))?);
    }
    Ok(out)
}
