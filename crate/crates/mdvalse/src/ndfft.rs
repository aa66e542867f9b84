//! Oversampled D-dimensional DFT evaluation of the correlation
//! `c(theta) = sum_M conj(Y_M) a(M, theta)` on a dense frequency grid, plus
//! periodogram peak extraction.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{wrap_angle, Shape, SpectralTensor};

/// Dense frequency grid of correlation values.
///
/// Grid cell `(g_1,...,g_D)` sits at angles `theta_d = 2 pi g_d / G_d`
/// wrapped to `[-pi, pi)`; `values` is row-major over the grid dims.
#[derive(Debug, Clone)]
pub struct FreqGrid {
    pub gamma: f64,
    pub grid_shape: Shape,
    pub angles: Vec<Vec<f64>>,
    pub values: Vec<Complex64>,
    pub source_dims: Vec<usize>,
}

/// Smallest 5-smooth integer >= n (keeps the transform in O(G log G)).
pub fn next_smooth(n: usize) -> usize {
    let mut g = n.max(1);
    loop {
        let mut m = g;
        for p in [2usize, 3, 5] {
            while m.is_multiple_of(p) {
                m /= p;
            }
        }
        if m == 1 {
            return g;
        }
        g += 1;
    }
}

fn grid_sizes(dims: &[usize], gamma: f64) -> Vec<usize> {
    dims.iter()
        .map(|&m| next_smooth(((gamma * m as f64).round() as usize).max(m)))
        .collect()
}

/// Unnormalized positive-exponent DFT along each axis of a row-major array.
fn fft_axes_inverse(data: &mut [Complex64], dims: &[usize]) {
    let mut planner = FftPlanner::new();
    let total: usize = dims.iter().product();
    for (axis, &g) in dims.iter().enumerate() {
        let fft = planner.plan_fft_inverse(g);
        let stride: usize = dims[axis + 1..].iter().product();
        let block = stride * g;
        let mut line = vec![Complex64::new(0.0, 0.0); g];
        for base in (0..total).step_by(block) {
            for off in 0..stride {
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[base + off + i * stride];
                }
                fft.process(&mut line);
                for (i, v) in line.iter().enumerate() {
                    data[base + off + i * stride] = *v;
                }
            }
        }
    }
}

/// Evaluate `c(theta) = sum_M conj(Y_M) prod_d exp(j i_d theta_d)` on the
/// oversampled grid by zero-padding `conj(Y)` and applying an unnormalized
/// inverse-convention D-dimensional FFT.
pub fn correlate_grid(y: &SpectralTensor, gamma: f64) -> Result<FreqGrid> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("oversampling factor {gamma} must be >= 1")));
    }
    let dims = y.shape().dims().to_vec();
    let gdims = grid_sizes(&dims, gamma);
    let gshape = Shape::new(gdims.clone())?;
    let mut padded = vec![Complex64::new(0.0, 0.0); gshape.len()];
    y.shape().for_each_index(|flat, idx| {
        padded[gshape.ravel(idx)] = y.data()[flat].conj();
    });
    fft_axes_inverse(&mut padded, &gdims);
    let angles = gdims
        .iter()
        .map(|&g| (0..g).map(|i| wrap_angle(2.0 * PI * i as f64 / g as f64)).collect())
        .collect();
    Ok(FreqGrid { gamma, grid_shape: gshape, angles, values: padded, source_dims: dims })
}

/// Angles and `|c|^2 / prod(M_d)` magnitude of the largest-|c| cell; ties
/// break toward the lowest row-major index.
pub fn periodogram_peak(grid: &FreqGrid) -> (Vec<f64>, f64) {
    let mut best = 0usize;
    let mut best_mag = f64::NEG_INFINITY;
    for (i, v) in grid.values.iter().enumerate() {
        let m = v.norm_sqr();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    let idx = grid.grid_shape.unravel(best);
    let angles: Vec<f64> = idx.iter().enumerate().map(|(d, &i)| grid.angles[d][i]).collect();
    let m_total: usize = grid.source_dims.iter().product();
    (angles, best_mag / m_total as f64)
}

/// Multi-index of the largest-|c| cell (same tie-break as [`periodogram_peak`]).
pub fn peak_index(grid: &FreqGrid) -> Vec<usize> {
    let mut best = 0usize;
    let mut best_mag = f64::NEG_INFINITY;
    for (i, v) in grid.values.iter().enumerate() {
        let m = v.norm_sqr();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    grid.grid_shape.unravel(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{add_noise, atom, conj_inner, synthesize, Component};
    use approx::assert_relative_eq;

    fn shape(dims: &[usize]) -> Shape {
        Shape::new(dims.to_vec()).unwrap()
    }

    /// Direct O(G*M) summation oracle for the correlation grid.
    fn correlate_direct(y: &SpectralTensor, grid: &FreqGrid) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(grid.grid_shape.len());
        for gidx in grid.grid_shape.multi_indices() {
            let th: Vec<f64> = gidx.iter().enumerate().map(|(d, &i)| grid.angles[d][i]).collect();
            let a = atom(y.shape(), &th).unwrap();
            out.push(conj_inner(y, &a).unwrap());
        }
        out
    }

    #[test]
    fn next_smooth_values() {
        assert_eq!(next_smooth(1), 1);
        assert_eq!(next_smooth(16), 16);
        assert_eq!(next_smooth(17), 18);
        assert_eq!(next_smooth(520), 540);
    }

    #[test]
    fn on_grid_atom_peaks_exactly() {
        let s = shape(&[8, 8]);
        let g = 16usize;
        let th = [2.0 * PI * 3.0 / g as f64, wrap_angle(2.0 * PI * 12.0 / g as f64)];
        let y = atom(&s, &th).unwrap();
        let grid = correlate_grid(&y, 2.0).unwrap();
        let (angles, mag) = periodogram_peak(&grid);
        assert_relative_eq!(mag, s.len() as f64, max_relative = 1e-9);
        assert!((angles[0] - th[0]).abs() < 1e-12);
        assert!((angles[1] - th[1]).abs() < 1e-12);

        // all-ones tensor peaks at the zero-frequency bin
        let ones = synthesize(
            &[Component::new(Complex64::new(1.0, 0.0), vec![0.0, 0.0])],
            &s,
        )
        .unwrap();
        let grid = correlate_grid(&ones, 2.0).unwrap();
        let (angles, _) = periodogram_peak(&grid);
        assert_eq!(angles, vec![0.0, 0.0]);
    }

    #[test]
    fn matches_direct_summation() {
        let s = shape(&[4, 3]);
        let y = add_noise(&SpectralTensor::zeros(s), 1.0, 11).unwrap();
        let grid = correlate_grid(&y, 2.0).unwrap();
        let direct = correlate_direct(&y, &grid);
        let scale = y.norm_sqr().sqrt() * (y.shape().len() as f64);
        for (a, b) in grid.values.iter().zip(&direct) {
            assert!((a - b).norm() <= 1e-9 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn parseval_scaling() {
        let s = shape(&[5, 4]);
        let y = add_noise(&SpectralTensor::zeros(s), 2.0, 3).unwrap();
        let grid = correlate_grid(&y, 3.0).unwrap();
        let g_total = grid.grid_shape.len() as f64;
        let lhs: f64 = grid.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / g_total;
        // sum over the grid of |c|^2 equals G_total * ||Y||^2 for zero-padded
        // unitary-free transforms
        assert_relative_eq!(lhs, y.norm_sqr(), max_relative = 1e-9);
    }

    #[test]
    fn conjugate_linear_in_y() {
        let s = shape(&[4, 4]);
        let y1 = add_noise(&SpectralTensor::zeros(s.clone()), 1.0, 5).unwrap();
        let y2 = add_noise(&SpectralTensor::zeros(s.clone()), 1.0, 6).unwrap();
        let c = Complex64::new(0.3, -1.7);
        let mut combo = y2.clone();
        combo.scaled_add(c, &y1).unwrap();
        let g1 = correlate_grid(&y1, 2.0).unwrap();
        let g2 = correlate_grid(&y2, 2.0).unwrap();
        let gc = correlate_grid(&combo, 2.0).unwrap();
        for ((a, b), out) in g1.values.iter().zip(&g2.values).zip(&gc.values) {
            assert!((c.conj() * a + b - out).norm() < 1e-9 * (a.norm() + b.norm() + 1.0));
        }
    }

    #[test]
    fn finer_grid_never_lowers_peak() {
        let s = shape(&[8, 8]);
        let x = synthesize(
            &[Component::new(Complex64::new(1.0, 0.5), vec![0.77, -1.91])],
            &s,
        )
        .unwrap();
        let y = add_noise(&x, 0.01, 9).unwrap();
        let (_, m1) = periodogram_peak(&correlate_grid(&y, 2.0).unwrap());
        let (_, m2) = periodogram_peak(&correlate_grid(&y, 4.0).unwrap());
        let (_, m3) = periodogram_peak(&correlate_grid(&y, 8.0).unwrap());
        assert!(m2 >= m1 - 1e-9);
        assert!(m3 >= m2 - 1e-9);
    }

    #[test]
    fn zero_tensor_tie_break() {
        let s = shape(&[4, 4]);
        let grid = correlate_grid(&SpectralTensor::zeros(s), 2.0).unwrap();
        let (angles, mag) = periodogram_peak(&grid);
        assert_eq!(mag, 0.0);
        let idx = peak_index(&grid);
        assert_eq!(idx, vec![0, 0]);
        assert_eq!(angles, vec![0.0, 0.0]);
    }
}
