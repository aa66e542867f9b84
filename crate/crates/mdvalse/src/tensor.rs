//! D-dimensional complex tensors, sinusoidal atoms and synthetic data.
//!
//! Tensors are stored flat in row-major order (last dimension fastest).
//! Multi-indices are 0-based throughout, so the exponent of an atom entry
//! at index `(i_1,...,i_D)` along dimension `d` is just `i_d`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Wrap an angle to `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let x = (theta + PI).rem_euclid(2.0 * PI);
    x - PI
}

/// Tensor extent `(M_1,...,M_D)`; immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidShape("shape needs at least one dimension".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape(format!("zero-sized dimension in {dims:?}")));
        }
        Ok(Shape { dims })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total number of entries, `prod(M_d)`.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // dims are all >= 1
    }

    /// Row-major flat offset of a multi-index.
    pub fn ravel(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut flat = 0;
        for (i, m) in idx.iter().zip(&self.dims) {
            debug_assert!(i < m);
            flat = flat * m + i;
        }
        flat
    }

    /// Multi-index of a row-major flat offset.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dims.len()];
        for d in (0..self.dims.len()).rev() {
            idx[d] = flat % self.dims[d];
            flat /= self.dims[d];
        }
        idx
    }

    /// All multi-indices in row-major order.
    pub fn multi_indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.len()).map(move |f| self.unravel(f))
    }

    /// Visit every `(flat, multi-index)` pair without per-item allocation.
    pub fn for_each_index<F: FnMut(usize, &[usize])>(&self, mut f: F) {
        let mut idx = vec![0usize; self.dims.len()];
        for flat in 0..self.len() {
            f(flat, &idx);
            for d in (0..self.dims.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

/// Dense complex tensor with row-major flat storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTensor {
    shape: Shape,
    data: Vec<Complex64>,
}

impl SpectralTensor {
    pub fn new(shape: Shape, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DimensionMismatch(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape.dims()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite tensor entry".into()));
        }
        Ok(SpectralTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.len();
        SpectralTensor { shape, data: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, idx: &[usize]) -> Complex64 {
        self.data[self.shape.ravel(idx)]
    }

    /// Squared Frobenius norm.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &SpectralTensor) -> Result<SpectralTensor> {
        check_same_shape(self, other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(SpectralTensor { shape: self.shape.clone(), data })
    }

    /// `self += c * other`.
    pub fn scaled_add(&mut self, c: Complex64, other: &SpectralTensor) -> Result<()> {
        check_same_shape(self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }
}

fn check_same_shape(a: &SpectralTensor, b: &SpectralTensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::DimensionMismatch(format!(
            "shapes {:?} and {:?} differ",
            a.shape.dims(),
            b.shape.dims()
        )));
    }
    Ok(())
}

/// One sinusoid: complex weight plus D frequencies in `[-pi, pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: Complex64,
    pub freq: Vec<f64>,
}

impl Component {
    pub fn new(weight: Complex64, freq: Vec<f64>) -> Self {
        let freq = freq.into_iter().map(wrap_angle).collect();
        Component { weight, freq }
    }
}

/// Unit-modulus atom: entry at index `(i_1,...,i_D)` is `prod_d exp(j i_d theta_d)`.
pub fn atom(shape: &Shape, freq: &[f64]) -> Result<SpectralTensor> {
    if freq.len() != shape.ndim() {
        return Err(Error::DimensionMismatch(format!(
            "freq length {} vs {} dims",
            freq.len(),
            shape.ndim()
        )));
    }
    let tables: Vec<Vec<Complex64>> = shape
        .dims()
        .iter()
        .zip(freq)
        .map(|(&m, &th)| (0..m).map(|i| Complex64::from_polar(1.0, i as f64 * th)).collect())
        .collect();
    let mut out = SpectralTensor::zeros(shape.clone());
    shape.for_each_index(|flat, idx| {
        let mut z = Complex64::new(1.0, 0.0);
        for (d, &i) in idx.iter().enumerate() {
            z *= tables[d][i];
        }
        out.data[flat] = z;
    });
    Ok(out)
}

/// Noiseless superposition `X = sum_k w_k A(theta_k)`.
pub fn synthesize(components: &[Component], shape: &Shape) -> Result<SpectralTensor> {
    let mut x = SpectralTensor::zeros(shape.clone());
    for c in components {
        let a = atom(shape, &c.freq)?;
        x.scaled_add(c.weight, &a)?;
    }
    Ok(x)
}

/// Add i.i.d. circularly-symmetric complex Gaussian noise with per-entry
/// variance `nu` (real and imaginary parts each `nu/2`). Deterministic in `seed`.
pub fn add_noise(x: &SpectralTensor, nu: f64, seed: u64) -> Result<SpectralTensor> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::InvalidArgument(format!("noise variance {nu} must be >= 0")));
    }
    if nu == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (nu / 2.0).sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let data = x
        .data
        .iter()
        .map(|z| z + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    Ok(SpectralTensor { shape: x.shape.clone(), data })
}

/// Noise variance for a nominal SNR: `nu = ||X||_F^2 / (prod(M_d) * 10^(snr/10))`.
pub fn snr_to_nu(x: &SpectralTensor, snr_db: f64) -> Result<f64> {
    let power = x.norm_sqr();
    if power == 0.0 {
        return Err(Error::InvalidArgument("SNR undefined for zero signal".into()));
    }
    Ok(power / (x.shape.len() as f64 * 10f64.powf(snr_db / 10.0)))
}

/// `sum_M conj(A_M) * B_M` (first argument conjugated).
pub fn conj_inner(a: &SpectralTensor, b: &SpectralTensor) -> Result<Complex64> {
    check_same_shape(a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum())
}

const MDLS_MAGIC: &[u8; 4] = b"MDLS";
const MDLS_VERSION: u8 = 1;

/// Write a tensor in the MDLS file format (little-endian):
/// magic `"MDLS"`, version u8 = 1, u8 D, D x u32 dims, then
/// `prod(M_d)` pairs of f64 (real, imaginary) in row-major order.
pub fn write_tensor<P: AsRef<Path>>(path: P, t: &SpectralTensor) -> Result<()> {
    let mut buf = Vec::with_capacity(6 + 4 * t.shape.ndim() + 16 * t.data.len());
    buf.extend_from_slice(MDLS_MAGIC);
    buf.push(MDLS_VERSION);
    buf.push(t.shape.ndim() as u8);
    for &m in t.shape.dims() {
        buf.extend_from_slice(&(m as u32).to_le_bytes());
    }
    for z in &t.data {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a tensor in the MDLS file format. See [`write_tensor`].
pub fn read_tensor<P: AsRef<Path>>(path: P) -> Result<SpectralTensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 6 {
        return Err(Error::Format("file shorter than MDLS header".into()));
    }
    if &bytes[0..4] != MDLS_MAGIC {
        return Err(Error::Format("magic mismatch, not an MDLS file".into()));
    }
    if bytes[4] != MDLS_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", bytes[4])));
    }
    let d = bytes[5] as usize;
    if d == 0 {
        return Err(Error::Format("zero dimensions".into()));
    }
    let header = 6 + 4 * d;
    if bytes.len() < header {
        return Err(Error::Format("truncated dimension list".into()));
    }
    let mut dims = Vec::with_capacity(d);
    for k in 0..d {
        let off = 6 + 4 * k;
        let m = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        dims.push(m);
    }
    let shape = Shape::new(dims).map_err(|e| Error::Format(e.to_string()))?;
    let total = shape.len();
    if bytes.len() != header + 16 * total {
        return Err(Error::Format(format!(
            "declared size {} entries does not match payload of {} bytes",
            total,
            bytes.len() - header
        )));
    }
    let mut data = Vec::with_capacity(total);
    for k in 0..total {
        let off = header + 16 * k;
        let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
        data.push(Complex64::new(re, im));
    }
    SpectralTensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn shape(dims: &[usize]) -> Shape {
        Shape::new(dims.to_vec()).unwrap()
    }

    #[test]
    fn multi_indices_row_major() {
        let s = shape(&[2, 2]);
        let idx: Vec<Vec<usize>> = s.multi_indices().collect();
        assert_eq!(idx, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        let s = shape(&[3]);
        let idx: Vec<Vec<usize>> = s.multi_indices().collect();
        assert_eq!(idx, vec![vec![0], vec![1], vec![2]]);
        let s = shape(&[1, 1, 1]);
        assert_eq!(s.multi_indices().count(), 1);
        assert_eq!(s.unravel(0), vec![0, 0, 0]);
    }

    #[test]
    fn atom_values() {
        let a = atom(&shape(&[2, 2]), &[PI / 2.0, 0.0]).unwrap();
        let j = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        assert_relative_eq!(a.get(&[0, 0]).re, one.re, epsilon = 1e-12);
        assert!((a.get(&[0, 1]) - one).norm() < 1e-12);
        assert!((a.get(&[1, 0]) - j).norm() < 1e-12);
        assert!((a.get(&[1, 1]) - j).norm() < 1e-12);

        let a = atom(&shape(&[3, 4]), &[0.0, 0.0]).unwrap();
        assert!(a.data().iter().all(|z| (z - one).norm() < 1e-12));

        let a = atom(&shape(&[3]), &[PI]).unwrap();
        assert!((a.get(&[0]) - one).norm() < 1e-12);
        assert!((a.get(&[1]) + one).norm() < 1e-12);
        assert!((a.get(&[2]) - one).norm() < 1e-12);
    }

    #[test]
    fn atom_unit_modulus_and_wrap() {
        let s = shape(&[4, 3, 2]);
        let th = [0.7, -2.9, 3.0];
        let a = atom(&s, &th).unwrap();
        for z in a.data() {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
        let th2: Vec<f64> = th.iter().map(|t| wrap_angle(t + 4.0 * PI)).collect();
        let b = atom(&s, &th2).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).norm() < 1e-9);
        }
        assert_relative_eq!(conj_inner(&a, &a).unwrap().re, s.len() as f64, max_relative = 1e-9);
    }

    #[test]
    fn synthesize_cases() {
        let s = shape(&[4, 4]);
        let x = synthesize(&[], &s).unwrap();
        assert_eq!(x.norm_sqr(), 0.0);

        let c = Component::new(Complex64::new(2.0, 0.0), vec![0.0, 0.0]);
        let x = synthesize(&[c], &shape(&[2, 2])).unwrap();
        assert!(x.data().iter().all(|z| (z - Complex64::new(2.0, 0.0)).norm() < 1e-12));

        let c1 = Component::new(Complex64::new(1.0, 0.0), vec![PI]);
        let c2 = Component::new(Complex64::new(1.0, 0.0), vec![0.0]);
        let x = synthesize(&[c1, c2], &shape(&[2])).unwrap();
        assert!((x.get(&[0]) - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        assert!(x.get(&[1]).norm() < 1e-12);
    }

    #[test]
    fn synthesize_linearity() {
        let s = shape(&[5, 3]);
        let l1 = vec![Component::new(Complex64::new(1.0, 2.0), vec![0.3, -1.2])];
        let l2 = vec![
            Component::new(Complex64::new(-0.5, 0.1), vec![2.0, 0.4]),
            Component::new(Complex64::new(0.0, 1.0), vec![-3.0, 1.0]),
        ];
        let mut joint: Vec<Component> = l1.clone();
        joint.extend(l2.clone());
        let xj = synthesize(&joint, &s).unwrap();
        let mut xs = synthesize(&l1, &s).unwrap();
        xs.scaled_add(Complex64::new(1.0, 0.0), &synthesize(&l2, &s).unwrap()).unwrap();
        for (a, b) in xj.data().iter().zip(xs.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_variance_and_determinism() {
        let s = shape(&[100, 100]);
        let x = SpectralTensor::zeros(s);
        let y = add_noise(&x, 1.0, 42).unwrap();
        let mean_power = y.norm_sqr() / y.shape().len() as f64;
        assert!(mean_power > 0.97 && mean_power < 1.03, "mean power {mean_power}");
        let y2 = add_noise(&x, 1.0, 42).unwrap();
        assert_eq!(y.data(), y2.data());
        let z = add_noise(&x, 0.0, 7).unwrap();
        assert_eq!(z.data(), x.data());
        assert!(add_noise(&x, -1.0, 0).is_err());
    }

    #[test]
    fn snr_to_nu_values() {
        let s = shape(&[10, 10]);
        let c = Component::new(Complex64::new(1.0, 0.0), vec![0.4, 0.9]);
        let x = synthesize(&[c], &s).unwrap(); // ||X||^2 = 100
        assert_relative_eq!(snr_to_nu(&x, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(snr_to_nu(&x, 20.0).unwrap(), 0.01, epsilon = 1e-12);
        assert!(snr_to_nu(&x, 300.0).unwrap() < 1e-28);
        let zero = SpectralTensor::zeros(shape(&[4]));
        assert!(snr_to_nu(&zero, 10.0).is_err());
    }

    #[test]
    fn conj_inner_values() {
        let s = shape(&[4]);
        let a = atom(&s, &[2.0 * PI / 4.0]).unwrap();
        let b = atom(&s, &[2.0 * PI * 2.0 / 4.0]).unwrap();
        assert!(conj_inner(&a, &b).unwrap().norm() < 1e-12);
        let a = SpectralTensor::new(shape(&[2]), vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]).unwrap();
        let b = SpectralTensor::new(shape(&[2]), vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]).unwrap();
        let v = conj_inner(&a, &b).unwrap();
        assert!((v - Complex64::new(1.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn mdls_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.mdls");
        let s = shape(&[3, 2]);
        let x = add_noise(&SpectralTensor::zeros(s), 2.0, 1).unwrap();
        write_tensor(&p, &x).unwrap();
        let y = read_tensor(&p).unwrap();
        assert_eq!(x, y);

        // wrong magic
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        let p2 = dir.path().join("bad_magic.mdls");
        std::fs::write(&p2, &bytes).unwrap();
        assert!(matches!(read_tensor(&p2), Err(Error::Format(_))));

        // truncated payload
        let bytes = std::fs::read(&p).unwrap();
        let p3 = dir.path().join("trunc.mdls");
        std::fs::write(&p3, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_tensor(&p3), Err(Error::Format(_))));
    }
}
