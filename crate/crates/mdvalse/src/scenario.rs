//! Seeded synthetic-scenario generation: random (or fixed) frequencies with a
//! wrap-around separation constraint, random weights, and calibrated noise.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::wrap_dist;
use crate::tensor::{add_noise, snr_to_nu, synthesize, Component, Shape, SpectralTensor};

const MAX_REJECTION_ATTEMPTS: usize = 100_000;

/// How component weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightModel {
    /// Circularly-symmetric complex normal CN(0, 1).
    ComplexNormal,
    /// Magnitude N(1, 0.2) (variance 0.2), phase uniform on [-pi, pi).
    RandMagPhase,
}

/// Scenario description; serializable so benchmark configs can embed it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub dims: Vec<usize>,
    pub k: usize,
    pub weight_model: WeightModel,
    /// `None` means noiseless.
    pub snr_db: Option<f64>,
    pub seed: u64,
    /// Fixed frequencies (bypasses sampling); outer length must equal `k`.
    #[serde(default)]
    pub frequencies: Option<Vec<Vec<f64>>>,
    /// Minimum per-dimension wrap-around separation between any two
    /// components; defaults to `2 pi / min_d M_d`.
    #[serde(default)]
    pub min_sep: Option<f64>,
}

/// Ground truth written alongside a simulated tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub frequencies: Vec<Vec<f64>>,
    pub weights: Vec<WeightJson>,
    pub nu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightJson {
    pub re: f64,
    pub im: f64,
}

/// A generated scenario: the noisy measurement, the clean signal it was built
/// from, and the ground truth.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub y: SpectralTensor,
    pub clean: SpectralTensor,
    pub truth: Truth,
}

impl Truth {
    pub fn weights_complex(&self) -> Vec<Complex64> {
        self.weights.iter().map(|w| Complex64::new(w.re, w.im)).collect()
    }
}

fn sample_frequencies(
    rng: &mut ChaCha8Rng,
    ndim: usize,
    k: usize,
    min_sep: f64,
) -> Result<Vec<Vec<f64>>> {
    if min_sep >= 2.0 * PI {
        return Err(Error::InvalidArgument(format!(
            "minimum separation {min_sep} exceeds the circle"
        )));
    }
    let mut freqs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0usize;
    while freqs.len() < k {
        attempts += 1;
        if attempts > MAX_REJECTION_ATTEMPTS {
            return Err(Error::InvalidArgument(format!(
                "could not place {k} frequencies with per-dimension separation {min_sep}"
            )));
        }
        let cand: Vec<f64> = (0..ndim).map(|_| rng.gen_range(-PI..PI)).collect();
        let ok = freqs
            .iter()
            .all(|f| f.iter().zip(&cand).all(|(&a, &b)| wrap_dist(a, b) >= min_sep));
        if ok {
            freqs.push(cand);
        }
    }
    Ok(freqs)
}

fn sample_weights(rng: &mut ChaCha8Rng, k: usize, model: WeightModel) -> Vec<Complex64> {
    match model {
        WeightModel::ComplexNormal => {
            let part = Normal::new(0.0, (0.5f64).sqrt()).unwrap();
            (0..k)
                .map(|_| Complex64::new(part.sample(rng), part.sample(rng)))
                .collect()
        }
        WeightModel::RandMagPhase => {
            let mag = Normal::new(1.0, 0.2f64.sqrt()).unwrap();
            (0..k)
                .map(|_| {
                    let m = mag.sample(rng);
                    let ph = rng.gen_range(-PI..PI);
                    Complex64::from_polar(m.abs(), if m < 0.0 { crate::tensor::wrap_angle(ph + PI) } else { ph })
                })
                .collect()
        }
    }
}

/// Generate a scenario deterministically from its config.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    let shape = Shape::new(cfg.dims.clone())?;
    let ndim = shape.ndim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frequencies = match &cfg.frequencies {
        Some(list) => {
            if list.len() != cfg.k {
                return Err(Error::InvalidArgument(format!(
                    "{} fixed frequencies given but k = {}",
                    list.len(),
                    cfg.k
                )));
            }
            if list.iter().any(|f| f.len() != ndim) {
                return Err(Error::DimensionMismatch(format!(
                    "fixed frequencies must have {ndim} angles each"
                )));
            }
            list.clone()
        }
        None => {
            let min_sep = cfg
                .min_sep
                .unwrap_or_else(|| 2.0 * PI / *cfg.dims.iter().min().unwrap() as f64);
            sample_frequencies(&mut rng, ndim, cfg.k, min_sep)?
        }
    };
    let weights = sample_weights(&mut rng, cfg.k, cfg.weight_model);
    let components: Vec<Component> = weights
        .iter()
        .zip(&frequencies)
        .map(|(&w, f)| Component::new(w, f.clone()))
        .collect();
    let clean = synthesize(&components, &shape)?;
    let nu = match cfg.snr_db {
        Some(snr) => {
            if clean.norm_sqr() == 0.0 {
                1.0 // pure-noise scenario: unit noise power by convention
            } else {
                snr_to_nu(&clean, snr)?
            }
        }
        None => 0.0,
    };
    let y = add_noise(&clean, nu, cfg.seed.wrapping_add(0x6e6f697365))?;
    let truth = Truth {
        frequencies: components.iter().map(|c| c.freq.clone()).collect(),
        weights: weights.iter().map(|w| WeightJson { re: w.re, im: w.im }).collect(),
        nu,
    };
    Ok(Scenario { y, clean, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> ScenarioConfig {
        ScenarioConfig {
            dims: vec![10, 10],
            k: 4,
            weight_model: WeightModel::ComplexNormal,
            snr_db: Some(20.0),
            seed: 42,
            frequencies: None,
            min_sep: None,
        }
    }

    #[test]
    fn deterministic_for_same_seed() {
        let a = generate(&base_cfg()).unwrap();
        let b = generate(&base_cfg()).unwrap();
        assert_eq!(a.y.data(), b.y.data());
        assert_eq!(a.truth.frequencies, b.truth.frequencies);
        let mut other = base_cfg();
        other.seed = 43;
        let c = generate(&other).unwrap();
        assert_ne!(a.y.data(), c.y.data());
    }

    #[test]
    fn separation_constraint_holds() {
        let mut cfg = base_cfg();
        cfg.k = 6;
        cfg.min_sep = Some(0.8);
        let sc = generate(&cfg).unwrap();
        for i in 0..6 {
            for j in i + 1..6 {
                for d in 0..2 {
                    let dist = wrap_dist(
                        sc.truth.frequencies[i][d],
                        sc.truth.frequencies[j][d],
                    );
                    assert!(dist >= 0.8, "pair ({i},{j}) dim {d}: {dist}");
                }
            }
        }
    }

    #[test]
    fn infeasible_separation_errors() {
        let mut cfg = base_cfg();
        cfg.k = 30;
        cfg.min_sep = Some(1.5);
        assert!(generate(&cfg).is_err());
        cfg.min_sep = Some(7.0);
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn fixed_frequencies_and_snr_calibration() {
        let mut cfg = base_cfg();
        cfg.frequencies = Some(vec![
            vec![0.94, 1.26],
            vec![1.26, -2.51],
            vec![1.89, 1.89],
            vec![-2.51, 1.57],
        ]);
        cfg.snr_db = Some(30.0);
        let sc = generate(&cfg).unwrap();
        assert_eq!(sc.truth.frequencies[2], vec![1.89, 1.89]);
        let snr = 10.0
            * (sc.clean.norm_sqr()
                / (sc.truth.nu * sc.clean.shape().len() as f64))
                .log10();
        assert!((snr - 30.0).abs() < 1e-9, "snr {snr}");
        // mismatched count rejected
        cfg.k = 3;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn pure_noise_and_noiseless() {
        let mut cfg = base_cfg();
        cfg.k = 0;
        let sc = generate(&cfg).unwrap();
        assert_eq!(sc.clean.norm_sqr(), 0.0);
        assert!(sc.y.norm_sqr() > 0.0);
        assert_eq!(sc.truth.nu, 1.0);

        let mut cfg = base_cfg();
        cfg.snr_db = None;
        let sc = generate(&cfg).unwrap();
        assert_eq!(sc.truth.nu, 0.0);
        assert_eq!(sc.y.data(), sc.clean.data());
    }

    #[test]
    fn weight_models_have_expected_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cn = sample_weights(&mut rng, 20_000, WeightModel::ComplexNormal);
        let mean_power: f64 = cn.iter().map(|w| w.norm_sqr()).sum::<f64>() / cn.len() as f64;
        assert!((mean_power - 1.0).abs() < 0.05, "CN power {mean_power}");

        let mp = sample_weights(&mut rng, 20_000, WeightModel::RandMagPhase);
        let mean_mag: f64 = mp.iter().map(|w| w.norm()).sum::<f64>() / mp.len() as f64;
        assert!((mean_mag - 1.0).abs() < 0.05, "magnitude mean {mean_mag}");
        let mean_phase: f64 = mp.iter().map(|w| w.arg()).sum::<f64>() / mp.len() as f64;
        assert!(mean_phase.abs() < 0.1, "phase mean {mean_phase}");
    }

    #[test]
    fn truth_round_trips_through_json() {
        let sc = generate(&base_cfg()).unwrap();
        let s = serde_json::to_string(&sc.truth).unwrap();
        let back: Truth = serde_json::from_str(&s).unwrap();
        assert_eq!(back.frequencies, sc.truth.frequencies);
        assert_eq!(back.weights_complex(), sc.truth.weights_complex());
    }
}
