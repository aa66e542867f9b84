//! Evaluation metrics: reconstruction NMSE, permutation-matched wrap-around
//! frequency MSE, and Monte-Carlo aggregates.

use crate::error::{Error, Result};
use crate::tensor::{wrap_angle, SpectralTensor};

/// dB floor reported instead of -inf for exact matches.
pub const DB_FLOOR: f64 = -300.0;

/// One Monte-Carlo trial. `freq_mse_db` is present iff the model order was
/// recovered exactly.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub k_true: usize,
    pub k_hat: usize,
    pub nmse_db: f64,
    pub freq_mse_db: Option<f64>,
    pub runtime_s: f64,
    pub iterations: usize,
}

/// Aggregate over a set of trials.
#[derive(Debug, Clone)]
pub struct Summary {
    pub n_trials: usize,
    pub p_correct: f64,
    pub mean_freq_mse_db: Option<f64>,
    pub mean_nmse_db: f64,
    pub mean_runtime_s: f64,
    pub mean_iterations: f64,
}

fn to_db_floored(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        DB_FLOOR
    } else {
        (10.0 * ratio.log10()).max(DB_FLOOR)
    }
}

/// `10 log10(||X_hat - X||_F^2 / ||X||_F^2)`, floored at -300 dB.
pub fn nmse_db(x_hat: &SpectralTensor, x_true: &SpectralTensor) -> Result<f64> {
    let ref_power = x_true.norm_sqr();
    if ref_power == 0.0 {
        return Err(Error::InvalidArgument("NMSE undefined for zero reference".into()));
    }
    let err = x_hat.sub(x_true)?.norm_sqr();
    Ok(to_db_floored(err / ref_power))
}

/// Wrap-around circular distance `min_n |a - b + 2 pi n|`, in `[0, pi]`.
pub fn wrap_dist(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

fn pair_cost(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| wrap_dist(x, y).powi(2)).sum()
}

/// Minimum-cost one-to-one assignment (Hungarian algorithm with potentials,
/// O(n^3)). `assign[i]` is the column matched to row `i`.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based potentials formulation
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row assigned to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Optimal one-to-one matching of estimated to true frequency vectors under
/// total squared wrap-around distance. `result[i]` indexes `truth` for `est[i]`.
pub fn match_frequencies(est: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<usize>> {
    if est.is_empty() || truth.is_empty() {
        return Err(Error::InvalidArgument("empty frequency list".into()));
    }
    if est.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates vs {} truths",
            est.len(),
            truth.len()
        )));
    }
    let cost: Vec<Vec<f64>> = est.iter().map(|e| truth.iter().map(|t| pair_cost(e, t)).collect()).collect();
    Ok(hungarian(&cost))
}

/// Permutation-matched frequency MSE in dB, averaged over all `K * D` scalar
/// errors and floored at -300 dB.
pub fn freq_mse_db(est: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    let assign = match_frequencies(est, truth)?;
    let d = est[0].len();
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| pair_cost(&est[i], &truth[j])).sum();
    Ok(to_db_floored(total / (est.len() * d) as f64))
}

/// `P(K_hat = K)`, conditional mean frequency MSE, mean NMSE and runtime stats.
pub fn aggregate(trials: &[TrialOutcome]) -> Result<Summary> {
    if trials.is_empty() {
        return Err(Error::InvalidArgument("no trials to aggregate".into()));
    }
    let n = trials.len() as f64;
    let correct: Vec<&TrialOutcome> = trials.iter().filter(|t| t.k_hat == t.k_true).collect();
    let mean_freq = if correct.is_empty() {
        None
    } else {
        Some(
            correct.iter().filter_map(|t| t.freq_mse_db).sum::<f64>() / correct.len() as f64,
        )
    };
    Ok(Summary {
        n_trials: trials.len(),
        p_correct: correct.len() as f64 / n,
        mean_freq_mse_db: mean_freq,
        mean_nmse_db: trials.iter().map(|t| t.nmse_db).sum::<f64>() / n,
        mean_runtime_s: trials.iter().map(|t| t.runtime_s).sum::<f64>() / n,
        mean_iterations: trials.iter().map(|t| t.iterations as f64).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{synthesize, Component, Shape, SpectralTensor};
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn nmse_values() {
        let s = Shape::new(vec![4, 4]).unwrap();
        let x = synthesize(
            &[Component::new(Complex64::new(1.0, 0.0), vec![0.3, 0.8])],
            &s,
        )
        .unwrap();
        assert_eq!(nmse_db(&x, &x).unwrap(), DB_FLOOR);
        let zero = SpectralTensor::zeros(s.clone());
        assert_relative_eq!(nmse_db(&zero, &x).unwrap(), 0.0, epsilon = 1e-12);
        let mut twice = x.clone();
        twice.scaled_add(Complex64::new(1.0, 0.0), &x).unwrap();
        assert_relative_eq!(nmse_db(&twice, &x).unwrap(), 0.0, epsilon = 1e-12);
        assert!(nmse_db(&x, &zero).is_err());
    }

    #[test]
    fn wrap_dist_values() {
        assert_relative_eq!(wrap_dist(PI - 0.1, -PI + 0.1), 0.2, epsilon = 1e-12);
        assert_eq!(wrap_dist(1.3, 1.3), 0.0);
        assert_relative_eq!(wrap_dist(0.0, PI), PI, epsilon = 1e-12);
    }

    #[test]
    fn matching_recovers_permutation() {
        let truth = vec![vec![0.1, -2.0], vec![1.5, 0.3], vec![-2.8, 2.9]];
        let est = vec![truth[2].clone(), truth[0].clone(), truth[1].clone()];
        let assign = match_frequencies(&est, &truth).unwrap();
        assert_eq!(assign, vec![2, 0, 1]);
        assert_eq!(freq_mse_db(&est, &truth).unwrap(), DB_FLOOR);

        let one = vec![vec![0.5]];
        assert_eq!(match_frequencies(&one, &one).unwrap(), vec![0]);
        assert!(match_frequencies(&one, &truth).is_err());
    }

    #[test]
    fn swapped_pair_beats_identity() {
        // exhaustive 3! oracle: optimal cost below identity cost
        let truth = vec![vec![0.0], vec![1.0], vec![2.0]];
        let est = vec![vec![1.01], vec![0.02], vec![2.05]];
        let assign = match_frequencies(&est, &truth).unwrap();
        let opt: f64 = assign.iter().enumerate().map(|(i, &j)| pair_cost(&est[i], &truth[j])).sum();
        let ident: f64 = (0..3).map(|i| pair_cost(&est[i], &truth[i])).sum();
        // exhaustive check over all 6 permutations
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|p| (0..3).map(|i| pair_cost(&est[i], &truth[p[i]])).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(opt, best, epsilon = 1e-12);
        assert!(opt < ident);
    }

    #[test]
    fn freq_mse_log_arithmetic() {
        let est = vec![vec![1e-3]];
        let truth = vec![vec![0.0]];
        assert_relative_eq!(freq_mse_db(&est, &truth).unwrap(), -60.0, epsilon = 1e-9);
    }

    #[test]
    fn aggregate_cases() {
        let mk = |k_hat: usize, mse: Option<f64>| TrialOutcome {
            k_true: 3,
            k_hat,
            nmse_db: -20.0,
            freq_mse_db: mse,
            runtime_s: 0.5,
            iterations: 10,
        };
        let all = vec![mk(3, Some(-50.0)); 4];
        let s = aggregate(&all).unwrap();
        assert_eq!(s.p_correct, 1.0);
        assert_eq!(s.mean_freq_mse_db, Some(-50.0));

        let none = vec![mk(2, None); 4];
        let s = aggregate(&none).unwrap();
        assert_eq!(s.p_correct, 0.0);
        assert_eq!(s.mean_freq_mse_db, None);

        let mut mixed = vec![mk(3, Some(-40.0)); 7];
        mixed.extend(vec![mk(1, None); 3]);
        let s = aggregate(&mixed).unwrap();
        assert_relative_eq!(s.p_correct, 0.7, epsilon = 1e-12);
        assert_relative_eq!(s.mean_freq_mse_db.unwrap(), -40.0, epsilon = 1e-12);

        assert!(aggregate(&[]).is_err());
    }

    proptest! {
        #[test]
        fn wrap_dist_is_a_metric(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0) {
            prop_assert!((wrap_dist(a, b) - wrap_dist(b, a)).abs() < 1e-12);
            prop_assert!(wrap_dist(a, b) >= 0.0 && wrap_dist(a, b) <= PI + 1e-12);
            prop_assert!(wrap_dist(a, c) <= wrap_dist(a, b) + wrap_dist(b, c) + 1e-9);
        }

        #[test]
        fn matching_beats_identity(
            pts in prop::collection::vec(prop::collection::vec(-PI..PI, 2), 2..6),
            noise in prop::collection::vec(-0.5f64..0.5, 12),
        ) {
            let truth = pts.clone();
            let est: Vec<Vec<f64>> = pts.iter().enumerate()
                .map(|(i, p)| p.iter().enumerate().map(|(d, &x)| x + noise[(2*i + d) % noise.len()]).collect())
                .collect();
            let assign = match_frequencies(&est, &truth).unwrap();
            let opt: f64 = assign.iter().enumerate().map(|(i, &j)| pair_cost(&est[i], &truth[j])).sum();
            let ident: f64 = (0..truth.len()).map(|i| pair_cost(&est[i], &truth[i])).sum();
            prop_assert!(opt <= ident + 1e-9);
        }

        #[test]
        fn mse_permutation_invariant(
            pts in prop::collection::vec(prop::collection::vec(-PI..PI, 2), 3..6),
        ) {
            let truth = pts.clone();
            let mut est = pts.clone();
            est.rotate_left(1);
            let a = freq_mse_db(&est, &truth).unwrap();
            let mut truth2 = truth.clone();
            truth2.rotate_right(1);
            let b = freq_mse_db(&est, &truth2).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
