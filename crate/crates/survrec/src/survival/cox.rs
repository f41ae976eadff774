//! Cox partial likelihood (Breslow ties) and the elastic-net penalized
//! fitter.
//!
//! The log-partial likelihood over risk sets `R_j` is
//! `LL = sum_j delta_j * (eta_j - log sum_{i in R_j} exp(eta_i))`.
//! Normalized times tie frequently, so tied event times are grouped and
//! each group contributes `s_j - d_j * log S_j` (Breslow).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Standardizer, SurvivalDataset};

/// Precomputed time ordering for repeated likelihood/gradient evaluation.
pub struct PartialLikelihood {
    /// Subject indices sorted by time descending.
    desc_order: Vec<usize>,
    /// Group boundaries (start, end) into `desc_order`; each group shares
    /// one time value.
    groups: Vec<(usize, usize)>,
    event: Vec<bool>,
    n_events: usize,
}

impl PartialLikelihood {
    pub fn new(time: &[f64], event: &[bool]) -> Result<PartialLikelihood> {
        assert_eq!(time.len(), event.len());
        let n_events = event.iter().filter(|&&e| e).count();
        if n_events == 0 {
            return Err(Error::NoEvents);
        }
        let mut desc_order: Vec<usize> = (0..time.len()).collect();
        desc_order.sort_by(|&a, &b| {
            time[b]
                .partial_cmp(&time[a])
                .expect("finite times")
                .then(a.cmp(&b))
        });
        let mut groups = Vec::new();
        let mut start = 0;
        while start < desc_order.len() {
            let t = time[desc_order[start]];
            let mut end = start + 1;
            while end < desc_order.len() && time[desc_order[end]] == t {
                end += 1;
            }
            groups.push((start, end));
            start = end;
        }
        Ok(PartialLikelihood {
            desc_order,
            groups,
            event: event.to_vec(),
            n_events,
        })
    }

    pub fn from_dataset(ds: &SurvivalDataset) -> Result<PartialLikelihood> {
        let t = ds.targets()?;
        PartialLikelihood::new(&t.time, &t.event)
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    /// Log-partial likelihood at the given linear predictors.
    pub fn loglik(&self, eta: &[f64]) -> f64 {
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut running = 0.0; // sum of exp(eta - shift) over {t_i >= current}
        let mut ll = 0.0;
        for &(start, end) in &self.groups {
            let mut d = 0usize;
            let mut s = 0.0;
            for &i in &self.desc_order[start..end] {
                running += (eta[i] - shift).exp();
                if self.event[i] {
                    d += 1;
                    s += eta[i];
                }
            }
            if d > 0 {
                ll += s - d as f64 * (shift + running.ln());
            }
        }
        ll
    }

    /// `d LL / d eta_i` for every subject: `delta_i - exp(eta_i) *
    /// sum_{T_j <= t_i} d_j / S_j`. This is the negative gradient of the
    /// boosting loss `-LL`, i.e. the residual a boosting stage fits.
    pub fn gradient(&self, eta: &[f64]) -> Vec<f64> {
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut running = 0.0;
        // d_j / S_j per group, in descending-time order.
        let mut hazard_steps = Vec::with_capacity(self.groups.len());
        for &(start, end) in &self.groups {
            let mut d = 0usize;
            for &i in &self.desc_order[start..end] {
                running += (eta[i] - shift).exp();
                if self.event[i] {
                    d += 1;
                }
            }
            hazard_steps.push(d as f64 / running);
        }
        // Ascending cumulative sum: subjects in group g (time T_g) are at
        // risk for every event time <= T_g, which is groups g..end in the
        // descending order.
        let mut suffix = vec![0.0; self.groups.len() + 1];
        for g in (0..self.groups.len()).rev() {
            suffix[g] = suffix[g + 1] + hazard_steps[g];
        }
        let mut grad = vec![0.0; eta.len()];
        for (g, &(start, end)) in self.groups.iter().enumerate() {
            let cumulative = suffix[g];
            for &i in &self.desc_order[start..end] {
                let delta = if self.event[i] { 1.0 } else { 0.0 };
                grad[i] = delta - (eta[i] - shift).exp() * cumulative;
            }
        }
        grad
    }
}

/// Log-partial likelihood of a dataset at given per-row predictor values.
pub fn cox_partial_loglik(ds: &SurvivalDataset, linear_predictor: &[f64]) -> Result<f64> {
    if linear_predictor.len() != ds.n_rows() {
        return Err(Error::ShapeMismatch {
            expected: ds.n_rows(),
            got: linear_predictor.len(),
        });
    }
    Ok(PartialLikelihood::from_dataset(ds)?.loglik(linear_predictor))
}

/// Log-partial likelihood at coefficients `beta` (predictor `X beta`).
pub fn cox_partial_loglik_at(ds: &SurvivalDataset, beta: &[f64]) -> Result<f64> {
    if beta.len() != ds.n_features() {
        return Err(Error::ShapeMismatch {
            expected: ds.n_features(),
            got: beta.len(),
        });
    }
    let eta: Vec<f64> =
        ds.x.rows()
            .into_iter()
            .map(|row| row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum())
            .collect();
    cox_partial_loglik(ds, &eta)
}

/// Per-row derivative of the log-partial likelihood in the linear
/// predictors (the boosting residual).
pub fn cox_gradient(ds: &SurvivalDataset, linear_predictor: &[f64]) -> Result<Vec<f64>> {
    if linear_predictor.len() != ds.n_rows() {
        return Err(Error::ShapeMismatch {
            expected: ds.n_rows(),
            got: linear_predictor.len(),
        });
    }
    Ok(PartialLikelihood::from_dataset(ds)?.gradient(linear_predictor))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoxNetModel {
    pub beta: Vec<f64>,
    pub standardizer: Standardizer,
    pub converged: bool,
    pub iterations: usize,
}

impl CoxNetModel {
    pub fn linear_predictor(&self, x: &Array2<f64>) -> Vec<f64> {
        let z = self.standardizer.apply(x);
        z.rows()
            .into_iter()
            .map(|row| row.iter().zip(self.beta.iter()).map(|(v, b)| v * b).sum())
            .collect()
    }
}

const COXNET_MAX_ITER: usize = 1000;
const COXNET_TOL: f64 = 1e-7;

/// Maximize `LL(beta) - alpha * (r |beta|_1 + (1-r)/2 |beta|_2^2)` by
/// proximal gradient ascent with backtracking. Features are standardized
/// internally; the fitted scaler travels with the model. A fit that hits
/// the iteration cap is flagged, not failed.
pub(super) fn fit_coxnet(ds: &SurvivalDataset, alpha: f64, r: f64) -> Result<CoxNetModel> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Parameter("alpha must be > 0".to_string()));
    }
    if !(0.0 < r && r < 1.0) {
        return Err(Error::Parameter("r must be in (0, 1)".to_string()));
    }
    let standardizer = Standardizer::fit(&ds.x);
    let z = standardizer.apply(&ds.x);
    let p = ds.n_features();
    let n = ds.n_rows();
    let pl = PartialLikelihood::from_dataset(ds)?;

    let l1 = alpha * r;
    let l2 = alpha * (1.0 - r);

    // Minimize f(beta) = -LL + l2/2 |beta|^2 (smooth) + l1 |beta|_1.
    let eta_of = |beta: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| z.row(i).iter().zip(beta.iter()).map(|(x, b)| x * b).sum())
            .collect()
    };
    let smooth = |beta: &[f64], eta: &[f64]| -> f64 {
        -pl.loglik(eta) + 0.5 * l2 * beta.iter().map(|b| b * b).sum::<f64>()
    };
    let smooth_grad = |beta: &[f64], eta: &[f64]| -> Vec<f64> {
        let g_eta = pl.gradient(eta);
        (0..p)
            .map(|j| {
                let mut g = l2 * beta[j];
                for i in 0..n {
                    g -= z[[i, j]] * g_eta[i];
                }
                g
            })
            .collect()
    };

    let mut beta = vec![0.0; p];
    let mut eta = vec![0.0; n];
    let mut f_val = smooth(&beta, &eta);
    let mut step = 1.0 / (n as f64).max(1.0);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..COXNET_MAX_ITER {
        iterations = iter + 1;
        let grad = smooth_grad(&beta, &eta);
        // Backtracking proximal step.
        let mut candidate;
        let mut candidate_eta;
        let mut candidate_f;
        loop {
            candidate = (0..p)
                .map(|j| soft_threshold(beta[j] - step * grad[j], step * l1))
                .collect::<Vec<f64>>();
            candidate_eta = eta_of(&candidate);
            candidate_f = smooth(&candidate, &candidate_eta);
            // Quadratic upper-bound check for the chosen step size.
            let mut bound = f_val;
            let mut dist_sq = 0.0;
            for j in 0..p {
                let d = candidate[j] - beta[j];
                bound += grad[j] * d;
                dist_sq += d * d;
            }
            bound += dist_sq / (2.0 * step);
            if candidate_f <= bound + 1e-12 || step < 1e-14 {
                break;
            }
            step *= 0.5;
        }
        let max_change = beta
            .iter()
            .zip(candidate.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = candidate;
        eta = candidate_eta;
        f_val = candidate_f;
        // Allow the step to grow back so one conservative iteration does
        // not pin the rate.
        step *= 1.5;
        if max_change < COXNET_TOL {
            converged = true;
            break;
        }
    }

    Ok(CoxNetModel {
        beta,
        standardizer,
        converged,
        iterations,
    })
}

fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

/// Penalized objective `LL - alpha (r |b|_1 + (1-r)/2 |b|^2)` on the
/// standardized scale, for ascent checks.
#[cfg(test)]
pub(super) fn coxnet_objective(
    ds: &SurvivalDataset,
    model: &CoxNetModel,
    alpha: f64,
    r: f64,
    beta: &[f64],
) -> Result<f64> {
    let z = model.standardizer.apply(&ds.x);
    let eta: Vec<f64> = z
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum())
        .collect();
    let pl = PartialLikelihood::from_dataset(ds)?;
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    Ok(pl.loglik(&eta) - alpha * (r * l1 + (1.0 - r) / 2.0 * l2))
}
