//! Control regression: quantile-regression process of the outcome on
//! `w = p(x) ⊗ r(z1) ⊗ q(v̂)`.

use serde::{Deserialize, Serialize};

use crate::design::{BasisSpec, Dataset};
use crate::error::{Error, Result};
use crate::first_stage::{check_weights, indicator_integral, name_columns, StageOptions};
use crate::qr_solver::{fit_process, trimmed_grid, CheckLossProblem, QuantileProcess};

/// Fitted process `β̂(u)` of `Y` on `w(X, Z1, V̂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondStageFit {
    process: QuantileProcess,
    epsilon: f64,
    basis: BasisSpec,
}

pub fn fit_second_stage(
    data: &Dataset,
    v_hat: &[f64],
    basis: &BasisSpec,
    epsilon: f64,
    grid_size: usize,
) -> Result<SecondStageFit> {
    SecondStageFit::fit(
        data,
        v_hat,
        basis,
        &StageOptions::new(epsilon, grid_size),
        None,
    )
}

impl SecondStageFit {
    pub fn fit(
        data: &Dataset,
        v_hat: &[f64],
        basis: &BasisSpec,
        options: &StageOptions,
        weights: Option<&[f64]>,
    ) -> Result<Self> {
        basis.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        if v_hat.len() != data.n() {
            return Err(Error::InvalidInput(format!(
                "{} control values for {} observations",
                v_hat.len(),
                data.n()
            )));
        }
        check_weights(weights, data.n())?;
        let grid = trimmed_grid(options.epsilon, options.grid_size)?;
        let k = basis.second_stage_dim();
        let mut design = Vec::with_capacity(data.n() * k);
        for i in 0..data.n() {
            design.extend(basis.second_stage_row(data.x[i], data.z1[i], v_hat[i])?);
        }
        let mut problem = CheckLossProblem::from_row_major(data.y.clone(), design, k, 0.5)?;
        if let Some(w) = weights {
            problem = problem.with_weights(w.to_vec())?;
        }
        let process = fit_process(&problem, &grid, &options.solver)
            .map_err(|e| name_columns(e, "second stage", &basis.second_stage_names()))?;
        Ok(SecondStageFit {
            process,
            epsilon: options.epsilon,
            basis: basis.clone(),
        })
    }

    /// Wraps an already fitted process, e.g. one assembled by hand in tests.
    pub fn from_process(process: QuantileProcess, epsilon: f64, basis: BasisSpec) -> Result<Self> {
        basis.validate()?;
        if process.dim() != basis.second_stage_dim() {
            return Err(Error::InvalidInput(format!(
                "process has {} coefficients, basis needs {}",
                process.dim(),
                basis.second_stage_dim()
            )));
        }
        Ok(SecondStageFit {
            process,
            epsilon,
            basis,
        })
    }

    pub fn process(&self) -> &QuantileProcess {
        &self.process
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    /// Predicted conditional quantiles `β̂(u_t)′w(x, z1, v)` over the mesh.
    pub fn predicted_quantiles(&self, x: f64, z1: f64, v: f64) -> Result<Vec<f64>> {
        Ok(self
            .process
            .predict_all(&self.basis.second_stage_row(x, z1, v)?))
    }

    /// `F̂_{Y|X,Z1,V}(y | x, z1, v)`, always inside `[ε, 1 − ε]`.
    pub fn crf_distribution(&self, y: f64, x: f64, z1: f64, v: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::InvalidInput("non-finite outcome value".into()));
        }
        let q = self.predicted_quantiles(x, z1, v)?;
        Ok(indicator_integral(&q, y, self.epsilon))
    }

    /// Trimmed conditional mean: the trapezoidal average of `β̂(u)′w` over
    /// `[ε, 1 − ε]`, so the excluded tail mass `2ε` is not extrapolated.
    pub fn mean_from_quantiles(&self, x: f64, z1: f64, v: f64) -> Result<f64> {
        let q = self.predicted_quantiles(x, z1, v)?;
        let u = self.process.levels();
        if q.len() == 1 {
            return Ok(q[0]);
        }
        let mut area = 0.0;
        for t in 1..q.len() {
            area += 0.5 * (q[t] + q[t - 1]) * (u[t] - u[t - 1]);
        }
        Ok(area / (u[u.len() - 1] - u[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Term;
    use crate::qr_solver::QuantileFit;

    fn basis_x() -> BasisSpec {
        BasisSpec {
            p: vec![Term::Constant, Term::Identity],
            q: vec![Term::Constant],
            r: vec![Term::Constant],
            s: vec![Term::Constant],
        }
    }

    fn hand_process(levels: &[f64], coef: impl Fn(f64) -> Vec<f64>) -> QuantileProcess {
        QuantileProcess::new(
            levels
                .iter()
                .map(|&u| QuantileFit {
                    coefficients: coef(u),
                    objective: 0.0,
                    level: u,
                    converged: true,
                    basis: vec![],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_outcome_recovers_coefficients() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.71).cos() * 3.0).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 - 0.5 * x).collect();
        let n = x.len();
        let data = Dataset::new(y, x, vec![0.0; n], vec![0.0; n]).unwrap();
        let fit = fit_second_stage(&data, &vec![0.5; n], &basis_x(), 0.01, 21).unwrap();
        for t in 0..21 {
            let c = fit.process().coefficients(t);
            assert!((c[0] - 2.0).abs() < 1e-10 && (c[1] + 0.5).abs() < 1e-10);
            assert!(fit.process().fits()[t].objective < 1e-10);
        }
        assert!((fit.mean_from_quantiles(1.0, 0.0, 0.5).unwrap() - 1.5).abs() < 1e-10);
    }

    #[test]
    fn identity_process_inverts_to_uniform_cdf() {
        let eps = 0.01;
        let levels = trimmed_grid(eps, 99).unwrap();
        let basis = BasisSpec {
            p: vec![Term::Constant],
            q: vec![Term::Constant],
            r: vec![Term::Constant],
            s: vec![Term::Constant],
        };
        let fit =
            SecondStageFit::from_process(hand_process(&levels, |u| vec![u]), eps, basis).unwrap();
        assert_eq!(fit.crf_distribution(-1.0, 0.0, 0.0, 0.5).unwrap(), eps);
        for y in [0.05, 0.3, 0.5, 0.77, 0.95] {
            let f = fit.crf_distribution(y, 0.0, 0.0, 0.5).unwrap();
            assert!(
                (f - y).abs() <= (1.0 - 2.0 * eps) / 99.0 + 1e-12,
                "y={y} f={f}"
            );
        }
        assert!((fit.mean_from_quantiles(0.0, 0.0, 0.5).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let data = Dataset::new(
            vec![1.0; 3],
            vec![1.0, 2.0, 3.0],
            vec![0.0; 3],
            vec![0.0; 3],
        )
        .unwrap();
        assert!(fit_second_stage(&data, &[0.5; 2], &basis_x(), 0.01, 5).is_err());
        let mut b = basis_x();
        b.q = vec![Term::Constant, Term::InverseNormal];
        assert!(matches!(
            fit_second_stage(&data, &[0.5, 0.0, 0.5], &b, 0.01, 5),
            Err(Error::Domain(_))
        ));
    }
}
