//! Control variable from a quantile-regression process of the treatment on
//! the instrument basis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{BasisSpec, Dataset};
use crate::error::{Error, Result};
use crate::qr_solver::{
    fit_process, trimmed_grid, CheckLossProblem, QuantileProcess, SolverConfig,
};

/// Trimming and mesh settings shared by both quantile-process stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOptions {
    pub epsilon: f64,
    pub grid_size: usize,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl Default for StageOptions {
    fn default() -> Self {
        StageOptions {
            epsilon: 0.01,
            grid_size: 599,
            solver: SolverConfig::default(),
        }
    }
}

impl StageOptions {
    pub fn new(epsilon: f64, grid_size: usize) -> Self {
        StageOptions {
            epsilon,
            grid_size,
            ..Default::default()
        }
    }
}

/// `ε + (1 − 2ε)/T · #{t : prediction_t ≤ value}`, the left Riemann sum of
/// the trimmed indicator integral over a mesh of `T` levels.
pub(crate) fn indicator_integral(predictions: &[f64], value: f64, epsilon: f64) -> f64 {
    let count = predictions.iter().filter(|q| **q <= value).count();
    let value = epsilon + (1.0 - 2.0 * epsilon) * count as f64 / predictions.len() as f64;
    value.min(1.0 - epsilon)
}

/// Replaces solver column indices with basis term names.
pub(crate) fn name_columns(err: Error, stage: &str, names: &[String]) -> Error {
    match err {
        Error::RankDeficient { columns, .. } => Error::RankDeficient {
            stage: stage.into(),
            columns: columns
                .into_iter()
                .map(|c| match c.parse::<usize>() {
                    Ok(j) if j < names.len() => names[j].clone(),
                    _ => c,
                })
                .collect(),
        },
        Error::AtLevel { level, source } => Error::AtLevel {
            level,
            source: Box::new(name_columns(*source, stage, names)),
        },
        other => other,
    }
}

pub(crate) fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} weights for {n} observations",
                w.len()
            )));
        }
    }
    Ok(())
}

/// Fitted process `π̂(v)` of `X` on `s(z̃) ⊗ r(z1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageFit {
    process: QuantileProcess,
    epsilon: f64,
    basis: BasisSpec,
}

pub fn fit_first_stage(
    data: &Dataset,
    basis: &BasisSpec,
    epsilon: f64,
    grid_size: usize,
) -> Result<FirstStageFit> {
    FirstStageFit::fit(data, basis, &StageOptions::new(epsilon, grid_size), None)
}

impl FirstStageFit {
    /// Fits the process on the trimmed mesh, optionally with observation
    /// weights (used by the bootstrap).
    pub fn fit(
        data: &Dataset,
        basis: &BasisSpec,
        options: &StageOptions,
        weights: Option<&[f64]>,
    ) -> Result<Self> {
        basis.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        check_weights(weights, data.n())?;
        let grid = trimmed_grid(options.epsilon, options.grid_size)?;
        let k = basis.first_stage_dim();
        let mut design = Vec::with_capacity(data.n() * k);
        for i in 0..data.n() {
            design.extend(basis.first_stage_row(data.z[i], data.z1[i])?);
        }
        let mut problem = CheckLossProblem::from_row_major(data.x.clone(), design, k, 0.5)?;
        if let Some(w) = weights {
            problem = problem.with_weights(w.to_vec())?;
        }
        let process = fit_process(&problem, &grid, &options.solver)
            .map_err(|e| name_columns(e, "first stage", &basis.first_stage_names()))?;
        Ok(FirstStageFit {
            process,
            epsilon: options.epsilon,
            basis: basis.clone(),
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

    /// Predicted conditional quantiles `π̂(v_t)′[s(z̃) ⊗ r(z1)]` over the mesh.
    pub fn predicted_quantiles(&self, z: f64, z1: f64) -> Result<Vec<f64>> {
        Ok(self
            .process
            .predict_all(&self.basis.first_stage_row(z, z1)?))
    }

    /// `F̂_{X|Z}(x | z̃, z1)`, always inside `[ε, 1 − ε]`.
    pub fn control_value(&self, x: f64, z: f64, z1: f64) -> Result<f64> {
        if !(x.is_finite() && z.is_finite() && z1.is_finite()) {
            return Err(Error::InvalidInput(
                "non-finite control-value argument".into(),
            ));
        }
        let q = self.predicted_quantiles(z, z1)?;
        Ok(indicator_integral(&q, x, self.epsilon))
    }

    /// Control values `V̂ᵢ` for every observation.
    pub fn control_values(&self, data: &Dataset) -> Result<Vec<f64>> {
        (0..data.n())
            .into_par_iter()
            .map(|i| self.control_value(data.x[i], data.z[i], data.z1[i]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Term;

    fn data(x: Vec<f64>, z: Vec<f64>) -> Dataset {
        let n = x.len();
        Dataset::new(vec![0.0; n], x, z, vec![0.0; n]).unwrap()
    }

    fn constant_basis() -> BasisSpec {
        BasisSpec {
            s: vec![Term::Constant],
            ..BasisSpec::default()
        }
    }

    #[test]
    fn perfect_fit_recovers_identity_map() {
        let z: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let fit = fit_first_stage(&data(z.clone(), z), &BasisSpec::default(), 0.01, 25).unwrap();
        for t in 0..25 {
            let c = fit.process().coefficients(t);
            assert!(c[0].abs() < 1e-10 && (c[1] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_basis_gives_sample_quantiles() {
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let fit =
            fit_first_stage(&data(x.clone(), vec![0.0; 9]), &constant_basis(), 0.05, 11).unwrap();
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        for (t, &v) in fit.process().levels().iter().enumerate() {
            let c = fit.process().coefficients(t)[0];
            let below = sorted.iter().filter(|s| **s < c).count() as f64 / 9.0;
            let upto = sorted.iter().filter(|s| **s <= c).count() as f64 / 9.0;
            assert!(below <= v + 1e-12 && v <= upto + 1e-12);
        }
    }

    #[test]
    fn control_value_range_and_extremes() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let fit =
            fit_first_stage(&data(x.clone(), vec![0.0; 50]), &constant_basis(), 0.01, 99).unwrap();
        assert_eq!(fit.control_value(-1.0, 0.0, 0.0).unwrap(), 0.01);
        assert_eq!(fit.control_value(1e6, 0.0, 0.0).unwrap(), 1.0 - 0.01);
        for v in fit.control_values(&data(x, vec![0.0; 50])).unwrap() {
            assert!((0.01..=0.99).contains(&v));
        }
        assert!(fit.control_value(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn collinear_instrument_is_named() {
        let basis = BasisSpec {
            s: vec![Term::Constant, Term::Identity],
            ..BasisSpec::default()
        };
        let err =
            fit_first_stage(&data(vec![1.0, 2.0, 3.0], vec![2.0; 3]), &basis, 0.1, 5).unwrap_err();
        match err {
            Error::RankDeficient { stage, columns } => {
                assert_eq!(stage, "first stage");
                assert_eq!(columns, vec!["z".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn indicator_integral_counts() {
        let q = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(indicator_integral(&q, 0.0, 0.1), 0.1);
        assert!((indicator_integral(&q, 2.0, 0.1) - 0.5).abs() < 1e-15);
        assert!((indicator_integral(&q, 9.0, 0.1) - 0.9).abs() < 1e-15);
    }
}
