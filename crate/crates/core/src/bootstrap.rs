//! Weighted bootstrap with uniform (max-t) bands over the evaluation region.
//!
//! Each replication draws i.i.d. unit-mean weights, refits both quantile
//! processes with the weighted check loss and retabulates the structural
//! functions on the point estimate's region and outcome mesh. The band at
//! grid point `j` is `θ̂_j ± c · s_j`, with `s_j` the bootstrap IQR / 1.349
//! and `c` the `level`-quantile of `max_j |θ*_j − θ̂_j| / s_j`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Dataset;
use crate::error::{Error, Result};
use crate::structural::{
    Bands, Kind, Pipeline, PipelineConfig, Region, StructuralEstimates, StructuralFunctionEstimate,
};

/// Normal-consistent IQR scale factor.
const IQR_TO_SD: f64 = 1.349;
/// Largest tolerated share of failed replications.
pub const MAX_FAILED_SHARE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    /// Standard exponential: unit mean and unit variance.
    #[default]
    Exponential,
    /// Every weight equal to one. Replications reproduce the point estimate.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub level: f64,
    pub weight_law: WeightLaw,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: 250,
            level: 0.90,
            weight_law: WeightLaw::Exponential,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidInput(format!(
                "bootstrap needs at least 2 replications, got {}",
                self.replications
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "band level must lie in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }

    /// Weights of replication `rep`. Each replication reads its own stream
    /// of the seeded generator, so draws do not depend on scheduling.
    pub fn weights(&self, rep: usize, n: usize) -> Vec<f64> {
        match self.weight_law {
            WeightLaw::Unit => vec![1.0; n],
            WeightLaw::Exponential => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(rep as u64);
                (0..n).map(|_| Exp1.sample(&mut rng)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplication {
    pub replication: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub kind: Kind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    /// Point estimates with bands attached.
    pub estimates: StructuralEstimates,
    pub critical_values: Vec<CriticalValue>,
    /// Successful replications, in replication order.
    pub draws: Vec<StructuralEstimates>,
    pub failed: Vec<FailedReplication>,
}

impl BootstrapOutcome {
    /// Rebuilds the bands at another level from the stored draws.
    pub fn at_level(&self, level: f64) -> Result<StructuralEstimates> {
        let mut estimates = self.estimates.clone();
        for kind in [Kind::Dsf, Kind::Qsf, Kind::Asf] {
            let draws: Vec<&StructuralFunctionEstimate> =
                self.draws.iter().map(|d| d.get(kind)).collect();
            let (bands, _) = uniform_bands(estimates.get(kind), &draws, level)?;
            estimates.get_mut(kind).bands = Some(bands);
        }
        Ok(estimates)
    }
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], t: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * t;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Symmetric max-t band around `point` from bootstrap `draws`. Grid points
/// whose bootstrap IQR is zero are left out of the max-t statistic and get
/// the band `θ̂ ± max |θ* − θ̂|` instead.
pub fn uniform_bands(
    point: &StructuralFunctionEstimate,
    draws: &[&StructuralFunctionEstimate],
    level: f64,
) -> Result<(Bands, f64)> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no bootstrap draws".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "band level must lie in (0, 1), got {level}"
        )));
    }
    let theta: Vec<f64> = point.values.iter().flatten().copied().collect();
    let flat: Vec<Vec<f64>> = draws
        .iter()
        .map(|d| d.values.iter().flatten().copied().collect::<Vec<f64>>())
        .collect();
    if flat.iter().any(|d| d.len() != theta.len()) {
        return Err(Error::InvalidInput(
            "bootstrap draw shape differs from the point estimate".into(),
        ));
    }
    let mut scale = vec![0.0; theta.len()];
    let mut spread = vec![0.0f64; theta.len()];
    for j in 0..theta.len() {
        let mut column: Vec<f64> = flat.iter().map(|d| d[j]).collect();
        column.sort_by(f64::total_cmp);
        scale[j] = (quantile_sorted(&column, 0.75) - quantile_sorted(&column, 0.25)) / IQR_TO_SD;
        spread[j] = column
            .iter()
            .map(|v| (v - theta[j]).abs())
            .fold(0.0, f64::max);
    }
    let mut stats: Vec<f64> = flat
        .iter()
        .map(|d| {
            (0..theta.len())
                .filter(|&j| scale[j] > 0.0)
                .map(|j| (d[j] - theta[j]).abs() / scale[j])
                .fold(0.0, f64::max)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let rank = ((level * stats.len() as f64).ceil() as usize).clamp(1, stats.len());
    let critical = stats[rank - 1];
    let half: Vec<f64> = (0..theta.len())
        .map(|j| {
            if scale[j] > 0.0 {
                critical * scale[j]
            } else {
                spread[j]
            }
        })
        .collect();
    let width = point.values.first().map_or(0, Vec::len);
    let shape = |sign: f64| -> Vec<Vec<f64>> {
        let flat: Vec<f64> = theta.iter().zip(&half).map(|(t, h)| t + sign * h).collect();
        if width == 0 {
            return vec![Vec::new(); point.values.len()];
        }
        flat.chunks(width).map(<[f64]>::to_vec).collect()
    };
    Ok((
        Bands {
            level,
            lower: shape(-1.0),
            upper: shape(1.0),
        },
        critical,
    ))
}

/// Point estimate plus weighted-bootstrap uniform bands for all three
/// structural functions on `region`.
pub fn run_bootstrap(
    data: &Dataset,
    config: &PipelineConfig,
    region: &Region,
    boot: &BootstrapConfig,
) -> Result<BootstrapOutcome> {
    boot.validate()?;
    let point = Pipeline::fit(data, config)?;
    let mesh = point.mesh().clone();
    let mut estimates = point.evaluate_on(region, &mesh)?;

    let results: Vec<Result<StructuralEstimates>> = (0..boot.replications)
        .into_par_iter()
        .map(|rep| {
            let w = boot.weights(rep, data.n());
            Pipeline::fit_weighted(data, config, Some(&w))?.evaluate_on(region, &mesh)
        })
        .collect();
    let mut draws = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(d) => draws.push(d),
            Err(e) => failed.push(FailedReplication {
                replication: rep,
                error: e.to_string(),
            }),
        }
    }
    if failed.len() as f64 > MAX_FAILED_SHARE * boot.replications as f64 || draws.is_empty() {
        return Err(Error::Bootstrap {
            failed: failed.len(),
            total: boot.replications,
        });
    }

    let mut critical_values = Vec::new();
    for kind in [Kind::Dsf, Kind::Qsf, Kind::Asf] {
        let kind_draws: Vec<&StructuralFunctionEstimate> =
            draws.iter().map(|d| d.get(kind)).collect();
        let (bands, value) = uniform_bands(estimates.get(kind), &kind_draws, boot.level)?;
        estimates.get_mut(kind).bands = Some(bands);
        critical_values.push(CriticalValue { kind, value });
    }
    Ok(BootstrapOutcome {
        estimates,
        critical_values,
        draws,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn estimate(values: Vec<Vec<f64>>) -> StructuralFunctionEstimate {
        StructuralFunctionEstimate {
            kind: Kind::Qsf,
            x_grid: (0..values.len()).map(|i| i as f64).collect(),
            index_grid: vec![0.5; values[0].len()],
            values,
            bands: None,
        }
    }

    #[test]
    fn config_validation() {
        assert!(BootstrapConfig::default().validate().is_ok());
        let bad = BootstrapConfig {
            replications: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        for level in [0.0, 1.0, f64::NAN] {
            let bad = BootstrapConfig {
                level,
                ..Default::default()
            };
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn weights_are_reproducible_and_unit_mean() {
        let cfg = BootstrapConfig {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(cfg.weights(3, 100), cfg.weights(3, 100));
        assert_ne!(cfg.weights(3, 100), cfg.weights(4, 100));
        let w = cfg.weights(0, 200_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((mean - 1.0).abs() < 0.01 && (var - 1.0).abs() < 0.02);
        assert!(w.iter().all(|v| *v >= 0.0));
        let unit = BootstrapConfig {
            weight_law: WeightLaw::Unit,
            ..cfg
        };
        assert_eq!(unit.weights(5, 3), vec![1.0; 3]);
    }

    #[test]
    fn critical_value_is_the_level_quantile_of_max_t() {
        // One grid point; draws θ̂ + d with d = −2..=2 step 1 repeated so the
        // IQR is known: sorted deviations [-2,-1,0,1,2] give IQR 2.
        let point = estimate(vec![vec![10.0]]);
        let draws: Vec<StructuralFunctionEstimate> = [-2.0, -1.0, 0.0, 1.0, 2.0]
            .iter()
            .map(|d| estimate(vec![vec![10.0 + d]]))
            .collect();
        let refs: Vec<&StructuralFunctionEstimate> = draws.iter().collect();
        let (bands, c) = uniform_bands(&point, &refs, 0.8).unwrap();
        let s = 2.0 / IQR_TO_SD;
        // |t| sorted: 0, s⁻¹, s⁻¹, 2s⁻¹, 2s⁻¹; the ceil(0.8·5) = 4th is 2/s.
        assert!((c - 2.0 / s).abs() < 1e-12);
        assert!(
            (bands.upper[0][0] - 12.0).abs() < 1e-12 && (bands.lower[0][0] - 8.0).abs() < 1e-12
        );
    }

    #[test]
    fn identical_draws_collapse_bands() {
        let point = estimate(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let refs = vec![&point, &point];
        let (bands, _) = uniform_bands(&point, &refs, 0.9).unwrap();
        assert_eq!(bands.lower, point.values);
        assert_eq!(bands.upper, point.values);
    }

    #[test]
    fn zero_iqr_points_use_the_largest_deviation() {
        let point = estimate(vec![vec![0.0]]);
        let mut draws: Vec<StructuralFunctionEstimate> =
            (0..9).map(|_| estimate(vec![vec![0.0]])).collect();
        draws.push(estimate(vec![vec![0.3]]));
        let refs: Vec<&StructuralFunctionEstimate> = draws.iter().collect();
        let (bands, _) = uniform_bands(&point, &refs, 0.9).unwrap();
        assert!((bands.upper[0][0] - 0.3).abs() < 1e-15 && (bands.lower[0][0] + 0.3).abs() < 1e-15);
    }
}
