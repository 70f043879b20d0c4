//! Structural functions: averaging the fitted control regression over the
//! empirical distribution of `(Z1, V̂)`, then inverting or integrating the
//! resulting distribution structural function on an outcome mesh.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{empirical_quantile, kron, BasisSpec, Dataset};
use crate::error::{Error, Result};
use crate::first_stage::{FirstStageFit, StageOptions};
use crate::second_stage::SecondStageFit;

/// Measure `ν` used to integrate over outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Lebesgue measure, approximated on an equidistant mesh.
    #[default]
    Continuous,
    /// Counting measure on the distinct observed outcomes.
    Counting,
}

/// Points at which the DSF is tabulated before inversion/integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMesh {
    points: Vec<f64>,
    measure: Measure,
}

impl OutcomeMesh {
    /// `size` equidistant points from `lo` to `hi` inclusive.
    pub fn equidistant(lo: f64, hi: f64, size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidInput(format!(
                "outcome mesh needs at least 2 points, got {size}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::DegenerateRange(format!(
                "outcome mesh needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        let delta = (hi - lo) / (size - 1) as f64;
        let points = (0..size)
            .map(|s| {
                if s + 1 == size {
                    hi
                } else {
                    lo + s as f64 * delta
                }
            })
            .collect();
        Ok(OutcomeMesh {
            points,
            measure: Measure::Continuous,
        })
    }

    /// Distinct values of `outcomes`, for the counting measure.
    pub fn support(outcomes: &[f64]) -> Result<Self> {
        let mut points = outcomes.to_vec();
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite outcome".into()));
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        if points.is_empty() {
            return Err(Error::InvalidInput("no outcomes to build a support".into()));
        }
        Ok(OutcomeMesh {
            points,
            measure: Measure::Counting,
        })
    }

    /// Mesh spanning `[min Y, max Y]` (continuous) or the observed support
    /// (counting).
    pub fn from_outcomes(outcomes: &[f64], size: usize, measure: Measure) -> Result<Self> {
        match measure {
            Measure::Counting => Self::support(outcomes),
            Measure::Continuous => {
                let lo = outcomes.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = outcomes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Self::equidistant(lo, hi, size)
            }
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mesh width `δ`; zero for the counting measure.
    pub fn width(&self) -> f64 {
        match self.measure {
            Measure::Continuous => {
                (self.points[self.len() - 1] - self.points[0]) / (self.len() - 1) as f64
            }
            Measure::Counting => 0.0,
        }
    }

    /// `∫_0^{y_1} dy` or `−∫_{y_S}^0 dy`: the part of the real line between
    /// zero and a mesh that does not straddle it, where the DSF is 0 (below)
    /// or 1 (above).
    fn offset(&self) -> f64 {
        self.points[0].max(0.0) + self.points[self.len() - 1].min(0.0)
    }

    /// Quantile from DSF values `g` tabulated on this mesh.
    ///
    /// Continuous: `δ Σ_s [1(y_s ≥ 0) − 1{g_s ≥ p}]` plus the offset for a
    /// mesh that lies entirely on one side of zero. Counting: the smallest
    /// support point with `g ≥ p` (the largest if none).
    pub fn quantile(&self, g: &[f64], p: f64) -> f64 {
        debug_assert_eq!(g.len(), self.len());
        match self.measure {
            Measure::Continuous => {
                let mut count: i64 = 0;
                for (y, gs) in self.points.iter().zip(g) {
                    count += i64::from(*y >= 0.0) - i64::from(*gs >= p);
                }
                self.width() * count as f64 + self.offset()
            }
            Measure::Counting => {
                let idx = g.iter().position(|gs| *gs >= p).unwrap_or(self.len() - 1);
                self.points[idx]
            }
        }
    }

    /// Mean from DSF values `g` tabulated on this mesh.
    ///
    /// Continuous: `δ Σ_s [1(y_s ≥ 0) − g_s]` plus the offset. Counting: the
    /// expectation of the step distribution on the support,
    /// `y_(1) + Σ_k (y_(k+1) − y_(k)) (1 − g_k)`.
    pub fn mean(&self, g: &[f64]) -> f64 {
        debug_assert_eq!(g.len(), self.len());
        match self.measure {
            Measure::Continuous => {
                let sum: f64 = self
                    .points
                    .iter()
                    .zip(g)
                    .map(|(y, gs)| if *y >= 0.0 { 1.0 - gs } else { -gs })
                    .sum();
                self.width() * sum + self.offset()
            }
            Measure::Counting => {
                let mut total = self.points[0];
                for k in 0..self.len() - 1 {
                    total += (self.points[k + 1] - self.points[k]) * (1.0 - g[k]);
                }
                total
            }
        }
    }
}

/// QSF at level `p` from a tabulated DSF; levels outside `[ε, 1 − ε]` are
/// not identified by the trimmed processes and are refused.
pub fn qsf(mesh: &OutcomeMesh, g: &[f64], p: f64, epsilon: f64) -> Result<f64> {
    check_level(p, epsilon)?;
    if g.len() != mesh.len() {
        return Err(Error::InvalidInput(format!(
            "{} DSF values for a mesh of {} points",
            g.len(),
            mesh.len()
        )));
    }
    Ok(mesh.quantile(g, p))
}

/// ASF from a tabulated DSF.
pub fn asf(mesh: &OutcomeMesh, g: &[f64]) -> Result<f64> {
    if g.len() != mesh.len() {
        return Err(Error::InvalidInput(format!(
            "{} DSF values for a mesh of {} points",
            g.len(),
            mesh.len()
        )));
    }
    Ok(mesh.mean(g))
}

fn check_level(p: f64, epsilon: f64) -> Result<()> {
    if p >= epsilon && p <= 1.0 - epsilon {
        Ok(())
    } else {
        Err(Error::OutOfIdentifiedRange {
            level: p,
            lo: epsilon,
            hi: 1.0 - epsilon,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Dsf,
    Qsf,
    Asf,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Dsf => "dsf",
            Kind::Qsf => "qsf",
            Kind::Asf => "asf",
        })
    }
}

impl std::str::FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dsf" => Ok(Kind::Dsf),
            "qsf" => Ok(Kind::Qsf),
            "asf" => Ok(Kind::Asf),
            other => Err(Error::InvalidInput(format!(
                "unknown structural function `{other}`"
            ))),
        }
    }
}

/// Pointwise lower and upper band limits, shaped like the values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub level: f64,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

/// A structural function tabulated over `x_grid × index_grid`. The index is
/// the outcome value for the DSF, the probability for the QSF, and empty for
/// the ASF (one value per x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralFunctionEstimate {
    pub kind: Kind,
    pub x_grid: Vec<f64>,
    pub index_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub bands: Option<Bands>,
}

impl StructuralFunctionEstimate {
    /// Values at `x` by linear interpolation between neighboring grid points.
    /// A convex combination of two nondecreasing rows is nondecreasing, so
    /// monotonicity along the index survives. `x` must lie inside the grid.
    pub fn interpolate(&self, x: f64) -> Result<Vec<f64>> {
        let (i, lambda) = self.bracket(x)?;
        Ok(mix(
            &self.values[i],
            &self.values[(i + 1).min(self.values.len() - 1)],
            lambda,
        ))
    }

    /// Band limits at `x`, interpolated like [`Self::interpolate`].
    pub fn interpolate_bands(&self, x: f64) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let Some(b) = &self.bands else {
            return Ok(None);
        };
        let (i, lambda) = self.bracket(x)?;
        let j = (i + 1).min(self.values.len() - 1);
        Ok(Some((
            mix(&b.lower[i], &b.lower[j], lambda),
            mix(&b.upper[i], &b.upper[j], lambda),
        )))
    }

    fn bracket(&self, x: f64) -> Result<(usize, f64)> {
        let g = &self.x_grid;
        if g.is_empty() || !x.is_finite() || x < g[0] || x > g[g.len() - 1] {
            return Err(Error::InvalidRegion(format!(
                "x = {x} lies outside the tabulated grid"
            )));
        }
        if g.len() == 1 {
            return Ok((0, 0.0));
        }
        let i = g.partition_point(|v| *v <= x).clamp(1, g.len() - 1) - 1;
        let span = g[i + 1] - g[i];
        let lambda = if span > 0.0 { (x - g[i]) / span } else { 0.0 };
        Ok((i, lambda))
    }
}

fn mix(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect()
}

/// The three structural functions over one evaluation region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralEstimates {
    pub dsf: StructuralFunctionEstimate,
    pub qsf: StructuralFunctionEstimate,
    pub asf: StructuralFunctionEstimate,
}

impl StructuralEstimates {
    pub fn get(&self, kind: Kind) -> &StructuralFunctionEstimate {
        match kind {
            Kind::Dsf => &self.dsf,
            Kind::Qsf => &self.qsf,
            Kind::Asf => &self.asf,
        }
    }

    pub fn get_mut(&mut self, kind: Kind) -> &mut StructuralFunctionEstimate {
        match kind {
            Kind::Dsf => &mut self.dsf,
            Kind::Qsf => &mut self.qsf,
            Kind::Asf => &mut self.asf,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &StructuralFunctionEstimate> {
        [&self.dsf, &self.qsf, &self.asf].into_iter()
    }
}

/// Where the structural functions are reported: treatment values, QSF
/// probabilities and DSF outcome values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x_grid: Vec<f64>,
    pub p_levels: Vec<f64>,
    pub y_grid: Vec<f64>,
}

pub const DEFAULT_X_PROBS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const DEFAULT_P_LEVELS: [f64; 3] = [0.25, 0.5, 0.75];
pub const DEFAULT_Y_PROBS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

impl Region {
    /// Sample quantiles of X at 0.1, 0.3, …, 0.9 (duplicates dropped), QSF levels
    /// {0.25, 0.5, 0.75}, and DSF outcome values at the deciles of Y.
    pub fn default_for(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidRegion(
                "no data to place the default region".into(),
            ));
        }
        let quantiles = |values: &[f64], probs: &[f64]| {
            let mut s = values.to_vec();
            s.sort_by(f64::total_cmp);
            probs
                .iter()
                .map(|t| empirical_quantile(&s, *t))
                .collect::<Vec<_>>()
        };
        let mut x_grid = quantiles(&data.x, &DEFAULT_X_PROBS);
        // a discrete treatment repeats quantiles
        x_grid.dedup();
        Ok(Region {
            x_grid,
            p_levels: DEFAULT_P_LEVELS.to_vec(),
            y_grid: quantiles(&data.y, &DEFAULT_Y_PROBS),
        })
    }

    pub fn validate(&self, epsilon: f64) -> Result<()> {
        if self.x_grid.is_empty() {
            return Err(Error::InvalidRegion("empty x grid".into()));
        }
        if self.p_levels.is_empty() {
            return Err(Error::InvalidRegion("no QSF probability levels".into()));
        }
        let all = self.x_grid.iter().chain(&self.p_levels).chain(&self.y_grid);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRegion("non-finite grid value".into()));
        }
        if self.x_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidRegion("x grid must be sorted".into()));
        }
        for &p in &self.p_levels {
            check_level(p, epsilon)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub basis: BasisSpec,
    pub stage: StageOptions,
    /// Outcome mesh size `S`.
    pub mesh_size: usize,
    pub measure: Measure,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            basis: BasisSpec::default(),
            stage: StageOptions::default(),
            mesh_size: 599,
            measure: Measure::Continuous,
        }
    }
}

/// Distinct `(z1, v̂)` pair with its total weight.
#[derive(Debug, Clone)]
struct ControlCell {
    weight: f64,
    /// `r(z1) ⊗ q(v̂)`.
    rq: Vec<f64>,
}

/// A fitted three-stage estimator.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    first: FirstStageFit,
    second: SecondStageFit,
    v_hat: Vec<f64>,
    cells: Vec<ControlCell>,
    total_weight: f64,
    mesh: OutcomeMesh,
}

impl Pipeline {
    pub fn fit(data: &Dataset, config: &PipelineConfig) -> Result<Self> {
        Self::fit_weighted(data, config, None)
    }

    /// Fits both stages with observation weights and averages the control
    /// regression with the same weights.
    pub fn fit_weighted(
        data: &Dataset,
        config: &PipelineConfig,
        weights: Option<&[f64]>,
    ) -> Result<Self> {
        let mesh = OutcomeMesh::from_outcomes(&data.y, config.mesh_size, config.measure)?;
        let first = FirstStageFit::fit(data, &config.basis, &config.stage, weights)?;
        let v_hat = first.control_values(data)?;
        let second = SecondStageFit::fit(data, &v_hat, &config.basis, &config.stage, weights)?;
        let (cells, total_weight) = control_cells(&config.basis, &data.z1, &v_hat, weights)?;
        Ok(Pipeline {
            config: config.clone(),
            first,
            second,
            v_hat,
            cells,
            total_weight,
            mesh,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn first_stage(&self) -> &FirstStageFit {
        &self.first
    }

    pub fn second_stage(&self) -> &SecondStageFit {
        &self.second
    }

    pub fn control_values(&self) -> &[f64] {
        &self.v_hat
    }

    pub fn mesh(&self) -> &OutcomeMesh {
        &self.mesh
    }

    /// `Ĝ(y, x)`: the (weighted) sample average of the control regression
    /// CDF over the observed `(Z1ᵢ, V̂ᵢ)`.
    pub fn dsf(&self, y: f64, x: f64) -> Result<f64> {
        Ok(self.dsf_sorted(x, &[y])?[0])
    }

    /// `Ĝ(y_s, x)` for nondecreasing `ys`.
    pub fn dsf_sorted(&self, x: f64, ys: &[f64]) -> Result<Vec<f64>> {
        if !x.is_finite() || ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidInput("non-finite DSF argument".into()));
        }
        debug_assert!(ys.windows(2).all(|w| w[0] <= w[1]));
        let basis = &self.config.basis;
        let p = basis
            .p
            .iter()
            .map(|t| t.eval(x))
            .collect::<Result<Vec<_>>>()?;
        let process = self.second.process();
        let levels = process.len();
        // hist[j] accumulates the weight of predictions whose first mesh
        // point at or above them is ys[j] (j = len means above the mesh).
        let mut hist = vec![0.0; ys.len() + 1];
        for cell in &self.cells {
            let row = kron(&p, &cell.rq);
            for q in process.predict_all(&row) {
                let j = ys.partition_point(|y| *y < q);
                hist[j] += cell.weight;
            }
        }
        let eps = self.second.epsilon();
        let scale = (1.0 - 2.0 * eps) / (levels as f64 * self.total_weight);
        let mut acc = 0.0;
        Ok(hist[..ys.len()]
            .iter()
            .map(|h| {
                acc += h;
                (eps + scale * acc).min(1.0 - eps)
            })
            .collect())
    }

    /// `Ĝ(·, x)` on the pipeline's outcome mesh.
    pub fn dsf_table(&self, x: f64) -> Result<Vec<f64>> {
        self.dsf_sorted(x, self.mesh.points())
    }

    pub fn qsf(&self, p: f64, x: f64) -> Result<f64> {
        qsf(&self.mesh, &self.dsf_table(x)?, p, self.second.epsilon())
    }

    pub fn asf(&self, x: f64) -> Result<f64> {
        asf(&self.mesh, &self.dsf_table(x)?)
    }

    /// Tabulates all three structural functions over `region`.
    pub fn evaluate_region(&self, region: &Region) -> Result<StructuralEstimates> {
        self.evaluate_on(region, &self.mesh)
    }

    /// As [`Self::evaluate_region`] with an explicit outcome mesh (the
    /// bootstrap keeps the point estimate's mesh fixed).
    pub fn evaluate_on(&self, region: &Region, mesh: &OutcomeMesh) -> Result<StructuralEstimates> {
        let eps = self.second.epsilon();
        region.validate(eps)?;
        let mut order: Vec<usize> = (0..region.y_grid.len()).collect();
        order.sort_by(|a, b| region.y_grid[*a].total_cmp(&region.y_grid[*b]));
        let sorted_y: Vec<f64> = order.iter().map(|&i| region.y_grid[i]).collect();

        let rows = region
            .x_grid
            .par_iter()
            .map(|&x| -> Result<(Vec<f64>, Vec<f64>, f64)> {
                let g = self.dsf_sorted(x, mesh.points())?;
                let q = region
                    .p_levels
                    .iter()
                    .map(|&p| mesh.quantile(&g, p))
                    .collect();
                let mu = mesh.mean(&g);
                let at_y = self.dsf_sorted(x, &sorted_y)?;
                let mut dsf_row = vec![0.0; at_y.len()];
                for (k, &i) in order.iter().enumerate() {
                    dsf_row[i] = at_y[k];
                }
                Ok((dsf_row, q, mu))
            })
            .collect::<Result<Vec<_>>>()?;

        let table = |kind, index_grid: Vec<f64>, values| StructuralFunctionEstimate {
            kind,
            x_grid: region.x_grid.clone(),
            index_grid,
            values,
            bands: None,
        };
        let mut dsf = Vec::with_capacity(rows.len());
        let mut qsf = Vec::with_capacity(rows.len());
        let mut asf = Vec::with_capacity(rows.len());
        for (d, q, m) in rows {
            dsf.push(d);
            qsf.push(q);
            asf.push(vec![m]);
        }
        Ok(StructuralEstimates {
            dsf: table(Kind::Dsf, region.y_grid.clone(), dsf),
            qsf: table(Kind::Qsf, region.p_levels.clone(), qsf),
            asf: table(Kind::Asf, Vec::new(), asf),
        })
    }
}

fn control_cells(
    basis: &BasisSpec,
    z1: &[f64],
    v_hat: &[f64],
    weights: Option<&[f64]>,
) -> Result<(Vec<ControlCell>, f64)> {
    let mut keyed: Vec<(f64, f64, f64)> = (0..v_hat.len())
        .map(|i| (z1[i], v_hat[i], weights.map_or(1.0, |w| w[i])))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut cells: Vec<ControlCell> = Vec::new();
    let mut last: Option<(f64, f64)> = None;
    let mut total = 0.0;
    for (z1, v, w) in keyed {
        total += w;
        if last == Some((z1, v)) {
            cells.last_mut().expect("cell exists").weight += w;
            continue;
        }
        let r = basis
            .r
            .iter()
            .map(|t| t.eval(z1))
            .collect::<Result<Vec<_>>>()?;
        let q = basis
            .q
            .iter()
            .map(|t| t.eval(v))
            .collect::<Result<Vec<_>>>()?;
        cells.push(ControlCell {
            weight: w,
            rq: kron(&r, &q),
        });
        last = Some((z1, v));
    }
    if !(total > 0.0) {
        return Err(Error::InvalidInput(
            "observation weights sum to zero".into(),
        ));
    }
    Ok((cells, total))
}
