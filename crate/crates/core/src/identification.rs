//! Positive-definiteness diagnostics for the control regression.
//!
//! The kronecker design `w = p(X) ⊗ r(Z1) ⊗ q(V)` is identified when
//! `E[ww′]` is nonsingular. Without full support this hinges on the
//! conditional second moments `E[q(V)q(V)′ | X = x]` and
//! `E[p(X)p(X)′ | V = v]` having smallest eigenvalues bounded away from
//! zero on a set of positive probability. Everything here reports; nothing
//! aborts estimation.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{empirical_quantile, kron, BasisSpec, Dataset, Term};
use crate::error::{Error, Result};
use crate::first_stage::{indicator_integral, FirstStageFit};

/// Default lower bound `B` on the conditional smallest eigenvalue.
pub const DEFAULT_THRESHOLD: f64 = 1e-3;
/// Relative tolerance of the moment-matrix rank flag.
pub const RANK_TOLERANCE: f64 = 1e-8;
/// Instrument cells holding less than this share are flagged as thin.
pub const THIN_CELL_SHARE: f64 = 0.10;

fn eval_terms(terms: &[Term], value: f64) -> Result<Vec<f64>> {
    terms.iter().map(|t| t.eval(value)).collect()
}

/// Sorted eigenvalues of a symmetric row-major `dim × dim` matrix.
fn eigenvalues(matrix: &[f64], dim: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(dim, dim, matrix);
    let mut values: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Averages `rows[i] rows[i]′` over the given indices.
fn second_moment<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim * dim];
    let mut count = 0usize;
    for row in rows {
        for a in 0..dim {
            for b in a..dim {
                m[a * dim + b] += row[a] * row[b];
            }
        }
        count += 1;
    }
    for a in 0..dim {
        for b in a..dim {
            m[a * dim + b] /= count.max(1) as f64;
            m[b * dim + a] = m[a * dim + b];
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub dim: usize,
    pub names: Vec<String>,
    /// Row-major sample `E[ww′]`.
    pub matrix: Vec<f64>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub condition_number: f64,
    pub threshold: f64,
    pub rank_ok: bool,
}

/// Sample second-moment matrix of the second-stage regressor and its
/// spectrum. The rank flag fails when `λ_min < 1e-8 · trace / dim`.
pub fn moment_matrix(data: &Dataset, basis: &BasisSpec, v: &[f64]) -> Result<MomentReport> {
    basis.validate()?;
    if v.len() != data.n() {
        return Err(Error::InvalidInput(format!(
            "{} control values for {} observations",
            v.len(),
            data.n()
        )));
    }
    let dim = basis.second_stage_dim();
    if data.n() < dim {
        return Err(Error::InvalidInput(format!(
            "{} observations for a {dim}-dimensional regressor",
            data.n()
        )));
    }
    let rows = (0..data.n())
        .map(|i| basis.second_stage_row(data.x[i], data.z1[i], v[i]))
        .collect::<Result<Vec<_>>>()?;
    let matrix = second_moment(rows.iter(), dim);
    let eig = eigenvalues(&matrix, dim);
    let (min, max) = (eig[0].max(0.0), eig[dim - 1]);
    let trace: f64 = (0..dim).map(|a| matrix[a * dim + a]).sum();
    let threshold = RANK_TOLERANCE * trace / dim as f64;
    Ok(MomentReport {
        dim,
        names: basis.second_stage_names(),
        matrix,
        min_eigenvalue: min,
        max_eigenvalue: max,
        condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
        threshold,
        rank_ok: min >= threshold,
    })
}

/// How a conditioning variable is grouped into cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binning {
    /// One cell per distinct value.
    Discrete,
    /// Equal-probability bins cut at type-1 sample quantiles.
    Quantile { bins: usize },
}

impl Binning {
    /// Discrete for at most 20 distinct values, otherwise 10 quantile bins.
    pub fn auto(values: &[f64]) -> Binning {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() <= 20 {
            Binning::Discrete
        } else {
            Binning::Quantile { bins: 10 }
        }
    }
}

/// A group of observations sharing a conditioning cell.
struct Group {
    members: Vec<usize>,
    lo: f64,
    hi: f64,
    /// Median of the conditioning variable inside the cell.
    center: f64,
}

fn group_by(values: &[f64], binning: Binning) -> Result<Vec<Group>> {
    if values.is_empty() {
        return Err(Error::InvalidInput(
            "no observations to condition on".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite conditioning value".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let cell_of: Vec<usize> = match binning {
        Binning::Discrete => {
            let mut cell = 0;
            (0..sorted.len())
                .map(|k| {
                    if k > 0 && sorted[k] != sorted[k - 1] {
                        cell += 1;
                    }
                    cell
                })
                .collect()
        }
        Binning::Quantile { bins } => {
            if bins == 0 {
                return Err(Error::InvalidInput(
                    "number of bins must be at least 1".into(),
                ));
            }
            let mut edges: Vec<f64> = (1..bins)
                .map(|k| empirical_quantile(&sorted, k as f64 / bins as f64))
                .collect();
            edges.dedup();
            sorted
                .iter()
                .map(|v| edges.partition_point(|e| e < v))
                .collect()
        }
    };
    let mut groups: Vec<Group> = Vec::new();
    let mut last = usize::MAX;
    for (k, &i) in order.iter().enumerate() {
        if cell_of[k] != last {
            last = cell_of[k];
            groups.push(Group {
                members: Vec::new(),
                lo: sorted[k],
                hi: sorted[k],
                center: 0.0,
            });
        }
        let g = groups.last_mut().unwrap();
        g.members.push(i);
        g.hi = sorted[k];
    }
    for g in &mut groups {
        // members are in sorted order of the conditioning value
        g.center = values[g.members[(g.members.len() - 1) / 2]];
    }
    Ok(groups)
}

fn distinct_count(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCell {
    pub label: String,
    /// Representative conditioning value (the cell median).
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub probability: f64,
    /// Row-major conditional second-moment matrix.
    pub matrix: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Variance of the scalar being conditioned (V given X, or X given V).
    pub variance: f64,
    pub distinct: usize,
    /// False when the cell holds fewer than `5 · dim` observations.
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalEigenProfile {
    /// Name of the conditioning variable.
    pub conditioning: String,
    pub dim: usize,
    pub threshold: f64,
    pub cells: Vec<EigenCell>,
}

impl ConditionalEigenProfile {
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn passes(&self, cell: &EigenCell) -> bool {
        cell.usable && cell.lambda_min >= self.threshold
    }

    /// Indices of the cells in the estimated `*`-set: usable and
    /// `λ_min ≥ B`.
    pub fn estimated_set(&self) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&c| self.passes(&self.cells[c]))
            .collect()
    }

    /// Indices of usable cells with at least two distinct values and
    /// positive variance, the estimated `°`-set.
    pub fn support_set(&self) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&c| {
                let cell = &self.cells[c];
                cell.usable && cell.distinct >= 2 && cell.variance > 0.0
            })
            .collect()
    }

    /// Probability mass of the estimated set.
    pub fn passing_probability(&self) -> f64 {
        self.estimated_set()
            .iter()
            .map(|&c| self.cells[c].probability)
            .sum()
    }

    pub fn unusable_cells(&self) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&c| !self.cells[c].usable)
            .collect()
    }
}

fn cell_label(binning: Binning, g: &Group) -> String {
    match binning {
        Binning::Discrete => format!("{}", g.lo),
        Binning::Quantile { .. } => format!("[{}, {}]", g.lo, g.hi),
    }
}

/// Builds a profile where each cell's rows come from `row_of(i)` and the
/// scalar whose spread is reported is `scalar_of(i)`.
fn build_profile(
    conditioning: &str,
    groups: &[Group],
    binning: Binning,
    n: usize,
    dim: usize,
    rows: &[Vec<f64>],
    scalar: &[f64],
) -> ConditionalEigenProfile {
    let cells = groups
        .par_iter()
        .map(|g| {
            let matrix = second_moment(g.members.iter().map(|&i| &rows[i]), dim);
            let eig = eigenvalues(&matrix, dim);
            let values: Vec<f64> = g.members.iter().map(|&i| scalar[i]).collect();
            EigenCell {
                label: cell_label(binning, g),
                value: g.center,
                lo: g.lo,
                hi: g.hi,
                count: g.members.len(),
                probability: g.members.len() as f64 / n as f64,
                matrix,
                lambda_min: eig[0].max(0.0),
                lambda_max: eig[dim - 1].max(0.0),
                variance: variance(&values),
                distinct: distinct_count(values.iter().copied()),
                usable: g.members.len() >= 5 * dim,
            }
        })
        .collect();
    ConditionalEigenProfile {
        conditioning: conditioning.into(),
        dim,
        threshold: DEFAULT_THRESHOLD,
        cells,
    }
}

fn check_len(data: &Dataset, v: &[f64]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    if v.len() != data.n() {
        return Err(Error::InvalidInput(format!(
            "{} control values for {} observations",
            v.len(),
            data.n()
        )));
    }
    Ok(())
}

/// `λ_min` of `E[q(V)q(V)′ | X ∈ cell]` for each cell of `X`.
pub fn conditional_profile_x(
    data: &Dataset,
    q_basis: &[Term],
    v: &[f64],
    binning: Binning,
) -> Result<ConditionalEigenProfile> {
    check_len(data, v)?;
    let rows = v
        .iter()
        .map(|&v| eval_terms(q_basis, v))
        .collect::<Result<Vec<_>>>()?;
    let groups = group_by(&data.x, binning)?;
    Ok(build_profile(
        "x",
        &groups,
        binning,
        data.n(),
        q_basis.len(),
        &rows,
        v,
    ))
}

/// `λ_min` of `E[p(X)p(X)′ | V ∈ cell]` for each cell of `V`.
pub fn conditional_profile_v(
    data: &Dataset,
    p_basis: &[Term],
    v: &[f64],
    binning: Binning,
) -> Result<ConditionalEigenProfile> {
    check_len(data, v)?;
    let rows = data
        .x
        .iter()
        .map(|&x| eval_terms(p_basis, x))
        .collect::<Result<Vec<_>>>()?;
    let groups = group_by(v, binning)?;
    Ok(build_profile(
        "v",
        &groups,
        binning,
        data.n(),
        p_basis.len(),
        &rows,
        &data.x,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityCell {
    pub label: String,
    pub probability: f64,
    /// `P(V) = Pr(X = 1 | V ∈ cell)`.
    pub propensity: f64,
    /// `Var(X | V) = P(1 − P)`.
    pub variance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityReport {
    pub tolerance: f64,
    pub cells: Vec<PropensityCell>,
    /// True when the passing cells carry positive empirical probability.
    pub pass: bool,
}

/// Binary-treatment check: a cell passes when its propensity lies in
/// `[tol, 1 − tol]`.
pub fn propensity_check(
    data: &Dataset,
    v: &[f64],
    binning: Binning,
    tolerance: f64,
) -> Result<PropensityReport> {
    check_len(data, v)?;
    if let Some(x) = data.x.iter().find(|x| **x != 0.0 && **x != 1.0) {
        return Err(Error::InvalidInput(format!(
            "propensity check needs a binary treatment, found x = {x}"
        )));
    }
    let groups = group_by(v, binning)?;
    let cells: Vec<PropensityCell> = groups
        .iter()
        .map(|g| {
            let p = g.members.iter().map(|&i| data.x[i]).sum::<f64>() / g.members.len() as f64;
            PropensityCell {
                label: cell_label(binning, g),
                probability: g.members.len() as f64 / data.n() as f64,
                propensity: p,
                variance: p * (1.0 - p),
                pass: p >= tolerance && p <= 1.0 - tolerance && p > 0.0 && p < 1.0,
            }
        })
        .collect();
    let pass = cells.iter().any(|c| c.pass && c.probability > 0.0);
    Ok(PropensityReport {
        tolerance,
        cells,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCell {
    pub variance: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `Var / λ_max`, zero when `λ_max = 0`.
    pub bound: f64,
    /// `λ_min − bound`.
    pub margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaBoundReport {
    /// False unless every cell is a `(1, t)` second-moment matrix.
    pub applicable: bool,
    pub cells: Vec<BoundCell>,
}

impl LambdaBoundReport {
    pub fn all_hold(&self) -> bool {
        self.applicable && self.cells.iter().all(|c| c.holds)
    }
}

/// Verifies `λ_min ≥ Var(t) / λ_max` on every cell of a two-term profile,
/// where `Var(t)` is the variance of the non-constant basis function.
pub fn lambda_bound_check(profile: &ConditionalEigenProfile) -> LambdaBoundReport {
    if profile.dim != 2 {
        return LambdaBoundReport {
            applicable: false,
            cells: Vec::new(),
        };
    }
    let cells = profile
        .cells
        .iter()
        .map(|c| {
            let (m00, m01, m11) = (c.matrix[0], c.matrix[1], c.matrix[3]);
            let var = (m11 - m01 * m01 / m00).max(0.0);
            let bound = if c.lambda_max > 0.0 {
                var / c.lambda_max
            } else {
                0.0
            };
            let margin = c.lambda_min - bound;
            BoundCell {
                variance: var,
                lambda_min: c.lambda_min,
                lambda_max: c.lambda_max,
                bound,
                margin,
                holds: margin >= -1e-10,
            }
        })
        .collect();
    LambdaBoundReport {
        applicable: true,
        cells,
    }
}

/// Cells with at least two distinct values whose basis-function variance
/// clears `B · λ_max`, yet fall outside the estimated `*`-set at `B`. The
/// lower bound on `λ_min` says this list is always empty.
pub fn support_cells_outside_star_set(profile: &ConditionalEigenProfile) -> Vec<usize> {
    let report = lambda_bound_check(profile);
    if !report.applicable {
        return Vec::new();
    }
    let star = profile.estimated_set();
    profile
        .support_set()
        .into_iter()
        .filter(|&c| {
            let b = &report.cells[c];
            b.variance >= profile.threshold * b.lambda_max && !star.contains(&c)
        })
        .collect()
}

/// Profiles in terms of the first stage: `λ̃_min(x)` uses
/// `r(Z1) ⊗ q(F̂_{X|Z}(x | Z))` over the observations with `X` in the cell,
/// and `λ̃_min(v)` uses `p(Q̂_{X|Z}(v | Z)) ⊗ r(Z1)` over the whole sample
/// (since `V` is independent of `Z`) at every first-stage mesh level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularProfiles {
    pub x_profile: ConditionalEigenProfile,
    pub v_profile: ConditionalEigenProfile,
}

pub fn triangular_profiles(
    first_stage: &FirstStageFit,
    data: &Dataset,
    basis: &BasisSpec,
    binning: Binning,
) -> Result<TriangularProfiles> {
    basis.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let n = data.n();
    let eps = first_stage.epsilon();
    let predicted = (0..n)
        .into_par_iter()
        .map(|i| first_stage.predicted_quantiles(data.z[i], data.z1[i]))
        .collect::<Result<Vec<_>>>()?;
    let r_rows = data
        .z1
        .iter()
        .map(|&z| eval_terms(&basis.r, z))
        .collect::<Result<Vec<_>>>()?;

    let groups = group_by(&data.x, binning)?;
    let x_dim = basis.r.len() * basis.q.len();
    let x_cells = groups
        .par_iter()
        .map(|g| {
            let controls: Vec<f64> = g
                .members
                .iter()
                .map(|&i| indicator_integral(&predicted[i], g.center, eps))
                .collect();
            let rows = g
                .members
                .iter()
                .zip(&controls)
                .map(|(&i, &v)| Ok(kron(&r_rows[i], &eval_terms(&basis.q, v)?)))
                .collect::<Result<Vec<_>>>()?;
            let matrix = second_moment(rows.iter(), x_dim);
            let eig = eigenvalues(&matrix, x_dim);
            Ok(EigenCell {
                label: cell_label(binning, g),
                value: g.center,
                lo: g.lo,
                hi: g.hi,
                count: g.members.len(),
                probability: g.members.len() as f64 / n as f64,
                matrix,
                lambda_min: eig[0].max(0.0),
                lambda_max: eig[x_dim - 1].max(0.0),
                variance: variance(&controls),
                distinct: distinct_count(controls.iter().copied()),
                usable: g.members.len() >= 5 * x_dim,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let levels = first_stage.process().levels();
    let v_dim = basis.p.len() * basis.r.len();
    let v_cells = (0..levels.len())
        .into_par_iter()
        .map(|t| {
            let xs: Vec<f64> = predicted.iter().map(|q| q[t]).collect();
            let rows = xs
                .iter()
                .zip(&r_rows)
                .map(|(&x, r)| Ok(kron(&eval_terms(&basis.p, x)?, r)))
                .collect::<Result<Vec<_>>>()?;
            let matrix = second_moment(rows.iter(), v_dim);
            let eig = eigenvalues(&matrix, v_dim);
            Ok(EigenCell {
                label: format!("{}", levels[t]),
                value: levels[t],
                lo: levels[t],
                hi: levels[t],
                count: n,
                probability: 1.0 / levels.len() as f64,
                matrix,
                lambda_min: eig[0].max(0.0),
                lambda_max: eig[v_dim - 1].max(0.0),
                variance: variance(&xs),
                distinct: distinct_count(xs.iter().copied()),
                usable: n >= 5 * v_dim,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TriangularProfiles {
        x_profile: ConditionalEigenProfile {
            conditioning: "x".into(),
            dim: x_dim,
            threshold: DEFAULT_THRESHOLD,
            cells: x_cells,
        },
        v_profile: ConditionalEigenProfile {
            conditioning: "v".into(),
            dim: v_dim,
            threshold: DEFAULT_THRESHOLD,
            cells: v_cells,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentCell {
    pub value: f64,
    pub count: usize,
    pub share: f64,
    pub thin: bool,
}

/// Frequency table of a discrete instrument, or `None` when it takes more
/// than 50 distinct values.
pub fn instrument_cells(z: &[f64]) -> Option<Vec<InstrumentCell>> {
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cells: Vec<InstrumentCell> = Vec::new();
    for v in sorted {
        match cells.last_mut() {
            Some(c) if c.value == v => c.count += 1,
            _ => {
                if cells.len() == 50 {
                    return None;
                }
                cells.push(InstrumentCell {
                    value: v,
                    count: 1,
                    share: 0.0,
                    thin: false,
                })
            }
        }
    }
    for c in &mut cells {
        c.share = c.count as f64 / z.len() as f64;
        c.thin = c.share < THIN_CELL_SHARE;
    }
    Some(cells)
}

/// Everything the `diagnose` command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub threshold: f64,
    pub moment: MomentReport,
    pub triangular: TriangularProfiles,
    pub instrument: Option<Vec<InstrumentCell>>,
}

/// One line of the machine-readable diagnostics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub cell: String,
    pub probability: f64,
    pub lambda_min: f64,
    pub pass: bool,
}

impl Diagnostics {
    pub fn compute(
        data: &Dataset,
        first_stage: &FirstStageFit,
        v_hat: &[f64],
        basis: &BasisSpec,
        threshold: f64,
    ) -> Result<Diagnostics> {
        let moment = moment_matrix(data, basis, v_hat)?;
        let mut triangular = triangular_profiles(first_stage, data, basis, Binning::auto(&data.x))?;
        triangular.x_profile.threshold = threshold;
        triangular.v_profile.threshold = threshold;
        Ok(Diagnostics {
            threshold,
            moment,
            triangular,
            instrument: instrument_cells(&data.z),
        })
    }

    /// Identification gate: full-rank moment matrix and nonempty estimated
    /// sets in both triangular profiles. A profile without any usable cell
    /// (too little data per cell) is inconclusive and does not fail the gate.
    pub fn identified(&self) -> bool {
        let ok =
            |p: &ConditionalEigenProfile| Self::inconclusive(p) || !p.estimated_set().is_empty();
        self.moment.rank_ok && ok(&self.triangular.x_profile) && ok(&self.triangular.v_profile)
    }

    fn inconclusive(p: &ConditionalEigenProfile) -> bool {
        p.cells.iter().all(|c| !c.usable)
    }

    pub fn thin_instrument_cells(&self) -> Vec<&InstrumentCell> {
        self.instrument
            .iter()
            .flatten()
            .filter(|c| c.thin)
            .collect()
    }

    pub fn rows(&self) -> Vec<DiagnosticRow> {
        let mut rows = Vec::new();
        for p in [&self.triangular.x_profile, &self.triangular.v_profile] {
            for c in &p.cells {
                rows.push(DiagnosticRow {
                    cell: format!("{}={}", p.conditioning, c.label),
                    probability: c.probability,
                    lambda_min: c.lambda_min,
                    pass: p.passes(c),
                });
            }
        }
        rows
    }

    /// Human-readable summary.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let m = &self.moment;
        out.push_str(&format!(
            "second-moment matrix E[ww'] ({} columns): min eigenvalue {:.4e}, condition number {:.4e}, rank {}\n",
            m.dim,
            m.min_eigenvalue,
            m.condition_number,
            if m.rank_ok { "ok" } else { "DEFICIENT" }
        ));
        for p in [&self.triangular.x_profile, &self.triangular.v_profile] {
            let set = p.estimated_set();
            out.push_str(&format!(
                "conditional on {}: {} of {} cells pass lambda_min >= {} (probability {:.3})",
                p.conditioning,
                set.len(),
                p.cells.len(),
                p.threshold,
                p.passing_probability()
            ));
            let unusable = p.unusable_cells();
            if Self::inconclusive(p) {
                out.push_str(", inconclusive: no cell is large enough to use");
            } else if !unusable.is_empty() {
                out.push_str(&format!(", {} cells too small to use", unusable.len()));
            }
            out.push('\n');
        }
        for c in self.thin_instrument_cells() {
            out.push_str(&format!(
                "warning: instrument value {} holds only {:.1}% of observations\n",
                c.value,
                100.0 * c.share
            ));
        }
        out.push_str(if self.identified() {
            "identification: ok\n"
        } else {
            "identification: FAILED\n"
        });
        out
    }
}
