//! Weighted quantile regression: single levels and whole quantile processes.
//!
//! The solver works on the bounded dual of the check-loss linear program
//!
//! ```text
//!   max  y'a   s.t.  X'a = (1 - level) X'w,   0 <= a <= w
//! ```
//!
//! with a long-step dual simplex method in the spirit of Barrodale and
//! Roberts. Every iterate is a vertex of the primal problem (a basis of `k`
//! observations fitted exactly), so the returned coefficients are an exact
//! optimal basic solution up to floating point. Along a grid of levels the
//! optimal basis of one level is an excellent starting point for the next,
//! which makes whole processes cheap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Check function `(level - 1{residual < 0}) * residual`.
pub fn check_loss(level: f64, residual: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "quantile level {level} must lie strictly inside (0, 1)"
        )));
    }
    if !residual.is_finite() {
        return Err(Error::InvalidInput(format!(
            "residual {residual} is not finite"
        )));
    }
    Ok(rho(level, residual))
}

#[inline]
pub(crate) fn rho(level: f64, residual: f64) -> f64 {
    if residual < 0.0 {
        (level - 1.0) * residual
    } else {
        level * residual
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A weighted check-loss minimization problem.
#[derive(Debug, Clone)]
pub struct CheckLossProblem {
    responses: Vec<f64>,
    /// Row-major `n x k`.
    design: Vec<f64>,
    n: usize,
    k: usize,
    level: f64,
    weights: Option<Vec<f64>>,
}

impl CheckLossProblem {
    pub fn new(responses: Vec<f64>, design: &DMatrix<f64>, level: f64) -> Result<Self> {
        let (n, k) = design.shape();
        let mut rows = Vec::with_capacity(n * k);
        for i in 0..n {
            for j in 0..k {
                rows.push(design[(i, j)]);
            }
        }
        Self::from_row_major(responses, rows, k, level)
    }

    /// Builds a problem from a row-major design with `k` columns.
    pub fn from_row_major(
        responses: Vec<f64>,
        design: Vec<f64>,
        k: usize,
        level: f64,
    ) -> Result<Self> {
        let n = responses.len();
        if k == 0 {
            return Err(Error::InvalidInput("design has no columns".into()));
        }
        if design.len() != n * k {
            return Err(Error::InvalidInput(format!(
                "design has {} entries, expected {n} x {k}",
                design.len()
            )));
        }
        if n < k {
            return Err(Error::InvalidInput(format!(
                "{n} observations cannot identify {k} coefficients"
            )));
        }
        if let Some(bad) = design.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "design entry ({}, {}) is not finite",
                bad / k,
                bad % k
            )));
        }
        if let Some(bad) = responses.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("response {bad} is not finite")));
        }
        let problem = CheckLossProblem {
            responses,
            design,
            n,
            k,
            level: 0.5,
            weights: None,
        };
        problem.with_level(level)
    }

    pub fn with_level(mut self, level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "quantile level {level} must lie strictly inside (0, 1)"
            )));
        }
        self.level = level;
        Ok(self)
    }

    /// Attaches nonnegative observation weights. Weights multiply each
    /// observation's check loss; they are not renormalized.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "{} weights for {} observations",
                weights.len(),
                self.n
            )));
        }
        if let Some(bad) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "weight {bad} = {} is not a finite nonnegative number",
                weights[bad]
            )));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.k..(i + 1) * self.k]
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Weighted check loss at `coefficients`.
    pub fn objective(&self, coefficients: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| {
                let r = self.responses[i] - dot(self.row(i), coefficients);
                self.weight(i) * rho(self.level, r)
            })
            .sum()
    }

    #[inline]
    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }
}

/// Solution of one check-loss problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub level: f64,
    pub converged: bool,
    /// Observations fitted exactly by the optimal vertex.
    #[serde(default)]
    pub basis: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Pivot limit per level; `None` scales with the sample size.
    pub max_pivots: Option<usize>,
    /// Bound violation of the dual variables tolerated at optimality,
    /// relative to the largest weight.
    pub feasibility_tol: f64,
    /// Relative tolerance of the column-rank check.
    pub rank_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_pivots: None,
            feasibility_tol: 1e-9,
            rank_tol: 1e-9,
        }
    }
}

/// Minimizes the weighted check loss with the default configuration.
pub fn fit(problem: &CheckLossProblem) -> Result<QuantileFit> {
    fit_with(problem, &SolverConfig::default(), None)
}

/// Minimizes the weighted check loss, optionally warm-starting from a basis
/// (for example the optimal basis of a neighboring level).
pub fn fit_with(
    problem: &CheckLossProblem,
    config: &SolverConfig,
    warm_start: Option<&[usize]>,
) -> Result<QuantileFit> {
    let deficient = deficient_columns(problem, config.rank_tol);
    if !deficient.is_empty() {
        return Err(Error::RankDeficient {
            stage: "quantile regression".into(),
            columns: deficient.iter().map(|c| c.to_string()).collect(),
        });
    }
    solve(problem, config, warm_start)
}

/// Columns of the design (restricted to positively weighted rows) that are
/// numerically linear combinations of earlier columns.
pub fn deficient_columns(problem: &CheckLossProblem, tol: f64) -> Vec<usize> {
    let rows: Vec<usize> = (0..problem.n)
        .filter(|&i| problem.weight(i) > 0.0)
        .collect();
    let k = problem.k;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut deficient = Vec::new();
    for j in 0..k {
        let column: Vec<f64> = rows.iter().map(|&i| problem.design[i * k + j]).collect();
        let norm = column.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            deficient.push(j);
            continue;
        }
        let mut v = column;
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let rest = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rest <= tol * norm {
            deficient.push(j);
        } else {
            v.iter_mut().for_each(|x| *x /= rest);
            basis.push(v);
        }
    }
    deficient
}

fn weighted_least_squares(
    problem: &CheckLossProblem,
    weight: impl Fn(usize) -> f64,
) -> Option<Vec<f64>> {
    let k = problem.k;
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..problem.n {
        let w = weight(i);
        if w == 0.0 {
            continue;
        }
        let row = problem.row(i);
        for a in 0..k {
            rhs[a] += w * row[a] * problem.responses[i];
            for b in 0..=a {
                gram[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let solution = gram.cholesky()?.solve(&rhs);
    solution
        .iter()
        .all(|v| v.is_finite())
        .then(|| solution.iter().copied().collect())
}

/// A rough minimizer from iteratively reweighted least squares, used only to
/// pick a starting vertex close to the optimum.
fn reweighted_start(problem: &CheckLossProblem) -> Vec<f64> {
    let Some(mut beta) = weighted_least_squares(problem, |i| problem.weight(i)) else {
        return vec![0.0; problem.k];
    };
    let level = problem.level;
    for _ in 0..8 {
        let residuals: Vec<f64> = (0..problem.n)
            .map(|i| problem.responses[i] - dot(problem.row(i), &beta))
            .collect();
        let mean_abs = residuals.iter().map(|r| r.abs()).sum::<f64>() / problem.n as f64;
        let floor = 1e-4 * mean_abs + 1e-12;
        let next = weighted_least_squares(problem, |i| {
            let r = residuals[i];
            let side = if r >= 0.0 { level } else { 1.0 - level };
            problem.weight(i) * side / r.abs().max(floor)
        });
        match next {
            Some(b) => beta = b,
            None => break,
        }
    }
    beta
}

/// Greedily selects `k` linearly independent rows, preferring rows with small
/// residuals at `beta`.
fn starting_basis(problem: &CheckLossProblem, beta: &[f64]) -> Option<Vec<usize>> {
    let mut order: Vec<(bool, f64, usize)> = (0..problem.n)
        .map(|i| {
            let r = problem.responses[i] - dot(problem.row(i), beta);
            (problem.weight(i) <= 0.0, r.abs(), i)
        })
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    independent_rows(problem, order.into_iter().map(|(_, _, i)| i))
}

fn independent_rows(
    problem: &CheckLossProblem,
    candidates: impl Iterator<Item = usize>,
) -> Option<Vec<usize>> {
    let k = problem.k;
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = Vec::with_capacity(k);
    for i in candidates {
        let row = problem.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut v = row.to_vec();
        for _ in 0..2 {
            for q in &ortho {
                let c = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let rest = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rest > 1e-7 * norm {
            v.iter_mut().for_each(|x| *x /= rest);
            ortho.push(v);
            chosen.push(i);
            if chosen.len() == k {
                return Some(chosen);
            }
        }
    }
    None
}

fn basis_matrix(problem: &CheckLossProblem, basis: &[usize]) -> DMatrix<f64> {
    let k = problem.k;
    DMatrix::from_fn(k, k, |r, c| problem.design[basis[r] * k + c])
}

fn usable_warm_start(problem: &CheckLossProblem, basis: &[usize]) -> bool {
    if basis.len() != problem.k || basis.iter().any(|&i| i >= problem.n) {
        return false;
    }
    let mut seen = basis.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != basis.len() {
        return false;
    }
    independent_rows(problem, basis.iter().copied()).is_some()
}

struct Candidate {
    step: f64,
    increment: f64,
    alpha: f64,
    index: usize,
}

fn solve(
    problem: &CheckLossProblem,
    config: &SolverConfig,
    warm_start: Option<&[usize]>,
) -> Result<QuantileFit> {
    let n = problem.n;
    let k = problem.k;
    let level = problem.level;
    let y = &problem.responses;
    let w: Vec<f64> = (0..n).map(|i| problem.weight(i)).collect();

    let mut basis = match warm_start {
        Some(b) if usable_warm_start(problem, b) => b.to_vec(),
        _ => {
            let beta0 = reweighted_start(problem);
            starting_basis(problem, &beta0).ok_or_else(|| Error::RankDeficient {
                stage: "quantile regression".into(),
                columns: vec!["<rows>".into()],
            })?
        }
    };

    let y_scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs())) + 1.0;
    let zero_band = 1e-11 * y_scale;
    let w_max = w.iter().fold(0.0_f64, |m, v| m.max(*v));
    let feas_tol = config.feasibility_tol * (1.0 + w_max);
    let x_max = problem
        .design
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let max_pivots = config.max_pivots.unwrap_or(1000 + 50 * n);

    // (1 - level) X'w
    let mut target = vec![0.0; k];
    for i in 0..n {
        let row = problem.row(i);
        for j in 0..k {
            target[j] += (1.0 - level) * w[i] * row[j];
        }
    }

    let mut in_basis = vec![usize::MAX; n];
    for (p, &i) in basis.iter().enumerate() {
        in_basis[i] = p;
    }
    let mut upper = vec![false; n];
    let mut residuals = vec![0.0; n];
    let mut degenerate_run = 0usize;
    let mut best: Option<QuantileFit> = None;

    for iteration in 0..=max_pivots {
        let b = basis_matrix(problem, &basis);
        let lu = b.clone().lu();
        let rhs = DVector::from_iterator(k, basis.iter().map(|&i| y[i]));
        let beta = lu
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidInput(format!("singular basis at level {level}")))?;
        let beta: Vec<f64> = beta.iter().copied().collect();

        let mut all_zero = true;
        for i in 0..n {
            if in_basis[i] != usize::MAX {
                residuals[i] = 0.0;
                continue;
            }
            let r = y[i] - dot(problem.row(i), &beta);
            residuals[i] = r;
            if r > zero_band {
                upper[i] = true;
                all_zero = false;
            } else if r < -zero_band {
                upper[i] = false;
                all_zero = false;
            }
        }

        let objective: f64 = (0..n).map(|i| w[i] * rho(level, residuals[i])).sum();
        let current = QuantileFit {
            coefficients: beta.clone(),
            objective,
            level,
            converged: false,
            basis: basis.clone(),
        };
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(current.clone());
        }
        if all_zero {
            return Ok(QuantileFit {
                converged: true,
                ..current
            });
        }
        if iteration == max_pivots {
            break;
        }

        // Basic dual values: X_B' a_B = target - sum_{nonbasic upper} w_i x_i.
        let mut rest = target.clone();
        for i in 0..n {
            if in_basis[i] == usize::MAX && upper[i] {
                let row = problem.row(i);
                for j in 0..k {
                    rest[j] -= w[i] * row[j];
                }
            }
        }
        let dual = b
            .transpose()
            .lu()
            .solve(&DVector::from_vec(rest))
            .ok_or_else(|| Error::InvalidInput(format!("singular basis at level {level}")))?;

        let bland = degenerate_run > 2 * k + 20;
        let mut leaving: Option<(usize, f64)> = None;
        for p in 0..k {
            let j = basis[p];
            let a = dual[p];
            let violation = if a < -feas_tol {
                -a
            } else if a > w[j] + feas_tol {
                a - w[j]
            } else {
                0.0
            };
            if violation <= 0.0 {
                continue;
            }
            let better = match leaving {
                None => true,
                Some((q, v)) => {
                    if bland {
                        j < basis[q]
                    } else {
                        violation > v
                    }
                }
            };
            if better {
                leaving = Some((p, violation));
            }
        }
        let Some((p, violation)) = leaving else {
            return Ok(QuantileFit {
                converged: true,
                ..current
            });
        };
        let leaving_obs = basis[p];
        // Move so that the leaving residual becomes negative (sigma = +1)
        // when its dual value is below zero, positive otherwise.
        let sigma = if dual[p] < 0.0 { 1.0 } else { -1.0 };

        let mut unit = DVector::<f64>::zeros(k);
        unit[p] = 1.0;
        let direction = lu
            .solve(&unit)
            .ok_or_else(|| Error::InvalidInput(format!("singular basis at level {level}")))?;
        let direction: Vec<f64> = direction.iter().copied().collect();
        let alpha_tol = 1e-12 * (1.0 + direction.iter().map(|d| d.abs()).sum::<f64>() * x_max);

        let mut candidates: Vec<Candidate> = Vec::new();
        for i in 0..n {
            if in_basis[i] != usize::MAX || w[i] <= 0.0 {
                continue;
            }
            let alpha = dot(problem.row(i), &direction);
            let g = sigma * alpha;
            let step = if upper[i] && g > alpha_tol {
                residuals[i].max(0.0) / g
            } else if !upper[i] && g < -alpha_tol {
                (-residuals[i]).max(0.0) / -g
            } else {
                continue;
            };
            candidates.push(Candidate {
                step,
                increment: w[i] * alpha.abs(),
                alpha: alpha.abs(),
                index: i,
            });
        }
        candidates.sort_by(|a, b| {
            a.step.total_cmp(&b.step).then_with(|| {
                if bland {
                    a.index.cmp(&b.index)
                } else {
                    b.alpha.total_cmp(&a.alpha).then(a.index.cmp(&b.index))
                }
            })
        });

        let mut slope = -violation;
        let mut entering = None;
        for (pos, c) in candidates.iter().enumerate() {
            slope += c.increment;
            if slope >= 0.0 {
                entering = Some(pos);
                break;
            }
        }
        let Some(pos) = entering else {
            return Err(Error::InvalidInput(format!(
                "check-loss objective is unbounded below at level {level}; \
                 positively weighted rows do not identify the coefficients"
            )));
        };
        for c in &candidates[..pos] {
            upper[c.index] = !upper[c.index];
        }
        let step = candidates[pos].step;
        let entering_obs = candidates[pos].index;

        if step <= 0.0 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }

        in_basis[leaving_obs] = usize::MAX;
        upper[leaving_obs] = sigma < 0.0;
        in_basis[entering_obs] = p;
        basis[p] = entering_obs;
    }

    let best = best.expect("at least one iterate");
    Err(Error::NonConvergence {
        level,
        iterations: max_pivots,
        best: Box::new(best),
    })
}

/// Coefficient curve over a grid of quantile levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileProcess {
    levels: Vec<f64>,
    fits: Vec<QuantileFit>,
}

impl QuantileProcess {
    pub fn new(fits: Vec<QuantileFit>) -> Result<Self> {
        let levels: Vec<f64> = fits.iter().map(|f| f.level).collect();
        validate_grid(&levels)?;
        Ok(QuantileProcess { levels, fits })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn fits(&self) -> &[QuantileFit] {
        &self.fits
    }

    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.fits.first().map_or(0, |f| f.coefficients.len())
    }

    pub fn coefficients(&self, t: usize) -> &[f64] {
        &self.fits[t].coefficients
    }

    /// Predicted quantiles `beta(u_t)' row` for every level of the grid.
    pub fn predict_all(&self, row: &[f64]) -> Vec<f64> {
        self.fits
            .iter()
            .map(|f| dot(&f.coefficients, row))
            .collect()
    }
}

fn validate_grid(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("empty quantile grid".into()));
    }
    if let Some(bad) = levels.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
        return Err(Error::InvalidInput(format!(
            "grid level {bad} outside (0, 1)"
        )));
    }
    if levels.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidInput(
            "quantile grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Uniform mesh `epsilon = u_1 < ... < u_T = 1 - epsilon`.
pub fn trimmed_grid(epsilon: f64, size: usize) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidInput(format!(
            "trimming constant {epsilon} must lie in (0, 0.5)"
        )));
    }
    if size < 2 {
        return Err(Error::InvalidInput(format!(
            "a trimmed grid needs at least 2 levels, got {size}"
        )));
    }
    let width = (1.0 - 2.0 * epsilon) / (size - 1) as f64;
    Ok((0..size)
        .map(|t| {
            if t + 1 == size {
                1.0 - epsilon
            } else {
                epsilon + t as f64 * width
            }
        })
        .collect())
}

/// Fits every level of `grid`, starting at the level closest to the median
/// and warm-starting outward in both directions. The result depends only on
/// the inputs and `config`.
pub fn fit_process(
    template: &CheckLossProblem,
    grid: &[f64],
    config: &SolverConfig,
) -> Result<QuantileProcess> {
    validate_grid(grid)?;
    let deficient = deficient_columns(template, config.rank_tol);
    if !deficient.is_empty() {
        return Err(Error::RankDeficient {
            stage: "quantile regression".into(),
            columns: deficient.iter().map(|c| c.to_string()).collect(),
        });
    }
    let start = grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
        .map(|(t, _)| t)
        .expect("nonempty grid");

    let at = |level: f64| template.clone().with_level(level);
    let first = solve(&at(grid[start])?, config, None).map_err(|e| e.at_level(grid[start]))?;

    let sweep = |levels: Vec<f64>| -> Result<Vec<QuantileFit>> {
        let mut out = Vec::with_capacity(levels.len());
        let mut previous = first.basis.clone();
        let mut problem = template.clone();
        for level in levels {
            problem = problem.with_level(level)?;
            let fit = solve(&problem, config, Some(&previous)).map_err(|e| e.at_level(level))?;
            previous = fit.basis.clone();
            out.push(fit);
        }
        Ok(out)
    };
    let above: Vec<f64> = grid[start + 1..].to_vec();
    let below: Vec<f64> = grid[..start].iter().rev().copied().collect();
    let (up, down) = rayon::join(|| sweep(above), || sweep(below));
    let (up, mut down) = (up?, down?);

    down.reverse();
    let mut fits = down;
    fits.push(first);
    fits.extend(up);
    QuantileProcess::new(fits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_problem(y: &[f64], level: f64) -> CheckLossProblem {
        CheckLossProblem::from_row_major(y.to_vec(), vec![1.0; y.len()], 1, level).unwrap()
    }

    #[test]
    fn check_loss_values() {
        assert_eq!(check_loss(0.5, 2.0).unwrap(), 1.0);
        assert_eq!(check_loss(0.25, -4.0).unwrap(), 3.0);
        assert_eq!(check_loss(0.9, 0.0).unwrap(), 0.0);
        assert!(check_loss(0.5, f64::NAN).is_err());
        assert!(check_loss(0.5, f64::INFINITY).is_err());
        assert!(check_loss(1.0, 1.0).is_err());
    }

    #[test]
    fn median_of_odd_sample() {
        let fit = fit(&constant_problem(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5)).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.coefficients, vec![3.0]);
        assert!((fit.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn low_level_objective_on_flat_minimizer_set() {
        // Objective over the breakpoints {1,..,5} at level 0.2: minimum 2.0
        // attained on [1, 2].
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let enumerated = y
            .iter()
            .map(|&c| y.iter().map(|&v| rho(0.2, v - c)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert!((enumerated - 2.0).abs() < 1e-12);
        let fit = fit(&constant_problem(&y, 0.2)).unwrap();
        assert!((fit.objective - enumerated).abs() < 1e-12);
        assert!((1.0..=2.0).contains(&fit.coefficients[0]));
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let design = vec![1.0, 2.0, 2.0, 1.0, 3.0, 3.0, 1.0, 4.0, 4.0, 1.0, 0.0, 0.0];
        let problem =
            CheckLossProblem::from_row_major(vec![1.0, 2.0, 3.0, 4.0], design, 3, 0.5).unwrap();
        match fit(&problem) {
            Err(Error::RankDeficient { columns, .. }) => assert_eq!(columns, vec!["2"]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn invalid_problems_rejected() {
        assert!(CheckLossProblem::from_row_major(vec![1.0], vec![1.0, 2.0], 2, 0.5).is_err());
        assert!(CheckLossProblem::from_row_major(vec![1.0, 2.0], vec![1.0, 1.0], 1, 0.0).is_err());
        assert!(
            CheckLossProblem::from_row_major(vec![1.0, 2.0], vec![1.0, f64::NAN], 1, 0.5).is_err()
        );
        let p = constant_problem(&[1.0, 2.0], 0.5);
        assert!(p.clone().with_weights(vec![1.0]).is_err());
        assert!(p.with_weights(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_objective() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x).collect();
        let design: Vec<f64> = xs.iter().flat_map(|x| [1.0, *x]).collect();
        for level in [0.1, 0.5, 0.93] {
            let p = CheckLossProblem::from_row_major(y.clone(), design.clone(), 2, level).unwrap();
            let f = fit(&p).unwrap();
            assert!(f.objective.abs() < 1e-10);
            assert!((f.coefficients[0] - 1.5).abs() < 1e-9);
            assert!((f.coefficients[1] + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_weights_match_unweighted() {
        let y = [0.3, -1.2, 2.2, 0.9, 1.7, -0.4, 3.1];
        let design: Vec<f64> = (0..7).flat_map(|i| [1.0, (i as f64).sin()]).collect();
        let plain = CheckLossProblem::from_row_major(y.to_vec(), design, 2, 0.35).unwrap();
        let weighted = plain.clone().with_weights(vec![1.0; 7]).unwrap();
        assert_eq!(
            fit(&plain).unwrap().objective,
            fit(&weighted).unwrap().objective
        );
    }

    #[test]
    fn process_on_constant_design_gives_sample_quantiles() {
        let y: Vec<f64> = vec![4.0, -1.0, 0.0, 2.0, 1.0, -2.0, 3.0, -3.0];
        let p = constant_problem(&y, 0.5);
        let grid = [0.25, 0.5, 0.75];
        let process = fit_process(&p, &grid, &SolverConfig::default()).unwrap();
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        for (t, &u) in grid.iter().enumerate() {
            // n u is an integer here, so any point between the two order
            // statistics around it minimizes; the vertex is one of them.
            let lo = sorted[(u * 8.0) as usize - 1];
            let hi = sorted[(u * 8.0) as usize];
            let c = process.coefficients(t)[0];
            assert!(c == lo || c == hi, "level {u}: {c} not in {{{lo}, {hi}}}");
        }
    }

    #[test]
    fn singleton_process_matches_single_fit() {
        let y = [2.0, 7.0, 1.0, 8.0, 2.5, 8.0, 1.5];
        let p = constant_problem(&y, 0.5);
        let process = fit_process(&p, &[0.5], &SolverConfig::default()).unwrap();
        assert_eq!(process.len(), 1);
        assert_eq!(process.fits()[0].objective, fit(&p).unwrap().objective);
    }

    #[test]
    fn grid_validation() {
        let p = constant_problem(&[1.0, 2.0, 3.0], 0.5);
        let cfg = SolverConfig::default();
        assert!(fit_process(&p, &[0.5, 0.4], &cfg).is_err());
        assert!(fit_process(&p, &[0.0, 0.4], &cfg).is_err());
        assert!(fit_process(&p, &[], &cfg).is_err());
        let g = trimmed_grid(0.01, 599).unwrap();
        assert_eq!(g.len(), 599);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[598], 0.99);
        assert!((g[299] - 0.5).abs() < 1e-15);
        assert!(trimmed_grid(0.5, 10).is_err());
        assert!(trimmed_grid(0.01, 1).is_err());
    }

    #[test]
    fn non_convergence_carries_best_iterate() {
        let y: Vec<f64> = (0..40)
            .map(|i| ((i * 37) % 11) as f64 - 0.1 * i as f64)
            .collect();
        let design: Vec<f64> = (0..40).flat_map(|i| [1.0, i as f64]).collect();
        let p = CheckLossProblem::from_row_major(y, design, 2, 0.3).unwrap();
        let cfg = SolverConfig {
            max_pivots: Some(0),
            ..SolverConfig::default()
        };
        let optimum = fit(&p).unwrap().objective;
        match fit_with(&p, &cfg, Some(&[0, 1])) {
            Err(Error::NonConvergence { best, .. }) => {
                assert!(best.objective >= optimum - 1e-12);
                assert!(!best.converged);
            }
            Ok(f) => assert!((f.objective - optimum).abs() < 1e-9),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
