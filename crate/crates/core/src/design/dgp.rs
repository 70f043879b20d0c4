//! Synthetic triangular data-generating processes with known structural
//! functions.
//!
//! The outcome follows a heterogeneous-coefficients model
//! `Y = Σ_j p_j(X) Σ_l q_l(V) β_jl(U) + γ Z1` with
//! `β_jl(u) = c + a·u + b·Φ⁻¹(u)`, and the treatment follows the location-scale
//! first stage `X = π0 + π1 Z + π2 Z1 + (σ0 + σ1 Z) Φ⁻¹(V)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::basis::{eval_all, Term};
use super::data::Dataset;
use crate::error::{Error, Result};
use crate::normal;

/// `β(u) = constant + linear·u + probit·Φ⁻¹(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientFn {
    pub constant: f64,
    pub linear: f64,
    pub probit: f64,
}

impl CoefficientFn {
    pub fn constant(c: f64) -> Self {
        CoefficientFn {
            constant: c,
            ..Default::default()
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        let mut out = self.constant + self.linear * u;
        if self.probit != 0.0 {
            out += self.probit * normal::quantile(u);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstrumentLaw {
    Bernoulli {
        prob: f64,
    },
    Discrete {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `Z = U^exponent` with `U ~ U(0,1)`; exponents below one pile mass near 1.
    Power {
        exponent: f64,
    },
}

impl InstrumentLaw {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            InstrumentLaw::Bernoulli { prob } => (0.0..=1.0).contains(prob),
            InstrumentLaw::Discrete { values, probs } => {
                !values.is_empty()
                    && values.len() == probs.len()
                    && probs.iter().all(|p| *p >= 0.0)
                    && (probs.iter().sum::<f64>() - 1.0).abs() < 1e-9
            }
            InstrumentLaw::Normal { sd, .. } => *sd > 0.0,
            InstrumentLaw::Uniform { lo, hi } => hi > lo,
            InstrumentLaw::Power { exponent } => *exponent > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDgp(format!(
                "invalid instrument law {self:?}"
            )))
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            InstrumentLaw::Bernoulli { prob } => {
                if rng.random::<f64>() < *prob {
                    1.0
                } else {
                    0.0
                }
            }
            InstrumentLaw::Discrete { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                values[values.len() - 1]
            }
            InstrumentLaw::Normal { mean, sd } => {
                let e: f64 = StandardNormal.sample(rng);
                mean + sd * e
            }
            InstrumentLaw::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            InstrumentLaw::Power { exponent } => rng.random::<f64>().powf(*exponent),
        }
    }
}

/// `X = intercept + slope·Z + shift·Z1 + (scale + scale_slope·Z)·Φ⁻¹(V)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstStageMap {
    pub intercept: f64,
    pub slope: f64,
    #[serde(default)]
    pub shift: f64,
    pub scale: f64,
    #[serde(default)]
    pub scale_slope: f64,
}

impl FirstStageMap {
    pub fn quantile(&self, v: f64, z: f64, z1: f64) -> f64 {
        self.location(z, z1) + self.spread(z) * normal::quantile(v)
    }

    pub fn cdf(&self, x: f64, z: f64, z1: f64) -> f64 {
        normal::cdf((x - self.location(z, z1)) / self.spread(z))
    }

    fn location(&self, z: f64, z1: f64) -> f64 {
        self.intercept + self.slope * z + self.shift * z1
    }

    fn spread(&self, z: f64) -> f64 {
        self.scale + self.scale_slope * z
    }
}

/// Binary exogenous covariate: `Z1 ~ Bernoulli(prob)`, entering the outcome
/// additively through `outcome_shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Covariate {
    pub prob: f64,
    #[serde(default)]
    pub outcome_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub p: Vec<Term>,
    pub q: Vec<Term>,
    /// `beta[j][l]` multiplies `p_j(X) q_l(V)`.
    pub beta: Vec<Vec<CoefficientFn>>,
    pub first_stage: FirstStageMap,
    pub instrument: InstrumentLaw,
    #[serde(default)]
    pub covariate: Option<Covariate>,
    #[serde(default)]
    pub seed: u64,
}

/// Nodes of the midpoint rule used to integrate over `V`.
pub const V_NODES: usize = 10_001;

impl DgpSpec {
    /// `Y = ε1 + ε2 X` with `ε1 = 1 + 0.5Φ⁻¹(V) + Φ⁻¹(U)`, `ε2 = 0.5 + 0.3Φ⁻¹(V)`,
    /// binary instrument and `X = 1 + Z + (1 + 0.5Z)Φ⁻¹(V)`.
    pub fn linear_binary(seed: u64) -> Self {
        DgpSpec {
            p: vec![Term::Constant, Term::Identity],
            q: vec![Term::Constant, Term::InverseNormal],
            beta: vec![
                vec![
                    CoefficientFn {
                        constant: 1.0,
                        linear: 0.0,
                        probit: 1.0,
                    },
                    CoefficientFn::constant(0.5),
                ],
                vec![CoefficientFn::constant(0.5), CoefficientFn::constant(0.3)],
            ],
            first_stage: FirstStageMap {
                intercept: 1.0,
                slope: 1.0,
                shift: 0.0,
                scale: 1.0,
                scale_slope: 0.5,
            },
            instrument: InstrumentLaw::Bernoulli { prob: 0.5 },
            covariate: None,
            seed,
        }
    }

    /// `Y = 1 + 0.5X` exactly, same first stage as [`DgpSpec::linear_binary`].
    pub fn deterministic(seed: u64) -> Self {
        DgpSpec {
            beta: vec![
                vec![CoefficientFn::constant(1.0), CoefficientFn::default()],
                vec![CoefficientFn::constant(0.5), CoefficientFn::default()],
            ],
            ..Self::linear_binary(seed)
        }
    }

    /// Linear model whose treatment does not respond to the instrument.
    pub fn irrelevant(seed: u64) -> Self {
        let mut spec = Self::linear_binary(seed);
        spec.first_stage.slope = 0.0;
        spec.first_stage.scale_slope = 0.0;
        spec
    }

    /// Linear outcome with a continuous instrument `Z = U^0.25` on [0, 1],
    /// whose lower half carries about 6% of the mass.
    pub fn continuous_skewed(seed: u64) -> Self {
        DgpSpec {
            first_stage: FirstStageMap {
                intercept: 0.0,
                slope: 2.0,
                shift: 0.0,
                scale: 0.7,
                scale_slope: 0.3,
            },
            instrument: InstrumentLaw::Power { exponent: 0.25 },
            ..Self::linear_binary(seed)
        }
    }

    /// `Y = ε1 + ε2 X` with `ε_j = a_j + b_j V + c_j U` and `q(v) = (1, v)`.
    pub fn identity_control(a: [f64; 2], b: [f64; 2], c: [f64; 2], seed: u64) -> Self {
        let beta = (0..2)
            .map(|j| {
                vec![
                    CoefficientFn {
                        constant: a[j],
                        linear: c[j],
                        probit: 0.0,
                    },
                    CoefficientFn::constant(b[j]),
                ]
            })
            .collect();
        DgpSpec {
            q: vec![Term::Constant, Term::Identity],
            beta,
            ..Self::linear_binary(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() || self.q.is_empty() {
            return Err(Error::InvalidDgp("outcome bases must be nonempty".into()));
        }
        if self.beta.len() != self.p.len() || self.beta.iter().any(|b| b.len() != self.q.len()) {
            return Err(Error::InvalidDgp(format!(
                "coefficient table must be {}x{}",
                self.p.len(),
                self.q.len()
            )));
        }
        let finite = self
            .beta
            .iter()
            .flatten()
            .all(|c| c.constant.is_finite() && c.linear.is_finite() && c.probit.is_finite());
        if !finite {
            return Err(Error::InvalidDgp("non-finite coefficient".into()));
        }
        self.instrument.validate()?;
        if let Some(cov) = &self.covariate {
            if !(0.0..=1.0).contains(&cov.prob) {
                return Err(Error::InvalidDgp(
                    "covariate probability outside [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Coefficients of `Y = a0 + a1·U + a2·Φ⁻¹(U)` at a support point.
    fn outcome_terms(&self, x: f64, z1: f64, v: f64) -> Result<[f64; 3]> {
        let p = eval_all(&self.p, x)?;
        let q = eval_all(&self.q, v)?;
        Ok(self.outcome_terms_from(&p, &q, z1))
    }

    fn outcome_terms_from(&self, p: &[f64], q: &[f64], z1: f64) -> [f64; 3] {
        let mut a = [0.0; 3];
        for (pj, row) in p.iter().zip(&self.beta) {
            for (ql, c) in q.iter().zip(row) {
                let w = pj * ql;
                a[0] += w * c.constant;
                a[1] += w * c.linear;
                a[2] += w * c.probit;
            }
        }
        if let Some(cov) = &self.covariate {
            a[0] += cov.outcome_shift * z1;
        }
        a
    }

    /// Coefficient vector `β(u)` ordered as `p ⊗ q`.
    pub fn beta_at(&self, u: f64) -> Vec<f64> {
        self.beta.iter().flatten().map(|c| c.eval(u)).collect()
    }
}

/// Draws from `U(0, 1)` excluding zero.
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// `u ↦ a1·u + a2·Φ⁻¹(u)` is nondecreasing on (0,1) iff `a2 ≥ 0` and
/// `a1 + a2·√(2π) ≥ 0`, since `1/φ(Φ⁻¹(u)) ≥ √(2π)`.
fn monotone_in_u(a: &[f64; 3]) -> bool {
    let tol = 1e-12 * (1.0 + a[1].abs() + a[2].abs());
    a[2] >= -tol && a[1] + a[2] * (2.0 * std::f64::consts::PI).sqrt() >= -tol
}

/// Simulated sample with the latent draws and the true structural functions.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: Dataset,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub truth: GroundTruth,
}

pub fn simulate(spec: &DgpSpec, n: usize) -> Result<Simulation> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Dataset {
        y: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        z1: Vec::with_capacity(n),
    };
    let mut vs = Vec::with_capacity(n);
    let mut us = Vec::with_capacity(n);
    for i in 0..n {
        let z = spec.instrument.draw(&mut rng);
        let z1 = match &spec.covariate {
            Some(cov) if rng.random::<f64>() < cov.prob => 1.0,
            _ => 0.0,
        };
        let v = open_unit(&mut rng);
        let u = open_unit(&mut rng);
        if spec.first_stage.spread(z) <= 0.0 {
            return Err(Error::InvalidDgp(format!(
                "first-stage scale is not positive at z = {z} (observation {i})"
            )));
        }
        let x = spec.first_stage.quantile(v, z, z1);
        let a = spec.outcome_terms(x, z1, v)?;
        if !monotone_in_u(&a) {
            return Err(Error::InvalidDgp(format!(
                "outcome quantile is decreasing in u at (x, z1, v) = ({x}, {z1}, {v})"
            )));
        }
        let mut y = a[0] + a[1] * u;
        if a[2] != 0.0 {
            y += a[2] * normal::quantile(u);
        }
        data.y.push(y);
        data.x.push(x);
        data.z.push(z);
        data.z1.push(z1);
        vs.push(v);
        us.push(u);
    }
    let data = Dataset::new(data.y, data.x, data.z, data.z1)?;
    Ok(Simulation {
        data,
        v: vs,
        u: us,
        truth: GroundTruth::new(spec.clone())?,
    })
}

/// True conditional and structural functions of a [`DgpSpec`].
#[derive(Debug, Clone)]
pub struct GroundTruth {
    spec: DgpSpec,
    /// `q` evaluated at each midpoint node of (0, 1).
    q_nodes: Vec<Vec<f64>>,
    /// `(z1, probability)` support of the covariate.
    z1_support: Vec<(f64, f64)>,
}

impl GroundTruth {
    pub fn new(spec: DgpSpec) -> Result<Self> {
        spec.validate()?;
        let q_nodes = (0..V_NODES)
            .map(|k| eval_all(&spec.q, (k as f64 + 0.5) / V_NODES as f64))
            .collect::<Result<Vec<_>>>()?;
        let z1_support = match &spec.covariate {
            Some(c) if c.prob > 0.0 && c.prob < 1.0 => vec![(0.0, 1.0 - c.prob), (1.0, c.prob)],
            Some(c) if c.prob >= 1.0 => vec![(1.0, 1.0)],
            _ => vec![(0.0, 1.0)],
        };
        Ok(GroundTruth {
            spec,
            q_nodes,
            z1_support,
        })
    }

    pub fn spec(&self) -> &DgpSpec {
        &self.spec
    }

    /// `Q_{X|Z}(v | z, z1)`.
    pub fn first_stage_quantile(&self, v: f64, z: f64, z1: f64) -> f64 {
        self.spec.first_stage.quantile(v, z, z1)
    }

    /// `F_{X|Z}(x | z, z1)`.
    pub fn first_stage_cdf(&self, x: f64, z: f64, z1: f64) -> f64 {
        self.spec.first_stage.cdf(x, z, z1)
    }

    /// Conditional quantile `Q_{Y|X,Z1,V}(u | x, z1, v)`.
    pub fn conditional_quantile(&self, u: f64, x: f64, z1: f64, v: f64) -> Result<f64> {
        let a = self.spec.outcome_terms(x, z1, v)?;
        Ok(a[0] + a[1] * u + a[2] * normal::quantile(u))
    }

    /// `E[Y | X = x, Z1 = z1, V = v]`.
    pub fn conditional_mean(&self, x: f64, z1: f64, v: f64) -> Result<f64> {
        let a = self.spec.outcome_terms(x, z1, v)?;
        Ok(a[0] + 0.5 * a[1])
    }

    /// Conditional CDF `F_{Y|X,Z1,V}(y | x, z1, v)`.
    pub fn crf(&self, y: f64, x: f64, z1: f64, v: f64) -> Result<f64> {
        let a = self.spec.outcome_terms(x, z1, v)?;
        Ok(cdf_of_terms(&a, y))
    }

    /// Distribution structural function `G(y, x)`, integrating over `V` by
    /// the midpoint rule on [`V_NODES`] nodes and over the covariate support.
    pub fn dsf(&self, y: f64, x: f64) -> Result<f64> {
        let p = eval_all(&self.spec.p, x)?;
        let mut total = 0.0;
        for &(z1, w) in &self.z1_support {
            let sum: f64 = self
                .q_nodes
                .iter()
                .map(|q| cdf_of_terms(&self.spec.outcome_terms_from(&p, q, z1), y))
                .sum();
            total += w * sum / V_NODES as f64;
        }
        Ok(total)
    }

    /// Quantile structural function `inf{y : G(y, x) ≥ p}` by bisection.
    pub fn qsf(&self, prob: f64, x: f64) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Domain(format!("QSF level {prob} outside (0, 1)")));
        }
        let center = self.asf(x)?;
        let mut step = 1.0;
        let mut lo = center - step;
        while self.dsf(lo, x)? >= prob {
            step *= 2.0;
            lo = center - step;
        }
        step = 1.0;
        let mut hi = center + step;
        while self.dsf(hi, x)? < prob {
            step *= 2.0;
            hi = center + step;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.dsf(mid, x)? >= prob {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Average structural function in closed form,
    /// `Σ_j p_j(x) Σ_l E[q_l(V)] (c_jl + a_jl / 2) + γ E[Z1]`, with `E[q_l(V)]`
    /// from the midpoint rule (exact for polynomial and probit terms up to
    /// the node spacing).
    pub fn asf(&self, x: f64) -> Result<f64> {
        let p = eval_all(&self.spec.p, x)?;
        let nq = self.spec.q.len();
        let mut eq = vec![0.0; nq];
        for q in &self.q_nodes {
            for (acc, v) in eq.iter_mut().zip(q) {
                *acc += v;
            }
        }
        eq.iter_mut().for_each(|v| *v /= V_NODES as f64);
        let mut total = 0.0;
        for (pj, row) in p.iter().zip(&self.spec.beta) {
            for (ql, c) in eq.iter().zip(row) {
                total += pj * ql * (c.constant + 0.5 * c.linear);
            }
        }
        if let Some(cov) = &self.spec.covariate {
            let ez1: f64 = self.z1_support.iter().map(|(z, w)| z * w).sum();
            total += cov.outcome_shift * ez1;
        }
        Ok(total)
    }
}

/// `P(a0 + a1·U + a2·Φ⁻¹(U) ≤ y)` for `U ~ U(0,1)` and a nondecreasing map.
fn cdf_of_terms(a: &[f64; 3], y: f64) -> f64 {
    let [a0, a1, a2] = *a;
    let d = y - a0;
    if a2 == 0.0 {
        if a1 == 0.0 {
            return if d >= 0.0 { 1.0 } else { 0.0 };
        }
        return (d / a1).clamp(0.0, 1.0);
    }
    if a1 == 0.0 {
        return normal::cdf(d / a2);
    }
    // Solve a1·u + a2·Φ⁻¹(u) = d for u by bisection in probit scale.
    let f = |e: f64| a1 * normal::cdf(e) + a2 * e - d;
    let (mut lo, mut hi) = (-40.0, 40.0);
    if f(lo) > 0.0 {
        return 0.0;
    }
    if f(hi) <= 0.0 {
        return 1.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    normal::cdf(0.5 * (lo + hi))
}
