use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// A scalar transformation entering one of the basis vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Term {
    Constant,
    Identity,
    Power(i32),
    /// Standard normal quantile; requires arguments in (0, 1).
    InverseNormal,
    /// Natural logarithm; requires positive arguments.
    Log,
}

impl Term {
    pub fn eval(&self, value: f64) -> Result<f64> {
        match *self {
            Term::Constant => Ok(1.0),
            Term::Identity => Ok(value),
            Term::Power(k) => Ok(value.powi(k)),
            Term::InverseNormal => {
                if value > 0.0 && value < 1.0 {
                    Ok(normal::quantile(value))
                } else {
                    Err(Error::Domain(format!(
                        "inverse normal term needs an argument in (0, 1), got {value}"
                    )))
                }
            }
            Term::Log => {
                if value > 0.0 {
                    Ok(value.ln())
                } else {
                    Err(Error::Domain(format!(
                        "log term needs a positive argument, got {value}"
                    )))
                }
            }
        }
    }

    /// Human-readable label with the variable name substituted.
    pub fn label(&self, variable: &str) -> String {
        match self {
            Term::Constant => "1".into(),
            Term::Identity => variable.into(),
            Term::Power(k) => format!("{variable}^{k}"),
            Term::InverseNormal => format!("probit({variable})"),
            Term::Log => format!("log({variable})"),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Constant => write!(f, "1"),
            Term::Identity => write!(f, "id"),
            Term::Power(k) => write!(f, "pow{k}"),
            Term::InverseNormal => write!(f, "probit"),
            Term::Log => write!(f, "log"),
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let term = match t.as_str() {
            "1" | "const" | "constant" => Term::Constant,
            "id" | "identity" | "linear" | "x" | "v" | "z" | "z1" => Term::Identity,
            "probit" | "qnorm" | "invnorm" | "inverse_normal" => Term::InverseNormal,
            "log" | "ln" => Term::Log,
            other => {
                let power = other
                    .strip_prefix("pow")
                    .or_else(|| other.split_once('^').map(|(_, k)| k));
                match power.and_then(|k| k.parse::<i32>().ok()) {
                    Some(k) => Term::Power(k),
                    None => {
                        return Err(Error::InvalidInput(format!(
                            "unknown basis term `{s}` (expected 1, id, powK, probit or log)"
                        )))
                    }
                }
            }
        };
        Ok(term)
    }
}

impl TryFrom<String> for Term {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

/// Transformation vectors of the triangular specification: `p(x)`, `q(v)`,
/// `r(z1)` and `s(z)`. The first-stage design is `s(z) ⊗ r(z1)` and the
/// second-stage design is `p(x) ⊗ r(z1) ⊗ q(v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSpec {
    pub p: Vec<Term>,
    pub q: Vec<Term>,
    pub r: Vec<Term>,
    pub s: Vec<Term>,
}

impl Default for BasisSpec {
    /// `p = (1, x)`, `q = (1, probit(v))`, `r = (1)`, `s = (1, z)`.
    fn default() -> Self {
        BasisSpec {
            p: vec![Term::Constant, Term::Identity],
            q: vec![Term::Constant, Term::InverseNormal],
            r: vec![Term::Constant],
            s: vec![Term::Constant, Term::Identity],
        }
    }
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, terms) in [
            ("p", &self.p),
            ("q", &self.q),
            ("r", &self.r),
            ("s", &self.s),
        ] {
            match terms.first() {
                None => {
                    return Err(Error::InvalidInput(format!("basis `{name}` is empty")));
                }
                Some(Term::Constant) => {}
                Some(other) => {
                    return Err(Error::InvalidInput(format!(
                        "basis `{name}` must start with the constant term, found `{other}`"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn first_stage_dim(&self) -> usize {
        self.s.len() * self.r.len()
    }

    pub fn second_stage_dim(&self) -> usize {
        self.p.len() * self.r.len() * self.q.len()
    }

    /// `s(z) ⊗ r(z1)`.
    pub fn first_stage_row(&self, z: f64, z1: f64) -> Result<Vec<f64>> {
        let s = eval_all(&self.s, z)?;
        let r = eval_all(&self.r, z1)?;
        Ok(kron(&s, &r))
    }

    /// `p(x) ⊗ r(z1) ⊗ q(v)`.
    pub fn second_stage_row(&self, x: f64, z1: f64, v: f64) -> Result<Vec<f64>> {
        let p = eval_all(&self.p, x)?;
        let r = eval_all(&self.r, z1)?;
        let q = eval_all(&self.q, v)?;
        Ok(kron(&kron(&p, &r), &q))
    }

    pub fn first_stage_names(&self) -> Vec<String> {
        kron_names(&[label_all(&self.s, "z"), label_all(&self.r, "z1")])
    }

    pub fn second_stage_names(&self) -> Vec<String> {
        kron_names(&[
            label_all(&self.p, "x"),
            label_all(&self.r, "z1"),
            label_all(&self.q, "v"),
        ])
    }
}

/// Second-stage regressor `w(x, z1, v) = p(x) ⊗ r(z1) ⊗ q(v)`.
pub fn build_w(spec: &BasisSpec, x: f64, z1: f64, v: f64) -> Result<Vec<f64>> {
    spec.second_stage_row(x, z1, v)
}

pub(crate) fn eval_all(terms: &[Term], value: f64) -> Result<Vec<f64>> {
    terms.iter().map(|t| t.eval(value)).collect()
}

fn label_all(terms: &[Term], variable: &str) -> Vec<String> {
    terms.iter().map(|t| t.label(variable)).collect()
}

/// Row-major kronecker product of two vectors.
pub fn kron(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            out.push(x * y);
        }
    }
    out
}

fn kron_names(parts: &[Vec<String>]) -> Vec<String> {
    let mut names = vec![String::new()];
    for part in parts {
        let mut next = Vec::with_capacity(names.len() * part.len());
        for prefix in &names {
            for label in part {
                // Constant factors are dropped from products: `x*1*v` reads `x*v`.
                let joined = match (prefix.as_str(), label.as_str()) {
                    ("", l) | ("1", l) => l.to_string(),
                    (p, "1") => p.to_string(),
                    (p, l) => format!("{p}*{l}"),
                };
                next.push(joined);
            }
        }
        names = next;
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_prq() -> BasisSpec {
        BasisSpec {
            p: vec![Term::Constant, Term::Identity],
            q: vec![Term::Constant, Term::InverseNormal],
            r: vec![Term::Constant, Term::Identity],
            s: vec![Term::Constant, Term::Identity],
        }
    }

    #[test]
    fn kronecker_examples() {
        let spec = spec_prq();
        assert_eq!(
            build_w(&spec, 0.0, 0.0, 0.5).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            build_w(&spec, 1.0, 1.0, 0.5).unwrap(),
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(spec.second_stage_dim(), 8);
        let names = spec.second_stage_names();
        assert_eq!(names[0], "1");
        assert_eq!(names[3], "z1*probit(v)");
        assert_eq!(names[7], "x*z1*probit(v)");
    }

    #[test]
    fn inverse_normal_domain() {
        let spec = spec_prq();
        assert!(matches!(
            build_w(&spec, 0.0, 0.0, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            build_w(&spec, 0.0, 0.0, 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn constant_bases_give_ones() {
        let spec = BasisSpec {
            p: vec![Term::Constant; 3],
            q: vec![Term::Constant; 2],
            r: vec![Term::Constant; 2],
            s: vec![Term::Constant],
        };
        assert_eq!(build_w(&spec, 3.3, 1.0, 0.1).unwrap(), vec![1.0; 12]);
    }

    #[test]
    fn term_parsing() {
        assert_eq!("1".parse::<Term>().unwrap(), Term::Constant);
        assert_eq!("x".parse::<Term>().unwrap(), Term::Identity);
        assert_eq!("x^2".parse::<Term>().unwrap(), Term::Power(2));
        assert_eq!("pow3".parse::<Term>().unwrap(), Term::Power(3));
        assert_eq!("PROBIT".parse::<Term>().unwrap(), Term::InverseNormal);
        assert!("spline".parse::<Term>().is_err());
        for t in [
            Term::Constant,
            Term::Identity,
            Term::Power(2),
            Term::InverseNormal,
            Term::Log,
        ] {
            assert_eq!(t.to_string().parse::<Term>().unwrap(), t);
        }
    }

    #[test]
    fn validation_requires_leading_constant() {
        let mut spec = BasisSpec::default();
        assert!(spec.validate().is_ok());
        spec.q = vec![Term::InverseNormal];
        assert!(spec.validate().is_err());
        spec.q = vec![];
        assert!(spec.validate().is_err());
    }
}
