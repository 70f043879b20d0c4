//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use cvsf_core::bootstrap::{BootstrapConfig, WeightLaw};
use cvsf_core::design::{discretize_design1, discretize_design2, empirical_quantile};
use cvsf_core::structural::{DEFAULT_P_LEVELS, DEFAULT_X_PROBS, DEFAULT_Y_PROBS};
use cvsf_core::{BasisSpec, Dataset, Measure, PipelineConfig, Region, StageOptions};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Where to report the structural functions. Explicit grids win over
/// probability levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSpec {
    pub x: Option<Vec<f64>>,
    pub x_probs: Vec<f64>,
    pub p_levels: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub y_probs: Vec<f64>,
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec {
            x: None,
            x_probs: DEFAULT_X_PROBS.to_vec(),
            p_levels: DEFAULT_P_LEVELS.to_vec(),
            y: None,
            y_probs: DEFAULT_Y_PROBS.to_vec(),
        }
    }
}

impl RegionSpec {
    pub fn resolve(&self, data: &Dataset) -> Result<Region, Failure> {
        let quantiles = |values: &[f64], probs: &[f64]| -> Result<Vec<f64>, Failure> {
            if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Failure::Usage(format!(
                    "region probability {p} outside [0, 1]"
                )));
            }
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            Ok(probs
                .iter()
                .map(|&t| empirical_quantile(&sorted, t))
                .collect())
        };
        let mut x_grid = match &self.x {
            Some(x) => x.clone(),
            None => quantiles(&data.x, &self.x_probs)?,
        };
        x_grid.sort_by(f64::total_cmp);
        // a discrete treatment repeats quantiles
        x_grid.dedup();
        let y_grid = match &self.y {
            Some(y) => y.clone(),
            None => quantiles(&data.y, &self.y_probs)?,
        };
        Ok(Region {
            x_grid,
            p_levels: self.p_levels.clone(),
            y_grid,
        })
    }
}

/// Bootstrap settings; the seed is the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub replications: usize,
    pub level: f64,
    pub weight_law: WeightLaw,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let d = BootstrapConfig::default();
        BootstrapSection {
            replications: d.replications,
            level: d.level,
            weight_law: d.weight_law,
        }
    }
}

/// Coarsening of a continuous instrument before estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizeSpec {
    /// 1: equal-probability bins, 2: equal-width bins.
    pub design: u8,
    pub bins: usize,
}

impl DiscretizeSpec {
    pub fn apply(&self, data: &Dataset) -> Result<Dataset, Failure> {
        let z = match self.design {
            1 => discretize_design1(&data.z, self.bins)?,
            2 => discretize_design2(&data.z, self.bins)?,
            d => return Err(Failure::Usage(format!("unknown discretization design {d}"))),
        };
        Ok(data.with_instrument(z)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    /// Trimming `ε` of both quantile processes.
    pub epsilon: f64,
    /// Quantile levels per process, `T`.
    pub grid_size: usize,
    /// Outcome mesh size, `S`.
    pub mesh_size: usize,
    pub measure: Measure,
    /// Eigenvalue threshold `B` of the identification diagnostics.
    pub threshold: f64,
    pub basis: BasisSpec,
    pub region: RegionSpec,
    pub bootstrap: Option<BootstrapSection>,
    pub discretize: Option<DiscretizeSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let stage = StageOptions::default();
        RunConfig {
            input: None,
            output: PathBuf::from("cvsf-out"),
            seed: 0,
            epsilon: stage.epsilon,
            grid_size: stage.grid_size,
            mesh_size: PipelineConfig::default().mesh_size,
            measure: Measure::Continuous,
            threshold: cvsf_core::identification::DEFAULT_THRESHOLD,
            basis: BasisSpec::default(),
            region: RegionSpec::default(),
            bootstrap: None,
            discretize: None,
        }
    }
}

/// Command-line values that replace the corresponding config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub grid_size: Option<usize>,
    pub mesh_size: Option<usize>,
    pub threshold: Option<f64>,
    pub p_terms: Option<String>,
    pub q_terms: Option<String>,
    pub r_terms: Option<String>,
    pub s_terms: Option<String>,
    pub replications: Option<usize>,
    pub level: Option<f64>,
    pub design: Option<u8>,
    pub bins: Option<usize>,
}

fn parse_terms(flag: &str, list: &str) -> Result<Vec<cvsf_core::Term>, Failure> {
    list.split(',')
        .map(|t| {
            t.parse()
                .map_err(|e| Failure::Usage(format!("--{flag}: {e}")))
        })
        .collect()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, Failure> {
        toml::from_str(text).map_err(|e| Failure::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Failure::Usage(m) => Failure::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), Failure> {
        if let Some(v) = &o.input {
            self.input = Some(v.clone());
        }
        if let Some(v) = &o.output {
            self.output = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.epsilon {
            self.epsilon = v;
        }
        if let Some(v) = o.grid_size {
            self.grid_size = v;
        }
        if let Some(v) = o.mesh_size {
            self.mesh_size = v;
        }
        if let Some(v) = o.threshold {
            self.threshold = v;
        }
        for (flag, list, slot) in [
            ("p-terms", &o.p_terms, &mut self.basis.p),
            ("q-terms", &o.q_terms, &mut self.basis.q),
            ("r-terms", &o.r_terms, &mut self.basis.r),
            ("s-terms", &o.s_terms, &mut self.basis.s),
        ] {
            if let Some(list) = list {
                *slot = parse_terms(flag, list)?;
            }
        }
        if o.replications.is_some() || o.level.is_some() {
            let b = self.bootstrap.get_or_insert_with(BootstrapSection::default);
            if let Some(r) = o.replications {
                b.replications = r;
            }
            if let Some(l) = o.level {
                b.level = l;
            }
        }
        if let Some(0) = o.replications {
            self.bootstrap = None;
        }
        match (o.design, o.bins) {
            (None, None) => {}
            (design, bins) => {
                let current = self.discretize;
                let design = design.or(current.map(|d| d.design)).unwrap_or(1);
                let bins = bins
                    .or(current.map(|d| d.bins))
                    .ok_or_else(|| Failure::Usage("--design needs --bins".into()))?;
                self.discretize = Some(DiscretizeSpec { design, bins });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::Usage(m));
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad(format!(
                "epsilon must lie in (0, 0.5), got {}",
                self.epsilon
            ));
        }
        if self.grid_size < 2 {
            return bad(format!(
                "grid_size must be at least 2, got {}",
                self.grid_size
            ));
        }
        if self.mesh_size < 2 {
            return bad(format!(
                "mesh_size must be at least 2, got {}",
                self.mesh_size
            ));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return bad(format!(
                "threshold must be positive, got {}",
                self.threshold
            ));
        }
        self.basis.validate()?;
        if let Some(b) = &self.bootstrap {
            self.bootstrap_config(b).validate()?;
        }
        if let Some(d) = &self.discretize {
            if !(d.design == 1 || d.design == 2) {
                return bad(format!(
                    "discretize.design must be 1 or 2, got {}",
                    d.design
                ));
            }
            if d.bins == 0 {
                return bad("discretize.bins must be positive".into());
            }
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            basis: self.basis.clone(),
            stage: StageOptions::new(self.epsilon, self.grid_size),
            mesh_size: self.mesh_size,
            measure: self.measure,
        }
    }

    pub fn bootstrap_config(&self, b: &BootstrapSection) -> BootstrapConfig {
        BootstrapConfig {
            replications: b.replications,
            level: b.level,
            weight_law: b.weight_law,
            seed: self.seed,
        }
    }

    /// Reads the input CSV and applies the configured discretization.
    pub fn load_data(&self) -> Result<Dataset, Failure> {
        let path = self.input.as_ref().ok_or_else(|| {
            Failure::Usage("no input file given (use --input or `input =`)".into())
        })?;
        let data = Dataset::read_csv(path).map_err(|e| match e {
            cvsf_core::Error::Io(io) => {
                Failure::Data(format!("cannot read {}: {io}", path.display()))
            }
            other => Failure::Data(format!("{}: {other}", path.display())),
        })?;
        match &self.discretize {
            Some(d) => d.apply(&data),
            None => Ok(data),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cvsf_core::Term;

    #[test]
    fn defaults_from_empty_file() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.basis.r, vec![Term::Constant]);
        c.validate().unwrap();
    }

    #[test]
    fn nested_tables_parse() {
        let c = RunConfig::from_toml(
            r#"
            input = "data.csv"
            seed = 7
            epsilon = 0.02
            [basis]
            p = ["1", "x", "x^2"]
            q = ["1", "probit"]
            r = ["1"]
            s = ["1", "z"]
            [region]
            p_levels = [0.1, 0.9]
            [bootstrap]
            replications = 100
            [discretize]
            design = 2
            bins = 3
            "#,
        )
        .unwrap();
        assert_eq!(c.basis.p[2], Term::Power(2));
        assert_eq!(c.bootstrap.unwrap().replications, 100);
        assert_eq!(c.bootstrap.unwrap().level, 0.9);
        assert_eq!(c.discretize.unwrap().bins, 3);
        assert_eq!(c.region.p_levels, vec![0.1, 0.9]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = RunConfig::from_toml("seed = 1\nepsilom = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epsilom") && msg.contains("line 2"), "{msg}");
        assert!(RunConfig::from_toml("[basis]\np = [\"1\"]\nw = [\"1\"]\n").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let mut c = RunConfig::from_toml("seed = 1\n[bootstrap]\nreplications = 10\n").unwrap();
        c.apply(&Overrides {
            seed: Some(5),
            level: Some(0.95),
            r_terms: Some("1,id".into()),
            bins: Some(4),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.seed, 5);
        let b = c.bootstrap.unwrap();
        assert_eq!((b.replications, b.level), (10, 0.95));
        assert_eq!(c.basis.r, vec![Term::Constant, Term::Identity]);
        assert_eq!(c.discretize, Some(DiscretizeSpec { design: 1, bins: 4 }));
        c.apply(&Overrides {
            replications: Some(0),
            ..Default::default()
        })
        .unwrap();
        assert!(c.bootstrap.is_none());
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        for text in [
            "epsilon = 0.6",
            "grid_size = 1",
            "threshold = 0.0",
            "[bootstrap]\nlevel = 1.5",
            "[discretize]\ndesign = 3\nbins = 2",
            "[basis]\np = [\"x\"]",
        ] {
            let c = RunConfig::from_toml(text).unwrap();
            assert!(c.validate().is_err(), "{text}");
        }
    }
}
