//! The three estimation stages against the closed-form truth of simulated
//! designs.

use cvsf_core::design::{simulate, DgpSpec, FirstStageMap, InstrumentLaw};
use cvsf_core::structural::{Pipeline, PipelineConfig, Region};
use cvsf_core::{fit_first_stage, fit_second_stage, BasisSpec, Term};
use proptest::prelude::*;

fn sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Kolmogorov-Smirnov distance of a sample from U(lo, hi).
fn ks_uniform(values: &[f64], lo: f64, hi: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in s.iter().enumerate() {
        let f = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        d = d
            .max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs());
    }
    d
}

fn tight_first_stage(seed: u64) -> DgpSpec {
    DgpSpec {
        first_stage: FirstStageMap {
            intercept: 1.0,
            slope: 1.0,
            shift: 0.0,
            scale: 0.3,
            scale_slope: 0.1,
        },
        ..DgpSpec::linear_binary(seed)
    }
}

#[test]
fn first_stage_tracks_true_conditional_quantiles() {
    let sim = simulate(&tight_first_stage(1), 5000).unwrap();
    let fit = fit_first_stage(&sim.data, &BasisSpec::default(), 0.01, 599).unwrap();
    let mut worst: f64 = 0.0;
    for z in [0.0, 1.0] {
        let predicted = fit.predicted_quantiles(z, 0.0).unwrap();
        for (t, &v) in fit.process().levels().iter().enumerate() {
            if (0.1..=0.9).contains(&v) {
                let truth = sim.truth.first_stage_quantile(v, z, 0.0);
                worst = worst.max((predicted[t] - truth).abs());
            }
        }
    }
    assert!(worst < 0.05, "sup error {worst}");
    // The two instrument values give different quantile maps.
    let q0 = fit.predicted_quantiles(0.0, 0.0).unwrap();
    let q1 = fit.predicted_quantiles(1.0, 0.0).unwrap();
    assert!((q1[299] - q0[299] - 1.0).abs() < 0.05);
}

#[test]
fn control_values_are_uniform() {
    let sim = simulate(&DgpSpec::linear_binary(2), 5000).unwrap();
    let fit = fit_first_stage(&sim.data, &BasisSpec::default(), 0.01, 599).unwrap();
    let v = fit.control_values(&sim.data).unwrap();
    assert!(v.iter().all(|v| (0.01..=0.99).contains(v)));
    let d = ks_uniform(&v, 0.01, 0.99);
    assert!(d < 0.03, "KS distance {d}");
}

#[test]
fn binary_instrument_control_values_follow_within_cell_ranks() {
    let sim = simulate(&DgpSpec::linear_binary(3), 400).unwrap();
    let fit = fit_first_stage(&sim.data, &BasisSpec::default(), 0.01, 599).unwrap();
    let v = fit.control_values(&sim.data).unwrap();
    let d = &sim.data;
    for i in 0..d.n() {
        for j in 0..d.n() {
            if d.z[i] == d.z[j] && d.x[i] < d.x[j] {
                assert!(v[i] <= v[j]);
            }
        }
    }
    // Within a cell the process is the cell's sample quantile function, so
    // V̂ is within a mesh cell of the within-cell rank.
    for z in [0.0, 1.0] {
        let cell: Vec<usize> = (0..d.n()).filter(|&i| d.z[i] == z).collect();
        let m = cell.len() as f64;
        for &i in &cell {
            let rank = cell.iter().filter(|&&j| d.x[j] <= d.x[i]).count() as f64 / m;
            assert!((v[i] - rank).abs() <= 0.01 + 1.0 / m + 0.98 / 599.0 + 1e-12);
        }
    }
}

/// `Y = ε1 + ε2 X` with `ε_j = a_j + b_j V + c_j U`, binary instrument.
fn linear_identity(seed: u64) -> DgpSpec {
    DgpSpec::identity_control([1.0, 0.5], [1.0, 0.3], [1.0, 0.2], seed)
}

fn identity_basis() -> BasisSpec {
    BasisSpec {
        q: vec![Term::Constant, Term::Identity],
        ..BasisSpec::default()
    }
}

#[test]
fn second_stage_recovers_coefficient_curves() {
    // A continuous instrument separates X from V well enough for the
    // coefficient curves themselves to be precise at this sample size.
    let mut spec = linear_identity(0);
    spec.instrument = InstrumentLaw::Normal { mean: 0.0, sd: 1.0 };
    spec.first_stage = FirstStageMap {
        intercept: 1.0,
        slope: 1.0,
        shift: 0.0,
        scale: 0.7,
        scale_slope: 0.0,
    };
    let sim = simulate(&spec, 5000).unwrap();
    let basis = identity_basis();
    let fs = fit_first_stage(&sim.data, &basis, 0.01, 599).unwrap();
    let v = fs.control_values(&sim.data).unwrap();
    let ss = fit_second_stage(&sim.data, &v, &basis, 0.01, 599).unwrap();
    let mut worst: f64 = 0.0;
    for (t, &u) in ss.process().levels().iter().enumerate() {
        if (0.1..=0.9).contains(&u) {
            let truth = sim.truth.spec().beta_at(u);
            for (b, b0) in ss.process().coefficients(t).iter().zip(&truth) {
                worst = worst.max((b - b0).abs());
            }
        }
    }
    assert!(worst < 0.1, "sup coefficient error {worst}");
}

#[test]
fn trimmed_conditional_mean_matches_truth() {
    let sim = simulate(&linear_identity(5), 5000).unwrap();
    let basis = identity_basis();
    let fs = fit_first_stage(&sim.data, &basis, 0.01, 599).unwrap();
    let v_hat = fs.control_values(&sim.data).unwrap();
    let ss = fit_second_stage(&sim.data, &v_hat, &basis, 0.01, 599).unwrap();
    // Probe points on the support of (X, V): x = Q_{X|Z}(v | z).
    for z in [0.0, 1.0] {
        for v in [0.2, 0.5, 0.8] {
            let x = sim.truth.first_stage_quantile(v, z, 0.0);
            let got = ss.mean_from_quantiles(x, 0.0, v).unwrap();
            let want = sim.truth.conditional_mean(x, 0.0, v).unwrap();
            assert!((got - want).abs() < 0.05, "x={x} v={v}: {got} vs {want}");
        }
    }
}

#[test]
fn dsf_matches_integrated_truth_on_probe_grid() {
    let sim = simulate(&DgpSpec::linear_binary(6), 5000).unwrap();
    let pipe = Pipeline::fit(&sim.data, &PipelineConfig::default()).unwrap();
    let region = Region::default_for(&sim.data).unwrap();
    let mut worst: f64 = 0.0;
    for &x in &region.x_grid {
        for k in 0..5 {
            let y = sim.truth.asf(x).unwrap() + (k as f64 - 2.0);
            let got = pipe.dsf(y, x).unwrap();
            let want = sim.truth.dsf(y, x).unwrap();
            worst = worst.max((got - want).abs());
        }
    }
    assert!(worst < 0.05, "sup DSF error {worst}");
}

#[test]
fn structural_functions_recover_truth() {
    let (a, b, c) = ([1.0, 0.5], [1.0, 0.3], [1.0, 0.2]);
    let sim = simulate(&linear_identity(7), 5000).unwrap();
    let config = PipelineConfig {
        basis: identity_basis(),
        ..PipelineConfig::default()
    };
    let pipe = Pipeline::fit(&sim.data, &config).unwrap();
    let region = Region::default_for(&sim.data).unwrap();
    let est = pipe.evaluate_region(&region).unwrap();
    let scale = sd(&sim.data.y);
    let pts = pipe.mesh().points();
    // The trimmed CDF leaves mass ε at each end of the outcome mesh, which
    // moves the mean by at most ε times the mesh range.
    let trimming = 0.01 * (pts[pts.len() - 1] - pts[0]);
    for (i, &x) in region.x_grid.iter().enumerate() {
        for (j, &p) in region.p_levels.iter().enumerate() {
            let truth = sim.truth.qsf(p, x).unwrap();
            assert!((est.qsf.values[i][j] - truth).abs() < 0.1 * scale);
        }
        let closed = a[0] + b[0] / 2.0 + c[0] / 2.0 + (a[1] + b[1] / 2.0 + c[1] / 2.0) * x;
        assert!((sim.truth.asf(x).unwrap() - closed).abs() < 1e-9);
        let err = (est.asf.values[i][0] - closed).abs();
        assert!(err < 0.05 + trimming, "x={x}: ASF error {err}");
        assert!(est.qsf.values[i].windows(2).all(|w| w[0] <= w[1]));
        assert!(est.dsf.values[i].windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn deterministic_outcome_gives_flat_qsf() {
    let sim = simulate(&DgpSpec::deterministic(9), 2000).unwrap();
    let pipe = Pipeline::fit(&sim.data, &PipelineConfig::default()).unwrap();
    let region = Region::default_for(&sim.data).unwrap();
    let est = pipe.evaluate_region(&region).unwrap();
    let delta = pipe.mesh().width();
    for (i, &x) in region.x_grid.iter().enumerate() {
        for q in &est.qsf.values[i] {
            assert!((q - (1.0 + 0.5 * x)).abs() <= 2.0 * delta, "x={x} q={q}");
        }
    }
}

#[test]
fn identical_controls_reduce_to_single_crf() {
    let data = cvsf_core::Dataset::new(
        vec![1.0, 3.0, 2.0, 5.0, 4.0, 2.5],
        vec![0.0, 1.0, 0.5, 2.0, 1.5, 0.2],
        vec![0.0; 6],
        vec![0.0; 6],
    )
    .unwrap();
    let config = PipelineConfig {
        basis: BasisSpec {
            s: vec![Term::Constant],
            q: vec![Term::Constant],
            ..BasisSpec::default()
        },
        stage: cvsf_core::StageOptions::new(0.05, 19),
        ..PipelineConfig::default()
    };
    let pipe = Pipeline::fit(&data, &config).unwrap();
    // With a constant q basis the control regression ignores V̂.
    for y in [0.5, 2.0, 3.3, 6.0] {
        let direct = pipe
            .second_stage()
            .crf_distribution(y, 1.0, 0.0, 0.5)
            .unwrap();
        assert!((pipe.dsf(y, 1.0).unwrap() - direct).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// DSF rows are nondecreasing and inside [ε, 1 − ε]; QSF rows are
    /// nondecreasing; ASF equals the re-summed mesh formula.
    #[test]
    fn tabulated_outputs_are_monotone(seed in 0u64..1000, n in 60usize..200) {
        let sim = simulate(&DgpSpec::linear_binary(seed), n).unwrap();
        let config = PipelineConfig {
            stage: cvsf_core::StageOptions::new(0.01, 49),
            mesh_size: 101,
            ..PipelineConfig::default()
        };
        let pipe = Pipeline::fit(&sim.data, &config).unwrap();
        let mut region = Region::default_for(&sim.data).unwrap();
        region.p_levels = vec![0.05, 0.25, 0.5, 0.75, 0.95];
        let est = pipe.evaluate_region(&region).unwrap();
        for i in 0..region.x_grid.len() {
            prop_assert!(est.qsf.values[i].windows(2).all(|w| w[0] <= w[1]));
            let g = pipe.dsf_table(region.x_grid[i]).unwrap();
            prop_assert!(g.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(g.iter().all(|v| (0.01..=0.99).contains(v)));
            let pts = pipe.mesh().points();
            let delta = (pts[pts.len() - 1] - pts[0]) / (pts.len() - 1) as f64;
            let mut resum = 0.0;
            for (y, gs) in pts.iter().zip(&g) {
                resum += if *y >= 0.0 { 1.0 } else { 0.0 } - gs;
            }
            let offset = pts[0].max(0.0) + pts[pts.len() - 1].min(0.0);
            prop_assert!((delta * resum + offset - est.asf.values[i][0]).abs() < 1e-12);
        }
    }
}
