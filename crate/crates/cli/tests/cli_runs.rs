//! The `cvsf` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cvsf_cli::output::read_table;
use cvsf_cli::run::preset;
use cvsf_cli::{discretization_study, Metadata, RegionSpec};
use cvsf_core::design::simulate;
use cvsf_core::{Kind, PipelineConfig, StageOptions};

fn cvsf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvsf"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const TEN_ROWS: &str = "y,x,z,z1
1.2,0.3,0,0
2.1,1.4,1,0
0.7,-0.2,0,0
3.0,2.2,1,0
1.9,0.9,0,0
2.6,1.8,1,0
0.4,-0.8,0,0
2.2,1.1,1,0
1.1,0.5,0,0
3.4,2.7,1,0
";

#[test]
fn minimal_run_on_ten_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), TEN_ROWS).unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "input = \"d.csv\"\noutput = \"out\"\ngrid_size = 19\n",
    )
    .unwrap();
    let out = cvsf(&["estimate", "--config", "run.toml"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let tables = read_table(&dir.path().join("out/estimates.csv")).unwrap();
    let kinds: Vec<Kind> = tables.iter().map(|t| t.kind).collect();
    assert_eq!(kinds, vec![Kind::Dsf, Kind::Qsf, Kind::Asf]);
    assert!(fs::read_dir(dir.path().join("out")).unwrap().all(|e| !e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .ends_with(".partial")));
    let meta = Metadata::load(&dir.path().join("out/metadata.json")).unwrap();
    assert_eq!(
        (meta.status.as_str(), meta.exit_code, meta.observations),
        ("ok", 0, Some(10))
    );
}

#[test]
fn duplicated_basis_term_exits_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), TEN_ROWS).unwrap();
    let out = cvsf(
        &[
            "estimate",
            "--input",
            "d.csv",
            "--output",
            "out",
            "--grid-size",
            "19",
            "--s-terms",
            "1,z,z",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 3);
    let report = fs::read_to_string(dir.path().join("out/diagnostics.txt")).unwrap();
    assert!(report.contains("FAILED"), "{report}");
    assert!(!dir.path().join("out/estimates.csv").exists());
    let meta = Metadata::load(&dir.path().join("out/metadata.json")).unwrap();
    assert_eq!(meta.exit_code, 3);
}

#[test]
fn usage_and_data_errors_have_their_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cvsf(&["estimate", "--nope"], dir.path())), 1);
    fs::write(dir.path().join("bad.toml"), "seed = 1\nepsilom = 2\n").unwrap();
    let out = cvsf(&["estimate", "--config", "bad.toml"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    fs::write(dir.path().join("d.csv"), "y,x,z,z1\n1,2,3,0\n1,x,3,0\n").unwrap();
    let out = cvsf(
        &["estimate", "--input", "d.csv", "--output", "o"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row"));
}

#[test]
fn thin_design_two_cell_is_flagged() {
    // Z = U^0.25 with a sample minimum near 0.13: the lowest of three
    // equal-width bins holds about 3% of the mass.
    let dir = tempfile::tempdir().unwrap();
    let spec = preset("continuous_skewed", 5).unwrap();
    simulate(&spec, 2000)
        .unwrap()
        .data
        .write_csv(&dir.path().join("d.csv"))
        .unwrap();
    let out = cvsf(
        &[
            "estimate", "--input", "d.csv", "--output", "out", "--design", "2", "--bins", "3",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.path().join("out/diagnostics.txt")).unwrap();
    assert!(report.contains("warning: instrument value"), "{report}");
    let meta = Metadata::load(&dir.path().join("out/metadata.json")).unwrap();
    assert_eq!(meta.warnings.len(), 1);
    assert!(meta.warnings[0].contains("thin instrument cell"));
}

#[test]
fn bootstrap_run_replays_bit_identically_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = cvsf(
        &[
            "simulate",
            "--dgp",
            "linear_binary",
            "--n",
            "500",
            "--seed",
            "3",
            "--output",
            "d.csv",
        ],
        d,
    );
    assert_eq!(code(&sim), 0);
    let args = [
        "estimate",
        "--input",
        "d.csv",
        "--output",
        "a",
        "--grid-size",
        "59",
        "--mesh-size",
        "99",
        "--replications",
        "10",
        "--seed",
        "8",
    ];
    assert_eq!(code(&cvsf(&args, d)), 0);
    let replay = cvsf(
        &[
            "estimate",
            "--from-metadata",
            "a/metadata.json",
            "--output",
            "b",
        ],
        d,
    );
    assert_eq!(code(&replay), 0);
    assert_eq!(
        fs::read(d.join("a/estimates.csv")).unwrap(),
        fs::read(d.join("b/estimates.csv")).unwrap()
    );

    let tables = read_table(&d.join("a/estimates.csv")).unwrap();
    let qsf = tables.iter().find(|t| t.kind == Kind::Qsf).unwrap();
    assert_eq!(qsf.bands.as_ref().unwrap().level, 0.9);

    let plot = cvsf(
        &[
            "plotdata",
            "--table",
            "a/estimates.csv",
            "--kind",
            "qsf",
            "--output",
            "q.csv",
        ],
        d,
    );
    assert_eq!(code(&plot), 0);
    assert_eq!(read_table(&d.join("q.csv")).unwrap(), vec![qsf.clone()]);
    let fine = cvsf(
        &[
            "plotdata",
            "--table",
            "a/estimates.csv",
            "--kind",
            "asf",
            "--output",
            "f.csv",
            "--x-points",
            "25",
        ],
        d,
    );
    assert_eq!(code(&fine), 0);
    let asf = read_table(&d.join("f.csv")).unwrap();
    assert_eq!(asf[0].x_grid.len(), 25);
    assert!(asf[0].index_grid.is_empty());
}

#[test]
fn study_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let spec = preset("continuous_skewed", 2).unwrap();
    simulate(&spec, 600)
        .unwrap()
        .data
        .write_csv(&dir.path().join("d.csv"))
        .unwrap();
    let out = cvsf(
        &[
            "study",
            "--input",
            "d.csv",
            "--output",
            "s",
            "--grid-size",
            "49",
            "--bins-list",
            "2,3",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("s/study.csv")).unwrap();
    assert_eq!(text.lines().count(), 6, "{text}");
    assert!(text.starts_with("design,bins,sup_deviation,status\ncontinuous,,0,ok\n"));
}

#[test]
fn one_bin_per_observation_is_close_to_the_benchmark() {
    let spec = preset("continuous_skewed", 4).unwrap();
    let data = simulate(&spec, 800).unwrap().data;
    let pipeline = PipelineConfig {
        stage: StageOptions::new(0.01, 99),
        ..PipelineConfig::default()
    };
    let region = RegionSpec::default().resolve(&data).unwrap();
    let n = data.n();
    let study = discretization_study(&data, &pipeline, &region, &[2, n]).unwrap();
    let fine = study.deviation(1, n).unwrap();
    let coarse = study.deviation(2, 2).unwrap();
    let sd = {
        let m = data.y.iter().sum::<f64>() / n as f64;
        (data.y.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    assert!(fine < 0.05 * sd, "M = n deviation {fine}, sd {sd}");
    assert!(fine < coarse);
}
