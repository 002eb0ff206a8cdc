use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdfm::sim::{simulate, DgpSpec};
use sdfm::{fit, FitConfig, TimeSeriesPanel};
use sdfm_cli::io::{self, CsvPanel};
use sdfm_cli::model::{forecast_rows, ModelFile};
use sdfm_cli::commands::run_args as run;
use sdfm_cli::CliError;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sdfm-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn args(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn bin(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_sdfm")).args(args).output().unwrap().status.code().unwrap()
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn panel_round_trips_exactly() {
    let dir = scratch("roundtrip");
    let mut g = ChaCha8Rng::seed_from_u64(1);
    for case in 0..50 {
        let (n, k) = (g.random_range(1..30), g.random_range(1..8));
        let values = DMatrix::from_fn(n, k, |_, _| {
            if g.random::<f64>() < 0.2 {
                f64::NAN
            } else {
                let mag = 10f64.powi(g.random_range(-300..300));
                (g.random::<f64>() - 0.5) * mag
            }
        });
        let panel = CsvPanel {
            time: (0..n).map(|t| format!("2020-01-{:02}", t + 1)).collect(),
            names: (0..k).map(|i| format!("series \"{i}\", quoted")).collect(),
            values,
        };
        let path = dir.join(format!("{case}.csv"));
        io::write_atomic(&path, &io::panel_bytes(&panel).unwrap()).unwrap();
        let back = io::read_panel(&path).unwrap();
        assert_eq!(back.time, panel.time);
        assert_eq!(back.names, panel.names);
        for (a, b) in back.values.iter().zip(panel.values.iter()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = scratch("malformed");
    let cases = [
        ("t,a,b\n1,1,2\n2,3\n", "line 3"),
        ("t,a,b\n1,1,2\n2,3,4\n3,x,1\n", "line 4"),
        ("t,a,b\n1,1,2\nmonday,3,4\n", "line 3"),
        ("t,a,b\n1,1,inf\n", "line 2"),
        ("t,a,\n1,1,2\n", "line 1"),
        ("t\n1\n", "line 1"),
        ("t,a\n", "no data rows"),
    ];
    for (k, (text, expected)) in cases.iter().enumerate() {
        let path = dir.join(format!("{k}.csv"));
        write(&path, text);
        match io::read_panel(&path) {
            Err(CliError::Data(msg)) => assert!(msg.contains(expected), "{msg}"),
            other => panic!("case {k}: {other:?}"),
        }
    }
}

#[test]
fn iso_dates_and_blank_cells_are_accepted() {
    let dir = scratch("iso");
    let path = dir.join("x.csv");
    write(&path, "date,a,b\n2021-03-01,1.5,\n2021-04-01,,2\n2021-05-01T00:00:00Z,3,4\n");
    let panel = io::read_panel(&path).unwrap();
    assert_eq!(panel.names, ["a", "b"]);
    assert!(panel.values[(0, 1)].is_nan() && panel.values[(1, 0)].is_nan());
    assert_eq!(panel.values[(2, 1)], 4.0);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = scratch("exit");
    let sim = dir.join("sim");
    assert_eq!(bin(&["simulate", "--n", "60", "--p", "10", "--seed", "3", "--out", p(&sim)]), 0);
    let data = sim.join("data.csv");
    assert_eq!(bin(&["fit", p(&data), "-r", "2", "--out", p(&dir.join("ok"))]), 0);

    // usage
    assert_eq!(bin(&["fit", p(&data), "--out", p(&dir.join("u1"))]), 2);
    assert_eq!(bin(&["fit", p(&data), "-r", "2", "--alpha", "1", "--auto-alpha", "--out", p(&dir.join("u2"))]), 2);
    assert_eq!(bin(&["forecast", p(&dir.join("ok")), "--horizon", "0", "--out", p(&dir.join("u3"))]), 2);
    assert_eq!(bin(&["benchmark", "--experiment", "spline", "--out", p(&dir.join("u4"))]), 2);
    assert_eq!(bin(&["fit", p(&data), "-r", "40", "--out", p(&dir.join("u5"))]), 2);
    let threads = Command::new(env!("CARGO_BIN_EXE_sdfm"))
        .env("SDFM_THREADS", "zero")
        .args(["fit", p(&data), "-r", "1", "--out", p(&dir.join("u6"))])
        .status()
        .unwrap();
    assert_eq!(threads.code(), Some(2));

    // data
    assert_eq!(bin(&["fit", p(&dir.join("missing.csv")), "-r", "1", "--out", p(&dir.join("d1"))]), 3);
    let bad = dir.join("bad.csv");
    write(&bad, "t,a\n1,2\n2,two\n");
    assert_eq!(bin(&["fit", p(&bad), "-r", "1", "--out", p(&dir.join("d2"))]), 3);
    assert_eq!(bin(&["forecast", p(&dir.join("nowhere")), "--horizon", "1", "--out", p(&dir.join("d3"))]), 3);

    // non-convergence still writes everything
    let nc = dir.join("nc");
    assert_eq!(bin(&["fit", p(&data), "-r", "2", "--em-max-iter", "1", "--out", p(&nc)]), 4);
    for f in ["loadings.csv", "factors.csv", "factor_cov.csv", "params.json", "objective_trace.csv", "manifest.json"] {
        assert!(nc.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(nc.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["converged"], false);
}

#[test]
fn auto_r_recovers_two_factors() {
    let dir = scratch("autor");
    let mut hits = 0;
    for rep in 0..20 {
        let sim = dir.join(format!("sim{rep}"));
        let fit_dir = dir.join(format!("fit{rep}"));
        run(&args(&format!("simulate --n 100 --p 60 --rho 0 --seed {} --out {}", 100 + rep, p(&sim)))).unwrap();
        run(&args(&format!("fit {} --auto-r --out {}", p(&sim.join("data.csv")), p(&fit_dir)))).unwrap();
        let model: ModelFile = io::read_json(&fit_dir.join("params.json")).unwrap();
        hits += usize::from(model.num_factors == 2);
    }
    assert!(hits >= 18, "{hits} of 20");
}

#[test]
fn zero_penalty_leaves_no_exact_zeros() {
    let dir = scratch("dense");
    run(&args(&format!("simulate --n 80 --p 20 --rho 0.3 --seed 9 --out {}", p(&dir.join("sim"))))).unwrap();
    run(&args(&format!("fit {} -r 2 --alpha 0 --out {}", p(&dir.join("sim/data.csv")), p(&dir.join("fit"))))).unwrap();
    let text = fs::read_to_string(dir.join("fit/loadings.csv")).unwrap();
    let values: Vec<f64> = text.lines().skip(1).flat_map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect::<Vec<f64>>()).collect();
    assert_eq!(values.len(), 40);
    assert!(values.iter().all(|v| *v != 0.0));
}

#[test]
fn one_step_forecast_is_the_destandardised_kalman_forecast() {
    let dir = scratch("forecast");
    run(&args(&format!("simulate --n 80 --p 12 --seed 4 --out {}", p(&dir.join("sim"))))).unwrap();
    run(&args(&format!("fit {} -r 2 --alpha 0.5 --out {}", p(&dir.join("sim/data.csv")), p(&dir.join("fit"))))).unwrap();
    run(&args(&format!("forecast {} --horizon 3 --out {}", p(&dir.join("fit")), p(&dir.join("fc"))))).unwrap();

    let model: ModelFile = io::read_json(&dir.join("fit/params.json")).unwrap();
    let params = model.params().unwrap();
    let (state, cov) = model.final_state().unwrap();
    let direct = sdfm::forecast(&params, &state, &cov, 1).unwrap();

    let mut reader = csv::Reader::from_path(dir.join("fc/forecast.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3 * 12);
    for (i, row) in rows.iter().take(12).enumerate() {
        assert_eq!(&row[0], "81");
        assert_eq!(&row[1], model.series[i]);
        let [mean, lo, hi]: [f64; 3] = [2, 3, 4].map(|k| row[k].parse().unwrap());
        assert_eq!(mean, direct.obs_mean[(0, i)] * model.sds[i] + model.means[i]);
        let half = 1.96 * model.sds[i] * direct.obs_var[(0, i)].sqrt();
        assert!((hi - mean - half).abs() <= 1e-12 * half.max(1.0));
        assert!(((mean - lo) - (hi - mean)).abs() <= 1e-12 * half.max(1.0), "bands symmetric");
    }
}

#[test]
fn one_step_bands_cover_about_95_percent() {
    let (n, p) = (100, 60);
    let (mut inside, mut total) = (0, 0);
    for rep in 0..20 {
        let data = simulate(&DgpSpec::new(n + 1, p, 0.0, 300 + rep)).unwrap();
        let train = data.values.rows(0, n).clone_owned();
        let panel = TimeSeriesPanel::standardise(&train, None).unwrap();
        let result = fit(&panel, &FitConfig::new(2, 0.0)).unwrap();
        let model = ModelFile::new(&panel, "100", &result);
        for row in forecast_rows(&model, 1).unwrap() {
            let truth = data.values[(n, row.series)];
            inside += usize::from(row.lower95 <= truth && truth <= row.upper95);
            total += 1;
        }
    }
    let coverage = inside as f64 / total as f64;
    assert!((0.90..=1.0).contains(&coverage), "coverage {coverage}");
}

#[test]
fn imputation_keeps_observed_cells_and_fills_the_rest() {
    let dir = scratch("impute");
    run(&args(&format!("simulate --n 60 --p 10 --seed 8 --missing-frac 0.1 --out {}", p(&dir.join("sim"))))).unwrap();
    let data = dir.join("sim/data.csv");
    run(&args(&format!("fit {} -r 2 --out {}", p(&data), p(&dir.join("fit"))))).unwrap();
    run(&args(&format!("impute {} --model {} --out {}", p(&data), p(&dir.join("fit")), p(&dir.join("imp"))))).unwrap();
    let before = io::read_panel(&data).unwrap();
    let after = io::read_panel(&dir.join("imp/imputed.csv")).unwrap();
    assert!(before.values.iter().any(|v| v.is_nan()));
    for (a, b) in before.values.iter().zip(after.values.iter()) {
        assert!(b.is_finite());
        if !a.is_nan() {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    let other = dir.join("other.csv");
    write(&other, "t,a,b\n1,1,2\n2,2,1\n");
    let err = run(&args(&format!("impute {} --model {} --out {}", p(&other), p(&dir.join("fit")), p(&dir.join("x"))))).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn rotation_table_has_constant_l2_column() {
    let dir = scratch("rotation");
    run(&args(&format!("benchmark --experiment rotation --out {}", p(&dir)))).unwrap();
    let mut reader = csv::Reader::from_path(dir.join("rotation.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["theta", "l0", "l1", "l2"]);
    let l2: Vec<f64> = reader.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    assert_eq!(l2.len(), 360);
    assert!(l2.iter().all(|v| (v - l2[0]).abs() < 1e-12));
}

#[test]
fn benchmark_tables_are_seed_deterministic() {
    let dir = scratch("bench");
    for run_dir in ["a", "b"] {
        let cmd = format!("benchmark --experiment recovery --reps 2 --p 18 --rho 0.6 --alpha-points 5 --seed 7 --out {}", p(&dir.join(run_dir)));
        run(&args(&cmd)).unwrap();
    }
    for f in ["records.csv", "summary.csv", "summary.json"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
    let records = fs::read_to_string(dir.join("a/records.csv")).unwrap();
    assert!(records.starts_with("n,p,r,rho,missing_frac,replicate,method,metric,value\n"));
    assert!(records.lines().any(|l| l.contains(",sdfm,f1,")));
}

#[test]
fn every_output_directory_has_one_manifest_listing_its_files() {
    let dir = scratch("manifest");
    run(&args(&format!("simulate --n 50 --p 8 --seed 2 --out {}", p(&dir.join("sim"))))).unwrap();
    run(&args(&format!("tune {} -r 2 --alpha-points 4 --out {}", p(&dir.join("sim/data.csv")), p(&dir.join("tune"))))).unwrap();
    for sub in ["sim", "tune"] {
        let m: sdfm_cli::manifest::RunManifest = io::read_json(&dir.join(sub).join("manifest.json")).unwrap();
        let mut listed = m.outputs.clone();
        listed.sort();
        let mut present: Vec<String> =
            fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        present.sort();
        assert_eq!(listed, present);
        assert!(!m.args.iter().any(|a| a.starts_with("--out")));
    }
}
