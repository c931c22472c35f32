use std::path::Path;
use std::process::{Command, Output};

use npmle::denoise::tweedie_denoise;
use npmle::io::{parse_csv, read_dataset, ModelFile};

fn npmle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npmle"))
        .args(args)
        .env_remove("NPMLE_SEED")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn two_cluster_csv(n: usize) -> String {
    let mut s = String::from("a,b\n");
    for i in 0..n {
        let t = i as f64;
        let (cx, cy) = if i % 2 == 0 { (0.0, 0.0) } else { (3.0, 3.0) };
        s.push_str(&format!("{},{}\n", cx + (t * 0.37).sin(), cy + (t * 0.73).cos()));
    }
    s
}

#[test]
fn fit_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    let out = dir.path().join("model.json");
    write(&input, "1.5,-2\n");
    let o = npmle(&["fit", "--input", p(&input), "--support", "exemplar", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let model = ModelFile::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(model.atoms, vec![vec![1.5, -2.0]]);
    assert_eq!(model.weights, vec![1.0]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("duality gap") && stderr.contains("atoms: 1"));
}

#[test]
fn missing_input_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = npmle(&["fit", "--input", p(&dir.path().join("nope.csv")), "--out", p(&dir.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
}

#[test]
fn bad_cell_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    write(&input, "x,y\n1,2\n3,oops\n");
    let o = npmle(&["fit", "--input", p(&input), "--out", p(&dir.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3, column 2"), "{err}");
}

#[test]
fn grid_atoms_lie_on_linspace() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    let out = dir.path().join("m.json");
    let rows: Vec<String> = (0..=40).map(|i| format!("{}", i as f64 * 0.25)).collect();
    write(&input, &(rows.join("\n") + "\n"));
    let o = npmle(&["fit", "--input", p(&input), "--support", "grid", "--grid-points", "11", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let model = ModelFile::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(!model.atoms.is_empty());
    for a in &model.atoms {
        assert!(a[0] == a[0].round() && (0.0..=10.0).contains(&a[0]), "{a:?}");
    }
    assert!(model.weights.iter().all(|&w| w > 0.0));
}

#[test]
fn single_atom_model_denoises_to_atom() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    let model = dir.path().join("m.json");
    let out = dir.path().join("est.csv");
    write(&input, "0,0\n5,-1\n-3,2\n");
    let m = ModelFile {
        dim: 2,
        atoms: vec![vec![1.0, 2.0]],
        weights: vec![1.0],
        duality_gap: 0.0,
        iterations: 0,
        loglik: 0.0,
    };
    write(&model, &m.to_json());
    let o = npmle(&["denoise", "--input", p(&input), "--model", p(&model), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = parse_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(t.header.as_ref().unwrap()[2], "thetahat_1");
    for i in 0..t.rows() {
        assert!((t.row(i)[2] - 1.0).abs() < 1e-12 && (t.row(i)[3] - 2.0).abs() < 1e-12);
    }
}

#[test]
fn dimension_mismatch_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    let model = dir.path().join("m.json");
    write(&input, "0\n1\n");
    write(
        &model,
        &ModelFile {
            dim: 2,
            atoms: vec![vec![1.0, 2.0]],
            weights: vec![1.0],
            duality_gap: 0.0,
            iterations: 0,
            loglik: 0.0,
        }
        .to_json(),
    );
    let o = npmle(&["denoise", "--input", p(&input), "--model", p(&model), "--out", p(&dir.path().join("e.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unit_sigma_min_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    write(&input, &two_cluster_csv(60));
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let o = npmle(&["denoise", "--input", p(&input), "--fit-inline", "--out", p(&a)]);
    assert_eq!(o.status.code(), Some(0));
    let o = npmle(&["denoise", "--input", p(&input), "--fit-inline", "--sigma-min", "1", "--out", p(&b)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn fit_then_denoise_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    let model = dir.path().join("m.json");
    let out = dir.path().join("est.csv");
    write(&input, &two_cluster_csv(80));
    assert_eq!(npmle(&["fit", "--input", p(&input), "--out", p(&model)]).status.code(), Some(0));
    let o = npmle(&["denoise", "--input", p(&input), "--model", p(&model), "--rho", "auto", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));

    let data = read_dataset(&input).unwrap();
    let mixture = ModelFile::from_json(&std::fs::read_to_string(&model).unwrap()).unwrap().mixture().unwrap();
    let expected = tweedie_denoise(&mixture, &data, None).unwrap().estimates;
    let t = parse_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for i in 0..data.len() {
        for k in 0..2 {
            assert!((t.row(i)[2 + k] - expected.point(i)[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn latents_add_oracle_columns_and_risks() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    let latents = dir.path().join("t.csv");
    let out = dir.path().join("est.csv");
    let risk = dir.path().join("risk.json");
    write(&input, &two_cluster_csv(40));
    let lat: String = (0..40).map(|i| if i % 2 == 0 { "0,0\n" } else { "3,3\n" }).collect();
    write(&latents, &lat);
    let o = npmle(&[
        "denoise", "--input", p(&input), "--fit-inline", "--latents", p(&latents), "--out", p(&out), "--risk-out",
        p(&risk),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = parse_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(t.columns, 6);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&risk).unwrap()).unwrap();
    assert!(v["risk_vs_truth"].as_f64().unwrap() >= 0.0);
    assert!(v["risk_vs_oracle"].as_f64().unwrap() >= 0.0);

    // covariance columns below σ_min² violate the model
    let lat: String = (0..40).map(|_| "0,0,0.5,0,0,0.5\n").collect();
    write(&latents, &lat);
    let o = npmle(&["denoise", "--input", p(&input), "--fit-inline", "--latents", p(&latents), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for prefix in [&a, &b] {
        let o = npmle(&[
            "simulate", "--scenario", "clustering1", "--n", "300", "--replicates", "2", "--seed", "7", "--out",
            p(prefix),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for ext in ["csv", "json"] {
        let fa = std::fs::read(format!("{}.{ext}", p(&a))).unwrap();
        let fb = std::fs::read(format!("{}.{ext}", p(&b))).unwrap();
        assert_eq!(fa, fb);
    }
}

#[test]
fn simulate_two_circles_schema() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("r");
    let o = npmle(&[
        "simulate", "--scenario", "two-circles", "--n", "1000", "--replicates", "1", "--methods", "eb,oracle", "--out",
        p(&prefix),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(format!("{}.csv", p(&prefix))).unwrap();
    assert!(csv.starts_with("scenario,n,replicate,metric,value\n"));
    assert!(csv.lines().any(|l| l.starts_with("two-circles,1000,0,mse_eb_vs_oracle,")));
}

#[test]
fn unknown_scenario_lists_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = npmle(&["simulate", "--scenario", "spiral", "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("two-circles"));
}
