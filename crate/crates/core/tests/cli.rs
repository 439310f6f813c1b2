use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use combustion_lab::cli::{rerun_from_manifest, MANIFEST_FILE};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_combustion-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn schema(name: &str) -> Value {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"));
    read_json(&p)
}

fn assert_valid(name: &str, v: &Value) {
    let s = schema(name);
    let validator = jsonschema::validator_for(&s).unwrap();
    let errors: Vec<String> = validator.iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn out_dir(tmp: &tempfile::TempDir, name: &str) -> String {
    tmp.path().join(name).to_string_lossy().into_owned()
}

#[test]
fn classify_delta_one_is_linear() {
    let o = run(&[
        "classify",
        "--dist",
        r#"{"kind":"delta","m":1}"#,
        "--dim",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"], "Linear");
    assert_valid("classify", &v);
}

#[test]
fn missing_dim_prints_usage() {
    let o = run(&["classify", "--dist", r#"{"kind":"delta","m":1}"#]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_config_values_exit_two() {
    let o = run(&[
        "simulate",
        "--dist",
        r#"{"kind":"geometric","p":2.0}"#,
        "--dim",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["walks", "--eps", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn explosive_run_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "boom");
    let o = run(&[
        "simulate",
        "--dist",
        r#"{"kind":"log_log_tail","c":1.0}"#,
        "--dim",
        "1",
        "--horizon",
        "2000",
        "--eta-cap",
        "200",
        "--site-cap",
        "1000",
        "--out",
        &dir,
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v = read_json(&Path::new(&dir).join("simulate.json"));
    assert_eq!(v["termination"], "ExplosionSuspected");
    assert_valid("simulate", &v);
    let m = read_json(&Path::new(&dir).join(MANIFEST_FILE));
    assert_eq!(m["exit_code"], 3);
    assert_valid("manifest", &m);
}

fn simulate_delta(dir: &str, seed: &str, horizon: &str) {
    let o = run(&[
        "simulate",
        "--dist",
        r#"{"kind":"delta","m":1}"#,
        "--dim",
        "1",
        "--horizon",
        horizon,
        "--seed",
        seed,
        "--out",
        dir,
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn report_plots_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (out_dir(&tmp, "a"), out_dir(&tmp, "b"));
    simulate_delta(&a, "1", "2000");
    simulate_delta(&b, "2", "2000");
    let ja = format!("{a}/simulate.json");
    let jb = format!("{b}/simulate.json");
    let sim = read_json(Path::new(&ja));
    let slope = sim["trajectories"][0]["spread_estimate"]["loglog_slope"]
        .as_f64()
        .unwrap();
    assert!((slope - 1.0).abs() < 0.2, "slope {slope}");

    let r1 = out_dir(&tmp, "r1");
    let o = run(&["report", &ja, &jb, "--out", &r1]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let svg = std::fs::read_to_string(format!("{r1}/tip_loglog.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains(&format!("slope {slope:.3}")));
    assert!(svg.contains("a/simulate:full") && svg.contains("b/simulate:full"));
    assert!(std::fs::read_to_string(format!("{r1}/summary.md"))
        .unwrap()
        .contains("LinearLike"));
    assert_valid("report", &read_json(&Path::new(&r1).join("report.json")));

    let r2 = out_dir(&tmp, "r2");
    run(&["report", &ja, &jb, "--out", &r2]);
    for f in [
        "tip_linear.svg",
        "tip_loglog.svg",
        "summary.md",
        "report.json",
    ] {
        assert_eq!(
            std::fs::read(format!("{r1}/{f}")).unwrap(),
            std::fs::read(format!("{r2}/{f}")).unwrap(),
            "{f}"
        );
    }

    let csv = format!("{a}/snapshots_full.csv");
    assert_eq!(run(&["report", &csv]).status.code(), Some(0));
}

#[test]
fn report_rejects_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.json");
    std::fs::write(
        &empty,
        r#"{"schema":"combustion-lab/simulate/v1","trajectories":[{"label":"x","snapshots":[]}]}"#,
    )
    .unwrap();
    assert_eq!(
        run(&["report", empty.to_str().unwrap()]).status.code(),
        Some(2)
    );
    let other = tmp.path().join("other.json");
    std::fs::write(&other, r#"{"schema":"combustion-lab/walks/v1"}"#).unwrap();
    assert_eq!(
        run(&["report", other.to_str().unwrap()]).status.code(),
        Some(2)
    );
    let csv = tmp.path().join("empty.csv");
    std::fs::write(&csv, "t,tip\n").unwrap();
    assert_eq!(
        run(&["report", csv.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn every_output_matches_its_schema_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: Vec<(&str, Vec<&str>)> = vec![
        (
            "classify",
            vec![
                "classify",
                "--dist",
                r#"{"kind":"geometric","p":0.5}"#,
                "--dim",
                "2",
                "--m-max-i",
                "4000",
                "--m-max-ii",
                "4000",
                "--n-max-iii",
                "2000",
            ],
        ),
        (
            "simulate",
            vec![
                "simulate",
                "--dist",
                r#"{"kind":"delta","m":1}"#,
                "--dim",
                "2",
                "--horizon",
                "30",
                "--trimmed",
                "--seed",
                "5",
            ],
        ),
        (
            "tadbp",
            vec![
                "tadbp",
                "--psi",
                r#"{"kind":"geometric","p":0.5}"#,
                "--len",
                "20000",
                "--chain-steps",
                "10000",
                "--seed",
                "3",
            ],
        ),
        (
            "walks",
            vec!["walks", "--eps", "0.5", "--trials", "20000", "--seed", "9"],
        ),
        (
            "animals",
            vec![
                "animals",
                "--dist",
                r#"{"kind":"geometric","p":0.5}"#,
                "--a-grid",
                "2,20",
                "--n-grid",
                "3,6",
                "--trials",
                "2",
                "--seed",
                "1",
            ],
        ),
    ];
    for (name, args) in cases {
        let dir = out_dir(&tmp, name);
        let mut a = args.clone();
        a.extend(["--out", &dir]);
        let o = run(&a);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert_valid(
            name,
            &read_json(&Path::new(&dir).join(format!("{name}.json"))),
        );
        let m = Path::new(&dir).join(MANIFEST_FILE);
        assert_valid("manifest", &read_json(&m));
        for f in std::fs::read_dir(&dir).unwrap() {
            let p = f.unwrap().path();
            if p.extension().is_some_and(|e| e == "csv") {
                let mut r = csv::Reader::from_path(&p).unwrap();
                assert!(!r.headers().unwrap().is_empty());
                assert!(r.records().all(|x| x.is_ok()), "{}", p.display());
            }
        }
        let again = rerun_from_manifest(&m, &tmp.path().join(format!("{name}-again"))).unwrap();
        assert!(again.identical(), "{name}: {:?}", again.mismatches);

        let cli_again = out_dir(&tmp, &format!("{name}-cli"));
        let o = run(&["rerun", m.to_str().unwrap(), "--out", &cli_again]);
        assert_eq!(o.status.code(), Some(0), "{name}");
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for threads in ["1", "3"] {
        let dir = out_dir(&tmp, threads);
        let o = bin()
            .env("COMBUSTION_LAB_THREADS", threads)
            .args([
                "walks", "--eps", "0.3", "--trials", "40000", "--seed", "2", "--out", &dir,
            ])
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        digests.push(read_json(&Path::new(&dir).join(MANIFEST_FILE))["outputs"].clone());
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn config_files_drive_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("walks.json");
    std::fs::write(&cfg, r#"{"eps":0.5,"ns":[2,4],"trials":1000,"seed":1}"#).unwrap();
    let o = run(&["walks", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    std::fs::write(&cfg, r#"{"eps":0.5,"bogus":1}"#).unwrap();
    assert_eq!(
        run(&["walks", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}
