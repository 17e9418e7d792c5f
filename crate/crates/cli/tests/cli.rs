use std::process::{Command, Output};

use proptest::prelude::*;
use wavelab_cli::{parse_args, parse_config_text, CliError, CommandKind, Format, Value};

fn wavelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavelab"))
        .args(args)
        .env_remove("WAVELAB_WORKERS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn argv<'a>(args: &[&'a str]) -> Vec<&'a str> {
    std::iter::once("wavelab").chain(args.iter().copied()).collect()
}

#[test]
fn classify_prints_region_and_exponent() {
    let o = wavelab(&["classify", "--n", "3", "--p", "2", "--q", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,p,q,region,b5_residual,lifespan_exponent"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[3], "BlowupY4");
    assert_eq!(row[5].parse::<f64>().unwrap(), 6.0);
}

#[test]
fn classify_rejects_low_dimension() {
    let o = wavelab(&["classify", "--n", "1", "--p", "2", "--q", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n >= 2"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn exponents_table_matches_closed_forms() {
    let o = wavelab(&["exponents", "--n", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row[0], 3.0);
    assert!((row[1] - (1.0 + 2f64.sqrt())).abs() < 1e-15);
    assert_eq!((row[2], row[3]), (2.0, 6.0));

    let o = wavelab(&["exponents", "--n", "4", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["p0"], 5.0 / 3.0);
    assert!(v["b6_exponent"].is_null());
}

#[test]
fn solve_example_is_a_valid_config() {
    let cfg = parse_args(argv(&["solve", "--n", "3", "--p", "2", "--q", "2", "--eps", "0.5", "--h", "0.02", "--tmax", "80"]))
        .unwrap();
    assert_eq!(cfg.command, CommandKind::Solve);
    assert_eq!(cfg.params["tmax"], Value::Float(80.0));
    assert_eq!(cfg.params["amplitude"], Value::Float(1.0));
    let defaulted = parse_args(argv(&["solve", "--p", "2", "--q", "2", "--eps", "0.5"])).unwrap();
    assert_eq!(defaulted.params["h"], Value::Float(0.02));
}

#[test]
fn usage_errors_name_the_key() {
    let cases: [(&[&str], &str); 6] = [
        (&["classify", "--n", "3", "--p", "2"], "q"),
        (&["classify", "--n", "3", "--p", "x", "--q", "2"], "p"),
        (&["solve", "--n", "2", "--p", "2", "--q", "2", "--eps", "1"], "n"),
        (&["solve", "--p", "2", "--q", "2", "--eps", "1", "--h", "-1"], "h"),
        (&["lifespan-sweep", "--p", "2.5", "--q", "3"], "q"),
        (&["picard", "--p", "2", "--q", "2", "--eps", "1", "--iters", "1"], "iters"),
    ];
    for (args, key) in cases {
        match parse_args(argv(args)) {
            Err(CliError::Usage { key: k, .. }) => assert_eq!(k, key, "{args:?}"),
            other => panic!("{args:?}: {other:?}"),
        }
    }
    let o = wavelab(&["classify", "--n", "3", "--p", "2", "--q", "2", "--bogus", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_keys_and_precedence() {
    let dir = std::env::temp_dir().join(format!("wavelab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let conf = dir.join("run.conf");
    std::fs::write(&conf, "# classify run\ncommand = classify\nn = 3\np = 2.5\nq = 3\n").unwrap();
    let path = conf.to_str().unwrap();

    let cfg = parse_args(argv(&["--config", path])).unwrap();
    assert_eq!(cfg.params["p"], Value::Float(2.5));
    let cfg = parse_args(argv(&["classify", "--config", path, "--p", "2"])).unwrap();
    assert_eq!(cfg.params["p"], Value::Float(2.0));

    std::fs::write(&conf, "command = classify\nn = 3\np = 2\nq = 2\nmu = 0.5\n").unwrap();
    let o = wavelab(&["--config", path]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'mu'"));

    std::fs::write(&conf, "n = 3\np = 2\nq = 2\n").unwrap();
    assert!(matches!(
        parse_args(argv(&["exponents", "--config", path])),
        Err(CliError::Usage { key, .. }) if key == "p"
    ));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn results_are_byte_identical_across_runs() {
    let dir = std::env::temp_dir().join(format!("wavelab-det-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let path = dir.join(format!("out{i}.csv"));
        let p = path.to_str().unwrap();
        let o = wavelab(&["verify-bounds", "--estimate", "z17", "--ts", "1,10,100", "--output", p]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(o.stdout.is_empty());
        outputs.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    assert!(text.starts_with("estimate_id,t,r,value\nZ17,"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn scientific_failures_exit_with_one() {
    let o = wavelab(&["picard", "--p", "2", "--q", "2", "--eps", "3", "--h", "0.05", "--tmax", "20", "--iters", "40"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("diverged"));
    assert!(stdout(&o).starts_with("iteration,difference,ratio\n"));

    // The smallest eps is predicted to need far more work than the budget allows.
    let o = wavelab(&[
        "lifespan-sweep", "--p", "2", "--q", "2", "--eps", "3,4,6,8", "--h", "0.05", "--budget", "2e6", "--confirm", "false",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("eps = 3"), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn worker_variable_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_wavelab"))
        .args(["exponents", "--n", "2"])
        .env("WAVELAB_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("WAVELAB_WORKERS"));
    let o = Command::new(env!("CARGO_BIN_EXE_wavelab"))
        .args(["exponents", "--n", "2"])
        .env("WAVELAB_WORKERS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn psi_scan_and_solve_write_json() {
    let o = wavelab(&["verify-psi", "--p", "2", "--ts", "1,10,100", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);

    let o = wavelab(&["solve", "--p", "2.5", "--q", "3", "--eps", "0.01", "--h", "0.05", "--tmax", "2", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["outcome"], "CompletedHorizon");
    assert_eq!(v["history"].as_array().unwrap().len(), 41);
    assert!(v["history"][40]["n1"].as_f64().unwrap() > 0.0);
}

fn float_arg() -> impl Strategy<Value = f64> {
    prop_oneof![1.01f64..6.0, (1u32..60).prop_map(|k| k as f64 / 10.0 + 1.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn render_round_trips(
        n in 2i64..9,
        p in float_arg(),
        q in float_arg(),
        eps in 0.0f64..5.0,
        h in 0.01f64..0.5,
        tmax in 1.0f64..100.0,
        json in any::<bool>(),
        out in proptest::option::of("[a-z]{1,8}\\.csv"),
        which in 0usize..3,
    ) {
        let (ps, qs, es, hs, ts) = (p.to_string(), q.to_string(), eps.to_string(), h.to_string(), tmax.to_string());
        let ns = n.to_string();
        let mut args: Vec<&str> = match which {
            0 => vec!["classify", "--n", &ns, "--p", &ps, "--q", &qs],
            1 => vec!["exponents", "--n", &ns],
            _ => vec!["solve", "--p", &ps, "--q", &qs, "--eps", &es, "--h", &hs, "--tmax", &ts],
        };
        if json {
            args.extend(["--format", "json"]);
        }
        if let Some(o) = &out {
            args.extend(["--output", o.as_str()]);
        }
        let cfg = parse_args(argv(&args)).unwrap();
        prop_assert_eq!(cfg.format, if json { Format::Json } else { Format::Csv });
        let back = parse_config_text(&cfg.render()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
