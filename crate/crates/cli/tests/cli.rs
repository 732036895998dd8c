use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn run(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_adacusum"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    {
        let mut pipe = child.stdin.take().unwrap();
        if let Some(text) = stdin {
            pipe.write_all(text.as_bytes()).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

fn lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("ndjson record"))
        .collect()
}

/// Deterministic pseudo-normal noise (sum of uniforms), independent of the library.
fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..n)
        .map(|_| (0..12).map(|_| next()).sum::<f64>() - 6.0)
        .collect()
}

fn to_text(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}\n")).collect()
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn calibrate_rejects_single_category() {
    let out = run(
        &["calibrate", "--d", "1", "--arl0", "100", "--reps", "10"],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn calibrate_is_deterministic_and_feeds_monitor_and_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "calibrate",
        "--d",
        "4",
        "--arl0",
        "40",
        "--reps",
        "60",
        "--seed",
        "7",
    ];
    let a = run(&args, None);
    let b = run(&args, None);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stderr)
    );
    assert_eq!(a.stdout, b.stdout);
    let report: Value = serde_json::from_slice(&a.stdout).unwrap();
    let h = report["h"].as_f64().unwrap();
    assert!(h > 0.0);
    assert_eq!(report["d"], 4);

    let limits = dir.path().join("h.json");
    let mut file_args = args.to_vec();
    let limits_str = limits.to_str().unwrap();
    file_args.extend(["--out", limits_str]);
    assert_eq!(run(&file_args, None).status.code(), Some(0));
    assert_eq!(fs::read(&limits).unwrap(), a.stdout);

    let data = to_text(&noise(30, 1));
    let out = run(
        &[
            "monitor",
            "--d",
            "4",
            "--warmup",
            "5",
            "--limits-file",
            limits_str,
        ],
        Some(&data),
    );
    assert!(matches!(out.status.code(), Some(0 | 1)));
    assert!(!lines(&out).is_empty());

    let scenario = dir.path().join("s.json");
    write(
        &scenario,
        r#"{"id":"pipe","in_control":{"family":"normal","mean":0,"sd":1},
            "change":{"kind":"location","delta":3},"tau":5,"m":10,"d":4,"arl0_target":40}"#,
    );
    let out = run(
        &[
            "simulate",
            "--scenario",
            scenario.to_str().unwrap(),
            "--reps",
            "5",
            "--h-file",
            limits_str,
        ],
        None,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("pipe,4,5,"));
}

#[test]
fn monitor_huge_limit_emits_one_record_per_tick() {
    let data = to_text(&noise(25, 2));
    let out = run(&["monitor", "--limit", "1e12"], Some(&data));
    assert_eq!(out.status.code(), Some(0));
    let records = lines(&out);
    assert_eq!(records.len(), 5);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["tick"], (i + 1) as u64);
        assert_eq!(r["alarm"], false);
        assert!(r.get("diagnosis").is_none());
        let max = ["s_ltr_plus", "s_ltr_minus", "s_co_plus", "s_co_minus"]
            .iter()
            .map(|k| r[*k].as_f64().unwrap())
            .fold(0.0, f64::max);
        assert_eq!(r["s_max"].as_f64().unwrap(), max);
    }
}

#[test]
fn monitor_negative_shift_alarms_with_diagnosis() {
    let mut values = noise(60, 3);
    values.extend(noise(200, 4).iter().map(|x| x - 4.0));
    let out = run(&["monitor", "--limit", "235.241"], Some(&to_text(&values)));
    assert_eq!(out.status.code(), Some(1));
    let records = lines(&out);
    let signal = &records.last().unwrap()["signal"];
    let diagnosis: Vec<&str> = signal["diagnosis"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(
        diagnosis.contains(&"negative location shift"),
        "{diagnosis:?}"
    );
    let tick_record = &records[records.len() - 2];
    assert_eq!(tick_record["alarm"], true);
    assert_eq!(tick_record["tick"], signal["tick"]);
    assert!(signal["tick"].as_u64().unwrap() > 40);
}

#[test]
fn monitor_continue_keeps_going_after_alarm() {
    let mut values = noise(40, 5);
    values.extend(noise(400, 6).iter().map(|x| x + 5.0));
    let text = to_text(&values);
    let stop = run(&["monitor", "--limit", "100"], Some(&text));
    let go = run(&["monitor", "--limit", "100", "--continue"], Some(&text));
    assert_eq!(stop.status.code(), Some(1));
    assert_eq!(go.status.code(), Some(1));
    let signals = |o: &Output| {
        lines(o)
            .iter()
            .filter(|r| r.get("signal").is_some())
            .count()
    };
    assert_eq!(signals(&stop), 1);
    assert!(signals(&go) > 1);
    let ticks = lines(&go)
        .iter()
        .filter(|r| r.get("tick").is_some())
        .count();
    assert_eq!(ticks, 420);
}

#[test]
fn monitor_rejects_bad_input() {
    let out = run(
        &["monitor", "--limit", "10", "--warmup", "2"],
        Some("1.0\n2.0\nabc\n"),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = run(&["monitor"], Some("1.0\n"));
    assert_eq!(out.status.code(), Some(2));

    let out = run(
        &["monitor", "--limit", "10", "--branches", "ltr+,bogus"],
        Some("1.0\n"),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn monitor_skip_header_and_series() {
    let mut text = String::from("value\n");
    text.push_str(&to_text(&noise(23, 7)));
    let out = run(
        &[
            "monitor",
            "--limit",
            "1e9",
            "--skip-header",
            "--emit",
            "series",
        ],
        Some(&text),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(
        rows[0],
        "tick,x,s_ltr_plus,s_ltr_minus,s_co_plus,s_co_minus,s_max,alarm"
    );
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("1,"));
    assert!(rows[3].ends_with(",0"));
}

#[test]
fn snapshot_resume_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let values = noise(300, 8);
    let base = ["monitor", "--d", "10", "--limit", "1e9", "--warmup", "15"];
    let straight = run(&base, Some(&to_text(&values)));
    assert_eq!(straight.status.code(), Some(0));

    let state = dir.path().join("state.json");
    let mut with_state = base.to_vec();
    with_state.extend(["--state", state.to_str().unwrap()]);
    let mut pieces = Vec::new();
    // split inside the warm-up and twice while monitoring
    for chunk in [
        &values[..7],
        &values[7..120],
        &values[120..121],
        &values[121..],
    ] {
        let out = run(&with_state, Some(&to_text(chunk)));
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        pieces.extend(out.stdout);
    }
    assert_eq!(pieces, straight.stdout);

    let snapshot: Value = serde_json::from_slice(&fs::read(&state).unwrap()).unwrap();
    assert_eq!(snapshot["schema_version"], 1);
    assert_eq!(snapshot["tick"], 285);
    assert_eq!(snapshot["history"].as_array().unwrap().len(), 300);

    // conflicting flags are refused rather than silently ignored
    let mut conflict = with_state.clone();
    conflict[2] = "12";
    assert_eq!(run(&conflict, Some("1\n")).status.code(), Some(2));
}

#[test]
fn simulate_single_run_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    write(
        &scenario,
        r#"[{"id":"a","in_control":{"family":"exponential","rate":3},
             "change":{"kind":"swap","to":{"family":"exponential","rate":1}},"tau":20},
            {"id":"b","in_control":{"family":"normal","mean":0,"sd":1},
             "change":{"kind":"scale","delta":2},"tau":20,"d":10,"arl0_target":200}]"#,
    );
    let path = scenario.to_str().unwrap();
    let one = run(
        &["simulate", "--scenario", path, "--reps", "1", "--seed", "3"],
        None,
    );
    assert_eq!(
        one.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&one.stderr)
    );
    let csv = String::from_utf8(one.stdout.clone()).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(
        rows[0],
        "scenario,d,tau,change,arl1,stderr,early_rate,reps,seed"
    );
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("a,20,20,Exp(3)->Exp(1),"));
    assert!(rows[2].starts_with("b,10,20,N(0 1)x2,"));
    assert!(rows[1].ends_with(",1,3"));

    let again = run(
        &["simulate", "--scenario", path, "--reps", "1", "--seed", "3"],
        None,
    );
    assert_eq!(again.stdout, one.stdout);

    let out_file = dir.path().join("r.json");
    let json = run(
        &[
            "simulate",
            "--scenario",
            path,
            "--reps",
            "2",
            "--format",
            "json",
            "--out",
            out_file.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(json.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&fs::read(&out_file).unwrap()).unwrap();
    assert!(doc["early_alarm_convention"]
        .as_str()
        .unwrap()
        .contains("discarded"));
    assert_eq!(doc["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_unknown_suite_is_usage_error() {
    let out = run(&["simulate", "--suite", "table9"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["simulate"], None);
    assert_eq!(out.status.code(), Some(2));
}
