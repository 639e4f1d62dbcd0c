use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phonon-bus"))
}

fn run(dir: &Path, args: &[&str], config: Option<&str>, threads: Option<&str>) -> Output {
    let mut cmd = bin();
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let p = dir.join("config.json");
        std::fs::write(&p, text).unwrap();
        cmd.arg("--config").arg(p);
    }
    match threads {
        Some(t) => cmd.env("PHONON_BUS_THREADS", t),
        None => cmd.env_remove("PHONON_BUS_THREADS"),
    };
    cmd.output().unwrap()
}

fn csv(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(name)).unwrap()
}

/// Header and rows of the data part.
fn rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn column(text: &str, name: &str) -> Vec<f64> {
    let (h, r) = rows(text);
    let k = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name} in {h:?}"));
    r.iter().map(|row| row[k].parse().unwrap()).collect()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn out_files(dir: &Path) -> Vec<PathBuf> {
    match std::fs::read_dir(dir.join("out")) {
        Ok(rd) => rd.map(|e| e.unwrap().path()).collect(),
        Err(_) => Vec::new(),
    }
}

#[test]
fn modes_for_three_ions() {
    let d = TempDir::new().unwrap();
    let o = run(d.path(), &["modes", "--n", "3"], None, None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = csv(d.path(), "modes_modes.csv");
    let r = column(&text, "frequency_ratio");
    let rounded: Vec<f64> = r.iter().map(|x| (x * 1e4).round() / 1e4).collect();
    assert_eq!(rounded, vec![1.0, 1.7321, 2.4083]);
    assert!(text.starts_with("# phonon-bus "));
    assert!(text.contains("# master-seed: 0\n"));
    assert!(text.contains("# config-sha256: "));
    // 17 significant digits
    assert_eq!(rows(&text).1[0][1], "1.0000000000000000e0");
}

#[test]
fn silent_field_leaves_flat_occupation() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"params": {"e_rms": 0, "coherence_time": 0.1, "duration": 4, "fock": 2, "trials": 3, "samples": 4}}"#;
    let o = run(d.path(), &["heat"], Some(cfg), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = csv(d.path(), "heat_occupation.csv");
    assert_eq!(column(&text, "n_p1"), vec![2.0; 5]);
    assert_eq!(column(&csv(d.path(), "heat_rate.csv"), "growth_rate"), vec![0.0]);
    // config echoed verbatim
    assert!(text.contains(&format!("# config: {cfg}\n")));
}

#[test]
fn config_errors_exit_2_without_files() {
    let d = TempDir::new().unwrap();
    let cases = [
        (vec!["modes"], r#"{"units": "si", "params": {"omega_x": -6.28e6}}"#),
        (vec!["modes"], r#"{"params": {"n": 3}, "colour": "red"}"#),
        (vec!["modes"], r#"{"params": {"m": 3}}"#),
        (vec!["ms"], r#"{"scheme": "kick"}"#),
        (vec!["ms", "--trials", "10"], "{}"),
        (vec!["ms"], r#"{"params": {"detuning": 2.5}}"#),
        (vec!["crot"], r#"{"params": {"program": ["S_t", "B+"]}}"#),
        (vec!["modes"], r#"{"sweep": [{"param": "n", "values": [2, 3]}], "max_points": 1}"#),
        (vec!["modes"], "not json"),
    ];
    for (args, cfg) in cases {
        let o = run(d.path(), &args, Some(cfg), None);
        assert_eq!(code(&o), 2, "{args:?} {cfg}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out_files(d.path()).is_empty(), "{cfg}");
    }
    let o = run(d.path(), &["modes"], None, Some("zero"));
    assert_eq!(code(&o), 2);
}

#[test]
fn truncation_leakage_exits_3() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"params": {"e_rms": 2.0, "coherence_time": 0.1, "duration": 10, "cutoff": 3, "trials": 4}}"#;
    let o = run(d.path(), &["heat"], Some(cfg), None);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("leakage"));
    assert!(out_files(d.path()).is_empty());
}

#[test]
fn ms_gap_shrinks_with_detuning() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"sweep": [{"param": "detuning", "values": [10, 20, 40]}]}"#;
    let o = run(d.path(), &["ms"], Some(cfg), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = csv(d.path(), "ms_ms.csv");
    assert_eq!(column(&text, "detuning"), vec![10.0, 20.0, 40.0]);
    let gap = column(&text, "gap");
    assert!(gap[0] > gap[1] && gap[1] > gap[2], "{gap:?}");
    assert_eq!(rows(&csv(d.path(), "ms_sectors.csv")).1.len(), 9);
}

#[test]
fn one_point_grid_matches_plain_run() {
    let d = TempDir::new().unwrap();
    let base = r#"{"seed": 5, "params": {"e_rms": 0.05, "coherence_time": 0.1, "duration": 6, "trials": 8, "samples": 3}}"#;
    run(d.path(), &["heat"], Some(base), None);
    let plain = rows(&csv(d.path(), "heat_occupation.csv")).1;
    let swept = r#"{"seed": 5, "params": {"e_rms": 0.05, "coherence_time": 0.1, "duration": 6, "trials": 8, "samples": 3}, "sweep": [{"param": "e_rms", "values": [0.05]}]}"#;
    run(d.path(), &["heat"], Some(swept), None);
    let (h, r) = rows(&csv(d.path(), "heat_occupation.csv"));
    assert_eq!(h[0], "e_rms");
    let stripped: Vec<Vec<String>> = r.into_iter().map(|row| row[1..].to_vec()).collect();
    assert_eq!(stripped, plain);
    assert!(plain.iter().skip(1).all(|row| row[1].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn seed_changes_noise_and_is_recorded() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"params": {"e_rms": 0.05, "coherence_time": 0.1, "duration": 4, "trials": 4, "samples": 2}}"#;
    run(d.path(), &["heat", "--seed", "1"], Some(cfg), None);
    let a = csv(d.path(), "heat_occupation.csv");
    run(d.path(), &["heat", "--seed", "2"], Some(cfg), None);
    let b = csv(d.path(), "heat_occupation.csv");
    assert!(a.contains("# master-seed: 1\n") && b.contains("# master-seed: 2\n"));
    assert_ne!(rows(&a).1, rows(&b).1);
}

#[test]
fn svg_is_optional() {
    let d = TempDir::new().unwrap();
    run(d.path(), &["modes", "--n", "4"], None, None);
    assert!(out_files(d.path()).iter().all(|p| p.extension().unwrap() == "csv"));
    run(d.path(), &["modes", "--n", "4", "--svg"], None, None);
    let svg = std::fs::read_to_string(d.path().join("out/modes_modes.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
}

#[test]
fn si_units_scale_outputs() {
    let d = TempDir::new().unwrap();
    let w = 2.0 * std::f64::consts::PI * 1e6;
    let cfg = format!(r#"{{"units": "si", "params": {{"n": 2, "omega_x": {w}, "mass_u": 40}}}}"#);
    let o = run(d.path(), &["modes"], Some(&cfg), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let omega = column(&csv(d.path(), "modes_modes.csv"), "omega");
    assert!((omega[1] / (3f64.sqrt() * w) - 1.0).abs() < 1e-12);
    // two ions sit at ±ℓ/2^{2/3}, a few micrometres here
    let x = column(&csv(d.path(), "modes_positions.csv"), "position");
    assert!(x[1] > 1e-6 && x[1] < 1e-4, "{x:?}");
}
