use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use saec::quantkernel::{dequantize, quantize, Codebook, QuantizedTensor, NF4_LEVELS};
use saec::Matrix;

fn saec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saec"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_pgm(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> u8) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            bytes.push(f(x, y));
        }
    }
    fs::write(path, bytes).unwrap();
}

const CONFIG: &str = r#"{
  "dataset": "test",
  "policy": "policy.json",
  "seed": 11,
  "mode": "hybrid",
  "edge": {"acc_low_complexity": 0.6, "acc_high_complexity": 0.4, "complexity_knee": 0.8, "confidence_sharpness": 3.0},
  "cloud": {"acc_low_complexity": 0.9, "acc_high_complexity": 0.9, "complexity_knee": 0.8, "confidence_sharpness": 3.0},
  "cost": {"t_cpx_per_image": 0.002, "t_edge_per_image": 0.05, "t_cloud_per_image": 0.2, "p_edge": 15.0, "p_cloud": 300.0}
}"#;

/// A held-out split, a test split, an experiment config and a calibrated policy.
fn workspace() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    for (dir, seed) in [("held", "1"), ("test", "2")] {
        let o = saec(
            &[
                "synth",
                "--out",
                dir,
                "--per-class",
                "12",
                "--side",
                "48",
                "--seed",
                seed,
            ],
            d.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    fs::write(d.path().join("exp.json"), CONFIG).unwrap();
    let o = saec(
        &[
            "calibrate",
            "--heldout",
            "held",
            "--config",
            "exp.json",
            "--rho",
            "0.5",
            "--out",
            "policy.json",
        ],
        d.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("tau_S"));
    d
}

#[test]
fn help_for_every_subcommand() {
    let d = tempfile::tempdir().unwrap();
    for sub in [
        "score",
        "calibrate",
        "route",
        "simulate",
        "quant",
        "codec",
        "synth",
    ] {
        let o = saec(&[sub, "--help"], d.path());
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
        // the short form keeps each description on its flag's line
        let help = stdout(&saec(&[sub, "-h"], d.path()));
        // every argument and option line carries a description
        for line in help
            .lines()
            .filter(|l| l.starts_with("  ") && !l.trim().is_empty())
        {
            let t = line.trim();
            if t.starts_with('-') || t.starts_with('<') {
                assert!(t.contains("  "), "{sub}: undocumented `{t}`");
            }
        }
    }
    assert!(stdout(&saec(&["simulate", "--help"], d.path())).contains("--seed"));
}

#[test]
fn score_rows_and_errors() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    write_pgm(&p.join("imgs/flat.pgm"), 20, 20, |_, _| 128);
    for i in 0..3 {
        write_pgm(&p.join(format!("imgs/n{i}.pgm")), 30, 30, |x, y| {
            ((x * 7 + y * 13 + i) % 256) as u8
        });
    }
    let o = saec(&["score", "imgs"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,h_i,e_d,lap_var,sobel_mean,r_j,s_c");
    assert_eq!(lines.len(), 5);
    let flat = lines.iter().find(|l| l.contains("flat.pgm")).unwrap();
    assert!(flat.ends_with(",0.000000"), "{flat}");

    fs::create_dir_all(p.join("empty")).unwrap();
    let o = saec(&["score", "empty"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no images found"));

    fs::write(p.join("imgs/broken.pgm"), b"P5\n10 10\n255\nxx").unwrap();
    let o = saec(&["score", "imgs"], p);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(
        stdout(&o).lines().count(),
        5,
        "remaining files still scored"
    );
    assert!(stderr(&o).contains("broken.pgm"));
}

#[test]
fn calibrate_is_reproducible_and_flags_degenerate_labels() {
    let d = workspace();
    let p = d.path();
    let first = fs::read(p.join("policy.json")).unwrap();
    let o = saec(
        &[
            "calibrate",
            "--heldout",
            "held",
            "--config",
            "exp.json",
            "--rho",
            "0.5",
            "--out",
            "again.json",
        ],
        p,
    );
    assert!(o.status.success());
    assert_eq!(first, fs::read(p.join("again.json")).unwrap());

    let o = saec(
        &[
            "calibrate",
            "--heldout",
            "held",
            "--config",
            "exp.json",
            "--rho",
            "1",
            "--out",
            "all.json",
        ],
        p,
    );
    assert!(o.status.success());
    let all: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("all.json")).unwrap()).unwrap();
    let scores = stdout(&saec(&["score", "held"], p));
    let min = scores
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!((all["tau_S"].as_f64().unwrap() - min).abs() < 1e-6);

    let one = p.join("one");
    fs::create_dir_all(one.join("defect")).unwrap();
    for i in 0..12 {
        write_pgm(&one.join(format!("good/{i}.pgm")), 16, 16, |x, _| {
            (x * i) as u8
        });
    }
    let o = saec(
        &[
            "calibrate",
            "--heldout",
            "one",
            "--config",
            "exp.json",
            "--rho",
            "0.5",
        ],
        p,
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn calibrate_from_logit_csv() {
    let d = workspace();
    let p = d.path();
    let mut csv = String::from("path,edge_l0,edge_l1,cloud_l0,cloud_l1\n");
    for label in ["good", "defect"] {
        for i in 0..12 {
            let s = if label == "defect" { 1.0 } else { -1.0 };
            let e = s * (0.5 + i as f64 / 6.0) * if i % 4 == 0 { -1.0 } else { 1.0 };
            csv += &format!("{label}/{label}_{i:05}.pgm,0,{e},0,{}\n", 2.0 * s);
        }
    }
    fs::write(p.join("logits.csv"), csv).unwrap();
    let o = saec(
        &[
            "calibrate",
            "--heldout",
            "held",
            "--logits",
            "logits.csv",
            "--rho",
            "0.3",
            "--out",
            "p2.json",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("p2.json")).unwrap()).unwrap();
    assert_eq!(v["rho"], 0.3);
}

#[test]
fn simulate_writes_deterministic_outputs() {
    let d = workspace();
    let p = d.path();
    for out in ["a", "b"] {
        let o = saec(&["simulate", "exp.json", "--out", out], p);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("accuracy="));
    }
    for f in ["report.json", "trace.csv"] {
        assert_eq!(
            fs::read(p.join("a").join(f)).unwrap(),
            fs::read(p.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("a/report.json")).unwrap()).unwrap();
    assert_eq!(report["counts"]["n"], 24);
    assert_eq!(report["config"]["seed"], 11);

    let o = saec(&["simulate", "exp.json", "--out", "c", "--seed", "12"], p);
    assert!(o.status.success());
    assert_ne!(
        fs::read(p.join("a/trace.csv")).unwrap(),
        fs::read(p.join("c/trace.csv")).unwrap()
    );
}

#[test]
fn simulate_cloud_only_with_perfect_cloud() {
    let d = workspace();
    let p = d.path();
    let cfg = CONFIG.replace(
        r#""acc_low_complexity": 0.9, "acc_high_complexity": 0.9"#,
        r#""acc_low_complexity": 1.0, "acc_high_complexity": 1.0"#,
    );
    fs::write(p.join("perfect.json"), cfg).unwrap();
    let o = saec(
        &[
            "simulate",
            "perfect.json",
            "--mode",
            "cloud_only",
            "--out",
            "co",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("co/report.json")).unwrap()).unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["cloud_fraction"], 1.0);
    assert!(p.join("co/defects.jsonl").exists());
}

#[test]
fn simulate_config_errors_name_the_key() {
    let d = workspace();
    let p = d.path();
    fs::write(p.join("noseed.json"), CONFIG.replace(r#""seed": 11,"#, "")).unwrap();
    let o = saec(&["simulate", "noseed.json"], p);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    fs::write(
        p.join("typo.json"),
        CONFIG.replace(r#""mode": "hybrid""#, r#""mood": "hybrid""#),
    )
    .unwrap();
    let o = saec(&["simulate", "typo.json"], p);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("mood"));

    fs::write(p.join("badacc.json"), CONFIG.replace("0.6,", "1.6,")).unwrap();
    let o = saec(&["simulate", "badacc.json"], p);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("acc_low_complexity"));
}

#[test]
fn route_from_records() {
    let d = workspace();
    let p = d.path();
    fs::write(
        p.join("r.csv"),
        "path,s_c,edge_l0,edge_l1\na,100.0,0,0\nb,-1.0,0,0\nc,-1.0,-40,40\n",
    )
    .unwrap();
    let o = saec(&["route", "--policy", "policy.json", "r.csv"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,site,reason");
    assert_eq!(lines[1], "a,cloud,complexity_route");
    assert_eq!(lines[2], "b,cloud,edge_reject");
    assert_eq!(lines[3], "c,edge,edge_accept");
}

#[test]
fn quant_constant_and_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("c.csv"), "2.5,2.5,2.5\n2.5,2.5,2.5\n").unwrap();
    let o = saec(&["quant", "c.csv", "--group-size", "4"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let last = stdout(&o).lines().last().unwrap().to_string();
    assert_eq!(last, "all,,,0,0");
    assert!(p.join("c.saecq").exists());
    assert_eq!(&fs::read(p.join("c.saecq")).unwrap()[..6], b"SAECQ1");

    fs::write(p.join("bad.csv"), "1,2\n3,x\n").unwrap();
    assert_eq!(saec(&["quant", "bad.csv"], p).status.code(), Some(2));
}

/// Per-group standardization and exhaustive nearest-level search.
fn quant_rms_oracle(values: &[f64], group: usize) -> f64 {
    let mut sq = 0.0;
    for g in values.chunks(group) {
        let n = g.len() as f64;
        let mu = g.iter().sum::<f64>() / n;
        let sigma = (g.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        for &v in g {
            let z = (v - mu) / sigma;
            let mut best = NF4_LEVELS[0];
            for &l in &NF4_LEVELS {
                if (z - l).abs() < (z - best).abs() {
                    best = l;
                }
            }
            sq += (v - (mu + sigma * best)).powi(2);
        }
    }
    (sq / values.len() as f64).sqrt()
}

#[test]
fn quant_rms_matches_brute_force() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let values: Vec<f64> = (0..64 * 64).map(|_| rng.sample(StandardNormal)).collect();
    let csv: String = values
        .chunks(64)
        .map(|row| {
            row.iter()
                .map(|v| format!("{v:?}"))
                .collect::<Vec<_>>()
                .join(",")
                + "\n"
        })
        .collect();
    fs::write(p.join("n.csv"), csv).unwrap();
    let o = saec(&["quant", "n.csv", "--out", "n.bin"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1 + 64 + 1);
    let rms: f64 = text
        .lines()
        .last()
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((rms - quant_rms_oracle(&values, 64)).abs() < 1e-12, "{rms}");

    let qt = QuantizedTensor::read_from(&fs::read(p.join("n.bin")).unwrap()[..]).unwrap();
    let w = Matrix::new(64, 64, values).unwrap();
    let direct = quantize(&w, 64, &Codebook::nf4()).unwrap();
    assert_eq!(dequantize(&qt), dequantize(&direct));
}

#[test]
fn codec_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    write_pgm(&p.join("in.pgm"), 20, 12, |_, _| 128);
    let o = saec(&["codec", "in.pgm", "out.pgm", "--quality", "50"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean_abs_diff=0.000000"));
    let o = saec(
        &[
            "-q",
            "synth",
            "--out",
            "s",
            "--per-class",
            "1",
            "--side",
            "8",
        ],
        p,
    );
    assert!(o.status.success());
    assert!(o.stderr.is_empty());
    assert_eq!(
        fs::read(p.join("in.pgm")).unwrap(),
        fs::read(p.join("out.pgm")).unwrap()
    );
    assert_eq!(
        saec(&["codec", "in.pgm", "o.pgm", "--quality", "0"], p)
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        saec(&["codec", "missing.pgm", "o.pgm"], p).status.code(),
        Some(2)
    );
}
