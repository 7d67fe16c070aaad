use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmhca::image::{read_pgm, write_pgm, GrayImage};

fn mmhca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmhca"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Tiny synthetic dataset: 4 train, 2 val, 2 test slices at 32×32.
fn dataset(root: &Path) -> PathBuf {
    let dir = root.join("data");
    let o = mmhca(&[
        "synth", "--seed", "3", "--train", "4", "--val", "2", "--test", "2", "--hr-size", "32", "--out-dir", p(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("manifest.toml")
}

const QUICK: [&str; 10] = ["--steps", "6", "--batch", "2", "--patch", "8", "--width", "4", "--log-every", "1"];

fn train(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--manifest", p(manifest), "--out-dir", p(out)];
    args.extend(QUICK);
    args.extend(extra);
    mmhca(&args)
}

/// Parse `key=value` pairs of one log line.
fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn assert_error_line(o: &Output, exit: i32, code: &str) {
    assert_eq!(o.status.code(), Some(exit), "stderr: {}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error code={code} kind=")), "{err}");
    assert!(lines[0].contains(" message=\""), "{err}");
}

#[test]
fn synth_writes_manifest_and_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path());
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(manifest.with_file_name("config.json")).unwrap()).unwrap();
    assert_eq!(echo["command"], "synth");
    assert_eq!(echo["resolved"]["hr_size"], 32);
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("target = \"t2w\""), "{text}");
}

#[test]
fn train_logs_and_parameter_counts_depend_on_attention() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path());
    let mut counts = Vec::new();
    for kind in ["none", "mmhca"] {
        let out = tmp.path().join(kind);
        let o = train(&manifest, &out, &["--attention", kind]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = stdout(&o);
        let first = text.lines().next().unwrap();
        assert_eq!(field(first, "attention"), Some(kind));
        counts.push(field(first, "params").unwrap().parse::<usize>().unwrap());
        for line in text.lines().filter(|l| field(l, "loss").is_some()) {
            assert!(field(line, "step").is_some() && field(line, "elapsed_s").is_some(), "{line}");
        }
        assert!(out.join("best.ckpt").exists());
        assert_eq!(std::fs::read_to_string(out.join("train.log")).unwrap(), text);
    }
    assert!(counts[1] > counts[0], "{counts:?}");
}

#[test]
fn replay_reproduces_the_loss_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path());
    let out = tmp.path().join("run");
    let first = train(&manifest, &out, &["--seed", "9"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let echo = tmp.path().join("echo.json");
    std::fs::copy(out.join("config.json"), &echo).unwrap();
    let again = mmhca(&["replay", p(&echo)]);
    assert!(again.status.success(), "{}", stderr(&again));
    let losses = |s: &str| s.lines().filter_map(|l| field(l, "loss").map(String::from)).collect::<Vec<_>>();
    assert_eq!(losses(&stdout(&first)).len(), 6);
    assert_eq!(losses(&stdout(&first)), losses(&stdout(&again)));
}

#[test]
fn eval_bicubic_and_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path());
    let bic = tmp.path().join("bic");
    let o = mmhca(&["eval", "--manifest", p(&manifest), "--bicubic", "--out-dir", p(&bic)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = std::fs::read_to_string(bic.join("results.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    let mean: f64 = (rows[0][1].parse::<f64>().unwrap() + rows[1][1].parse::<f64>().unwrap()) / 2.0;
    assert_eq!(rows[2][0], "mean");
    assert!((rows[2][1].parse::<f64>().unwrap() - mean).abs() < 1e-5);

    let run = tmp.path().join("run");
    assert!(train(&manifest, &run, &[]).status.success());
    let ck = run.join("best.ckpt");
    for extra in [&[][..], &["--self-ensemble"][..]] {
        let out = tmp.path().join(format!("eval{}", extra.len()));
        let mut args = vec!["eval", "--manifest", p(&manifest), "--checkpoint", p(&ck), "--out-dir", p(&out)];
        args.extend(extra);
        let o = mmhca(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let label = if extra.is_empty() { "model" } else { "model+" };
        assert_eq!(field(&stdout(&o), "label"), Some(label));
        assert!(out.join("results.json").exists());
    }
}

#[test]
fn sr_doubles_the_input_size() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path());
    let run = tmp.path().join("run");
    assert!(train(&manifest, &run, &[]).status.success());
    let inputs: Vec<PathBuf> = ["a", "b"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let path = tmp.path().join(format!("{name}.pgm"));
            let img = GrayImage {
                width: 13,
                height: 11,
                maxval: 255,
                pixels: (0..143).map(|k| ((k * 7 + i * 40) % 256) as u16).collect(),
            };
            write_pgm(&path, &img).unwrap();
            path
        })
        .collect();
    let out = tmp.path().join("sr");
    let o = mmhca(&[
        "sr", "--checkpoint", p(&run.join("best.ckpt")), "--input", p(&inputs[0]), "--input", p(&inputs[1]),
        "--out-dir", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let hr = read_pgm(&out.join("sr.pgm")).unwrap();
    assert_eq!((hr.width, hr.height), (26, 22));

    let o = mmhca(&["sr", "--checkpoint", p(&run.join("best.ckpt")), "--input", p(&inputs[0]), "--out-dir", p(&out)]);
    assert_error_line(&o, 1, "usage");
}

#[test]
fn untrained_attention_maps_are_mid_gray() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("x.pgm");
    let img = GrayImage {
        width: 12,
        height: 12,
        maxval: 65535,
        pixels: (0..144).map(|k| (k * 401 % 65536) as u16).collect(),
    };
    write_pgm(&input, &img).unwrap();
    let out = tmp.path().join("maps");
    let o = mmhca(&[
        "dump-attention", "--input", p(&input), "--input", p(&input), "--width", "4", "--out-dir", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut seen = 0;
    for entry in std::fs::read_dir(out.join("module_00")).unwrap() {
        let map = read_pgm(&entry.unwrap().path()).unwrap();
        assert_eq!((map.width, map.height), (12, 12));
        assert!(map.pixels.iter().all(|&v| v == 128));
        seen += 1;
    }
    // 2 modalities × width 4 channels, plus the mean map.
    assert_eq!(seen, 9);
}

#[test]
fn gradcheck_small_network_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mmhca(&[
        "gradcheck", "--width", "4", "--blocks", "1", "--heads", "2", "--patch", "5", "--batch", "1", "--out-dir",
        p(tmp.path()),
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert_eq!(field(&stdout(&o), "passed"), Some("true"));
    assert!(tmp.path().join("gradcheck.tsv").exists());
}

#[test]
fn ablate_filter_runs_matching_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path());
    let out = tmp.path().join("ablate");
    let mut args = vec!["ablate", "--manifest", p(&manifest), "--filter", "r=0.25", "--out-dir", p(&out)];
    args.extend(QUICK);
    let o = mmhca(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = std::fs::read_to_string(out.join("ablation.tsv")).unwrap();
    let names: Vec<&str> = tsv.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(names, ["EDSR + MMHCA (3 heads, r=0.25)"]);
}

#[test]
fn exit_codes_and_error_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");

    assert_error_line(&mmhca(&["train", "--bogus"]), 1, "usage");
    assert_error_line(&mmhca(&["gradcheck", "--width", "2", "--out-dir", p(&out)]), 1, "config");
    assert_error_line(
        &mmhca(&["gradcheck", "--attention", "mhca", "--out-dir", p(&out)]),
        1,
        "usage",
    );

    let missing = tmp.path().join("nope.toml");
    assert_error_line(
        &mmhca(&["eval", "--manifest", p(&missing), "--bicubic", "--out-dir", p(&out)]),
        2,
        "io",
    );

    let manifest = dataset(tmp.path());
    let bad = tmp.path().join("bad.ckpt");
    std::fs::write(&bad, b"MMHC\x01\x00\x00\x00garbage").unwrap();
    assert_error_line(
        &mmhca(&["eval", "--manifest", p(&manifest), "--checkpoint", p(&bad), "--out-dir", p(&out)]),
        2,
        "corrupt_checkpoint",
    );

    assert_error_line(&train(&manifest, &out, &["--lr", "1e30"]), 3, "diverged");
}

#[test]
fn flags_are_checked_before_the_data_is_read() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    let o = mmhca(&["train", "--manifest", p(&missing), "--steps", "0", "--out-dir", p(tmp.path())]);
    assert_error_line(&o, 1, "config");
}

#[test]
fn help_exits_zero() {
    let o = mmhca(&["dump-attention", "--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("--checkpoint"));
}
