//! End-to-end determinism of the command-line interface: every subcommand,
//! invoked twice with identical arguments, must produce byte-identical
//! outputs (wall-time columns excepted, which are informational only).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metacar"))
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().expect("spawn metacar");
    assert!(
        out.status.success(),
        "metacar {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Recursively collect relative paths of all files under `dir`.
fn file_list(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

/// Strip columns named in `drop` from a CSV body; non-CSV files pass through.
fn normalized(path: &Path, drop: &[&str]) -> Vec<u8> {
    let bytes = fs::read(path).unwrap();
    if path.extension().map(|e| e != "csv").unwrap_or(true) {
        return bytes;
    }
    let text = String::from_utf8(bytes).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = match lines.next() {
        Some(h) => h.split(',').collect(),
        None => return Vec::new(),
    };
    let keep: Vec<usize> = (0..header.len())
        .filter(|i| !drop.contains(&header[*i]))
        .collect();
    let mut out = String::new();
    for line in std::iter::once(header.join(",").as_str()).chain(lines) {
        let fields: Vec<&str> = line.split(',').collect();
        let row: Vec<&str> = keep.iter().map(|i| fields[*i]).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn assert_dirs_identical(a: &Path, b: &Path, drop_cols: &[&str]) {
    let fa = file_list(a);
    let fb = file_list(b);
    assert_eq!(fa, fb, "file sets differ between {a:?} and {b:?}");
    for rel in &fa {
        let va = normalized(&a.join(rel), drop_cols);
        let vb = normalized(&b.join(rel), drop_cols);
        assert_eq!(va, vb, "{rel:?} differs between runs");
    }
}

/// A configuration small enough that the full pipeline runs in seconds.
fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = metacar::harness::HarnessConfig::scaled();
    cfg.model.history = 4;
    cfg.model.hidden = 6;
    cfg.model.head_hidden = 6;
    cfg.mppi.horizon = 8;
    cfg.mppi.samples = 12;
    cfg.meta.episodes = 4;
    cfg.meta.tasks_per_batch = 2;
    cfg.ensemble_size = 2;
    cfg.episode_duration = 4.0;
    cfg.warmup_duration = 2.0;
    cfg.buffer_capacity = 200;
    cfg.t_h = 1.5;
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn every_subcommand_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root);
    let cfg = cfg.to_str().unwrap();

    // gen-data: identical JSONL for identical seeds.
    for pass in ["1", "2"] {
        let out = root.join(format!("tasks_{pass}.jsonl"));
        run_ok(&[
            "gen-data", "--tasks", "3", "--seed", "5",
            "--out", out.to_str().unwrap(), "--config", cfg,
        ]);
    }
    assert_eq!(
        fs::read(root.join("tasks_1.jsonl")).unwrap(),
        fs::read(root.join("tasks_2.jsonl")).unwrap(),
        "gen-data output differs between passes"
    );

    // pretrain: identical checkpoints; logs identical once the wall-time
    // column is dropped.
    for pass in ["1", "2"] {
        for variant in [&["--pooled"][..], &[][..]] {
            let name = if variant.is_empty() { "meta" } else { "pooled" };
            let out = root.join(format!("ck_{pass}")).join(name);
            let mut args = vec![
                "pretrain", "--seed", "3",
                "--out", out.to_str().unwrap(), "--config", cfg,
            ];
            args.extend_from_slice(variant);
            run_ok(&args);
        }
    }
    assert_dirs_identical(&root.join("ck_1"), &root.join("ck_2"), &["wall_ms"]);

    // run: one analytic and one learned baseline, two seeds each.
    for pass in ["1", "2"] {
        for baseline in ["a", "f"] {
            let out = root.join(format!("runs_{pass}")).join(baseline);
            run_ok(&[
                "run", "--baseline", baseline, "--seeds", "2",
                "--out", out.to_str().unwrap(),
                "--checkpoint", root.join("ck_1").to_str().unwrap(),
                "--config", cfg,
            ]);
        }
    }
    assert_dirs_identical(&root.join("runs_1"), &root.join("runs_2"), &[]);

    // report: identical aggregate tables from identical run directories.
    for pass in ["1", "2"] {
        let out = root.join(format!("table_{pass}.csv"));
        run_ok(&[
            "report", "--in", root.join("runs_1").to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ]);
    }
    assert_eq!(
        fs::read(root.join("table_1.csv")).unwrap(),
        fs::read(root.join("table_2.csv")).unwrap(),
        "report output differs between passes"
    );

    // diag-symmetry: identical stdout for the same checkpoint.
    let diag = |_: ()| {
        bin()
            .args([
                "diag-symmetry", "--checkpoint",
                root.join("ck_1/meta/ensemble").to_str().unwrap(),
            ])
            .output()
            .unwrap()
    };
    let d1 = diag(());
    let d2 = diag(());
    assert!(d1.status.success(), "{}", String::from_utf8_lossy(&d1.stderr));
    assert_eq!(d1.stdout, d2.stdout, "diag-symmetry output differs");
}
