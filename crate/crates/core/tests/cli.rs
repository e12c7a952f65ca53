use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bifocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bifocal"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_reproducible_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    for p in [&a, &b] {
        let out = bifocal(&["synth", "--seed", "5", "--n", "30", "--out", s(p)]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 30);

    let base = dir.path().join("c");
    assert!(
        bifocal(&["synth", "--n", "60", "--split", "--out", s(&base)])
            .status
            .success()
    );
    let total: usize = ["train", "valid", "test"]
        .iter()
        .map(|x| {
            fs::read_to_string(base.with_extension(x))
                .unwrap()
                .lines()
                .count()
        })
        .sum();
    assert_eq!(total, 60);
}

#[test]
fn train_generate_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    for (name, seed, n) in [("train.txt", "1", "24"), ("valid.txt", "2", "6")] {
        assert!(
            bifocal(&["synth", "--seed", seed, "--n", n, "--out", s(&p(name))])
                .status
                .success()
        );
    }
    let out = bifocal(&[
        "train",
        "--train",
        s(&p("train.txt")),
        "--valid",
        s(&p("valid.txt")),
        "--out",
        s(&p("m.ckpt")),
        "--log",
        s(&p("log.tsv")),
        "--hidden",
        "8",
        "--embed",
        "6",
        "--epochs",
        "2",
        "--patience",
        "2",
        "--batch-size",
        "4",
        "--lr",
        "0.01",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let log = fs::read_to_string(p("log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch\ttrain_loss\tvalid_loss\tseconds"));

    let out = bifocal(&[
        "generate",
        "--checkpoint",
        s(&p("m.ckpt")),
        "--input",
        s(&p("valid.txt")),
        "--out",
        s(&p("hyp.txt")),
        "--max-len",
        "12",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(fs::read_to_string(p("hyp.txt")).unwrap().lines().count(), 6);

    let out = bifocal(&[
        "evaluate",
        "--hyp",
        s(&p("hyp.txt")),
        "--ref",
        s(&p("valid.txt")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("BLEU-4") && text.contains("NIST-4") && text.contains("ROUGE-4"),
        "{text}"
    );
    let f1 = bifocal(&[
        "evaluate",
        "--hyp",
        s(&p("hyp.txt")),
        "--ref",
        s(&p("valid.txt")),
        "--rouge-f1",
    ]);
    assert!(f1.status.success());

    let out = bifocal(&[
        "inspect-attention",
        "--checkpoint",
        s(&p("m.ckpt")),
        "--input",
        s(&p("valid.txt")),
        "--out-dir",
        s(&p("attn")),
        "--heatmaps",
        "--max-len",
        "12",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        fs::read_to_string(p("attn/stats.tsv"))
            .unwrap()
            .lines()
            .count(),
        7
    );
    assert!(p("attn/heatmap_0.pgm").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(bifocal(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(bifocal(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bifocal(&["--help"]).status.code(), Some(0));
    let missing = bifocal(&[
        "evaluate",
        "--hyp",
        "/nonexistent/h",
        "--ref",
        "/nonexistent/r",
    ]);
    assert_eq!(missing.status.code(), Some(2));
}
