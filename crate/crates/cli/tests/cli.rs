use std::path::Path;
use std::process::{Command, Output};

fn ccda(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccda"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn ccda")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ccda(dir, args);
    assert!(
        out.status.success(),
        "ccda {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    ccda(dir, args).status.code().expect("exit code")
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.jsonl"), "{\"id\": \"a\", \"text\": \n").unwrap();
    std::fs::write(
        d.join("corpus.jsonl"),
        "{\"id\":\"1\",\"text\":\"He is a doctor.\",\"source\":\"t\"}\n",
    )
    .unwrap();
    std::fs::write(
        d.join("aug.jsonl"),
        "{\"counterfactual_id\":\"1:cf\",\"text\":\"x\",\"samples\":[{\"text\":\"a\",\"logprob\":0},{\"text\":\"b\",\"logprob\":0}]}\n",
    )
    .unwrap();

    // Data errors.
    assert_eq!(
        code(d, &["flip", "--in", "bad.jsonl", "--out", "o.jsonl"]),
        4
    );
    assert_eq!(
        code(d, &["flip", "--in", "missing.jsonl", "--out", "o.jsonl"]),
        4
    );
    // Config errors, including argument parsing.
    assert_eq!(
        code(
            d,
            &[
                "filter",
                "--in",
                "x",
                "--k",
                "150",
                "--kept",
                "k",
                "--removed",
                "r"
            ]
        ),
        2
    );
    assert_eq!(
        code(
            d,
            &[
                "flip",
                "--in",
                "corpus.jsonl",
                "--out",
                "o.jsonl",
                "--mode",
                "sideways"
            ]
        ),
        2
    );
    assert_eq!(
        code(
            d,
            &[
                "augment",
                "--in",
                "corpus.jsonl",
                "--out",
                "o",
                "--backend",
                "gpt"
            ]
        ),
        2
    );
    assert_eq!(
        code(d, &["eval-intrinsic", "--scorer", "nope", "--out", "o"]),
        2
    );
    std::fs::write(d.join("cfg.toml"), "out_dir = 3\n").unwrap();
    assert_eq!(code(d, &["run", "--config", "cfg.toml"]), 2);
    // Backend errors: nothing listens on port 9.
    assert_eq!(
        code(
            d,
            &[
                "entropy",
                "--in",
                "aug.jsonl",
                "--judge",
                "http://127.0.0.1:9/",
                "--scorer",
                "toy:uniform",
                "--out",
                "s"
            ]
        ),
        3
    );
    assert_eq!(
        code(
            d,
            &[
                "tokendist",
                "--stereoset",
                "x",
                "--scorer",
                "remote:http://127.0.0.1:9/",
                "--out",
                "td"
            ]
        ),
        3
    );
}

#[test]
fn stage_by_stage_then_whole_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fx = d.join("fx");
    let fx_s = fx.to_str().unwrap();
    ok(
        d,
        &[
            "synth",
            "--out",
            fx_s,
            "--corpus-size",
            "30",
            "--pretrain-epochs",
            "3",
        ],
    );
    let model = format!("local:{}", fx.join("vanilla").display());
    let ss = fx.join("stereoset.jsonl");
    let crows = fx.join("crows.jsonl");
    let (ss, crows) = (ss.to_str().unwrap(), crows.to_str().unwrap());

    ok(
        d,
        &[
            "flip",
            "--in",
            fx.join("corpus.jsonl").to_str().unwrap(),
            "--out",
            "cf.jsonl",
        ],
    );
    assert_eq!(lines(&d.join("cf.jsonl")), 60);
    ok(
        d,
        &[
            "augment",
            "--in",
            "cf.jsonl",
            "--backend",
            "mock:context",
            "--out",
            "aug.jsonl",
            "--stats",
            "stats.json",
        ],
    );
    assert_eq!(lines(&d.join("aug.jsonl")), 30);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["retained"], 30);
    ok(
        d,
        &[
            "entropy",
            "--in",
            "aug.jsonl",
            "--judge",
            "mock:normalized",
            "--scorer",
            &model,
            "--out",
            "scored.jsonl",
        ],
    );
    ok(
        d,
        &[
            "filter",
            "--in",
            "scored.jsonl",
            "--k",
            "30",
            "--kept",
            "kept.jsonl",
            "--removed",
            "removed.jsonl",
        ],
    );
    assert_eq!(lines(&d.join("removed.jsonl")), 9);
    assert_eq!(lines(&d.join("kept.jsonl")), 21);

    let stdout = ok(
        d,
        &[
            "finetune",
            "--corpus",
            "kept.jsonl",
            "--model",
            &model,
            "--epochs",
            "2",
            "--outdir",
            "ft",
            "--stereoset",
            ss,
            "--crows",
            crows,
        ],
    );
    assert_eq!(stdout.lines().count(), 2);
    assert!(d.join("ft/epoch_2").is_dir());
    assert_eq!(lines(&d.join("ft/reports.jsonl")), 3);

    let tuned = format!("local:{}", d.join("ft/epoch_2").display());
    let report = ok(
        d,
        &[
            "eval-intrinsic",
            "--stereoset",
            ss,
            "--crows",
            crows,
            "--scorer",
            &tuned,
            "--out",
            "intr.json",
        ],
    );
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["n"]["stereoset"], 80);
    assert!(v["icat"].as_f64().unwrap() <= v["lms"].as_f64().unwrap());

    ok(
        d,
        &[
            "tokendist",
            "--stereoset",
            ss,
            "--scorer",
            &model,
            "--out",
            "td",
        ],
    );
    for f in [
        "counts.csv",
        "hist_male.csv",
        "hist_female.csv",
        "hist_male.svg",
        "hist_female.svg",
    ] {
        assert!(d.join("td").join(f).is_file(), "{f}");
    }

    std::fs::write(
        d.join("preds.jsonl"),
        [
            r#"{"id":"1","group":"male","label":"nurse","prediction":"nurse"}"#,
            r#"{"id":"2","group":"female","label":"nurse","prediction":"poet"}"#,
            r#"{"id":"3","group":"female","label":"nurse","prediction":"nurse"}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let out = ok(
        d,
        &[
            "eval-extrinsic",
            "--task",
            "biasbios",
            "--preds",
            "preds.jsonl",
            "--out",
            "ext.json",
        ],
    );
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["task"], "biasbios");
    assert!((v["aggregate"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    let cfg = fx.join("pipeline.toml");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("epochs = 10", "epochs = 1");
    std::fs::write(&cfg, text).unwrap();
    let out = ok(d, &["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.contains("run complete"), "{out}");
    assert!(fx.join("run/report/summary.csv").is_file());
    let out = ok(
        d,
        &[
            "report",
            "--runs",
            fx.join("run").to_str().unwrap(),
            "--out",
            "rep",
        ],
    );
    assert!(out.contains("ss.svg"), "{out}");
    let out = ok(
        d,
        &["ablate", "--config", cfg.to_str().unwrap(), "--k", "10,50"],
    );
    assert_eq!(out.lines().count(), 2);
}
