//! End-to-end CLI contract: subcommands wire together through real files
//! and the documented exit codes hold.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_docdet")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("docdet-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn pipeline_synth_train_detect_evaluate_sweep_render() {
    let dir = tmp("pipeline");
    let data = dir.join("data");
    let run_dir = dir.join("run");

    // synth with a split
    let out = run(&[
        "synth",
        "--out",
        &path_str(&data),
        "--count",
        "6",
        "--seed",
        "5",
        "--train-fraction",
        "0.5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("config.seed = 5"), "config echo missing");
    assert!(data.join("manifest.json").exists());
    assert!(data.join("manifest_train.json").exists());
    assert!(data.join("images/synth-00000.png").exists());

    // single fast epoch
    let out = run(&[
        "train",
        "--manifest",
        &path_str(&data.join("manifest_train.json")),
        "--out",
        &path_str(&run_dir),
        "--epochs",
        "1",
        "--batch-size",
        "2",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("final.ckpt").exists());
    assert!(run_dir.join("model.json").exists());
    let trace = std::fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,lr,rpn_cls,rpn_reg,head_cls,head_reg,total"));
    assert_eq!(trace.lines().count(), 2);

    // detect over the test split with rendering
    let preds = dir.join("preds.jsonl");
    let rendered = dir.join("annotated");
    let out = run(&[
        "detect",
        "--model",
        &path_str(&run_dir.join("final.ckpt")),
        "--manifest",
        &path_str(&data.join("manifest_test.json")),
        "--out",
        &path_str(&preds),
        "--score-threshold",
        "0.05",
        "--render-dir",
        &path_str(&rendered),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(preds.exists());
    assert!(rendered.read_dir().unwrap().count() > 0);

    // evaluate: report file + summary line
    let report = dir.join("report.json");
    let out = run(&[
        "evaluate",
        "--gt",
        &path_str(&data.join("manifest_test.json")),
        "--pred",
        &path_str(&preds),
        "--iou",
        "0.6",
        "--report",
        &path_str(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("mAP = "), "summary line missing: {text}");
    assert!(text.contains("Ave F1"), "table missing");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["iou_threshold"], 0.6);

    // sweep: one line per threshold, mAP non-increasing
    let out = run(&[
        "sweep",
        "--gt",
        &path_str(&data.join("manifest_test.json")),
        "--pred",
        &path_str(&preds),
        "--iou",
        "0.5,0.6,0.7,0.8",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let maps: Vec<f64> = text
        .lines()
        .filter(|l| l.starts_with("iou "))
        .map(|l| l.split("mAP = ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(maps.len(), 4);
    for w in maps.windows(2) {
        assert!(w[0] >= w[1] - 1e-12, "sweep mAP increased: {maps:?}");
    }

    // render ground truth
    let gt_render = dir.join("gt-render");
    let out = run(&[
        "render",
        "--manifest",
        &path_str(&data.join("manifest_test.json")),
        "--out-dir",
        &path_str(&gt_render),
    ]);
    assert!(out.status.success());
    assert!(gt_render.read_dir().unwrap().count() > 0);

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn finetune_resumes_from_checkpoint() {
    let dir = tmp("finetune");
    let data = dir.join("data");
    let base = dir.join("base");
    let cont = dir.join("cont");

    assert!(run(&[
        "synth",
        "--out",
        &path_str(&data),
        "--count",
        "4",
        "--seed",
        "8",
    ])
    .status
    .success());
    assert!(run(&[
        "train",
        "--manifest",
        &path_str(&data.join("manifest.json")),
        "--out",
        &path_str(&base),
        "--epochs",
        "1",
        "--batch-size",
        "2",
    ])
    .status
    .success());
    let out = run(&[
        "finetune",
        "--init",
        &path_str(&base.join("final.ckpt")),
        "--manifest",
        &path_str(&data.join("manifest.json")),
        "--out",
        &path_str(&cont),
        "--epochs",
        "1",
        "--batch-size",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cont.join("final.ckpt").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = tmp("config");
    let cfg = dir.join("run.conf");
    std::fs::write(&cfg, "# defaults\nseed = 77\ncount = 3\n").unwrap();
    let data = dir.join("data");
    let out = run(&[
        "synth",
        "--config",
        &path_str(&cfg),
        "--out",
        &path_str(&data),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("config.seed = 77"), "{text}");
    assert!(text.contains("config.count = 3"), "{text}");
    // explicit flag beats the config file
    let out = run(&[
        "synth",
        "--config",
        &path_str(&cfg),
        "--out",
        &path_str(&dir.join("data2")),
        "--seed",
        "5",
    ]);
    assert!(stdout(&out).contains("config.seed = 5"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn exit_codes_follow_the_contract() {
    // usage: unknown flag
    let out = run(&["evaluate", "--nonsense"]);
    assert_eq!(out.status.code(), Some(1));
    // usage: unknown subcommand
    let out = run(&["transmogrify"]);
    assert_eq!(out.status.code(), Some(1));
    // data: missing ground-truth file
    let out = run(&["evaluate", "--gt", "/nonexistent/m.json", "--pred", "/nonexistent/p.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    // help succeeds
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn gradcheck_passes_and_reports_each_suite() {
    let out = run(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    for name in [
        "conv2d",
        "linear",
        "max_pool2d",
        "relu",
        "bilinear_sample",
        "roi_align",
        "softmax_cross_entropy",
        "smooth_l1",
        "detector_toy_loss",
    ] {
        assert!(text.contains(name), "missing line for {name}: {text}");
    }
    assert!(text.contains("all gradient checks passed"));
}
