use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ngram_objectives::data::{write_corpus, Corpus, CorpusHeader, Example, TaskConfig, EOS};
use ngram_objectives::model::{save_checkpoint, ModelConfig, ModelParams};

fn ngobj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ngobj")).args(args).output().expect("spawn ngobj")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, text: &str) -> PathBuf {
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

const COPY_GEN: &str = r#"
seed = 11
train_count = 2000
eval_count = 200

[corpus]
task = "copy"
vocab_size = 20
len = 5
"#;

fn records(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn gen_data_counts_determinism_and_refusals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("gen.toml"), COPY_GEN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&ngobj(&["gen-data", "--config", p(&cfg), "--out", p(&a)])), 0);
    assert_eq!(code(&ngobj(&["gen-data", "--config", p(&cfg), "--out", p(&b)])), 0);
    assert_eq!(records(&a.join("train.jsonl")), 2000);
    assert_eq!(records(&a.join("eval.jsonl")), 200);
    assert_eq!(fs::read(a.join("train.jsonl")).unwrap(), fs::read(b.join("train.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("eval.jsonl")).unwrap(), fs::read(b.join("eval.jsonl")).unwrap());
    assert_ne!(fs::read(a.join("train.jsonl")).unwrap(), fs::read(a.join("eval.jsonl")).unwrap());

    // existing output is never overwritten
    let again = ngobj(&["gen-data", "--config", p(&cfg), "--out", p(&a), "--seed", "3"]);
    assert_eq!(code(&again), 1);

    let bad = write(
        &dir.path().join("bad.toml"),
        "seed = 1\ntrain_count = 10\n[corpus]\ntask = \"salient\"\nvocab_size = 5\nsource_len = 4\nn_salient = 3\n",
    );
    let out_bad = dir.path().join("bad");
    let r = ngobj(&["gen-data", "--config", p(&bad), "--out", p(&out_bad)]);
    assert_eq!(code(&r), 1);
    assert!(!out_bad.exists());

    let typo = write(&dir.path().join("typo.toml"), &COPY_GEN.replace("train_count", "train_cnt"));
    assert_eq!(code(&ngobj(&["gen-data", "--config", p(&typo), "--out", p(&dir.path().join("t"))])), 1);
}

/// Baseline for the copy task, verified with this configuration: eval CE per
/// token after 300 CE-only steps is well under 0.1.
const COPY_TRAIN: &str = r#"
train_corpus = "data/train.jsonl"
eval_corpus = "data/eval.jsonl"

[objective]
ce = true

[train]
steps = 300
lr = 0.01
warmup_steps = 30
eval_every = 100
batch_size = 16
"#;

fn run_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn copy_task_training_reaches_baseline_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write(&dir.path().join("gen.toml"), COPY_GEN);
    assert_eq!(code(&ngobj(&["gen-data", "--config", p(&gen), "--out", p(&dir.path().join("data"))])), 0);
    let cfg = write(&dir.path().join("train.toml"), COPY_TRAIN);

    let run1 = dir.path().join("run1");
    let out = ngobj(&["train", "--config", p(&cfg), "--out", p(&run1)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = run_json(&run1.join("report.json"));
    let ce = report["best_eval"]["ce_per_token"].as_f64().unwrap();
    assert!(ce < 0.1, "eval CE per token {ce}");
    for name in ["model.ckpt", "final.ckpt", "loss_curve.csv", "rouge.csv"] {
        assert!(run1.join(name).exists(), "{name}");
    }

    let run2 = dir.path().join("run2");
    assert_eq!(code(&ngobj(&["train", "--config", p(&cfg), "--out", p(&run2)])), 0);
    assert_eq!(
        fs::read(run1.join("loss_curve.csv")).unwrap(),
        fs::read(run2.join("loss_curve.csv")).unwrap()
    );
    assert_eq!(fs::read(run1.join("model.ckpt")).unwrap(), fs::read(run2.join("model.ckpt")).unwrap());

    // refuses to reuse a run directory
    assert_eq!(code(&ngobj(&["train", "--config", p(&cfg), "--out", p(&run1)])), 1);

    // the best checkpoint decodes the copy task
    let eval_dir = dir.path().join("eval");
    let out = ngobj(&[
        "eval",
        "--checkpoint",
        p(&run1.join("model.ckpt")),
        "--corpus",
        p(&dir.path().join("data/eval.jsonl")),
        "--beam-width",
        "4",
        "--length-penalty",
        "2",
        "--out",
        p(&eval_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rouge = run_json(&eval_dir.join("rouge.json"));
    assert!(rouge["summary"]["rouge_n"][0]["f1"].as_f64().unwrap() > 0.9);
}

#[test]
fn report_terms_sum_to_total() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write(
        &dir.path().join("gen.toml"),
        "seed = 2\ntrain_count = 64\neval_count = 16\n[corpus]\ntask = \"salient\"\nvocab_size = 20\nsource_len = 8\nn_salient = 3\n",
    );
    assert_eq!(code(&ngobj(&["gen-data", "--config", p(&gen), "--out", p(&dir.path().join("data"))])), 0);
    let cfg = write(
        &dir.path().join("train.toml"),
        r#"
train_corpus = "data/train.jsonl"
eval_corpus = "data/eval.jsonl"
[model]
embed_dim = 8
[objective]
ce = true
rewards = [2, 3]
matches = [1, 2]
pp = [2]
bon = [2]
[train]
epochs = 2
batch_size = 8
eval_every = 4
warmup_steps = 2
[decode]
beam_width = 3
length_penalty = 1.0
"#,
    );
    let run = dir.path().join("run");
    let out = ngobj(&["train", "--config", p(&cfg), "--out", p(&run), "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = run_json(&run.join("report.json"));
    assert_eq!(report["steps"].as_u64(), Some(16));
    let curve = report["curve"].as_array().unwrap();
    assert_eq!(curve.len(), 4);
    for row in curve {
        let terms = row["terms"].as_object().unwrap();
        assert_eq!(terms.len(), 7);
        let sum: f64 = terms.values().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - row["total"].as_f64().unwrap()).abs() < 1e-9);
    }
    let csv = fs::read_to_string(run.join("loss_curve.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "step,train_loss,total,ce,rewards2,rewards3,matches1,matches2,pp2,bon2,ce_per_token"
    );
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn divergence_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write(&dir.path().join("gen.toml"), &COPY_GEN.replace("2000", "64").replace("200\n", "16\n"));
    assert_eq!(code(&ngobj(&["gen-data", "--config", p(&gen), "--out", p(&dir.path().join("data"))])), 0);
    let cfg = write(
        &dir.path().join("train.toml"),
        &COPY_TRAIN.replace("lr = 0.01", "lr = 1e300").replace("warmup_steps = 30", "warmup_steps = 0"),
    );
    let out = ngobj(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

fn rigged_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = ModelConfig {
        vocab_size: 10,
        embed_dim: 10,
        max_source_len: 4,
        max_target_len: 6,
        init_scale: 0.1,
    };
    let params = ModelParams::rigged(&cfg, |prev| {
        let mut row = vec![0.0; 10];
        row[if prev == 7 { EOS as usize } else { 7 }] = 5.0;
        row
    })
    .unwrap();
    let ckpt = dir.join("rigged.ckpt");
    save_checkpoint(&ckpt, &params, None).unwrap();
    let corpus = Corpus {
        header: Some(CorpusHeader {
            format: "ngram-corpus".into(),
            version: 1,
            task: TaskConfig::Copy { vocab_size: 10, len: 1 },
            count: 3,
            seed: 0,
        }),
        examples: (3..6)
            .map(|s| Example {
                source: vec![s, 4],
                target: vec![7, EOS],
            })
            .collect(),
    };
    let path = dir.join("sevens.jsonl");
    write_corpus(&corpus, &path).unwrap();
    (ckpt, path)
}

fn all_ones(summary: &serde_json::Value) {
    let scores = summary["rouge_n"].as_array().unwrap().iter().chain([&summary["rouge_l"]]);
    for s in scores {
        for k in ["precision", "recall", "f1"] {
            assert_eq!(s[k].as_f64(), Some(1.0), "{s}");
        }
    }
}

#[test]
fn eval_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, corpus) = rigged_fixture(dir.path());

    let a = dir.path().join("a");
    let out = ngobj(&["eval", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--out", p(&a)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = run_json(&a.join("rouge.json"));
    all_ones(&report["summary"]);
    assert_eq!(report["outputs"][0], serde_json::json!([7]));

    let b = dir.path().join("b");
    assert_eq!(code(&ngobj(&["eval", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--out", p(&b)])), 0);
    assert_eq!(fs::read(a.join("rouge.json")).unwrap(), fs::read(b.join("rouge.json")).unwrap());
    assert_eq!(fs::read(a.join("rouge.csv")).unwrap(), fs::read(b.join("rouge.csv")).unwrap());

    let gen = write(&dir.path().join("gen.toml"), &COPY_GEN.replace("2000", "50"));
    let data = dir.path().join("data");
    assert_eq!(code(&ngobj(&["gen-data", "--config", p(&gen), "--out", p(&data)])), 0);
    let s = dir.path().join("self");
    let out = ngobj(&["eval", "--self-reference", "--corpus", p(&data.join("eval.jsonl")), "--out", p(&s)]);
    assert_eq!(code(&out), 0);
    all_ones(&run_json(&s.join("rouge.json"))["summary"]);

    let bad = write(&dir.path().join("bad.ckpt"), "not a checkpoint");
    assert_eq!(code(&ngobj(&["eval", "--checkpoint", p(&bad), "--corpus", p(&corpus)])), 1);
    assert_eq!(
        code(&ngobj(&["eval", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--beam-width", "0"])),
        1
    );
}

#[test]
fn gradcheck_command() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("grad.json");
    let out = ngobj(&["gradcheck", "--out", p(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let json = run_json(&report);
    let families = json["families"].as_array().unwrap();
    assert_eq!(families.len(), 12);
    for f in families {
        assert_eq!(f["probes"].as_u64(), Some(100));
        assert!(f["max_rel_error"].as_f64().unwrap() < 1e-4);
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("rewards3") && stdout.contains("bon4"));

    assert_eq!(code(&ngobj(&["gradcheck", "--spec", "ce+matches:2", "--probes", "10", "--corrupt"])), 2);
    assert_eq!(code(&ngobj(&["gradcheck", "--spec", "rewards:1"])), 1);
    assert_eq!(code(&ngobj(&["gradcheck", "--probes", "0"])), 1);
}

#[test]
fn oracle_check_command() {
    let out = ngobj(&["oracle-check"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(code(&ngobj(&["oracle-check", "--trials", "0"])), 1);
    assert_eq!(code(&ngobj(&["oracle-check", "--trials", "20", "--inject-mismatch"])), 2);
}

#[test]
fn bench_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("bench.toml"),
        "seed = 0\ncount = 32\n[corpus]\ntask = \"copy\"\nvocab_size = 12\nlen = 4\n[model]\nembed_dim = 8\n[bench]\nbatch_size = 8\nsteps = 2\nrounds = 1\n",
    );
    let out_dir = dir.path().join("bench");
    let out = ngobj(&["bench", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(out_dir.join("bench.csv"))
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect();
    assert_eq!(rows.len(), 7);
    assert_eq!(&rows[0][0], "CE");
    assert_eq!(&rows[0][3], "1.00");
    assert_eq!(&rows[5][1], "ce+rewards:2,3,4");
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() > 0.0));
}
