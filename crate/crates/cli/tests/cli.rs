use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_quantest");

/// 28x28 images of classes 3 and 6 with a class-dependent bright band plus
/// deterministic texture.
fn write_idx(dir: &Path, count: usize) {
    let mut images = Vec::new();
    for x in [0x0803u32, count as u32, 28, 28] {
        images.extend(x.to_be_bytes());
    }
    let mut labels = Vec::new();
    for x in [0x0801u32, count as u32] {
        labels.extend(x.to_be_bytes());
    }
    let mut h: u32 = 12345;
    for i in 0..count {
        let label = if i % 2 == 0 { 3u8 } else { 6 };
        labels.push(label);
        for r in 0..28 {
            for c in 0..28 {
                h = h.wrapping_mul(1_103_515_245).wrapping_add(12345);
                let band = if label == 3 { c < 14 } else { r < 14 };
                let base = if band { 180 } else { 20 };
                images.push(base + (h >> 27) as u8);
            }
        }
    }
    fs::write(dir.join("train-images-idx3-ubyte"), images).unwrap();
    fs::write(dir.join("train-labels-idx1-ubyte"), labels).unwrap();
}

struct Fixture {
    root: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let root = tempfile::tempdir().unwrap();
        fs::create_dir(root.path().join("data")).unwrap();
        write_idx(&root.path().join("data"), 60);
        Self { root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.path().join(rel)
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let data = self.path("data");
        let out = self.path(out);
        let mut args = vec![
            cmd,
            "--data-dir",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--train-limit",
            "40",
            "--test-limit",
            "20",
        ];
        args.extend(extra);
        Command::new(BIN).args(&args).output().unwrap()
    }

    fn ok(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let o = self.run(cmd, out, extra);
        assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
        o
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path(rel)).unwrap()
    }

    fn json(&self, rel: &str) -> serde_json::Value {
        serde_json::from_str(&self.read(rel)).unwrap()
    }

    /// Trains a small QCL model into `train/`.
    fn trained(self) -> Self {
        self.ok("train", "train", &["--depth", "2", "--epochs", "3", "--batch-size", "8"]);
        self
    }

    fn checkpoint(&self) -> String {
        self.path("train/model.json").to_str().unwrap().to_string()
    }
}

fn summary_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

fn column(text: &str, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|x| x.unwrap()[i].to_string()).collect()
}

#[test]
fn missing_idx_exits_2_and_names_the_path() {
    let f = Fixture::new();
    let o = Command::new(BIN)
        .args(["train", "--data-dir", "/definitely/not/here", "--out"])
        .arg(f.path("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/definitely/not/here"));
}

#[test]
fn invalid_flags_exit_2() {
    let f = Fixture::new().trained();
    let ck = f.checkpoint();
    assert_eq!(f.run("attack", "a", &["--checkpoint", &ck, "--r", "-1"]).status.code(), Some(2));
    assert_eq!(f.run("attack", "a", &["--checkpoint", &ck, "--w", "1", "--no-guidance"]).status.code(), Some(2));
    assert_eq!(f.run("attack", "a", &["--strategy", "pgd"]).status.code(), Some(2));
    assert_eq!(f.run("attack", "a", &[]).status.code(), Some(2));
    assert_eq!(f.run("attack", "a", &["--checkpoint", "/no/such/model.json"]).status.code(), Some(2));
    fs::write(f.path("bad.json"), "{\"seeed\": 1}").unwrap();
    let bad = f.path("bad.json");
    assert_eq!(f.run("train", "t", &["--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn training_is_deterministic_and_checkpoints_reload() {
    let f = Fixture::new().trained();
    f.ok("train", "train2", &["--depth", "2", "--epochs", "3", "--batch-size", "8"]);
    assert_eq!(f.read("train/model.json"), f.read("train2/model.json"));
    assert_eq!(f.read("train/train_log.csv").lines().count(), 4);
    for name in ["config.json", "model.json", "report.json", "train_log.csv"] {
        assert!(f.path("train").join(name).is_file(), "{name}");
    }

    // zero adversarial inputs: a plain retrain from the same initialization
    let ck = f.checkpoint();
    f.ok("retrain", "re", &["--checkpoint", &ck, "--epochs", "3", "--batch-size", "8"]);
    let (train, re) = (f.json("train/report.json"), f.json("re/report.json"));
    assert_eq!(re["before_accuracy"], train["test_accuracy"]);
    assert_eq!(re["after_accuracy"], train["test_accuracy"]);
    assert_eq!(re["n_adversarial"], 0);
    assert_eq!(f.read("re/model.json"), f.read("train/model.json"));
}

#[test]
fn attack_outputs_follow_the_documented_schema() {
    let f = Fixture::new().trained();
    let ck = f.checkpoint();
    f.ok("attack", "a", &["--checkpoint", &ck, "--n-seeds", "10"]);
    let summary = f.read("a/summary.csv");
    assert_eq!(
        summary.lines().next().unwrap(),
        "model,task,strategy,w,k,r,thresholds,Gen_Rate,AFM,ATD,mean_QEA"
    );
    assert_eq!(summary_rows(&summary).len(), 1);
    assert_eq!(f.read("a/records.jsonl").lines().count(), 10);

    let echo = f.json("a/config.json");
    assert_eq!(echo["attack"]["w"], 1.0);
    assert_eq!(echo["attack"]["k"], 1.0);
    assert_eq!(echo["attack"]["strategy_weight"], 1.0);
    assert_eq!(echo["attack"]["strategy"], "dlfuzz");

    let line: serde_json::Value = serde_json::from_str(f.read("a/records.jsonl").lines().next().unwrap()).unwrap();
    for key in ["seed_id", "label", "y_ori", "y_adv", "iterations_used", "fidelity", "trace_distance", "accepted", "outcome"] {
        assert!(line.get(key).is_some(), "{key}");
    }
    assert!(line.get("final_state").is_none());
}

#[test]
fn no_guidance_equals_w_zero_and_runs_are_reproducible() {
    let f = Fixture::new().trained();
    let ck = f.checkpoint();
    let base = ["--checkpoint", ck.as_str(), "--n-seeds", "8", "--dump-states"];
    f.ok("attack", "ng", &[&base[..], &["--no-guidance"]].concat());
    f.ok("attack", "w0", &[&base[..], &["--w", "0"]].concat());
    f.ok("attack", "w0b", &[&base[..], &["--w", "0", "--threads", "1"]].concat());
    assert_eq!(f.read("ng/records.jsonl"), f.read("w0/records.jsonl"));
    assert_eq!(f.read("w0/records.jsonl"), f.read("w0b/records.jsonl"));
    assert_eq!(f.read("ng/summary.csv"), f.read("w0/summary.csv"));
    assert_eq!(column(&f.read("ng/summary.csv"), "w"), vec!["0.0"]);
}

#[test]
fn noise_sweep_writes_one_row_per_sigma() {
    let f = Fixture::new().trained();
    let ck = f.checkpoint();
    f.ok("noise", "n", &["--checkpoint", &ck, "--n-seeds", "6", "--sigma", "0.02,0.01,0.005"]);
    let summary = f.read("n/summary.csv");
    assert_eq!(summary_rows(&summary).len(), 3);
    assert_eq!(f.read("n/records.jsonl").lines().count(), 18);

    f.ok("noise", "n0", &["--checkpoint", &ck, "--n-seeds", "6", "--sigma", "0"]);
    assert_eq!(column(&f.read("n0/summary.csv"), "Gen_Rate"), vec!["0.0"]);

    f.ok("noise", "n2", &["--checkpoint", &ck, "--n-seeds", "6", "--sigma", "0.02,0.01,0.005"]);
    assert_eq!(f.read("n/records.jsonl"), f.read("n2/records.jsonl"));
}

#[test]
fn retrain_accepts_mixed_strategy_inputs() {
    let f = Fixture::new().trained();
    let ck = f.checkpoint();
    let gate = ["--no-gate", "--dump-states", "--split", "train", "--n-seeds", "10"];
    f.ok("attack", "dl", &[&["--checkpoint", ck.as_str()][..], &gate].concat());
    f.ok("attack", "fg", &[&["--checkpoint", ck.as_str(), "--strategy", "fgsm"][..], &gate].concat());
    let (dl, fg) = (f.path("dl/records.jsonl"), f.path("fg/records.jsonl"));
    f.ok(
        "retrain",
        "re",
        &["--checkpoint", &ck, "--epochs", "2", "--adversarial", dl.to_str().unwrap(), fg.to_str().unwrap()],
    );
    let report = f.json("re/report.json");
    for key in ["task", "model", "inputs", "n_adversarial", "before_accuracy", "after_accuracy"] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert_eq!(report["inputs"].as_array().unwrap().len(), 2);
    let accepted: u64 = report["inputs"].as_array().unwrap().iter().map(|i| i["accepted"].as_u64().unwrap()).sum();
    assert_eq!(report["n_adversarial"].as_u64().unwrap(), accepted);

    // records without amplitudes cannot be replayed
    f.ok("attack", "bare", &["--checkpoint", &ck, "--n-seeds", "4"]);
    let bare = f.path("bare/records.jsonl");
    let o = f.run("retrain", "re2", &["--checkpoint", &ck, "--adversarial", bare.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sampling_table_is_deterministic() {
    let f = Fixture::new().trained();
    let ck = f.checkpoint();
    f.ok("attack", "marks", &["--checkpoint", &ck, "--r", "0.001", "--max-iters", "2", "--no-gate", "--dump-states"]);
    let seeds = f.path("marks/records.jsonl");
    let s = seeds.to_str().unwrap();
    f.ok("sampling", "s1", &["--checkpoint", &ck, "--seeds", s, "--shots-grid", "10,100,1000", "--repeats", "3"]);
    f.ok("sampling", "s2", &["--checkpoint", &ck, "--seeds", s, "--shots-grid", "10,100,1000", "--repeats", "3"]);
    let table = f.read("s1/sampling.csv");
    assert_eq!(table, f.read("s2/sampling.csv"));
    assert_eq!(
        table.lines().next().unwrap(),
        "N,error_rate_mean,error_rate_std,accuracy,precision,recall,f1"
    );
    assert_eq!(summary_rows(&table).len(), 3);

    f.ok("sampling", "s3", &["--checkpoint", &ck, "--seeds", s, "--shots-grid", "50", "--repeats", "2"]);
    assert_eq!(summary_rows(&f.read("s3/sampling.csv")).len(), 1);

    let o = f.run("sampling", "s4", &["--checkpoint", &ck, "--seeds", s, "--shots-grid", "100,10"]);
    assert_eq!(o.status.code(), Some(2));
}
