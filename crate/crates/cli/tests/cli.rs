use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const CONFIG: &str = r#"
[[label_sets]]
name = "stance"
labels = ["support", "oppose", "neutral"]

[[label_sets]]
name = "compliance"
labels = ["compliant", "noncompliant", "neutral"]

[[hypothesis_sets]]
id = "trump"
label_set = "stance"
hypotheses = [
  { id = "s", label = "support", text = "The author of this tweet supports Trump." },
  { id = "o", label = "oppose", text = "The author of this tweet opposes Trump." },
  { id = "n", label = "neutral", text = "The author of this tweet is neutral about Trump." },
]

[[hypothesis_sets]]
id = "trump-alt"
label_set = "stance"
hypotheses = [
  { id = "s2", label = "support", text = "Trump is supported by the author." },
  { id = "o2", label = "oppose", text = "Trump is opposed by the author." },
  { id = "n2", label = "neutral", text = "The author has no opinion of Trump." },
]

[[hypothesis_sets]]
id = "masks"
label_set = "compliance"
hypotheses = [
  { id = "m_good", label = "compliant", text = "The author of this tweet believes masks are good." },
  { id = "m_bad", label = "noncompliant", text = "The author of this tweet believes masks are bad." },
  { id = "m_neutral", label = "neutral", text = "The author of this tweet is neutral about masks." },
]

[[hypothesis_sets]]
id = "vaccines"
label_set = "compliance"
hypotheses = [
  { id = "v_good", label = "compliant", text = "The author of this tweet supports vaccines." },
  { id = "v_bad", label = "noncompliant", text = "The author of this tweet opposes vaccines." },
  { id = "v_neutral", label = "neutral", text = "The author of this tweet is neutral about vaccines." },
]

[[dimensions]]
name = "masks"
keywords = ["mask*"]
hypothesis_set = "masks"
flagged_labels = ["noncompliant"]

[[dimensions]]
name = "vaccines"
keywords = ["vaccine"]
hypothesis_set = "vaccines"
flagged_labels = ["noncompliant"]

[backend]
backend_id = "offline"
kind = "mock"
model_id = "fixture"

[backend.mock]
default_completion = "Neutral."

[backend.mock.keywords]
s = ["great"]
o = ["awful"]
n = ["meh"]
s2 = ["great", "meh"]
o2 = ["awful"]
m_good = ["protect"]
m_bad = ["hoax"]
v_good = ["protect"]
v_bad = ["poison"]

[run]
seed = 5
notes = "fixture run"

[fewshot]
label_set = "stance"
task_description = "Classify the stance toward Trump."
audit_dir = "audit"

[[fewshot.example]]
text = "He is great"
label = "support"

[[fewshot.example]]
text = "He is awful"
label = "oppose"

[[fewshot.example]]
text = "Whatever"
label = "neutral"
"#;

const TWEETS: &str = r#"{"id":"t1","text":"What a great rally"}
{"id":"t2","text":"An awful speech"}
{"id":"t3","text":"meh, whatever"}
"#;

const HEALTH: &str = r#"{"id":"d1","text":"Masks are a hoax"}
{"id":"d2","text":"Wear a mask to protect others"}
{"id":"d3","text":"The vaccine is poison"}
{"id":"d4","text":"Nice weather today"}
{"id":"d5","text":"masking and vaccines protect us"}
{"id":"d6","text":"Mask hoax, but the vaccine will protect you"}
{"id":"d7","text":"UNMASKED and proud, vaccine poison"}
"#;

fn stance_bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stance"));
    c.env_remove("STANCE_CONFIG");
    c
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("stance.toml"), CONFIG).unwrap();
        fs::write(dir.path().join("tweets.jsonl"), TWEETS).unwrap();
        fs::write(dir.path().join("health.jsonl"), HEALTH).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        stance_bin()
            .current_dir(self.dir.path())
            .arg("--config")
            .arg(self.path("stance.toml"))
            .args(args)
            .output()
            .unwrap()
    }
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn classify_with_mock_is_deterministic() {
    let ws = Workspace::new();
    let a = ok_json(&ws.run(&["--format", "json", "classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "a"]));
    let b = ok_json(&ws.run(&["--format", "json", "--parallelism", "3", "classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "b"]));
    let pa = fs::read(ws.path("a/predictions.jsonl")).unwrap();
    assert_eq!(pa, fs::read(ws.path("b/predictions.jsonl")).unwrap());
    assert_eq!(a["run_id"], b["run_id"]);

    let labels: Vec<String> = jsonl(&ws.path("a/predictions.jsonl"))
        .iter()
        .map(|p| p["label"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(labels, ["support", "oppose", "neutral"]);
    assert_eq!(a["report"]["label_counts"]["support"], 1);

    let manifest: Value = serde_json::from_slice(&fs::read(ws.path("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["backend_id"], "offline");
    assert_eq!(manifest["parameters"]["hypothesis_set"], "trump");
    assert_eq!(manifest["parameters"]["seed"], "5");
    assert_eq!(manifest["notes"], "fixture run");
    assert!(ws.path("a/report.json").exists());
}

#[test]
fn seed_flag_changes_the_run_id() {
    let ws = Workspace::new();
    let a = ok_json(&ws.run(&["--format", "json", "classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "a"]));
    let b = ok_json(&ws.run(&["--format", "json", "--seed", "6", "classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "b"]));
    assert_ne!(a["run_id"], b["run_id"]);
}

/// Independent restatement of routing, mock scoring and OR aggregation for the fixture.
fn expected_flags() -> BTreeMap<String, &'static str> {
    let masks = regex::Regex::new(r"(?i)\bmask\w*").unwrap();
    let vaccine = regex::Regex::new(r"(?i)\bvaccine\b").unwrap();
    let rule = |text: &str, good: &str, bad: &str| -> &'static str {
        // keyword hits score 0.8 entailment, misses 0.1; ties go to the first hypothesis
        let t = text.to_lowercase();
        let (g, b) = (t.contains(good), t.contains(bad));
        if b && !g {
            "noncompliant"
        } else {
            "compliant"
        }
    };
    let mut out = BTreeMap::new();
    for line in HEALTH.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let (id, text) = (v["id"].as_str().unwrap(), v["text"].as_str().unwrap());
        let mut routed = Vec::new();
        if masks.is_match(text) {
            routed.push(rule(text, "protect", "hoax"));
        }
        if vaccine.is_match(text) {
            routed.push(rule(text, "protect", "poison"));
        }
        let flag = if routed.is_empty() {
            "unrouted"
        } else if routed.contains(&"noncompliant") {
            "flagged"
        } else {
            "not-flagged"
        };
        out.insert(id.to_string(), flag);
    }
    out
}

#[test]
fn dimensions_mode_matches_or_oracle() {
    let ws = Workspace::new();
    let summary = ok_json(&ws.run(&["--format", "json", "classify", "--input", "health.jsonl", "--dimensions", "--out", "dims"]));
    let rows = jsonl(&ws.path("dims/aggregates.jsonl"));
    let got: BTreeMap<String, &str> = rows
        .iter()
        .map(|r| (r["document_id"].as_str().unwrap().to_string(), r["aggregate_label"].as_str().unwrap()))
        .collect();
    assert_eq!(got, expected_flags());
    // d7: "UNMASKED" is not a mask* word, so only the vaccine dimension applies
    let d7 = rows.iter().find(|r| r["document_id"] == "d7").unwrap();
    let dims: Vec<&str> = d7["per_dimension"].as_array().unwrap().iter().map(|d| d["dimension"].as_str().unwrap()).collect();
    assert_eq!(dims, ["vaccines"]);
    assert_eq!(summary["report"]["unrouted"], 1);
}

#[test]
fn fewshot_mode_writes_prompt_audit() {
    let ws = Workspace::new();
    ok_json(&ws.run(&["--format", "json", "classify", "--input", "tweets.jsonl", "--fewshot", "--out", "fs"]));
    let preds = jsonl(&ws.path("fs/predictions.jsonl"));
    assert_eq!(preds.len(), 3);
    assert!(preds.iter().all(|p| p["label"] == "neutral" && p["prompt_hash"].is_string()));
    let prompts = jsonl(&ws.path("audit/prompts.jsonl"));
    assert_eq!(prompts.len(), 3);
    let first = prompts[0]["prompt"].as_str().unwrap();
    assert!(first.starts_with("Classify the stance toward Trump."));
    assert!(first.ends_with("What a great rally\nStance:"));
    assert_eq!(prompts[0]["prompt_hash"], preds[0]["prompt_hash"]);
    let audit: Value = serde_json::from_slice(&fs::read(ws.path("audit/audit.json")).unwrap()).unwrap();
    assert_eq!(audit["tail_run"], 1);
}

#[test]
fn missing_secret_exits_nonzero_naming_the_variable() {
    let ws = Workspace::new();
    let (head, rest) = CONFIG.split_once("[backend]").unwrap();
    let run = &rest[rest.find("[run]").unwrap()..];
    let live = format!(
        "{head}[backend]\nbackend_id = \"live\"\nkind = \"nli\"\nmodel_id = \"m\"\n\
         endpoint = \"http://127.0.0.1:9/score\"\nauth_env = \"STANCE_TEST_UNSET_TOKEN\"\n\n{run}"
    );
    fs::write(ws.path("stance.toml"), live).unwrap();
    let out = stance_bin()
        .current_dir(ws.dir.path())
        .env_remove("STANCE_TEST_UNSET_TOKEN")
        .args(["--config", "stance.toml", "--format", "json", "classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    let text = err.to_string();
    assert!(text.contains("STANCE_TEST_UNSET_TOKEN"), "{text}");
    assert!(!ws.path("x/predictions.jsonl").exists());

    let plain = ws.run(&["classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "x"]);
    assert!(!plain.status.success());
    assert!(String::from_utf8_lossy(&plain.stderr).contains("STANCE_TEST_UNSET_TOKEN"));
}

#[test]
fn unknown_hypothesis_set_is_an_error() {
    let ws = Workspace::new();
    let out = ws.run(&["classify", "--input", "tweets.jsonl", "--hset", "nope", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

fn write_pairs(path: &Path, pairs: &[(String, &str)]) {
    let mut body = String::from("id,label\n");
    for (id, l) in pairs {
        body.push_str(&format!("{id},{l}\n"));
    }
    fs::write(path, body).unwrap();
}

#[test]
fn validate_perfect_predictions() {
    let ws = Workspace::new();
    ok_json(&ws.run(&["--format", "json", "classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "a"]));
    write_pairs(&ws.path("gold.csv"), &[("t1".into(), "support"), ("t2".into(), "oppose"), ("t3".into(), "neutral")]);
    let v = ok_json(&ws.run(&["--format", "json", "validate", "--predictions", "a/predictions.jsonl", "--gold", "gold.csv", "--label-set", "stance"]));
    assert_eq!(v["mcc"], 1.0);
    assert_eq!(v["accuracy"], 1.0);
    assert_eq!(v["kappa"], 1.0);
    assert_eq!(v["confusion"], serde_json::json!([[1, 0, 0], [0, 1, 0], [0, 0, 1]]));

    let table = ws.run(&["validate", "--predictions", "a/predictions.jsonl", "--gold", "gold.csv", "--label-set", "stance"]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("MCC        1.0000"), "{text}");
    assert!(text.contains("confusion"));
}

#[test]
fn validate_binary_counts_fixture() {
    let (tp, tn, fp, fn_) = (45usize, 40usize, 5usize, 10usize);
    let ws = Workspace::new();
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    let mut push = |n: usize, g: &'static str, p: &'static str| {
        for _ in 0..n {
            let id = format!("x{}", gold.len());
            gold.push((id.clone(), g));
            pred.push((id, p));
        }
    };
    push(tp, "pos", "pos");
    push(tn, "neg", "neg");
    push(fp, "neg", "pos");
    push(fn_, "pos", "neg");
    write_pairs(&ws.path("gold.csv"), &gold);
    write_pairs(&ws.path("pred.csv"), &pred);
    let v = ok_json(&ws.run(&["--format", "json", "validate", "--predictions", "pred.csv", "--gold", "gold.csv", "--labels", "pos,neg"]));

    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let oracle = (tp * tn - fp * fn_) / ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    assert!((oracle - 0.7035).abs() < 5e-4);
    assert!((v["mcc"].as_f64().unwrap() - oracle).abs() < 1e-12);
    assert!((v["mcc_binary"].as_f64().unwrap() - oracle).abs() < 1e-12);
    assert_eq!(v["accuracy"], 0.85);
    assert_eq!(v["confusion"], serde_json::json!([[45, 10], [5, 40]]));
}

#[test]
fn validate_rejects_unknown_gold_label() {
    let ws = Workspace::new();
    ok_json(&ws.run(&["--format", "json", "classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "a"]));
    write_pairs(&ws.path("gold.csv"), &[("t1".into(), "support"), ("t2".into(), "against"), ("t3".into(), "neutral")]);
    let out = ws.run(&["validate", "--predictions", "a/predictions.jsonl", "--gold", "gold.csv", "--label-set", "stance"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("against"), "{err}");
}

#[test]
fn validate_reports_id_mismatches() {
    let ws = Workspace::new();
    ok_json(&ws.run(&["--format", "json", "classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "a"]));
    write_pairs(&ws.path("gold.csv"), &[("t1".into(), "support"), ("t9".into(), "oppose")]);
    let out = ws.run(&["validate", "--predictions", "a/predictions.jsonl", "--gold", "gold.csv", "--label-set", "stance"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("t2") && err.contains("t3"), "{err}");

    let v = ok_json(&ws.run(&[
        "--format", "json", "validate", "--predictions", "a/predictions.jsonl", "--gold", "gold.csv", "--label-set", "stance",
        "--allow-missing-gold",
    ]));
    assert_eq!(v["n"], 1);
    assert_eq!(v["missing_predictions"], serde_json::json!(["t9"]));
    assert_eq!(v["ungraded_predictions"], serde_json::json!(["t2", "t3"]));
}

#[test]
fn sample_size_command() {
    let out = stance_bin().args(["--format", "json", "sample-size", "--confidence", "0.95", "--margin", "0.05"]).output().unwrap();
    assert_eq!(ok_json(&out)["required"], 385);
    let out = stance_bin()
        .args(["--format", "json", "sample-size", "--confidence", "0.95", "--margin", "0.05", "--population", "2000"])
        .output()
        .unwrap();
    let v = ok_json(&out);
    assert_eq!(v["required"], 323);
    assert_eq!(v["unadjusted"], 385);
    assert!(v["achieved_margin"].as_f64().unwrap() <= 0.05);

    let out = stance_bin().args(["sample-size", "--margin", "0.03"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let n: u64 = text.lines().next().unwrap().parse().unwrap();
    assert!(n > 385);
    assert!(text.contains("confidence"));

    let bad = stance_bin().args(["sample-size", "--margin", "0"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn sensitivity_command_writes_agreement_csv() {
    let ws = Workspace::new();
    write_pairs(&ws.path("gold.csv"), &[("t1".into(), "support"), ("t2".into(), "oppose"), ("t3".into(), "neutral")]);
    let v = ok_json(&ws.run(&[
        "--format", "json", "sensitivity", "--input", "tweets.jsonl", "--sets", "trump,trump-alt", "--gold", "gold.csv", "--csv", "agree.csv",
    ]));
    assert_eq!(v["agreement"]["set_ids"], serde_json::json!(["trump", "trump-alt"]));
    assert_eq!(v["sets"][0]["vs_gold"]["mcc"], 1.0);
    // trump-alt reads "meh" as support, so the two sets disagree on t3
    let csv = fs::read_to_string(ws.path("agree.csv")).unwrap();
    assert!(csv.starts_with("set_a,set_b,mcc,kappa\ntrump,trump-alt,"));
    let too_few = ws.run(&["sensitivity", "--input", "tweets.jsonl", "--sets", "trump"]);
    assert!(!too_few.status.success());
}

#[test]
fn cache_inspect_and_clear() {
    let ws = Workspace::new();
    let cached = format!("{CONFIG}\n[cache]\ndir = \"cache\"\n");
    fs::write(ws.path("stance.toml"), cached).unwrap();
    ok_json(&ws.run(&["--format", "json", "classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "a"]));
    let v = ok_json(&ws.run(&["--format", "json", "cache", "inspect"]));
    assert_eq!(v["entries"], 9);
    ok_json(&ws.run(&["--format", "json", "classify", "--input", "tweets.jsonl", "--hset", "trump", "--out", "b"]));
    assert_eq!(fs::read(ws.path("a/predictions.jsonl")).unwrap(), fs::read(ws.path("b/predictions.jsonl")).unwrap());
    let v = ok_json(&ws.run(&["--format", "json", "cache", "clear"]));
    assert_eq!(v["removed"], 9);
    let v = ok_json(&ws.run(&["--format", "json", "cache", "inspect"]));
    assert_eq!(v["entries"], 0);
}

struct Child(std::process::Child);

impl Drop for Child {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn annotate_serve_binds_loopback_and_answers() {
    let ws = Workspace::new();
    let mut child = Child(
        stance_bin()
            .current_dir(ws.dir.path())
            .args(["--config", "stance.toml", "annotate", "serve", "--input", "tweets.jsonl", "--label-set", "stance"])
            .args(["--port", "0", "--required", "2", "--store", "labels.jsonl"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let mut line = String::new();
    BufReader::new(child.0.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("startup line").to_string();
    assert!(url.starts_with("http://127.0.0.1:"));
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let progress: Value = agent.get(&format!("{url}/api/progress")).call().unwrap().body_mut().read_json().unwrap();
    assert_eq!(progress["labeled"], 0);
    assert_eq!(progress["required"], 2);
    let plan: Value = serde_json::from_slice(&fs::read(ws.path("labels.plan.json")).unwrap()).unwrap();
    assert_eq!(plan["seed"], 5);
    assert_eq!(plan["sample"].as_array().unwrap().len(), 2);
}
