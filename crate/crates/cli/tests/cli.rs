use std::path::Path;
use std::process::{Command, Output};

use flowconf::ingest::writer::{CaptureWriter, FrameSpec};
use flowconf::ingest::{read_flows, TcpFlags};

fn flowconf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowconf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_succeeds_and_bad_usage_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&flowconf(dir.path(), &["--help"])), 0);
    assert_eq!(code(&flowconf(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&flowconf(dir.path(), &["featurize"])), 1);
    assert_eq!(code(&flowconf(dir.path(), &["featurize", "--flows", "f", "--kind", "wavelet"])), 1);
    // head contradicting the loss is a usage error too
    let o = flowconf(dir.path(), &["synth", "flows", "--out-dir", "."]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    flowconf(dir.path(), &["featurize", "--flows", "train_flows.jsonl"]);
    let o = flowconf(
        dir.path(),
        &["train-encoder", "--features", "features.csv", "--loss", "ce", "--head", "embedding"],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.pcap"), b"definitely not a capture").unwrap();
    let o = flowconf(dir.path(), &["ingest", "--pcap", "junk.pcap"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = flowconf(dir.path(), &["featurize", "--flows", "missing.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.jsonl"));
    std::fs::write(dir.path().join("d.csv"), "session_id,true_label\nx\n").unwrap();
    assert_eq!(code(&flowconf(dir.path(), &["evaluate", "--decisions", "d.csv"])), 2);
}

#[test]
fn embedding_chain_recovers_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = flowconf(d, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run(&["synth", "embeddings", "--seed", "1", "--out", "train.csv", "--outlier-fraction", "0"]);
    run(&["synth", "embeddings", "--seed", "2", "--out", "test.csv"]);
    run(&["fit-gmm", "--embeddings", "train.csv", "--k", "2", "--seed", "4"]);
    let cal = run(&["calibrate", "--model", "gmm.json", "--percentile", "0"]);
    assert!(cal.contains("percentile 0"), "{cal}");
    run(&["classify", "--model", "gmm.json", "--embeddings", "test.csv"]);
    run(&["evaluate", "--decisions", "decisions.csv", "--out", "eval/report.json"]);
    for f in ["eval/report.json", "eval/report_confusion.csv", "eval/report_confusion.json"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/report.json")).unwrap()).unwrap();
    assert!(report["scores"]["accuracy"].as_f64().unwrap() >= 0.99, "{report}");
    assert_eq!(report["samples"], 200);

    let table = run(&["sweep", "--model", "gmm.json", "--embeddings", "test.csv", "--grid", "0:10:5"]);
    assert_eq!(table.lines().count(), 5, "{table}");
    let csv = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn ingest_labels_flows_from_a_capture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut w = CaptureWriter::new();
    w.push_dns_response(0.0, "10.0.0.53", "10.0.0.2", "video.example", &["93.184.216.34".parse().unwrap()]);
    for i in 0..45 {
        let (src, dst) = if i % 3 == 1 {
            ("93.184.216.34:443", "10.0.0.2:50000")
        } else {
            ("10.0.0.2:50000", "93.184.216.34:443")
        };
        w.push(&FrameSpec::tcp(src, dst, 1.0 + i as f64 * 0.01, 100, TcpFlags::ACK));
    }
    // never resolved: dropped by the DNS gate
    for i in 0..45 {
        w.push(&FrameSpec::tcp("10.0.0.2:50001", "8.8.4.4:443", 1.0 + i as f64 * 0.01, 60, TcpFlags::ACK));
    }
    w.write_to(d.join("s1.pcap")).unwrap();
    std::fs::write(
        d.join("rules.json"),
        r#"{"rules": [{"pattern": "video.example", "label": "Video"}]}"#,
    )
    .unwrap();

    let o = flowconf(d, &["ingest", "--pcap", "s1.pcap", "--rules", "rules.json", "--out", "f.jsonl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let flows = read_flows(d.join("f.jsonl")).unwrap();
    assert_eq!(flows.len(), 1);
    assert_eq!(flows[0].session_id, "s1");
    assert_eq!(flows[0].label.as_deref(), Some("Video"));
    assert_eq!(flows[0].domain.as_deref(), Some("video.example"));

    let o = flowconf(d, &["ingest", "--pcap", "s1.pcap", "--mode", "keep_all", "--session-id", "x", "--out", "k.jsonl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let flows = read_flows(d.join("k.jsonl")).unwrap();
    assert_eq!(flows.len(), 2);
    assert!(flows.iter().all(|f| f.session_id == "x" && f.label.is_none()));
}

const SMALL_RUN: &str = r#"
seed = 5
[input]
kind = "synth"
profile = "profile.json"
[encoder]
lstm1 = 6
lstm2 = 4
dense = 8
epochs = 1
batch_size = 16
"#;

fn write_small_profile(dir: &Path) {
    let mut synth = flowconf::synth::SynthConfig::default();
    synth.classes.truncate(2);
    synth.sessions_per_class = 2;
    synth.flows_per_session = 5;
    synth.test_sessions_per_class = 1;
    std::fs::write(dir.join("profile.json"), serde_json::to_string(&synth).unwrap()).unwrap();
}

#[test]
fn run_writes_manifest_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_small_profile(d);
    std::fs::write(d.join("run.toml"), SMALL_RUN).unwrap();
    let o = flowconf(d, &["run", "--config", "run.toml", "--out-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["manifest.json", "decisions.csv", "sweep_gmm.csv", "sweep_softmax.csv", "confusion_gmm.csv", "gmm.json"] {
        assert!(d.join("out").join(f).is_file(), "{f}");
    }
    let first = std::fs::read(d.join("out/decisions.csv")).unwrap();
    let o = flowconf(d, &["run", "--config", "run.toml", "--out-dir", "out2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(d.join("out2/decisions.csv")).unwrap(), first);

    let o = flowconf(d, &["run", "--config", "run.toml", "--out-dir", "out"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("reused"));

    // a different seed gives a different manifest seed
    let o = flowconf(d, &["run", "--config", "run.toml", "--out-dir", "out3", "--seed", "6"]);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out3/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 6);
}

#[test]
fn missing_rules_file_fails_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("a.pcap"), b"").unwrap();
    std::fs::write(
        d.join("run.toml"),
        "[input]\nkind = \"captures\"\nrules = \"nope.json\"\n\
         [[input.captures]]\npath = \"a.pcap\"\nsession = \"s\"\napp = \"Video\"\nsplit = \"train\"\n",
    )
    .unwrap();
    let o = flowconf(d, &["run", "--config", "run.toml", "--out-dir", "out"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("nope.json"));
    assert!(!d.join("out").exists());
}
