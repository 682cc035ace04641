use std::path::Path;

use flowconf::pipeline::{run_pipeline, InputConfig, Manifest, PipelineConfig};
use flowconf::synth::SynthConfig;

fn small_config(dir: &Path) -> PipelineConfig {
    let mut synth = SynthConfig::default();
    synth.classes.truncate(3);
    synth.sessions_per_class = 3;
    synth.flows_per_session = 6;
    synth.test_sessions_per_class = 1;
    let profile = dir.join("profile.json");
    std::fs::write(&profile, serde_json::to_string(&synth).unwrap()).unwrap();

    let mut cfg = PipelineConfig::synth();
    cfg.seed = 11;
    cfg.input = InputConfig::Synth { profile: Some(profile) };
    cfg.encoder.lstm1 = 6;
    cfg.encoder.lstm2 = 4;
    cfg.encoder.dense = 8;
    cfg.encoder.epochs = 1;
    cfg.encoder.batch_size = 16;
    cfg
}

#[test]
fn rerun_reuses_every_stage_and_matches_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let first = run_pipeline(&cfg, &out).unwrap();
    assert!(first.cached_stages.is_empty());
    assert_eq!(first.classes.last().map(String::as_str), Some("Background"));
    assert_eq!(first.gmm_sweep.len(), 21);
    assert_eq!(first.softmax_sweep.len(), 13);
    let decisions = std::fs::read(out.join("decisions.csv")).unwrap();

    let second = run_pipeline(&cfg, &out).unwrap();
    assert_eq!(second.cached_stages.len(), second.manifest.stages.len());
    assert_eq!(std::fs::read(out.join("decisions.csv")).unwrap(), decisions);
    Manifest::load(&out).unwrap().verify(&out).unwrap();

    // same seed, fresh directory: identical artifacts
    let other = dir.path().join("again");
    run_pipeline(&cfg, &other).unwrap();
    assert_eq!(std::fs::read(other.join("decisions.csv")).unwrap(), decisions);
    assert_eq!(
        std::fs::read(other.join("sweep_gmm.csv")).unwrap(),
        std::fs::read(out.join("sweep_gmm.csv")).unwrap()
    );
}

#[test]
fn changing_the_percentile_reruns_only_downstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    let out = dir.path().join("run");
    run_pipeline(&cfg, &out).unwrap();
    cfg.confidence.percentile = 10.0;
    let again = run_pipeline(&cfg, &out).unwrap();
    let cached: Vec<&str> = again.cached_stages.iter().map(String::as_str).collect();
    assert!(cached.contains(&"train_contrastive") && cached.contains(&"embed"));
    assert!(!cached.contains(&"fit_gmm") && !cached.contains(&"classify"));
}

#[test]
fn tampered_artifact_is_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    run_pipeline(&cfg, &out).unwrap();
    let original = std::fs::read(out.join("gmm.json")).unwrap();
    std::fs::write(out.join("gmm.json"), b"{}").unwrap();
    assert!(Manifest::load(&out).unwrap().verify(&out).is_err());
    let again = run_pipeline(&cfg, &out).unwrap();
    assert!(!again.cached_stages.iter().any(|s| s == "fit_gmm"));
    assert_eq!(std::fs::read(out.join("gmm.json")).unwrap(), original);
}

mod captures {
    use super::*;
    use flowconf::ingest::writer::{CaptureWriter, FrameSpec};
    use flowconf::ingest::TcpFlags;

    /// One session: `flows` TCP conversations to a server resolved as
    /// `domain`, plus one unresolved conversation.
    fn write_session(path: &Path, domain: &str, server: &str, size: usize, flows: usize) {
        let mut w = CaptureWriter::new();
        w.push_dns_response(0.0, "10.0.0.53", "10.0.0.2", domain, &[server.parse().unwrap()]);
        for f in 0..flows {
            let client = format!("10.0.0.2:{}", 40000 + f);
            let srv = format!("{server}:443");
            for i in 0..50 {
                let t = 1.0 + f as f64 * 10.0 + i as f64 * 0.05;
                let (s, d, len) = if i % 2 == 0 { (&client, &srv, size) } else { (&srv, &client, size * 2) };
                w.push(&FrameSpec::tcp(s, d, t, len + f, TcpFlags::ACK));
            }
        }
        for i in 0..50 {
            w.push(&FrameSpec::tcp("10.0.0.2:39999", "192.0.2.77:443", 0.5 + i as f64 * 0.01, 30, TcpFlags::ACK));
        }
        w.write_to(path).unwrap();
    }

    #[test]
    fn capture_input_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let mut toml = String::from(
            "labeling = \"domain\"\n[input]\nkind = \"captures\"\nrules = \"rules.json\"\n",
        );
        let apps = [("Video", "video.example", "198.51.100.1", 900), ("Chat", "chat.example", "198.51.100.2", 80)];
        for (app, domain, server, size) in apps {
            for split in ["train", "test"] {
                let name = format!("{app}-{split}.pcap");
                write_session(&d.join(&name), domain, server, size, 4);
                toml.push_str(&format!(
                    "[[input.captures]]\npath = \"{name}\"\nsession = \"{app}-{split}\"\napp = \"{app}\"\nsplit = \"{split}\"\n"
                ));
            }
        }
        toml.push_str("[encoder]\nlstm1 = 4\nlstm2 = 4\ndense = 8\nepochs = 1\nbatch_size = 8\n");
        std::fs::write(d.join("run.toml"), toml).unwrap();
        std::fs::write(
            d.join("rules.json"),
            r#"{"rules": [{"pattern": "video.", "label": "Video"}, {"pattern": "chat.", "label": "Chat"}]}"#,
        )
        .unwrap();

        let cfg = PipelineConfig::load(d.join("run.toml")).unwrap();
        let s = run_pipeline(&cfg, &d.join("out")).unwrap();
        assert_eq!(s.classes, ["Video", "Chat"]);
        assert_eq!(s.gmm_report.samples, 8);
        let flows = flowconf::ingest::read_flows(d.join("out/labeled_flows.jsonl")).unwrap();
        assert_eq!(flows.len(), 16, "unresolved conversations are gated out");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let synth = PipelineConfig::load(dir.join("synth.toml")).unwrap();
    synth.validate().unwrap();
    let captures = PipelineConfig::load(dir.join("captures.toml")).unwrap();
    match &captures.input {
        InputConfig::Captures { captures, rules } => {
            assert_eq!(captures.len(), 4);
            let rules = rules.as_ref().unwrap();
            assert!(rules.ends_with("configs/rules.json"));
            flowconf::ingest::LabelRuleSet::load(rules).unwrap();
        }
        other => panic!("unexpected input {other:?}"),
    }
}
