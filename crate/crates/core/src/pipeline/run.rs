use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use super::config::{InputConfig, Labeling, PipelineConfig};
use super::manifest::{sha256_bytes, sha256_file, Manifest, StageRecord};
use crate::classes::{ClassSet, BACKGROUND};
use crate::confidence::{
    calibrate_threshold, classify_gmm_batch, classify_softmax, percentile_threshold,
    ConfidenceModel, DecisionRow, GmmConfig,
};
use crate::encoder::{
    embed_dataset, predict_proba, read_embeddings, train, write_embeddings, EncoderModel, LossKind, SavedEncoder, TrainingRecord,
};
use crate::features::{balance, FeatureKind, FeatureSet};
use crate::ingest::{
    apply_labels, assemble_flows, associate_dns, read_capture, read_flows, split_sessions,
    write_flows, AssemblyOptions, Flow, LabelRuleSet, Split,
};
use crate::metrics::{
    evaluate, outcomes_from_rows, parse_grid, sweep, write_sweep_csv, EvaluationReport, Outcome,
    SweepRow,
};
use crate::synth::{generate_flows, SynthConfig};
use crate::{Error, Result};

// artifact names
const FLOWS: &str = "flows.jsonl";
const SPLIT: &str = "split.json";
const LABELED: &str = "labeled_flows.jsonl";
const TRAIN_FLOWS: &str = "train_flows.jsonl";
const TEST_FLOWS: &str = "test_flows.jsonl";
const TRAIN_FEATURES: &str = "train_features.csv";
const TEST_FEATURES: &str = "test_features.csv";
const BALANCED: &str = "balanced.csv";
const SOFTMAX_MODEL: &str = "softmax_model.bin";
const EMBED_MODEL: &str = "embedding_model.bin";
const TRAIN_EMB: &str = "train_embeddings.csv";
const TEST_EMB: &str = "test_embeddings.csv";
const GMM: &str = "gmm.json";
const CLUSTERS: &str = "clusters.json";
const DECISIONS: &str = "decisions.csv";
const SOFTMAX_DECISIONS: &str = "softmax_decisions.csv";
const REPORT_GMM: &str = "report_gmm.json";
const REPORT_SOFTMAX: &str = "report_softmax.json";
const CONFUSION_GMM: &str = "confusion_gmm.csv";
const CONFUSION_SOFTMAX: &str = "confusion_softmax.csv";
const PLOT_GMM: &str = "confusion_gmm.json";
const PLOT_SOFTMAX: &str = "confusion_softmax.json";
const SWEEP_GMM: &str = "sweep_gmm.csv";
const SWEEP_SOFTMAX: &str = "sweep_softmax.csv";
const F1_COVERAGE: &str = "f1_coverage.json";

/// Outcome of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub classes: Vec<String>,
    pub gmm_report: EvaluationReport,
    pub softmax_report: EvaluationReport,
    pub gmm_sweep: Vec<SweepRow>,
    pub softmax_sweep: Vec<SweepRow>,
    /// Stages whose outputs were reused from an earlier identical run.
    pub cached_stages: Vec<String>,
    pub manifest: Manifest,
}

struct Runner<'a> {
    dir: &'a Path,
    previous: Option<Manifest>,
    manifest: Manifest,
    cached: Vec<String>,
}

impl Runner<'_> {
    /// Runs `body` unless an earlier run recorded the same key and its
    /// outputs are still intact.
    fn stage<P: Serialize>(
        &mut self,
        name: &str,
        params: &P,
        inputs: &[PathBuf],
        outputs: &[&str],
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<()> {
        let wrap = |e: Error| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        };
        let mut key_src = serde_json::to_string(&(name, params)).map_err(|e| wrap(e.into()))?;
        for p in inputs {
            key_src.push('\n');
            key_src.push_str(&sha256_file(p).map_err(wrap)?);
        }
        let key = sha256_bytes(key_src.as_bytes());

        let reusable = self.previous.as_ref().and_then(|m| m.stage(name)).filter(|rec| {
            rec.key == key
                && outputs.iter().all(|o| {
                    rec.outputs
                        .get(*o)
                        .is_some_and(|h| sha256_file(&self.dir.join(o)).is_ok_and(|a| &a == h))
                })
        });
        let record = if let Some(rec) = reusable {
            info!("stage {name}: up to date");
            self.cached.push(name.to_string());
            rec.clone()
        } else {
            info!("stage {name}: running");
            body(self.dir).map_err(wrap)?;
            let mut hashes = BTreeMap::new();
            for o in outputs {
                hashes.insert(o.to_string(), sha256_file(&self.dir.join(o)).map_err(wrap)?);
            }
            StageRecord {
                name: name.to_string(),
                key,
                outputs: hashes,
            }
        };
        self.manifest.stages.push(record);
        self.manifest.save(self.dir)
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| Error::io(path, e))
}

fn read_split(path: &Path) -> Result<BTreeMap<String, Split>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Class set of the training flows: canonical classes first, Background last.
fn classes_of(flows: &[Flow]) -> Result<ClassSet> {
    ClassSet::infer(flows.iter().filter_map(|f| f.label.as_deref()))
}

fn label_ids(set: &FeatureSet, classes: &ClassSet) -> Result<Vec<usize>> {
    set.samples.iter().map(|s| classes.require_id(&s.label)).collect()
}

fn session_class(session_id: &str) -> &str {
    session_id.rsplit_once("-s").map_or(session_id, |(c, _)| c)
}

/// Runs every stage of the experiment into `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_text =
        toml::to_string(cfg).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    let mut r = Runner {
        dir: out_dir,
        previous: Manifest::load(out_dir).ok(),
        manifest: Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config_sha256: sha256_bytes(config_text.as_bytes()),
            config: config_text,
            stages: Vec::new(),
        },
        cached: Vec::new(),
    };
    let at = |f: &str| out_dir.join(f);
    let seed = cfg.seed;

    // corpus
    let mut corpus_inputs = Vec::new();
    match &cfg.input {
        InputConfig::Synth { profile } => corpus_inputs.extend(profile.iter().cloned()),
        InputConfig::Captures { captures, .. } => {
            corpus_inputs.extend(captures.iter().map(|c| c.path.clone()))
        }
    }
    r.stage("corpus", &(&cfg.input, seed), &corpus_inputs, &[FLOWS, SPLIT], |d| {
        let (flows, split) = match &cfg.input {
            InputConfig::Synth { profile } => {
                let sc = match profile {
                    Some(p) => SynthConfig::load(p)?,
                    None => SynthConfig::default(),
                };
                let c = generate_flows(&sc, seed)?;
                (c.flows, c.split)
            }
            InputConfig::Captures { captures, .. } => {
                let mut flows = Vec::new();
                let mut split = BTreeMap::new();
                for c in captures {
                    let cap = read_capture(&c.path)?;
                    let opts = AssemblyOptions::new(c.mode, c.session.clone());
                    let fl = assemble_flows(&cap.packets, &cap.dns, &opts);
                    flows.extend(associate_dns(fl, &cap.dns));
                    split.insert(c.session.clone(), c.split);
                }
                (flows, split)
            }
        };
        write_flows(d.join(FLOWS), &flows)?;
        write_json(&d.join(SPLIT), &split)
    })?;

    // labels
    let mut label_inputs = vec![at(FLOWS)];
    if let InputConfig::Captures { rules: Some(p), .. } = &cfg.input {
        label_inputs.push(p.clone());
    }
    r.stage("label", &cfg.labeling, &label_inputs, &[LABELED], |d| {
        let flows = read_flows(d.join(FLOWS))?;
        let flows = label_flows(cfg, flows)?;
        if flows.is_empty() {
            return Err(Error::Data("no flows left after labeling".into()));
        }
        write_flows(d.join(LABELED), &flows)
    })?;

    r.stage("split", &(), &[at(LABELED), at(SPLIT)], &[TRAIN_FLOWS, TEST_FLOWS], |d| {
        let split = read_split(&d.join(SPLIT))?;
        let (train, test) = split_sessions(read_flows(d.join(LABELED))?, &split)?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Data("the session split left the train or test set empty".into()));
        }
        write_flows(d.join(TRAIN_FLOWS), &train)?;
        write_flows(d.join(TEST_FLOWS), &test)
    })?;

    r.stage(
        "featurize",
        &FeatureKind::TimeSeries,
        &[at(TRAIN_FLOWS), at(TEST_FLOWS)],
        &[TRAIN_FEATURES, TEST_FEATURES],
        |d| {
            for (src, dst) in [(TRAIN_FLOWS, TRAIN_FEATURES), (TEST_FLOWS, TEST_FEATURES)] {
                let flows = read_flows(d.join(src))?;
                FeatureSet::from_flows(&flows, FeatureKind::TimeSeries)?.write_csv(d.join(dst))?;
            }
            Ok(())
        },
    )?;

    let train_flows = read_flows(at(TRAIN_FLOWS))?;
    let classes = classes_of(&train_flows)?;
    let n_classes = classes.len();
    if n_classes < 2 {
        return Err(Error::Data("training data covers fewer than two classes".into()));
    }

    r.stage(
        "balance",
        &(&cfg.features, seed),
        &[at(TRAIN_FEATURES), at(TRAIN_FLOWS)],
        &[BALANCED],
        |d| {
            let set = FeatureSet::read_csv(d.join(TRAIN_FEATURES))?;
            let out = match cfg.features.balance {
                Some(strategy) => balance(
                    &set,
                    strategy,
                    None,
                    seed.wrapping_add(1),
                    Some(&train_flows),
                    Some(&classes),
                    cfg.features.max_shift,
                )?,
                None => set,
            };
            out.write_csv(d.join(BALANCED))
        },
    )?;

    for (stage, file, loss, offset) in [
        ("train_softmax", SOFTMAX_MODEL, LossKind::CrossEntropy, 2u64),
        ("train_contrastive", EMBED_MODEL, LossKind::SupervisedContrastive, 4u64),
    ] {
        r.stage(stage, &(&cfg.encoder, seed), &[at(BALANCED)], &[file], |d| {
            let set = FeatureSet::read_csv(d.join(BALANCED))?;
            let labels = label_ids(&set, &classes)?;
            let inputs: Vec<Vec<f64>> = set.samples.iter().map(|s| s.values.clone()).collect();
            let arch = match loss {
                LossKind::CrossEntropy => cfg.encoder.softmax_config(n_classes),
                LossKind::SupervisedContrastive => cfg.encoder.embedding_config(),
            };
            let init_seed = seed.wrapping_add(offset);
            let mut model = EncoderModel::new(arch, init_seed)?;
            model.fit_scaling_values(&inputs);
            let tc = cfg.encoder.train_config(loss, seed.wrapping_add(offset + 1));
            let report = train(&mut model, &inputs, &labels, &tc)?;
            SavedEncoder {
                model,
                class_names: classes.names().to_vec(),
                training: Some(TrainingRecord {
                    init_seed,
                    config: tc,
                    report,
                }),
            }
            .save(d.join(file))
        })?;
    }

    r.stage(
        "embed",
        &(),
        &[at(EMBED_MODEL), at(TRAIN_FEATURES), at(TEST_FEATURES)],
        &[TRAIN_EMB, TEST_EMB],
        |d| {
            let model = SavedEncoder::load(d.join(EMBED_MODEL))?.model;
            for (src, dst) in [(TRAIN_FEATURES, TRAIN_EMB), (TEST_FEATURES, TEST_EMB)] {
                let set = FeatureSet::read_csv(d.join(src))?;
                write_embeddings(d.join(dst), &embed_dataset(&model, &set)?)?;
            }
            Ok(())
        },
    )?;

    let gmm_cfg = GmmConfig {
        k: cfg.confidence.k.unwrap_or(n_classes),
        max_iters: cfg.confidence.max_iters,
        tol: cfg.confidence.tol,
        cov_regularization: cfg.confidence.cov_regularization,
        seed: seed.wrapping_add(6),
    };
    r.stage(
        "fit_gmm",
        &(&gmm_cfg, cfg.confidence.percentile),
        &[at(TRAIN_EMB)],
        &[GMM, CLUSTERS],
        |d| {
            let train_emb = read_embeddings(d.join(TRAIN_EMB), None)?;
            let mut model = ConfidenceModel::fit(&train_emb, &classes, &gmm_cfg)?;
            calibrate_threshold(&mut model.gmm, cfg.confidence.percentile)?;
            model.save(d.join(GMM))?;
            write_json(&d.join(CLUSTERS), &model.clusters)
        },
    )?;

    let test_emb = read_embeddings(at(TEST_EMB), None)?;
    let test_set = FeatureSet::read_csv(at(TEST_FEATURES))?;
    let scored = || -> Result<(ConfidenceModel, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let model = ConfidenceModel::load(at(GMM))?;
        let sims = model.similarities(&test_emb)?;
        let probs = predict_proba(&SavedEncoder::load(at(SOFTMAX_MODEL))?.model, &test_set)?;
        Ok((model, sims, probs))
    };

    let classify_inputs = [at(GMM), at(TEST_EMB), at(SOFTMAX_MODEL), at(TEST_FEATURES)];
    r.stage(
        "classify",
        &cfg.confidence.softmax_threshold,
        &classify_inputs,
        &[DECISIONS, SOFTMAX_DECISIONS],
        |d| {
            let (model, sims, probs) = scored()?;
            let t = model.gmm.threshold.unwrap_or(f64::NEG_INFINITY);
            let gmm_dec = classify_gmm_batch(&model.gmm, &sims, t)?;
            let rows: Vec<DecisionRow> = test_emb
                .iter()
                .zip(&gmm_dec)
                .map(|(e, dec)| DecisionRow::new(e, dec, &model.classes))
                .collect();
            crate::confidence::write_decisions(d.join(DECISIONS), &rows)?;
            let soft: Vec<DecisionRow> = test_emb
                .iter()
                .zip(&probs)
                .map(|(e, p)| {
                    DecisionRow::new(e, &classify_softmax(p, cfg.confidence.softmax_threshold), &model.classes)
                })
                .collect();
            crate::confidence::write_decisions(d.join(SOFTMAX_DECISIONS), &soft)
        },
    )?;

    r.stage(
        "evaluate",
        &(),
        &[at(DECISIONS), at(SOFTMAX_DECISIONS)],
        &[REPORT_GMM, CONFUSION_GMM, PLOT_GMM, REPORT_SOFTMAX, CONFUSION_SOFTMAX, PLOT_SOFTMAX],
        |d| {
            for (src, report, conf, plot) in [
                (DECISIONS, REPORT_GMM, CONFUSION_GMM, PLOT_GMM),
                (SOFTMAX_DECISIONS, REPORT_SOFTMAX, CONFUSION_SOFTMAX, PLOT_SOFTMAX),
            ] {
                let rows = crate::confidence::read_decisions(d.join(src))?;
                let rep = evaluate(&outcomes_from_rows(&rows, &classes)?, &classes)?;
                rep.save_json(d.join(report))?;
                rep.save_confusion_csv(d.join(conf))?;
                rep.save_confusion_json(d.join(plot))?;
            }
            Ok(())
        },
    )?;

    let grids = (&cfg.confidence.percentile_grid, &cfg.confidence.softmax_grid);
    r.stage(
        "sweep",
        &grids,
        &classify_inputs,
        &[SWEEP_GMM, SWEEP_SOFTMAX, F1_COVERAGE],
        |d| {
            let (model, sims, probs) = scored()?;
            let truth = test_emb
                .iter()
                .map(|e| classes.require_id(&e.label))
                .collect::<Result<Vec<_>>>()?;
            let gmm_rows =
                sweep_gmm(&model, &sims, &truth, &parse_grid(&cfg.confidence.percentile_grid)?)?;
            let soft_rows =
                sweep_softmax(&probs, &truth, &classes, &parse_grid(&cfg.confidence.softmax_grid)?)?;
            write_sweep_csv(d.join(SWEEP_GMM), &gmm_rows)?;
            write_sweep_csv(d.join(SWEEP_SOFTMAX), &soft_rows)?;
            write_json(
                &d.join(F1_COVERAGE),
                &serde_json::json!({
                    "abstention_in_f1": "removed",
                    "gmm": gmm_rows,
                    "softmax": soft_rows,
                }),
            )
        },
    )?;

    let load_report = |f: &str| -> Result<EvaluationReport> {
        let text = std::fs::read_to_string(at(f)).map_err(|e| Error::io(at(f), e))?;
        Ok(serde_json::from_str(&text)?)
    };
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        classes: classes.names().to_vec(),
        gmm_report: load_report(REPORT_GMM)?,
        softmax_report: load_report(REPORT_SOFTMAX)?,
        gmm_sweep: crate::metrics::read_sweep_csv(at(SWEEP_GMM))?,
        softmax_sweep: crate::metrics::read_sweep_csv(at(SWEEP_SOFTMAX))?,
        cached_stages: r.cached,
        manifest: r.manifest,
    })
}

fn label_flows(cfg: &PipelineConfig, flows: Vec<Flow>) -> Result<Vec<Flow>> {
    Ok(match &cfg.input {
        InputConfig::Synth { .. } => {
            // synthetic flows carry their generating class, which is what
            // rule labeling would recover from the synthetic domains
            match cfg.labeling {
                Labeling::Comprehensive => flows,
                Labeling::Domain => flows
                    .into_iter()
                    .filter(|f| f.label.as_deref() != Some(BACKGROUND))
                    .collect(),
                Labeling::Session => flows
                    .into_iter()
                    .map(|mut f| {
                        f.label = Some(session_class(&f.session_id).to_string());
                        f
                    })
                    .collect(),
            }
        }
        InputConfig::Captures { captures, rules } => {
            let rules = match rules {
                Some(p) => LabelRuleSet::load(p)?,
                None => LabelRuleSet::default(),
            };
            match cfg.labeling {
                Labeling::Session => {
                    let app: BTreeMap<&str, &str> =
                        captures.iter().map(|c| (c.session.as_str(), c.app.as_str())).collect();
                    flows
                        .into_iter()
                        .map(|mut f| {
                            f.label = app.get(f.session_id.as_str()).map(|a| a.to_string());
                            f
                        })
                        .collect()
                }
                Labeling::Comprehensive => apply_labels(flows, &rules),
                Labeling::Domain => apply_labels(flows, &rules)
                    .into_iter()
                    .filter(|f| f.label.as_deref() != Some(rules.fallback.as_str()))
                    .collect(),
            }
        }
    })
}

/// Sweeps the log-likelihood percentile over `grid` on test similarity
/// vectors; thresholds come from the stored training log-likelihoods.
pub fn sweep_gmm(
    model: &ConfidenceModel,
    sims: &[Vec<f64>],
    truth: &[usize],
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    let classes = model.class_set()?;
    let labels = model
        .gmm
        .cluster_labels
        .as_ref()
        .ok_or_else(|| Error::Data("mixture components carry no class labels".into()))?;
    let scores = model.gmm.score_batch(sims)?;
    sweep(
        |p| {
            let t = percentile_threshold(&model.gmm.train_logliks, p)?;
            Ok(scores
                .iter()
                .zip(truth)
                .map(|(&(ll, comp), &y)| (y, (ll >= t).then_some(labels[comp])))
                .collect::<Vec<Outcome>>())
        },
        grid,
        classes.len(),
        classes.background(),
    )
}

/// Sweeps the maximum-softmax threshold over `grid`.
pub fn sweep_softmax(
    probs: &[Vec<f64>],
    truth: &[usize],
    classes: &ClassSet,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    sweep(
        |t| {
            Ok(probs
                .iter()
                .zip(truth)
                .map(|(p, &y)| (y, classify_softmax(p, t).predicted))
                .collect())
        },
        grid,
        classes.len(),
        classes.background(),
    )
}
