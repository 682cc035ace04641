use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use flowconf::classes::{BACKGROUND, DEFAULT_CLASSES};
use flowconf::confidence::{
    calibrate_threshold, classify_gmm_batch, classify_softmax, read_decisions, write_decisions,
    ConfidenceModel, DecisionRow, GmmConfig, ABSTAIN,
};
use flowconf::encoder::{
    embed_dataset, predict_proba, read_embeddings, train, write_embeddings, EmbeddingRecord,
    EncoderModel, LossKind, SavedEncoder, TrainingRecord,
};
use flowconf::features::{balance, FeatureKind, FeatureSet, SIZE_SEQ_LEN, TS_LEN};
use flowconf::ingest::{
    apply_labels, assemble_flows, associate_dns, read_capture, read_flows, write_flows,
    split_sessions, AssemblyOptions, LabelRuleSet,
};
use flowconf::metrics::{evaluate, outcomes_from_rows, parse_grid, write_sweep_csv, SweepRow};
use flowconf::pipeline::{run_pipeline, sweep_gmm, sweep_softmax, PipelineConfig};
use flowconf::synth::{generate_embeddings, generate_flows, orthonormal_means, EmbeddingSpec, SynthConfig};
use flowconf::{ClassSet, Error, Result};
use log::{info, warn};

use crate::*;

struct Ctx {
    seed: u64,
    out_dir: Option<PathBuf>,
    cfg: PipelineConfig,
}

impl Ctx {
    fn dir(&self) -> &Path {
        self.out_dir.as_deref().unwrap_or(Path::new("."))
    }

    /// `given` (relative to the output directory) or `default` inside it.
    fn out(&self, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let p = self.dir().join(given.as_deref().unwrap_or(Path::new(default)));
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::synth(),
    };
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(cfg.seed),
        out_dir: cli.out_dir.clone().or_else(|| cfg.out_dir.clone()),
        cfg,
    };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Featurize(a) => featurize(&ctx, a),
        Command::Balance(a) => balance_cmd(&ctx, a),
        Command::TrainEncoder(a) => train_encoder(&ctx, a),
        Command::Embed(a) => embed(&ctx, a),
        Command::FitGmm(a) => fit_gmm(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::Classify(a) => classify(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::Sweep(a) => sweep_cmd(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Run => run(ctx, cli.config.is_some()),
    }
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str, pipeline: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("the {pipeline} pipeline needs --{flag}")))
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<()> {
    let rules = a.rules.as_ref().map(LabelRuleSet::load).transpose()?;
    let mut flows = Vec::new();
    for path in &a.pcap {
        let session = match &a.session_id {
            Some(s) => s.clone(),
            None => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| Error::Config(format!("cannot derive a session id from {}", path.display())))?,
        };
        let cap = read_capture(path)?;
        let opts = AssemblyOptions::new(a.mode.into(), session);
        let assembled = associate_dns(assemble_flows(&cap.packets, &cap.dns, &opts), &cap.dns);
        info!("{}: {} packets, {} flows", path.display(), cap.packets.len(), assembled.len());
        flows.extend(assembled);
    }
    if let Some(rules) = &rules {
        flows = apply_labels(flows, rules);
        if a.domain_only {
            flows.retain(|f| f.label.as_deref() != Some(rules.fallback.as_str()));
        }
    }
    if flows.is_empty() {
        warn!("no flows survived assembly");
    }
    let out = ctx.out(&a.out, "flows.jsonl")?;
    write_flows(&out, &flows)?;
    println!("{} flows -> {}", flows.len(), out.display());
    Ok(())
}

fn featurize(ctx: &Ctx, a: FeaturizeArgs) -> Result<()> {
    let flows = read_flows(&a.flows)?;
    let set = FeatureSet::from_flows(&flows, a.kind.into())?;
    let out = ctx.out(&a.out, "features.csv")?;
    set.write_csv(&out)?;
    println!("{} samples -> {}", set.len(), out.display());
    Ok(())
}

fn balance_cmd(ctx: &Ctx, a: BalanceArgs) -> Result<()> {
    let set = FeatureSet::read_csv(&a.input)?;
    let flows = a.flows.as_ref().map(read_flows).transpose()?;
    let strategy = match (a.strategy, ctx.cfg.features.balance) {
        (Some(s), _) => s.into(),
        (None, Some(s)) => s,
        (None, None) => flowconf::features::BalanceStrategy::Augment,
    };
    let out_set = balance(
        &set,
        strategy,
        a.target,
        ctx.seed,
        flows.as_deref(),
        None,
        a.max_shift.unwrap_or(ctx.cfg.features.max_shift),
    )?;
    let out = ctx.out(&a.out, "balanced.csv")?;
    out_set.write_csv(&out)?;
    println!("{} -> {} samples -> {}", set.len(), out_set.len(), out.display());
    Ok(())
}

fn train_encoder(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let set = FeatureSet::read_csv(&a.features)?;
    let classes = ClassSet::infer(set.labels())?;
    let labels = set
        .samples
        .iter()
        .map(|s| classes.require_id(&s.label))
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<Vec<f64>> = set.samples.iter().map(|s| s.values.clone()).collect();

    let mut enc = ctx.cfg.encoder.clone();
    enc.epochs = a.epochs.unwrap_or(enc.epochs);
    enc.batch_size = a.batch_size.unwrap_or(enc.batch_size);
    enc.learning_rate = a.learning_rate.unwrap_or(enc.learning_rate);
    enc.lstm1 = a.lstm1.unwrap_or(enc.lstm1);
    enc.lstm2 = a.lstm2.unwrap_or(enc.lstm2);
    enc.dense = a.dense.unwrap_or(enc.dense);

    let (loss, expected_head) = match a.loss {
        LossArg::Ce => (LossKind::CrossEntropy, HeadArg::Softmax),
        LossArg::Supcon => (LossKind::SupervisedContrastive, HeadArg::Embedding),
    };
    if a.head.is_some_and(|h| h != expected_head) {
        return Err(Error::Config(
            "cross-entropy needs the softmax head and supcon the embedding head".into(),
        ));
    }
    let mut arch = match loss {
        LossKind::CrossEntropy => enc.softmax_config(classes.len()),
        LossKind::SupervisedContrastive => enc.embedding_config(),
    };
    (arch.seq_len, arch.input_dim) = match set.kind {
        FeatureKind::TimeSeries => (TS_LEN, 2),
        FeatureKind::SizeSequence => (SIZE_SEQ_LEN, 1),
    };
    let mut model = EncoderModel::new(arch, ctx.seed)?;
    model.fit_scaling_values(&inputs);
    let tc = enc.train_config(loss, ctx.seed.wrapping_add(1));
    let report = train(&mut model, &inputs, &labels, &tc)?;
    let final_loss = report.loss_curve.last().copied();
    let out = ctx.out(&a.out, "model.bin")?;
    SavedEncoder {
        model,
        class_names: classes.names().to_vec(),
        training: Some(TrainingRecord {
            init_seed: ctx.seed,
            config: tc,
            report,
        }),
    }
    .save(&out)?;
    match final_loss {
        Some(l) => println!("final loss {l:.5} -> {}", out.display()),
        None => println!("untrained model -> {}", out.display()),
    }
    Ok(())
}

fn embed(ctx: &Ctx, a: EmbedArgs) -> Result<()> {
    let model = SavedEncoder::load(&a.model)?.model;
    let set = FeatureSet::read_csv(&a.features)?;
    let records = embed_dataset(&model, &set)?;
    let out = ctx.out(&a.out, "embeddings.csv")?;
    write_embeddings(&out, &records)?;
    println!("{} embeddings -> {}", records.len(), out.display());
    Ok(())
}

fn fit_gmm(ctx: &Ctx, a: FitGmmArgs) -> Result<()> {
    let train_emb = read_embeddings(&a.embeddings, None)?;
    let classes = ClassSet::infer(train_emb.iter().map(|r| r.label.as_str()))?;
    let c = &ctx.cfg.confidence;
    let cfg = GmmConfig {
        k: a.k.or(c.k).unwrap_or(classes.len()),
        max_iters: a.max_iters.unwrap_or(c.max_iters),
        tol: c.tol,
        cov_regularization: c.cov_regularization,
        seed: ctx.seed,
    };
    let mut model = ConfidenceModel::fit(&train_emb, &classes, &cfg)?;
    let fit = &model.gmm.fit;
    println!(
        "EM: {} iterations, converged {}, log-likelihood {:.4}, reseeds {}",
        fit.iterations, fit.converged, fit.final_loglik, fit.reseeds.len()
    );
    if let Some(p) = a.percentile {
        let t = calibrate_threshold(&mut model.gmm, p)?;
        println!("threshold at percentile {p}: {t:.6}");
    }
    let out = ctx.out(&a.out, "gmm.json")?;
    model.save(&out)?;
    println!("-> {}", out.display());
    Ok(())
}

fn calibrate(ctx: &Ctx, a: CalibrateArgs) -> Result<()> {
    let mut model = ConfidenceModel::load(&a.model)?;
    let p = a.percentile.unwrap_or(ctx.cfg.confidence.percentile);
    let t = calibrate_threshold(&mut model.gmm, p)?;
    let out = match &a.out {
        Some(_) => ctx.out(&a.out, "gmm.json")?,
        None => a.model.clone(),
    };
    model.save(&out)?;
    println!("threshold at percentile {p}: {t:.6} -> {}", out.display());
    Ok(())
}

/// Softmax decisions keyed like the embedding pipeline's.
fn softmax_rows(saved: &SavedEncoder, set: &FeatureSet, t: f64) -> Result<Vec<DecisionRow>> {
    let probs = predict_proba(&saved.model, set)?;
    Ok(set
        .samples
        .iter()
        .zip(&probs)
        .map(|(s, p)| {
            let rec = EmbeddingRecord {
                label: s.label.clone(),
                session_id: s.session_id.clone(),
                values: Vec::new(),
            };
            DecisionRow::new(&rec, &classify_softmax(p, t), &saved.class_names)
        })
        .collect())
}

fn classify(ctx: &Ctx, a: ClassifyArgs) -> Result<()> {
    let rows = match a.pipeline {
        PipelineArg::Gmm => {
            let model = ConfidenceModel::load(&a.model)?;
            let emb = read_embeddings(require(&a.embeddings, "embeddings", "gmm")?, None)?;
            if model.gmm.threshold.is_none() {
                warn!("model is not calibrated; nothing will abstain");
            }
            let t = model.gmm.threshold.unwrap_or(f64::NEG_INFINITY);
            let decisions = classify_gmm_batch(&model.gmm, &model.similarities(&emb)?, t)?;
            emb.iter()
                .zip(&decisions)
                .map(|(e, d)| DecisionRow::new(e, d, &model.classes))
                .collect::<Vec<_>>()
        }
        PipelineArg::Softmax => {
            let saved = SavedEncoder::load(&a.model)?;
            let set = FeatureSet::read_csv(require(&a.features, "features", "softmax")?)?;
            softmax_rows(&saved, &set, a.threshold.unwrap_or(ctx.cfg.confidence.softmax_threshold))?
        }
    };
    let out = ctx.out(&a.out, "decisions.csv")?;
    write_decisions(&out, &rows)?;
    let abstained = rows.iter().filter(|r| r.abstained()).count();
    println!("{} decisions ({abstained} abstained) -> {}", rows.len(), out.display());
    Ok(())
}

fn evaluate_cmd(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let rows = read_decisions(&a.decisions)?;
    let classes = match a.classes {
        Some(names) => ClassSet::new(names)?,
        None => ClassSet::infer(
            rows.iter()
                .flat_map(|r| [r.true_label.as_str(), r.predicted.as_str()])
                .filter(|n| *n != ABSTAIN),
        )?,
    };
    let report = evaluate(&outcomes_from_rows(&rows, &classes)?, &classes)?;
    let out = ctx.out(&a.out, "report.json")?;
    report.save_json(&out)?;
    let stem = out.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
    let sibling = |suffix: &str| out.with_file_name(format!("{stem}_{suffix}"));
    report.save_confusion_csv(sibling("confusion.csv"))?;
    report.save_confusion_json(sibling("confusion.json"))?;
    println!(
        "macro F1 {:.4} (abstain as miss {:.4}), accuracy {:.4}, coverage {:.4} overall / {:.4} relevant, {} of {} abstained",
        report.scores.macro_f1,
        report.scores_abstain_as_miss.macro_f1,
        report.scores.accuracy,
        report.overall_coverage,
        report.relevant_coverage,
        report.abstained,
        report.samples
    );
    Ok(())
}

fn sweep_cmd(ctx: &Ctx, a: SweepArgs) -> Result<()> {
    let c = &ctx.cfg.confidence;
    let rows = match a.pipeline {
        PipelineArg::Gmm => {
            let grid = parse_grid(a.grid.as_deref().unwrap_or(&c.percentile_grid))?;
            let model = ConfidenceModel::load(&a.model)?;
            let classes = model.class_set()?;
            let emb = read_embeddings(require(&a.embeddings, "embeddings", "gmm")?, None)?;
            let truth = emb
                .iter()
                .map(|e| classes.require_id(&e.label))
                .collect::<Result<Vec<_>>>()?;
            sweep_gmm(&model, &model.similarities(&emb)?, &truth, &grid)?
        }
        PipelineArg::Softmax => {
            let grid = parse_grid(a.grid.as_deref().unwrap_or(&c.softmax_grid))?;
            let saved = SavedEncoder::load(&a.model)?;
            let classes = ClassSet::new(saved.class_names.iter().cloned())?;
            let set = FeatureSet::read_csv(require(&a.features, "features", "softmax")?)?;
            let truth = set
                .samples
                .iter()
                .map(|s| classes.require_id(&s.label))
                .collect::<Result<Vec<_>>>()?;
            sweep_softmax(&predict_proba(&saved.model, &set)?, &truth, &classes, &grid)?
        }
    };
    let out = ctx.out(&a.out, "sweep.csv")?;
    write_sweep_csv(&out, &rows)?;
    print_sweep(&rows);
    println!("-> {}", out.display());
    Ok(())
}

fn print_sweep(rows: &[SweepRow]) {
    println!("{:>10} {:>9} {:>9} {:>9}", "threshold", "macro_f1", "coverage", "relevant");
    for r in rows {
        println!(
            "{:>10.4} {:>9.4} {:>9.4} {:>9.4}",
            r.threshold, r.macro_f1, r.overall_coverage, r.relevant_coverage
        );
    }
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    match a.kind {
        SynthKind::Flows => {
            let cfg = match &a.profile {
                Some(p) => SynthConfig::load(p)?,
                None => SynthConfig::default(),
            };
            let corpus = generate_flows(&cfg, ctx.seed)?;
            let out = ctx.out(&a.out, "flows.jsonl")?;
            write_flows(&out, &corpus.flows)?;
            let split_path = out.with_file_name("split.json");
            write_json(&split_path, &serde_json::to_value(&corpus.split)?)?;
            let (train_flows, test_flows) = split_sessions(corpus.flows.clone(), &corpus.split)?;
            write_flows(out.with_file_name("train_flows.jsonl"), &train_flows)?;
            write_flows(out.with_file_name("test_flows.jsonl"), &test_flows)?;
            println!(
                "{} flows ({} train, {} test) -> {} (+ split.json, train_flows.jsonl, test_flows.jsonl)",
                corpus.flows.len(),
                train_flows.len(),
                test_flows.len(),
                out.display()
            );
        }
        SynthKind::Embeddings => {
            let spec = match &a.profile {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str::<EmbeddingSpec>(&text)?
                }
                None => {
                    if a.classes < 2 || a.classes > DEFAULT_CLASSES.len() || a.dim < a.classes {
                        return Err(Error::Config(format!(
                            "--classes must be in 2..={} and at most --dim",
                            DEFAULT_CLASSES.len()
                        )));
                    }
                    let mut labels: Vec<String> =
                        DEFAULT_CLASSES[..a.classes - 1].iter().map(|s| s.to_string()).collect();
                    labels.push(BACKGROUND.into());
                    EmbeddingSpec {
                        class_means: orthonormal_means(a.classes, a.dim),
                        labels,
                        sigma: a.sigma,
                        n_per_class: a.n_per_class,
                        outlier_fraction: a.outlier_fraction,
                    }
                }
            };
            let records = generate_embeddings(&spec, ctx.seed)?;
            let out = ctx.out(&a.out, "embeddings.csv")?;
            write_embeddings(&out, &records)?;
            println!("{} embeddings -> {}", records.len(), out.display());
        }
    }
    Ok(())
}

fn run(ctx: Ctx, from_file: bool) -> Result<()> {
    if !from_file {
        info!("no --config given; running the built-in synthetic experiment");
    }
    let mut cfg = ctx.cfg;
    cfg.seed = ctx.seed;
    let dir = ctx.out_dir.unwrap_or_else(|| PathBuf::from("run"));
    let s = run_pipeline(&cfg, &dir)?;
    let line = |name: &str, r: &flowconf::metrics::EvaluationReport| {
        println!(
            "{name:<8} macro F1 {:.4}  accuracy {:.4}  coverage {:.4} / relevant {:.4}",
            r.scores.macro_f1, r.scores.accuracy, r.overall_coverage, r.relevant_coverage
        )
    };
    println!("classes: {}", s.classes.join(", "));
    line("gmm", &s.gmm_report);
    line("softmax", &s.softmax_report);
    if !s.cached_stages.is_empty() {
        println!("reused: {}", s.cached_stages.join(", "));
    }
    let stages: BTreeMap<&str, usize> =
        s.manifest.stages.iter().map(|st| (st.name.as_str(), st.outputs.len())).collect();
    info!("stages: {stages:?}");
    println!("-> {}", s.out_dir.display());
    Ok(())
}
