//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs no bundler. The same functions are callable natively (`*_json`
//! variants return `serde_json::Value`) which is what the tests use.

use flowconf::classes::BACKGROUND;
use flowconf::confidence::{calibrate_threshold, ConfidenceModel, GmmConfig};
use flowconf::features::{augment_translate, extract_timeseries, AugmentationSpec, ShiftDirection};
use flowconf::metrics::percentile_grid;
use flowconf::pipeline::sweep_gmm;
use flowconf::synth::{generate_embeddings, generate_flows, EmbeddingSpec, SynthConfig, OUTLIER_SESSION};
use flowconf::{ClassSet, Error, Result};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const BLOB_LABELS: [&str; 3] = ["Video", "Chat", BACKGROUND];

fn blob_spec(sigma: f64, n_per_class: usize, outlier_fraction: f64) -> EmbeddingSpec {
    EmbeddingSpec {
        class_means: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        labels: BLOB_LABELS.iter().map(|s| s.to_string()).collect(),
        sigma,
        n_per_class,
        outlier_fraction,
    }
}

// Onto the plane orthogonal to (1, 1, 1): class means land on a triangle,
// outliers from the opposite octant near its center.
fn project(v: &[f64]) -> [f64; 2] {
    [(v[0] - v[1]) / 2f64.sqrt(), (2.0 * v[2] - v[0] - v[1]) / 6f64.sqrt()]
}

struct Fitted {
    model: ConfidenceModel,
    classes: ClassSet,
    test: Vec<flowconf::encoder::EmbeddingRecord>,
}

fn fit_blobs(sigma: f64, n_per_class: usize, outlier_fraction: f64, seed: u64) -> Result<Fitted> {
    if n_per_class < 5 || n_per_class > 2000 {
        return Err(Error::Config("samples per class must be in 5..=2000".into()));
    }
    let classes = ClassSet::new(BLOB_LABELS.iter().map(|s| s.to_string()))?;
    let train = generate_embeddings(&blob_spec(sigma, n_per_class, 0.0), seed)?;
    let test = generate_embeddings(&blob_spec(sigma, n_per_class, outlier_fraction), seed.wrapping_add(1))?;
    let cfg = GmmConfig { k: classes.len(), seed, ..GmmConfig::default() };
    let model = ConfidenceModel::fit(&train, &classes, &cfg)?;
    Ok(Fitted { model, classes, test })
}

/// Fits the confidence model on clean blobs and classifies a test draw
/// that contains outliers, abstaining below the `percentile`-th training
/// log-likelihood.
pub fn explore_gmm_json(
    sigma: f64,
    n_per_class: usize,
    outlier_fraction: f64,
    percentile: f64,
    seed: u64,
) -> Result<Value> {
    let Fitted { mut model, classes, test } = fit_blobs(sigma, n_per_class, outlier_fraction, seed)?;
    let threshold = calibrate_threshold(&mut model.gmm, percentile)?;
    let decisions = model.classify(&test)?;
    let mut points = Vec::with_capacity(test.len());
    let (mut abstained, mut outliers, mut outliers_abstained, mut correct) = (0, 0, 0, 0);
    for (r, d) in test.iter().zip(&decisions) {
        let outlier = r.session_id == OUTLIER_SESSION;
        let truth = classes.require_id(&r.label)?;
        outliers += outlier as usize;
        match d.predicted {
            None => {
                abstained += 1;
                outliers_abstained += outlier as usize;
            }
            Some(p) => correct += (p == truth) as usize,
        }
        let [x, y] = project(&r.values);
        points.push(json!({
            "x": x,
            "y": y,
            "label": r.label,
            "outlier": outlier,
            "predicted": d.predicted.map(|p| classes.names()[p].clone()),
            "loglik": d.score,
        }));
    }
    let n = test.len() as f64;
    Ok(json!({
        "threshold": threshold,
        "points": points,
        "samples": test.len(),
        "abstained": abstained,
        "outliers": outliers,
        "outliers_abstained": outliers_abstained,
        "coverage": correct as f64 / n,
        "train_logliks": model.gmm.train_logliks,
    }))
}

/// Macro F1 and coverage at every percentile of the standard grid.
pub fn sweep_json(sigma: f64, n_per_class: usize, outlier_fraction: f64, seed: u64) -> Result<Value> {
    let Fitted { model, classes, test } = fit_blobs(sigma, n_per_class, outlier_fraction, seed)?;
    let sims = model.similarities(&test)?;
    let truth = test.iter().map(|r| classes.require_id(&r.label)).collect::<Result<Vec<_>>>()?;
    let rows = sweep_gmm(&model, &sims, &truth, &percentile_grid())?;
    serde_json::to_value(rows).map_err(|e| Error::Data(e.to_string()))
}

/// Application classes of the synthetic flow generator.
pub fn flow_classes() -> Vec<String> {
    SynthConfig::default().classes.into_iter().map(|c| c.name).collect()
}

/// Generates one flow of application class `class` and translates a
/// subsequence of its time series.
pub fn augment_json(class: usize, shift: usize, left: bool, start: usize, seed: u64) -> Result<Value> {
    let mut cfg = SynthConfig::default();
    if class >= cfg.classes.len() {
        return Err(Error::Config(format!("class index {class} out of range")));
    }
    cfg.classes = vec![cfg.classes.swap_remove(class)];
    cfg.sessions_per_class = 1;
    cfg.flows_per_session = 1;
    cfg.test_sessions_per_class = 0;
    cfg.background_share = 0.0;
    let corpus = generate_flows(&cfg, seed)?;
    let flow = &corpus.flows[0];
    let spec = AugmentationSpec {
        shift,
        direction: if left { ShiftDirection::Left } else { ShiftDirection::Right },
        start,
    };
    let original = extract_timeseries(flow);
    let augmented = augment_translate(&original, Some(flow), &spec)?;
    Ok(json!({
        "class": cfg.classes[0].name,
        "packets": flow.len(),
        "original": original.rows().to_vec(),
        "augmented": augmented.rows().to_vec(),
    }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn explore_gmm(
    sigma: f64,
    n_per_class: usize,
    outlier_fraction: f64,
    percentile: f64,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    to_js(explore_gmm_json(sigma, n_per_class, outlier_fraction, percentile, seed.into()))
}

#[wasm_bindgen]
pub fn sweep(sigma: f64, n_per_class: usize, outlier_fraction: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(sweep_json(sigma, n_per_class, outlier_fraction, seed.into()))
}

#[wasm_bindgen]
pub fn augment(class: usize, shift: usize, left: bool, start: usize, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(augment_json(class, shift, left, start, seed.into()))
}

#[wasm_bindgen]
pub fn classes() -> String {
    Value::from(flow_classes()).to_string()
}
