use flowconf_wasm::{augment_json, explore_gmm_json, flow_classes, sweep_json};

#[test]
fn explorer_flags_outliers_and_respects_the_percentile() {
    let v = explore_gmm_json(0.05, 200, 0.2, 5.0, 3).unwrap();
    assert_eq!(v["samples"], 600);
    assert_eq!(v["outliers"], 40);
    let flagged = v["outliers_abstained"].as_u64().unwrap();
    assert!(flagged >= 36, "{flagged} of 40 outliers abstained");
    // at p=5 exactly floor(5 * 600 / 100) training samples sit below the threshold
    let t = v["threshold"].as_f64().unwrap();
    let below = v["train_logliks"].as_array().unwrap().iter().filter(|x| x.as_f64().unwrap() < t).count();
    assert_eq!(below, 30);
    let p0 = explore_gmm_json(0.05, 200, 0.2, 0.0, 3).unwrap();
    assert!(p0["abstained"].as_u64() <= v["abstained"].as_u64());
}

#[test]
fn sweep_covers_the_percentile_grid() {
    let rows = sweep_json(0.05, 100, 0.1, 1).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 21);
    let cov: Vec<f64> = rows.iter().map(|r| r["overall_coverage"].as_f64().unwrap()).collect();
    assert!(cov.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{cov:?}");
}

#[test]
fn augmentation_keeps_the_prefix_and_shifts_the_rest() {
    let v = augment_json(2, 3, false, 10, 0).unwrap();
    let (o, a) = (v["original"].as_array().unwrap(), v["augmented"].as_array().unwrap());
    assert_eq!(o.len(), 40);
    assert_eq!(o[..10], a[..10]);
    assert_eq!(a[13], o[10]);
    assert_eq!(a[39], o[36]);
    assert_eq!(v["class"], flow_classes()[2]);
    assert!(augment_json(99, 3, true, 0, 0).is_err());
    assert!(augment_json(0, 0, true, 0, 0).is_err());
}
