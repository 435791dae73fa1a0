//! Bodies of the fuzz targets. Each one takes raw bytes, must never panic,
//! and checks that anything a parser accepts survives a write/read cycle.

use pscman::dataset::{Dataset, FeatureVector, FEATURE_COUNT};
use pscman::experiment::ExperimentConfig;
use pscman::forest::SuiteModel;
use pscman::nodemem::NodeMemImage;
use pscman::psc::IpcTable;
use pscman::sim::HierarchyConfig;
use pscman::{sweep, trace};

pub fn trace_binary(data: &[u8]) {
    if let Ok(t) = trace::parse_binary(data) {
        assert_eq!(t.to_binary(), data);
        assert_eq!(trace::parse_csv(&t.to_csv()).unwrap(), t);
    }
}

pub fn trace_csv(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = trace::parse_csv(text) {
        assert_eq!(trace::parse_binary(&t.to_binary()).unwrap(), t);
        assert_eq!(trace::parse_csv(&t.to_csv()).unwrap(), t);
    }
}

/// First `2 * FEATURE_COUNT` bytes are the feature vector, the rest the image.
pub fn pmem_image(data: &[u8]) {
    let split = (2 * FEATURE_COUNT).min(data.len());
    let (head, image) = data.split_at(split);
    let mut features = [0u16; FEATURE_COUNT];
    for (f, c) in features.iter_mut().zip(head.chunks_exact(2)) {
        *f = u16::from_le_bytes([c[0], c[1]]);
    }
    let features = FeatureVector(features);
    let Ok(img) = NodeMemImage::deserialize(image) else { return };
    assert_eq!(img.serialize(), image);
    let _ = img.dump();
    let _ = img.size_report();
    for psc in 0..img.n_psc as usize {
        if let Ok(t) = img.traverse(psc, &features) {
            assert!(t.comparisons as usize <= img.entries.len() * img.trees_per_forest as usize + 1);
        }
    }
    let _ = img.select_best_psc(&features);
}

pub fn ipc_table_csv(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = IpcTable::from_csv(text) {
        let csv = t.to_csv();
        assert_eq!(IpcTable::from_csv(&csv).unwrap().to_csv(), csv);
    }
}

pub fn dataset_csv(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = Dataset::from_csv(text) {
        let csv = d.to_csv();
        assert_eq!(Dataset::from_csv(&csv).unwrap().to_csv(), csv);
    }
}

pub fn sweep_csv(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(runs) = sweep::from_csv(text) {
        let csv = sweep::to_csv(&runs);
        assert_eq!(sweep::to_csv(&sweep::from_csv(&csv).unwrap()), csv);
    }
}

pub fn suite_json(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = SuiteModel::from_json(text) {
        let json = s.to_json();
        assert_eq!(SuiteModel::from_json(&json).unwrap().to_json(), json);
    }
}

pub fn experiment_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = ExperimentConfig::from_toml_str(text) {
        let _ = c.validate();
        let _ = c.swept_pscs();
    }
    let _ = HierarchyConfig::from_toml_str(text);
}
