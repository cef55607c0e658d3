use std::path::PathBuf;

use graphfill::client::MockBackend;
use graphfill::dataset::{load_bundle, DatasetError};
use graphfill::harness::{run_online, MaskPlan, MaskPolicy, MessengerConfig, MessengerPredictor};
use graphfill::messenger::PromptTemplate;
use std::sync::Arc;

fn toy_manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy/manifest.toml")
}

#[test]
fn toy_bundle_loads() {
    let b = load_bundle(&toy_manifest()).unwrap();
    assert_eq!(b.graph.num_nodes(), 3);
    assert_eq!(b.series.len(), 4);
    assert_eq!(b.units, "m/s");
    assert_eq!(b.series.get(1, 1), 3.45);
}

#[test]
fn missing_manifest_is_io_error() {
    let err = load_bundle(&toy_manifest().with_file_name("absent.toml")).unwrap_err();
    assert!(matches!(err, DatasetError::Io { .. }));
}

#[test]
fn mock_run_on_toy_reports_five_runs() {
    let b = load_bundle(&toy_manifest()).unwrap();
    let predictor = MessengerPredictor::new(
        MessengerConfig {
            units: b.units.clone(),
            ..Default::default()
        },
        PromptTemplate::default(),
        Arc::new(MockBackend::new(0.5)),
    );
    let plan = MaskPlan::Generated(MaskPolicy {
        missing_fraction: 0.3,
        seed: 7,
        fixed: false,
    });
    let result = run_online(&predictor, &b.graph, &b.series, &plan, 5).unwrap();
    assert_eq!(result.per_run_mse().len(), 5);
    assert!(result.runs.iter().all(|r| r.mask.matches('0').count() == 1));
}
