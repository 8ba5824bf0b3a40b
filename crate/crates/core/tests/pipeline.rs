use crest_core::crest::{run_crest, CrestConfig};
use crest_core::data::{load_csv_dataset, write_csv_dataset, SynthParams};
use crest_core::model::Model;
use crest_core::ssl::{train_generation, AlignmentMode, SslConfig};
use crest_core::{build_longtail_profile, split_labeled_unlabeled, ClassProfile, Execution, SplitPair};
use tempfile::TempDir;

fn params() -> SynthParams {
    SynthParams {
        num_classes: 4,
        gamma: 10.0,
        n1: 80,
        dim: 6,
        separation: 4.0,
        noise_sigma: 1.0,
        seed: 21,
    }
}

fn split() -> SplitPair {
    split_labeled_unlabeled(&params().generate().unwrap(), 0.2, 5).unwrap()
}

fn small_ssl(exec: Execution) -> SslConfig {
    SslConfig {
        steps: 40,
        hidden: 12,
        labeled_batch: 16,
        unlabeled_batch: 48,
        alignment: AlignmentMode::Scheduled,
        execution: exec,
        ..SslConfig::default()
    }
}

#[test]
fn training_is_identical_across_execution_modes() {
    let s = split();
    let prior = s.labeled.profile().unwrap().frequencies();
    let run = |exec| train_generation(&s.labeled, &s.unlabeled, &small_ssl(exec), &prior, 0.7, 9).unwrap();
    let (a, b) = (run(Execution::Sequential), run(Execution::Parallel));
    assert_eq!(a.ema.model().params(), b.ema.model().params());
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.marginal.probs(), b.marginal.probs());
}

#[test]
fn crest_reports_are_identical_across_execution_modes() {
    let s = split();
    let test = params()
        .mixture()
        .unwrap()
        .sample(ClassProfile::uniform(4, 15).unwrap().counts(), 77)
        .unwrap();
    let run = |exec| {
        let cfg = CrestConfig {
            last_generation: 2,
            seed: 3,
            ssl: small_ssl(exec),
            ..CrestConfig::default()
        };
        run_crest(&s, &test, &cfg).unwrap()
    };
    let (a, b) = (run(Execution::Sequential), run(Execution::Parallel));
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.len(), 3);
    assert_eq!(a[0].temperature, 1.0);
    assert_eq!(a[2].temperature, 0.5);
    // Selected pseudo-labels are appended to the original labeled set.
    assert_eq!(a[1].labeled_size, s.labeled.len() + a[0].selected_total);
    assert_eq!(a[2].labeled_size, s.labeled.len() + a[1].selected_total);
}

#[test]
fn split_is_stratified() {
    let full = params().generate().unwrap();
    assert_eq!(
        full.class_counts(),
        build_longtail_profile(4, 10.0, 80).unwrap().counts()
    );
    let s = split_labeled_unlabeled(&full, 0.2, 5).unwrap();
    let labeled = s.labeled.class_counts();
    let unlabeled = s.unlabeled.class_counts();
    for (l, (a, b)) in labeled.iter().zip(&unlabeled).enumerate() {
        assert_eq!(a + b, full.class_counts()[l]);
        assert!(*a >= 1);
    }
}

#[test]
fn csv_and_checkpoint_round_trip() {
    let dir = TempDir::new().unwrap();
    let ds = params().generate().unwrap();
    let path = dir.path().join("train.csv");
    write_csv_dataset(&ds, &path).unwrap();
    let loaded = load_csv_dataset(&path).unwrap();
    assert_eq!(loaded.dataset, ds);

    let s = split();
    let prior = s.labeled.profile().unwrap().frequencies();
    let out = train_generation(
        &s.labeled,
        &s.unlabeled,
        &small_ssl(Execution::Parallel),
        &prior,
        1.0,
        1,
    )
    .unwrap();
    let model = out.ema.into_model();
    let ckpt = dir.path().join("model.json");
    model.save(&ckpt).unwrap();
    let back = Model::load(&ckpt).unwrap();
    assert_eq!(back.params(), model.params());
    for x in s.unlabeled.rows().take(20) {
        assert_eq!(back.predict_proba(x).unwrap(), model.predict_proba(x).unwrap());
    }
}
