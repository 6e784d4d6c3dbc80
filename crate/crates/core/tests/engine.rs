//! The engine end to end, without the HTTP layer: raw data goes in through a
//! chunked upload and a statistics report comes out.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reconlab_core::orchestrator::{JobState, Orchestrator, WorkerPool};
use reconlab_core::rawdata::{read_image_bundle, write_kspace};
use reconlab_core::recon::{piecewise_phantom, simulate_kspace, ParamValues};
use reconlab_core::stats::{group_and_report, Outcome, ViewFilter};
use reconlab_core::study::{create_study, CaseInput, ScoreEntry, StudySpec};
use reconlab_core::transfer::UploadService;
use reconlab_core::vault::test_keys;
use reconlab_core::{md5_hex, BackendRegistry, Score, Timestamp, UploadManifest, Vault, View};
use serde_json::json;

fn params(pairs: &[(&str, serde_json::Value)]) -> ParamValues {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[test]
fn upload_reconstruct_read_and_report() {
    let vault = Arc::new(Vault::in_memory(test_keys()));
    let size = 32;
    let images: Vec<Vec<f64>> = (0..3).map(|s| piecewise_phantom(size, size, s)).collect();
    let raw = write_kspace(
        &simulate_kspace(&images, size, size, 2)
            .unwrap()
            .with_meta("view", "axial")
            .unwrap(),
    );

    let uploads = UploadService::new(Arc::clone(&vault));
    let chunk = 8 * 1024;
    let session = uploads
        .begin_upload(UploadManifest::for_bytes(&raw, chunk as u64), "dev")
        .unwrap();
    for (i, part) in raw.chunks(chunk).enumerate().rev() {
        uploads.put_chunk(session.id(), i as u64, part.to_vec()).unwrap();
    }
    let dataset = uploads.complete_upload(session.id()).unwrap().content_id;
    assert_eq!(dataset, md5_hex(&raw));

    let orc = Arc::new(Orchestrator::new(
        Arc::clone(&vault),
        Arc::new(BackendRegistry::default()),
        WorkerPool::new(2, &[2]).unwrap(),
    ));
    let cluster = orc.start();
    let mask = [("rate", json!(0.4)), ("mask_seed", json!(5))];
    let zf = orc
        .submit(&dataset, "zero_fill", &params(&mask), Some("dev"))
        .unwrap();
    let mut cs_params = mask.to_vec();
    cs_params.push(("iterations", json!(40)));
    let cs = orc
        .submit(&dataset, "ista", &params(&cs_params), Some("dev"))
        .unwrap();
    let mut series = BTreeMap::new();
    for (method, job) in [("zf", &zf), ("cs", &cs)] {
        let status = orc.wait(job, Duration::from_secs(60)).unwrap();
        assert_eq!(status.state, JobState::Done, "{status:?}");
        let bundle = read_image_bundle(&vault.get(status.result.as_deref().unwrap()).unwrap()).unwrap();
        assert_eq!(
            (bundle.width, bundle.height, bundle.slices.len()),
            (size, size, 3)
        );
        assert_eq!(bundle.view, View::Axial);
        series.insert(method.to_string(), (status.result.unwrap(), bundle));
    }
    cluster.stop();

    let methods: Vec<String> = series.keys().cloned().collect();
    let cases: Vec<CaseInput> = (0..3)
        .map(|slice| CaseInput {
            case_id: format!("axial-{slice:03}"),
            slice_index: slice,
            view: View::Axial,
            width: size,
            height: size,
            images: series
                .iter()
                .map(|(m, (id, _))| (m.clone(), format!("{id}/{slice}")))
                .collect(),
            reference: None,
        })
        .collect();
    let readers = vec!["r1".to_string(), "r2".to_string()];
    let mut study = create_study(
        "s1",
        StudySpec {
            title: "engine".into(),
            methods: methods.clone(),
            cases: cases.clone(),
            metrics: vec!["overall".into()],
            readers: readers.clone(),
            seed: 9,
        },
    )
    .unwrap();

    // readers prefer the iterative method by a full point
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for reader in &readers {
        for case in &cases {
            let blinded = study.case(&case.case_id).unwrap().clone();
            let entries = (0..methods.len())
                .map(|pos| {
                    let base = if blinded.method_at(pos).unwrap() == "cs" {
                        35
                    } else {
                        25
                    };
                    ScoreEntry {
                        display_position: pos,
                        metric: "overall".into(),
                        score: Score::from_tenths(base + rng.random_range(0..5)).unwrap(),
                    }
                })
                .collect();
            study
                .submit_scores(reader, &case.case_id, entries, Timestamp(0))
                .unwrap();
        }
    }
    study.close();
    let rows = study.unblind();
    assert_eq!(rows.len(), 2 * 3 * 2);

    let report = group_and_report(&rows, ViewFilter::All).unwrap();
    let comparison = report.comparison("overall").unwrap();
    assert_eq!(comparison.pairs, 6);
    let Outcome::Ok(t) = &comparison.ttest else {
        panic!("{comparison:?}")
    };
    assert!(t.t.abs() > 3.0, "{t:?}");
    let cs_box = &report.distribution("cs", "overall").unwrap().box_summary;
    let zf_box = &report.distribution("zf", "overall").unwrap().box_summary;
    assert!(cs_box.median > zf_box.median);

    let sagittal = group_and_report(&rows, ViewFilter::Sagittal);
    assert!(sagittal.is_err());
}

#[test]
fn expired_dataset_cannot_be_reconstructed() {
    let clock = Arc::new(reconlab_core::ManualClock::new(Timestamp(0)));
    let vault = Arc::new(Vault::in_memory(test_keys()).with_clock(clock.clone()));
    let raw = write_kspace(&simulate_kspace(&[piecewise_phantom(16, 16, 0)], 16, 16, 1).unwrap());
    let id = vault.put(&raw).unwrap();
    clock.advance(Duration::from_secs(72 * 3600));
    vault.purge_expired(Timestamp(72 * 3600)).unwrap();

    let orc = Orchestrator::new(
        vault,
        Arc::new(BackendRegistry::default()),
        WorkerPool::uniform(1),
    );
    let err = orc
        .submit(&id, "zero_fill", &ParamValues::new(), None)
        .unwrap_err();
    assert_eq!(err.code(), "unknown_dataset");
}
