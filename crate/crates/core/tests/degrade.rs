use mvenhance::datasetio::{make_toy_scene, ToySceneKind};
use mvenhance::degrade::{
    degrade_batch, replay, DegradationConfig, DegradationRecord, DegradeError, MultiViewBatch,
};

fn batch() -> MultiViewBatch {
    make_toy_scene(ToySceneKind::CheckerCube, 3).1
}

#[test]
fn same_seed_same_output_different_seed_differs() {
    let hq = batch();
    let cfg = DegradationConfig::default();
    let (a, ra) = degrade_batch(&hq, &cfg, 42).unwrap();
    let (b, rb) = degrade_batch(&hq, &cfg, 42).unwrap();
    assert_eq!(a.images, b.images);
    assert_eq!(ra, rb);
    let differs = (0..20).any(|s| degrade_batch(&hq, &cfg, s).unwrap().0.images != a.images);
    assert!(differs);
}

#[test]
fn replay_from_jsonl_is_exact() {
    let hq = batch();
    for seed in 0..6 {
        let (lq, rec) = degrade_batch(&hq, &DegradationConfig::default(), seed).unwrap();
        let parsed = DegradationRecord::from_jsonl(seed, &rec.to_jsonl()).unwrap();
        assert_eq!(parsed, rec);
        let again = replay(&hq, &parsed).unwrap();
        assert_eq!(again.images, lq.images);
        assert_eq!(again.poses, lq.poses);
    }
}

#[test]
fn disabled_config_is_identity() {
    let hq = batch();
    let (lq, rec) = degrade_batch(&hq, &DegradationConfig::disabled(), 9).unwrap();
    assert!(rec.no_aug());
    assert_eq!(lq.images, hq.images);
}

#[test]
fn background_far_from_the_object_stays_white() {
    let hq = batch();
    let cfg = DegradationConfig {
        camera_jitter_prob: 0.0,
        ..DegradationConfig::default()
    };
    for seed in 0..10 {
        let (lq, _) = degrade_batch(&hq, &cfg, seed).unwrap();
        for (img, mask) in lq.images.iter().zip(&hq.masks) {
            let region = mask.dilate(cfg.mask_dilation_px);
            for y in 0..img.height {
                for x in 0..img.width {
                    if !region.get(x, y) {
                        assert_eq!(img.pixel(x, y), [1.0; 3], "seed {seed} ({x},{y})");
                    }
                }
            }
        }
    }
}

#[test]
fn malformed_record_is_reported() {
    let hq = batch();
    assert!(matches!(
        DegradationRecord::from_jsonl(0, "{not json"),
        Err(DegradeError::MalformedRecord(_))
    ));
    let empty = DegradationRecord { seed: 0, entries: vec![] };
    assert!(matches!(replay(&hq, &empty), Err(DegradeError::MalformedRecord(_))));
}

#[test]
fn invalid_probability_is_rejected() {
    let cfg = DegradationConfig {
        noise_prob: 1.5,
        ..DegradationConfig::default()
    };
    assert!(matches!(degrade_batch(&batch(), &cfg, 0), Err(DegradeError::InvalidConfig(_))));
}
