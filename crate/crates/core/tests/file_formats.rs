use dexfit_core::biomech::RomTable;
use dexfit_core::body_model::{generate, ProceduralConfig, SkeletonTemplate};
use dexfit_core::eval::{default_camera, load_poses, synth_sequence, write_json, CameraFile, KeypointsFile, PosesFile, SynthConfig};
use dexfit_core::fitting::{fit_sequence, CollisionProxies, FitProblem, FitResult, FitWeights, Priors};
use dexfit_core::priors::{PriorConfig, PriorKind, PriorModel};

fn template() -> SkeletonTemplate {
    generate(&ProceduralConfig::default()).unwrap()
}

#[test]
fn template_json_round_trip() {
    let tpl = template();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tpl.json");
    tpl.save(&path).unwrap();
    assert_eq!(SkeletonTemplate::load(&path).unwrap(), tpl);
}

#[test]
fn prior_save_load_preserves_decoding() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [PriorKind::Body, PriorKind::Hand] {
        let model = PriorModel::init(&PriorConfig {
            hidden: 16,
            ..PriorConfig::new(kind)
        })
        .unwrap();
        let path = dir.path().join(format!("{kind}.json"));
        model.save(&path).unwrap();
        let loaded = PriorModel::load(&path).unwrap();
        assert_eq!(loaded.kind(), kind);
        let z: Vec<f64> = (0..model.latent_dim()).map(|i| 0.3 - 0.1 * i as f64).collect();
        assert_eq!(model.decode(&z).unwrap().axis_angles, loaded.decode(&z).unwrap().axis_angles);
    }
}

#[test]
fn synthetic_files_round_trip_and_fit_result_loads_as_poses() {
    let tpl = template();
    let rom = RomTable::default_table();
    let camera = default_camera();
    let config = SynthConfig {
        frames: 2,
        ..SynthConfig::default()
    };
    let seq = synth_sequence(&tpl, &camera, &rom, &config, None, 21).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    write_json(&p("keypoints.json"), &KeypointsFile::new(seq.frames.clone())).unwrap();
    write_json(&p("gt.json"), &PosesFile::new(seq.gt.clone())).unwrap();
    write_json(&p("camera.json"), &CameraFile::new(camera.clone())).unwrap();
    assert_eq!(KeypointsFile::load(&p("keypoints.json")).unwrap().frames.len(), 2);
    assert_eq!(load_poses(&p("gt.json")).unwrap(), seq.gt);
    assert_eq!(CameraFile::load(&p("camera.json")).unwrap().camera, camera);

    let body = PriorModel::init(&PriorConfig {
        hidden: 16,
        ..PriorConfig::new(PriorKind::Body)
    })
    .unwrap();
    let hand = PriorModel::init(&PriorConfig {
        hidden: 16,
        ..PriorConfig::new(PriorKind::Hand)
    })
    .unwrap();
    let proxies = CollisionProxies::default_for(&tpl).unwrap();
    let mut weights = FitWeights::default();
    weights.lbfgs.max_iterations = 5;
    let problem = FitProblem {
        tpl: &tpl,
        camera: &camera,
        priors: Priors { body: &body, hand: &hand },
        rom: &rom,
        proxies: &proxies,
        weights: &weights,
    };
    let result = fit_sequence(problem, &seq.frames, &seq.gt[..1]).unwrap();
    let text = result.to_json().unwrap();
    let back = FitResult::from_json(&text).unwrap();
    assert_eq!(back.poses(), result.poses());

    std::fs::write(p("fit.json"), text).unwrap();
    assert_eq!(load_poses(&p("fit.json")).unwrap(), result.poses());
}

#[test]
fn wrong_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("poses.json");
    std::fs::write(&path, r#"{"schema_version": 99, "poses": []}"#).unwrap();
    assert!(load_poses(&path).is_err());
}
