use std::path::PathBuf;

use lsbnav::dataset::{self, ClearanceSample, NormStats};
use lsbnav::mapfile::{load_map, load_shape};
use lsbnav::net::{self, ClearanceModel, MlpConfig, MlpModel, NormalizedData, TrainConfig};
use proptest::prelude::*;

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)
}

fn stats() -> NormStats {
    NormStats { mu_x: [2.5, 2.4, 0.01], sigma_x: [1.5, 1.4, 1.8], mu_log: -0.7, sigma_log: 0.6, epsilon: 0.25 }
}

proptest! {
    #[test]
    fn normalization_inverts(d in -0.2..5.0f64) {
        let s = stats();
        let nd = s.normalize_target(d).unwrap();
        prop_assert!((s.denormalize(nd) - d).abs() <= 1e-9);
    }

    #[test]
    fn stats_text_is_exact(mu in prop::array::uniform3(-10.0..10.0f64), sd in prop::array::uniform3(0.01..10.0f64),
                           ml in -3.0..3.0f64, sl in 0.01..3.0f64, eps in 0.0..1.0f64) {
        let s = NormStats { mu_x: mu, sigma_x: sd, mu_log: ml, sigma_log: sl, epsilon: eps };
        prop_assert_eq!(NormStats::from_text(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn sample_files_are_bit_exact(raw in prop::collection::vec(prop::array::uniform4(-1e3..1e3f32), 0..50)) {
        // Samples are stored as f32; generated ones are already f32-exact.
        let samples: Vec<ClearanceSample> = raw
            .iter()
            .map(|v| ClearanceSample { x: v[0].into(), y: v[1].into(), theta: v[2].into(), d: v[3].into() })
            .collect();
        let mut buf = Vec::new();
        dataset::write_samples(&mut buf, &samples).unwrap();
        let back = dataset::read_samples(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            for (u, v) in a.input().iter().chain([&a.d]).zip(b.input().iter().chain([&b.d])) {
                prop_assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }
}

#[test]
fn generated_dataset_is_reproducible_and_audits() {
    let obs = load_map(asset("maze.map")).unwrap();
    let shape = load_shape(asset("rectangle.shape")).unwrap();
    let a = dataset::generate(&shape, &obs, 40, 8, 5).unwrap();
    let b = dataset::generate(&shape, &obs, 40, 8, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 320);
    assert_eq!(dataset::audit(&a, &shape, &obs, 1.0, 0).unwrap(), 320);
    assert!(a.iter().any(|s| s.d < 0.0), "some locations fall inside walls");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.bin");
    dataset::save(&path, &a).unwrap();
    let first = std::fs::read(&path).unwrap();
    dataset::save(&path, &b).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert_eq!(dataset::load(&path).unwrap(), a);

    let (train, test) = dataset::split(&a, 0.75, 1).unwrap();
    assert_eq!((train.len(), test.len()), (240, 80));
    let mut all: Vec<_> = train.iter().chain(&test).map(|s| (s.x.to_bits(), s.y.to_bits(), s.theta.to_bits())).collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 320);
}

#[test]
fn checkpoint_file_is_bit_exact_after_training() {
    let obs = load_map(asset("maze.map")).unwrap();
    let shape = load_shape(asset("cross.shape")).unwrap();
    let samples = dataset::generate(&shape, &obs, 30, 6, 2).unwrap();
    let s = dataset::fit_norm_stats(&samples).unwrap();
    let data = NormalizedData::new(&samples, &s).unwrap();
    let init = MlpModel::init(MlpConfig { width: 12, n_blocks: 3, skip_stride: 2, seed: 9 }).unwrap();
    let cfg = TrainConfig { max_epochs: 3, batch_size: 32, ..Default::default() };
    let out = net::train(&init, &data, &data, &cfg).unwrap();
    let model = ClearanceModel { model: out.model, stats: s };

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    net::save_checkpoint(&path, &model).unwrap();
    let back = net::load_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    let bits = |m: &ClearanceModel| m.model.params_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&model));
    for smp in samples.iter().step_by(17) {
        let (p, q) = (model.predict(smp.x, smp.y, smp.theta), back.predict(smp.x, smp.y, smp.theta));
        assert_eq!(p.to_bits(), q.to_bits());
    }
    let again = dir.path().join("m2.ckpt");
    net::save_checkpoint(&again, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}
