//! End-to-end training behaviour: determinism, label scaling, plateau
//! schedule, checkpoint round trips, tracking and the capacity probe.

use octpose_core::arch::{ArchitectureSpec, Family, LongRange};
use octpose_core::checkpoint::{load_checkpoint, save_checkpoint, write_checkpoint};
use octpose_core::sim::{generate_dataset, Dataset, GenConfig, MarkerKind, Profile, Split};
use octpose_core::train::{
    benchmark_inference, evaluate, track, train, LabelMode, LabelScaler, TrainedModel,
    TrainingConfig,
};
use once_cell::sync::Lazy;
use tempfile::TempDir;

/// Small shared dataset rendered once: 50 noiseless fast-profile records.
static SMALL_DATA: Lazy<(TempDir, Dataset)> = Lazy::new(|| {
    let dir = tempfile::tempdir().unwrap();
    let mut config = GenConfig::new(77, 50, MarkerKind::InnerStructured, Profile::Fast);
    config.store_variants = false;
    generate_dataset(&config, dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    (dir, ds)
});

fn tiny_arch() -> ArchitectureSpec {
    ArchitectureSpec {
        width_scale: 0.125,
        long_range: LongRange::Residual,
        ..ArchitectureSpec::new(Family::Inception3D)
    }
}

fn quick_config(epochs: usize, seed: u64) -> TrainingConfig {
    let mut c = TrainingConfig::new(LabelMode::Position, epochs, seed);
    c.lr = 1e-3;
    c.batch_size = 15;
    c
}

#[test]
fn label_scaler_examples() {
    let labels = vec![
        vec![-5.0, 0.0, -1.2],
        vec![5.0, 2.0, 1.2],
        vec![0.0, 1.0, 0.0],
    ];
    let s = LabelScaler::fit(&labels).unwrap();
    assert_eq!(s.scale(&[-5.0, 0.0, -1.2]), vec![0.0, 0.0, 0.0]);
    assert_eq!(s.scale(&[5.0, 2.0, 1.2]), vec![1.0, 1.0, 1.0]);
    // midpoint of a symmetric range maps to one half
    assert_eq!(s.scale(&[0.0, 1.0, 0.0]), vec![0.5, 0.5, 0.5]);
    let y = vec![1.23, 0.77, -0.4];
    let back = s.unscale(&s.scale(&y));
    for (a, b) in y.iter().zip(&back) {
        assert!((a - b).abs() < 1e-6);
    }
    // out-of-range values scale outside [0, 1] without error
    assert!(s.scale(&[7.0, 0.0, 0.0])[0] > 1.0);

    // degenerate component rejected
    let flat = vec![vec![1.0], vec![1.0]];
    assert!(LabelScaler::fit(&flat).is_err());
}

#[test]
fn mse_matches_direct_two_stage_formula() {
    // mean over components of per-component batch means equals the op
    use octpose_core::tensor::{Tape, Tensor};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let (b, d) = (7, 4);
    let pred: Vec<f64> = (0..b * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let tgt: Vec<f64> = (0..b * d).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut direct = 0.0;
    for i in 0..d {
        let mut comp = 0.0;
        for j in 0..b {
            comp += (pred[j * d + i] - tgt[j * d + i]).powi(2);
        }
        direct += comp / b as f64;
    }
    direct /= d as f64;

    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::new(&[b, d], pred).unwrap());
    let t = tape.constant(Tensor::new(&[b, d], tgt).unwrap());
    let loss = tape.mse_loss(p, t).unwrap();
    assert!((tape.value(loss).data()[0] - direct).abs() < 1e-12);
}

#[test]
fn training_is_deterministic_and_splits_output_dim() {
    let (_, ds) = &*SMALL_DATA;
    let arch = tiny_arch();
    let config = quick_config(3, 5);
    let a = train(&arch, ds, &config).unwrap();
    let b = train(&arch, ds, &config).unwrap();
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.train_mse, y.train_mse);
        assert_eq!(x.val_mse, y.val_mse);
    }
    // position mode trains a 3-output network
    assert_eq!(a.checkpoint.meta.arch.output_dim, 3);
    assert_eq!(a.checkpoint.meta.scaler.y_min.len(), 3);

    let c6 = TrainingConfig {
        label_mode: LabelMode::Full6D,
        ..quick_config(1, 5)
    };
    let c = train(&arch, ds, &c6).unwrap();
    assert_eq!(c.checkpoint.meta.arch.output_dim, 6);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let (_, ds) = &*SMALL_DATA;
    let arch = tiny_arch();
    let mut config = quick_config(1, 9);
    config.lr = 0.0;
    let out = train(&arch, ds, &config).unwrap();
    let fresh = octpose_core::arch::build_f32(&out.checkpoint.meta.arch, 9).unwrap();
    for (p, q) in out.checkpoint.params.iter().zip(fresh.params()) {
        assert_eq!(p.data, q.data, "{} moved at lr 0", p.name);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (_, ds) = &*SMALL_DATA;
    let arch = tiny_arch();
    let out = train(&arch, ds, &quick_config(2, 13)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &out.checkpoint).unwrap();
    let loaded = load_checkpoint(&path).unwrap();

    let mut original = Vec::new();
    write_checkpoint(&mut original, &out.checkpoint).unwrap();
    let mut rewritten = Vec::new();
    write_checkpoint(&mut rewritten, &loaded).unwrap();
    assert_eq!(original, rewritten);

    // the reloaded model predicts identically
    let mut m1 = TrainedModel::from_checkpoint(&out.checkpoint).unwrap();
    let mut m2 = TrainedModel::from_checkpoint(&loaded).unwrap();
    let (_, vol) = ds.load_representation(0, "volume").unwrap();
    let p1 = m1.predict_raw(std::slice::from_ref(&vol)).unwrap();
    let p2 = m2.predict_raw(std::slice::from_ref(&vol)).unwrap();
    assert_eq!(p1, p2);

    // corrupting the stored digest is caught
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[7] ^= 0xFF;
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn evaluation_runs_on_unscaled_predictions() {
    let (_, ds) = &*SMALL_DATA;
    let arch = tiny_arch();
    let out = train(&arch, ds, &quick_config(2, 17)).unwrap();
    let mut model = TrainedModel::from_checkpoint(&out.checkpoint).unwrap();
    let metrics = evaluate(&mut model, ds, Split::Test).unwrap();
    // position labels span about 10 mm; an untrained-ish model still cannot
    // produce micrometre-scale million errors if unscaling works
    let pos = metrics.position.unwrap();
    assert!(pos.mae.is_finite() && pos.mae < 20_000.0, "MAE {} um", pos.mae);
    assert_eq!(metrics.components.len(), 3);
    assert!(metrics.orientation.is_none());
}

#[test]
fn track_same_record_gives_identity() {
    let (_, ds) = &*SMALL_DATA;
    let arch = tiny_arch();
    let pos = train(&arch, ds, &quick_config(2, 19)).unwrap();
    let ori = train(
        &arch,
        ds,
        &TrainingConfig {
            label_mode: LabelMode::Orientation,
            ..quick_config(2, 19)
        },
    )
    .unwrap();
    let mut mp = TrainedModel::from_checkpoint(&pos.checkpoint).unwrap();
    let mut mo = TrainedModel::from_checkpoint(&ori.checkpoint).unwrap();

    let blobs = ds.record_blobs(1).unwrap();
    let center_z = ds.manifest.config.profile.render_params().rotation_center_z;
    let t = track(&mut [&mut mp, &mut mo], &blobs, &blobs, center_z).unwrap();
    assert!(t.is_rigid(1e-9));
    for i in 0..3 {
        for j in 0..4 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!(
                (t.0[i][j] - want).abs() < 1e-9,
                "identity violated at ({}, {})",
                i,
                j
            );
        }
    }

    // a position-only model cannot track alone
    assert!(track(&mut [&mut mp], &blobs, &blobs, center_z).is_err());
}

#[test]
fn bench_reports_stats_and_bit_exact_outputs() {
    let (_, ds) = &*SMALL_DATA;
    let arch = tiny_arch();
    let out = train(&arch, ds, &quick_config(1, 23)).unwrap();
    let mut model = TrainedModel::from_checkpoint(&out.checkpoint).unwrap();
    let (_, vol) = ds.load_representation(2, "volume").unwrap();
    let stats = benchmark_inference(&mut model, &vol, 20, 3).unwrap();
    assert_eq!(stats.passes, 20);
    assert!(stats.mean_ms > 0.0);
    assert!(stats.std_ms >= 0.0);
    assert!(stats.deterministic);
}

#[test]
fn capacity_probe_overfits_noiseless_samples() {
    // 50 records, no noise: a narrow network must be able to memorize them
    let dir = tempfile::tempdir().unwrap();
    let mut config = GenConfig::new(101, 50, MarkerKind::InnerStructured, Profile::Fast);
    config.render_noise = false;
    generate_dataset(&config, dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();

    let arch = tiny_arch();
    let mut tc = quick_config(400, 3);
    tc.plateau_patience = 10_000; // let the probe run at full rate
    let out = train(&arch, &ds, &tc).unwrap();
    let best = out
        .history
        .iter()
        .map(|h| h.train_mse)
        .fold(f64::INFINITY, f64::min);
    assert!(
        best < 1e-4,
        "failed to overfit: best train MSE {:.3e} after {} epochs",
        best,
        out.history.len()
    );
}
