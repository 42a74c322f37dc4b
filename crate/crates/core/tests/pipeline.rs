//! Dataset round trips, variant construction, exports, and a short training run.

use headpose::augment::{flip_pose, make_test_variant, rotate_pose, TestVariant};
use headpose::corpus::{build_corpus, frontal_range, render_pool, CorpusConfig};
use headpose::eval::{
    evaluate, export_embeddings, export_sphere_points, load_manifest, manifest_poses, variant_rng, write_dataset,
    write_variant, ConstantPredictor, PosePipeline, Split,
};
use headpose::mining::LossConfig;
use headpose::so3::{euler_to_rotation, Axis, EulerAngles, RotationMatrix};
use headpose::synth::{render, sample_identity};
use headpose::train::{train_head, train_representation, TrainConfig};
use std::fs;
use std::path::Path;

fn small_corpus() -> CorpusConfig {
    CorpusConfig {
        anchors: 80,
        anchor_identities: 8,
        validation_identities: 2,
        positive_identities: 4,
        test_samples: 40,
        test_identities: 4,
        size: 16,
        ..Default::default()
    }
}

fn column_range(path: &Path, k: usize) -> (f64, f64) {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .map(|l| l.split(',').nth(k).unwrap().parse::<f64>().unwrap())
        .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[test]
fn dataset_round_trip_and_split_disjointness() {
    let dir = tempfile::tempdir().unwrap();
    let c = build_corpus(&small_corpus()).unwrap();
    let written = write_dataset(
        dir.path(),
        &[(Split::Train, &c.data.train), (Split::Validation, &c.data.validation), (Split::Test, &c.test)],
    )
    .unwrap();
    let loaded = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(loaded.entries(), written.entries());
    assert_eq!(loaded.split(Split::Test).load_samples().unwrap(), c.test);
    assert_eq!(loaded.split(Split::Train).len(), c.data.train.len());
}

#[test]
fn sa_variant_has_one_copy_per_record_with_fixed_labels() {
    let dir = tempfile::tempdir().unwrap();
    let c = build_corpus(&small_corpus()).unwrap();
    let m = write_dataset(dir.path(), &[(Split::Test, &c.test)]).unwrap();
    let sa_dir = dir.path().join("sa");
    let sa = write_variant(&m, TestVariant::Sa, 0, &sa_dir).unwrap();
    assert_eq!(sa.len(), m.len());
    for (orig, new) in m.entries().iter().zip(sa.entries()) {
        let expected = flip_pose(&rotate_pose(&orig.pose, 10f64.to_radians()), 85f64.to_radians());
        assert!(new.pose.max_abs_diff(&expected) < 1e-12);
        assert_eq!(new.identity_seed, orig.identity_seed);
    }
    let again = write_variant(&m, TestVariant::Sa, 0, &dir.path().join("sa2")).unwrap();
    assert_eq!(again.entries(), sa.entries());
}

#[test]
fn fa_spreads_the_up_axis_over_both_hemispheres() {
    let dir = tempfile::tempdir().unwrap();
    let pool = render_pool(1..11, 300, &frontal_range(), 16, 0).unwrap();
    let pairs: Vec<_> = pool.iter().map(|s| (s.image.clone(), s.pose)).collect();
    let fa = make_test_variant(&pairs, TestVariant::Fa, &mut variant_rng(0, TestVariant::Fa)).unwrap();
    let frontal: Vec<RotationMatrix> = pairs.iter().map(|p| p.1).collect();
    let augmented: Vec<RotationMatrix> = fa.iter().map(|p| p.1).collect();
    let (f_path, a_path) = (dir.path().join("f.csv"), dir.path().join("a.csv"));
    assert_eq!(export_sphere_points(&frontal, Axis::Y, &f_path).unwrap(), 300);
    export_sphere_points(&augmented, Axis::Y, &a_path).unwrap();
    let (lo, hi) = column_range(&f_path, 1);
    assert!(lo > 0.0 && hi > 0.0, "frontal up axis stays in one hemisphere");
    let (lo, hi) = column_range(&a_path, 1);
    assert!(lo < 0.0 && hi > 0.0, "augmented up axis covers both");
    // The camera axis is untouched by in-plane transforms.
    export_sphere_points(&augmented, Axis::Z, &a_path).unwrap();
    export_sphere_points(&frontal, Axis::Z, &f_path).unwrap();
    assert_eq!(column_range(&a_path, 2).0.signum(), column_range(&f_path, 2).0.signum());
}

#[test]
fn evaluation_is_pure_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let c = build_corpus(&small_corpus()).unwrap();
    let m = write_dataset(dir.path(), &[(Split::Test, &c.test)]).unwrap();
    let p = ConstantPredictor(RotationMatrix::IDENTITY);
    let a = evaluate(&p, &m, &TestVariant::ALL, 4).unwrap();
    assert_eq!(a, evaluate(&p, &m, &TestVariant::ALL, 4).unwrap());
    assert_eq!(a.rows.len(), 3);
    for r in &a.rows {
        let e = &r.errors;
        assert!(((e.yaw_mae + e.pitch_mae + e.roll_mae) / 3.0 - e.mean).abs() < 1e-9);
        assert!(e.mean.is_finite() && r.samples == m.len());
    }
    assert_eq!(manifest_poses(&m).len(), m.len());
}

#[test]
fn trained_embeddings_vary_smoothly_around_a_yaw_circle() {
    let corpus = build_corpus(&CorpusConfig {
        anchors: 800,
        test_samples: 50,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 12,
        ..Default::default()
    };
    let (encoder, _) = train_representation(&cfg, &LossConfig::default(), &corpus.data).unwrap();
    let scene = sample_identity(600_000);
    let images: Vec<_> = (0..36)
        .map(|k| {
            let pose = euler_to_rotation(&EulerAngles::from_degrees(-180.0 + 10.0 * k as f64, 0.0, 0.0)).unwrap();
            render(&scene, &pose, 32).unwrap()
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("emb.csv");
    assert_eq!(export_embeddings(&encoder, &images, &out).unwrap(), 36);
    let rows: Vec<Vec<f64>> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(rows.iter().all(|r| r.len() == 64));
    // Anchor at yaw 0 (index 18); similarity falls towards the back of the head.
    let sim = |j: usize| rows[18].iter().zip(&rows[j]).map(|(a, b)| a * b).sum::<f64>();
    assert!(sim(17) > sim(9) && sim(19) > sim(27), "{:?}", (0..36).map(sim).collect::<Vec<_>>());
    let far = (0..36).min_by(|&a, &b| sim(a).total_cmp(&sim(b))).unwrap();
    assert!(!(14..=22).contains(&far), "least similar pose {far} sits next to the anchor");
    // The trained pipeline predicts rotations.
    let (head, _) = train_head(&encoder, &TrainConfig { head_epochs: 2, ..cfg }, &corpus.data).unwrap();
    let m = write_dataset(dir.path(), &[(Split::Test, &corpus.test)]).unwrap();
    let report = evaluate(&PosePipeline { encoder, head }, &m, &[TestVariant::Original], 0).unwrap();
    assert!(report.rows[0].geodesic_deg < 90.0);
}
