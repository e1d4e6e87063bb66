use hgnn::geometry::{dist2, occlusion_level, transform_points, Pose, DEFAULT_OCCLUSION_THRESHOLD};
use hgnn::sim::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(n: usize, seed: u64) -> Dataset {
    Dataset::generate(
        n,
        default_library(0).unwrap(),
        GripperConfig::default(),
        CameraModel::default(),
        seed,
    )
    .unwrap()
}

fn to_bytes(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    ds.write_to(&mut buf).unwrap();
    buf
}

#[test]
fn rotation_sampler_has_zero_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mean = [0.0; 4];
    let n = 10_000;
    for _ in 0..n {
        let q = Pose::random_rotation(&mut rng);
        for k in 0..4 {
            mean[k] += q[k] / n as f64;
        }
    }
    for m in mean {
        assert!(m.abs() < 0.05, "{mean:?}");
    }
}

#[test]
fn vision_cloud_is_a_subset_of_the_posed_model() {
    let ds = small(10, 5);
    for s in &ds.samples {
        let posed = transform_points(ds.object(s), &s.pose_gt);
        let rounded: Vec<[f64; 3]> = posed
            .points
            .iter()
            .map(|p| [p[0] as f32 as f64, p[1] as f32 as f64, p[2] as f32 as f64])
            .collect();
        for p in &s.vision_cloud.points {
            assert!(rounded.contains(p));
        }
    }
}

#[test]
fn samples_satisfy_their_invariants() {
    let ds = small(30, 2);
    let g = ds.gripper;
    for s in &ds.samples {
        s.validate(&ds.camera, &g, ds.objects.len()).unwrap();
        let posed = transform_points(ds.object(s), &s.pose_gt);
        for (loc, cloud) in s.sensor_locations.iter().zip(&s.touch_clouds) {
            for p in &cloud.points {
                assert!(dist2(*p, *loc) < g.contact_radius * g.contact_radius);
            }
            let nearest = posed
                .points
                .iter()
                .map(|p| dist2(*p, *loc))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest.sqrt() <= 2.0 * g.contact_radius);
        }
        assert!((0.3..=0.8).contains(&s.pose_gt.translation[2]));
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = to_bytes(&small(12, 7));
    let b = to_bytes(&small(12, 7));
    assert_eq!(a, b);
    assert_ne!(a, to_bytes(&small(12, 8)));
}

#[test]
fn thread_count_does_not_change_output() {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let single = pool.install(|| to_bytes(&small(6, 9)));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let multi = pool.install(|| to_bytes(&small(6, 9)));
    assert_eq!(single, multi);
}

#[test]
fn record_count_and_round_robin_balance() {
    let ds = small(100, 1);
    assert_eq!(ds.samples.len(), 100);
    let back = Dataset::read_from(&mut to_bytes(&ds).as_slice()).unwrap();
    assert_eq!(back.samples.len(), 100);
    let mut counts = vec![0usize; ds.objects.len()];
    for s in &back.samples {
        counts[s.object_index as usize] += 1;
    }
    let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    assert!(hi - lo <= 1, "{counts:?}");
}

#[test]
fn file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.vtds");
    let ds = generate_dataset(
        8,
        default_library(3).unwrap(),
        GripperConfig::default(),
        CameraModel::default(),
        4,
        &path,
    )
    .unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(ds, back);
    let text = back.dump_sample(7).unwrap();
    assert!(text.starts_with("sample 7\n"));
    assert!(back.dump_sample(8).is_err());
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = to_bytes(&small(2, 1));
    assert!(Dataset::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Dataset::read_from(&mut bad.as_slice()).is_err());
    let mut extra = bytes;
    extra.push(0);
    assert!(Dataset::read_from(&mut extra.as_slice()).is_err());
    let missing = std::path::Path::new("/nonexistent/dir/d.vtds");
    let err = Dataset::load(missing).unwrap_err().to_string();
    assert!(err.contains("/nonexistent/dir/d.vtds"));
}

#[test]
fn contact_cap_is_honored_across_the_sweep() {
    for cap in [4, 8, 16, 32] {
        let g = GripperConfig {
            max_points_per_sensor: cap,
            ..GripperConfig::default()
        };
        let ds = Dataset::generate(
            10,
            default_library(0).unwrap(),
            g,
            CameraModel::default(),
            3,
        )
        .unwrap();
        for s in &ds.samples {
            assert!(s.touch_clouds.iter().all(|c| c.len() <= cap));
        }
    }
}

#[test]
fn occlusion_levels_spread_over_many_bins() {
    let ds = small(400, 21);
    let mut bins = [0usize; 10];
    let (mut lo, mut hi) = (100.0f64, 0.0f64);
    for s in &ds.samples {
        let occ = occlusion_level(
            ds.object(s),
            &s.pose_gt,
            &s.vision_cloud,
            DEFAULT_OCCLUSION_THRESHOLD,
        )
        .unwrap();
        lo = lo.min(occ);
        hi = hi.max(occ);
        bins[((occ / 10.0) as usize).min(9)] += 1;
    }
    let filled = bins.iter().filter(|&&c| c > 0).count();
    // A single view never sees the back of a closed object, so the floor
    // sits near 40%; the hand pushes the top past 90%.
    assert!(filled >= 5, "{bins:?}");
    assert!(lo < 50.0 && hi > 90.0, "{lo} {hi}");
}
