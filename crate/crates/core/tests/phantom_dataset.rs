use std::fs;

use bobnet::phantom::{gen_dataset, gen_phantom, PhantomRandomizer, PhantomSpec, Shape};
use bobnet::slicing::{Dataset, SplitRole};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample(seed: u64) -> PhantomSpec {
    PhantomRandomizer::default()
        .sample(&mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn boxes_are_tight(seed in any::<u64>()) {
        let spec = sample(seed);
        let (_, boxes) = gen_phantom(&spec, seed).unwrap();
        for (s, b) in spec.structures.iter().zip(&boxes) {
            // Each of the six faces holds at least one interior voxel, and no
            // interior voxel lies outside the box.
            let mut touched = [false; 6];
            let [nx, ny, nz] = spec.dims;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let p = [x, y, z];
                        if !s.shape.contains(p) {
                            continue;
                        }
                        prop_assert!(b.contains(p));
                        for d in 0..3 {
                            touched[2 * d] |= p[d] == b.lo[d];
                            touched[2 * d + 1] |= p[d] == b.hi[d];
                        }
                    }
                }
            }
            prop_assert_eq!(touched, [true; 6]);
        }
    }

    #[test]
    fn distractors_do_not_move_boxes(seed in any::<u64>()) {
        let spec = sample(seed);
        let bare = PhantomSpec { distractors: vec![], ..spec.clone() };
        prop_assert_eq!(gen_phantom(&spec, 1).unwrap().1, gen_phantom(&bare, 1).unwrap().1);
    }
}

#[test]
fn noise_follows_contrast() {
    let spec = sample(5);
    let tissue = spec.body.as_ref().unwrap().intensity;
    let contrast = spec
        .structures
        .iter()
        .map(|s| (s.intensity - tissue).abs())
        .fold(f32::INFINITY, f32::min);
    assert!((spec.noise_sigma - 0.2 * contrast).abs() < 1e-3);
    let zero = PhantomSpec {
        noise_sigma: 0.0,
        ..spec.clone()
    };
    let (vol, _) = gen_phantom(&zero, 0).unwrap();
    // Corners are air, the middle column of the body is tissue unless a
    // shape covers it.
    assert_eq!(vol.get(0, 0, 0), spec.background);
    assert!(spec.background < -900.0 && tissue > -200.0);
    if let Shape::Ellipsoid { center, .. } = &spec.structures[0].shape {
        assert_eq!(vol.get(center[0], center[1], center[2]), spec.structures[0].intensity);
    }
}

#[test]
fn dataset_layout_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let small = PhantomRandomizer {
        dims: [24, 24, 20],
        ..PhantomRandomizer::default()
    };
    let split = gen_dataset(dir.path(), 10, &small, 7).unwrap();
    assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (4, 1, 5));
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.structures(), ["heart", "aorta"]);
    assert_eq!(ds.ids(SplitRole::Test).len(), 5);
    for id in ["case000", "case009"] {
        let case = ds.load_case(id).unwrap();
        assert_eq!(case.boxes.len(), 2);
        assert_eq!(case.volume.dims(), [24, 24, 20]);
    }

    let again = tempfile::tempdir().unwrap();
    gen_dataset(again.path(), 10, &small, 7).unwrap();
    let other = tempfile::tempdir().unwrap();
    gen_dataset(other.path(), 10, &small, 8).unwrap();
    let raw = |d: &std::path::Path| fs::read(d.join("case003").join("volume.raw")).unwrap();
    assert_eq!(raw(dir.path()), raw(again.path()));
    assert_ne!(raw(dir.path()), raw(other.path()));
    assert_eq!(
        fs::read(dir.path().join("split.txt")).unwrap(),
        fs::read(again.path().join("split.txt")).unwrap()
    );

    assert!(gen_dataset(tempfile::tempdir().unwrap().path(), 5, &small, 7).is_err());
}
