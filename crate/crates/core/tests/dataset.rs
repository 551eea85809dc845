use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermoseg::dataset::landmarks::{Region, LANDMARK_COUNT};
use thermoseg::dataset::synth::{synth_dataset, write_dataset, NUM_CLASSES};
use thermoseg::dataset::{
    formats, landmarks_to_mask, split_by_subject, synth_face, Annotation, DatasetIndex,
    IndexEntry, LandmarkSet, RegionDefinition, SyntheticFaceConfig,
};
use thermoseg::{LabelMask, ThermalImage};

/// Classic even-odd ray casting at pixel centers.
fn brute_force(poly: &[(f64, f64)], h: usize, w: usize) -> Vec<bool> {
    let mut inside = vec![false; h * w];
    for row in 0..h {
        for col in 0..w {
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            let mut c = false;
            let mut j = poly.len() - 1;
            for i in 0..poly.len() {
                let (xi, yi) = poly[i];
                let (xj, yj) = poly[j];
                if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                    c = !c;
                }
                j = i;
            }
            inside[row * w + col] = c;
        }
    }
    inside
}

fn single_region(points: &[(f64, f64)]) -> (LandmarkSet, RegionDefinition) {
    let mut all = points.to_vec();
    all.resize(LANDMARK_COUNT, (0.0, 0.0));
    let lm = LandmarkSet {
        points: all,
        subject_id: "s".into(),
        frame_id: "f".into(),
    };
    let regions = RegionDefinition {
        regions: vec![Region {
            class: 1,
            name: "blob".into(),
            boundaries: vec![(0..points.len()).collect()],
        }],
    };
    (lm, regions)
}

#[test]
fn square_matches_point_in_polygon() {
    let square = [(10.0, 10.0), (20.0, 10.0), (20.0, 20.0), (10.0, 20.0)];
    let (lm, regions) = single_region(&square);
    let mask = landmarks_to_mask(&lm, &regions, 32, 32).unwrap();
    let oracle = brute_force(&square, 32, 32);
    let area = mask.labels().iter().filter(|&&l| l == 1).count();
    assert_eq!(area, oracle.iter().filter(|&&b| b).count());
    assert_eq!(area, 100);
    for (l, o) in mask.labels().iter().zip(&oracle) {
        assert_eq!(*l == 1, *o);
    }
}

#[test]
fn random_polygons_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..25 {
        let k = rng.random_range(3..12);
        let (cx, cy, r) = (rng.random_range(15.0..49.0), rng.random_range(15.0..49.0), rng.random_range(3.0..15.0));
        let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let poly: Vec<(f64, f64)> = angles.iter().map(|a| (cx + r * a.cos(), cy + r * a.sin())).collect();
        let (lm, regions) = single_region(&poly);
        let Ok(mask) = landmarks_to_mask(&lm, &regions, 64, 64) else { continue };
        let oracle = brute_force(&poly, 64, 64);
        for (l, o) in mask.labels().iter().zip(&oracle) {
            assert_eq!(*l == 1, *o);
        }
    }
}

#[test]
fn disjoint_regions_do_not_interact() {
    let mut pts = vec![(2.0, 2.0), (8.0, 2.0), (8.0, 8.0), (2.0, 8.0)];
    pts.extend([(20.0, 20.0), (28.0, 20.0), (28.0, 28.0)]);
    pts.resize(LANDMARK_COUNT, (0.0, 0.0));
    let lm = LandmarkSet {
        points: pts.clone(),
        subject_id: "s".into(),
        frame_id: "f".into(),
    };
    let both = RegionDefinition {
        regions: vec![
            Region { class: 1, name: "a".into(), boundaries: vec![vec![0, 1, 2, 3]] },
            Region { class: 2, name: "b".into(), boundaries: vec![vec![4, 5, 6]] },
        ],
    };
    let mask = landmarks_to_mask(&lm, &both, 32, 32).unwrap();
    let only_a = landmarks_to_mask(
        &lm,
        &RegionDefinition { regions: vec![both.regions[0].clone()] },
        32,
        32,
    )
    .unwrap();
    let a_pixels = |m: &LabelMask| m.labels().iter().filter(|&&l| l == 1).count();
    assert_eq!(a_pixels(&mask), a_pixels(&only_a));
    assert!(mask.labels().contains(&2));
}

#[test]
fn collinear_boundary_is_rejected() {
    let (lm, regions) = single_region(&[(1.0, 1.0), (5.0, 5.0), (9.0, 9.0)]);
    let err = landmarks_to_mask(&lm, &regions, 16, 16).unwrap_err().to_string();
    assert!(err.contains("blob"), "{err}");
}

#[test]
fn out_of_bounds_landmark_is_rejected() {
    let (lm, regions) = single_region(&[(1.0, 1.0), (50.0, 1.0), (1.0, 9.0)]);
    assert!(landmarks_to_mask(&lm, &regions, 16, 16).is_err());
}

#[test]
fn default_regions_cover_all_classes() {
    // A schematic 68-point face on a 64×64 grid.
    let mut p = vec![(0.0, 0.0); LANDMARK_COUNT];
    for i in 0..17 {
        let a = std::f64::consts::PI * (i as f64 / 16.0);
        p[i] = (32.0 - 22.0 * a.cos(), 28.0 + 26.0 * a.sin());
    }
    for i in 0..5 {
        p[17 + i] = (14.0 + 3.0 * i as f64, 16.0 - (i as f64 - 2.0).abs() * -0.5 - 2.0 + (i % 2) as f64);
        p[22 + i] = (38.0 + 3.0 * i as f64, 16.0 - (i as f64 - 2.0).abs() * -0.5 - 2.0 + (i % 2) as f64);
    }
    let nose = [(32.0, 20.0), (32.0, 24.0), (32.0, 28.0), (32.0, 32.0), (27.0, 36.0), (29.0, 37.0), (32.0, 38.0), (35.0, 37.0), (37.0, 36.0)];
    p[27..36].copy_from_slice(&nose);
    let eye = |cx: f64| [(cx - 5.0, 22.0), (cx - 2.0, 20.0), (cx + 2.0, 20.0), (cx + 5.0, 22.0), (cx + 2.0, 24.0), (cx - 2.0, 24.0)];
    p[36..42].copy_from_slice(&eye(20.0));
    p[42..48].copy_from_slice(&eye(44.0));
    for i in 0..12 {
        let a = std::f64::consts::TAU * i as f64 / 12.0;
        p[48 + i] = (32.0 + 8.0 * a.cos(), 45.0 + 3.0 * a.sin());
    }
    for i in 60..68 {
        p[i] = (32.0, 45.0);
    }
    let lm = LandmarkSet { points: p, subject_id: "s".into(), frame_id: "f".into() };
    let mask = landmarks_to_mask(&lm, &RegionDefinition::default(), 64, 64).unwrap();
    assert_eq!(mask.classes(), vec![0, 1, 2, 3, 4, 5]);
    // eyes paint over everything else
    assert_eq!(mask.get(22, 20), 4);
}

fn index_with_subjects(n: usize, frames: usize) -> DatasetIndex {
    let entries = (0..n * frames)
        .map(|i| IndexEntry {
            image: format!("img{i}.thrm").into(),
            annotation: Annotation::Mask(format!("img{i}.pgm").into()),
            subject_id: format!("s{:02}", i / frames),
        })
        .collect();
    DatasetIndex::new(".", entries)
}

#[test]
fn split_twenty_subjects() {
    let idx = index_with_subjects(20, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (train, val) = split_by_subject(&idx, 0.85, &mut rng).unwrap();
    assert_eq!(train.subjects().len(), 17);
    assert_eq!(val.subjects().len(), 3);
    assert!(train.subjects().is_disjoint(&val.subjects()));
    assert_eq!(train.len() + val.len(), idx.len());
    let all: BTreeSet<_> = train.entries.iter().chain(&val.entries).map(|e| e.image.clone()).collect();
    assert_eq!(all.len(), idx.len());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let again = split_by_subject(&idx, 0.85, &mut rng).unwrap();
    assert_eq!(again.0, train);
}

#[test]
fn split_needs_two_subjects() {
    let idx = index_with_subjects(1, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(split_by_subject(&idx, 0.85, &mut rng).is_err());
}

#[test]
fn synthetic_faces_are_deterministic() {
    let cfg = SyntheticFaceConfig { geometry_jitter: 0.0, ..Default::default() };
    let a = synth_face(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let b = synth_face(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn synthetic_faces_have_all_classes_and_a_gap() {
    let cfg = SyntheticFaceConfig::default();
    let gap = cfg.face_range.0 - cfg.background_range.1;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (img, mask) = synth_face(&cfg, &mut rng).unwrap();
        assert_eq!(mask.classes(), (0..NUM_CLASSES as u8).collect::<Vec<_>>());
        // histogram with 0.25 °C bins; modes of the lower and upper halves
        let bin = 0.25;
        let lo = img.min();
        let nb = ((img.max() - lo) / bin) as usize + 1;
        let mut hist = vec![0usize; nb];
        img.values().iter().for_each(|v| hist[((v - lo) / bin) as usize] += 1);
        let split = ((cfg.background_range.1 + cfg.face_range.0) / 2.0 - lo) / bin;
        let split = split as usize;
        let low_mode = (0..split).max_by_key(|&i| hist[i]).unwrap();
        let high_mode = (split..nb).max_by_key(|&i| hist[i]).unwrap();
        // bins are half-open, so subtract one bin width of slack
        assert!((high_mode - low_mode) as f64 * bin >= gap - bin);
        // and the value sets really are separated
        let bg_max = img.values().iter().zip(mask.labels()).filter(|(v, _)| **v < split as f64 * bin + lo).map(|(v, _)| *v).fold(f64::MIN, f64::max);
        assert!(bg_max <= cfg.background_range.1);
        assert!(img.values().iter().all(|&v| v <= cfg.background_range.1 || v >= cfg.face_range.0));
    }
}

#[test]
fn dataset_writes_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticFaceConfig { seed: 3, ..Default::default() };
    let samples = synth_dataset(&cfg, 6, 3).unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let idx = DatasetIndex::load(&dir.path().join("index.json")).unwrap();
    assert_eq!(idx.len(), 6);
    assert_eq!(idx.subjects().len(), 3);
    let (img, mask) = idx.load_sample(2, &RegionDefinition::default()).unwrap();
    assert_eq!(mask, samples[2].mask);
    for (a, b) in img.values().iter().zip(samples[2].image.values()) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

#[test]
fn thermal_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.thrm");
    let img = ThermalImage::new(2, 3, vec![20.0, 21.5, 22.25, 36.5, 37.0, -3.75]).unwrap();
    formats::save_thermal(&path, &img).unwrap();
    let back = formats::load_thermal(&path).unwrap();
    let bits = |i: &ThermalImage| i.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&img));
    let bytes = std::fs::read(&path).unwrap();
    formats::save_thermal(&path, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}
