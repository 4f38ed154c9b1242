use std::collections::VecDeque;

use ccnet_core::{CcNet, CcNetConfig, PriorMode};
use ccnet_data::{Dataset, DatasetConfig, Sample};
use ccnet_eval::{cluster_grid, cosine, export, islands, islands_of_state, column_state, palette, IslandsMap, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_embeddings(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Breadth-first flood fill, labels in row-major order of first visit.
fn flood(emb: &[f64], rows: usize, cols: usize, dim: usize, tau: f64) -> Vec<usize> {
    let at = |i: usize| &emb[i * dim..(i + 1) * dim];
    let mut label = vec![usize::MAX; rows * cols];
    let mut next = 0;
    for start in 0..rows * cols {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / cols, i % cols);
            let mut nb = Vec::new();
            if r > 0 {
                nb.push(i - cols);
            }
            if r + 1 < rows {
                nb.push(i + cols);
            }
            if c > 0 {
                nb.push(i - 1);
            }
            if c + 1 < cols {
                nb.push(i + 1);
            }
            for j in nb {
                if label[j] == usize::MAX && cosine(at(i), at(j)) >= tau {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    label
}

fn count(ids: &[usize]) -> usize {
    ids.iter().max().map_or(0, |m| m + 1)
}

#[test]
fn cosine_edge_cases() {
    assert_eq!(cosine(&[1.0, 0.0], &[2.0, 0.0]), 1.0);
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
    assert!((cosine(&[1.0, 1.0], &[-1.0, -1.0]) + 1.0).abs() < 1e-15);
    assert_eq!(cosine(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
}

#[test]
fn near_one_threshold_gives_singletons() {
    let emb = random_embeddings(16, 8, 1);
    let ids = cluster_grid(&emb, 4, 4, 8, 1.0 - 1e-9);
    assert_eq!(ids, (0..16).collect::<Vec<_>>());
}

#[test]
fn identical_columns_form_one_island() {
    let one = random_embeddings(1, 6, 2);
    let emb: Vec<f64> = (0..20).flat_map(|_| one.clone()).collect();
    for tau in [0.1, 0.9, 0.999_999] {
        assert_eq!(cluster_grid(&emb, 4, 5, 6, tau), vec![0; 20]);
    }
}

#[test]
fn matches_flood_fill_and_is_a_partition() {
    for seed in 0..20 {
        let (rows, cols, dim) = (3 + seed as usize % 4, 2 + seed as usize % 5, 3);
        let emb = random_embeddings(rows * cols, dim, 100 + seed);
        for tau in [-0.5, 0.0, 0.3, 0.6, 0.9] {
            let ids = cluster_grid(&emb, rows, cols, dim, tau);
            assert_eq!(ids, flood(&emb, rows, cols, dim, tau), "seed {seed} tau {tau}");
            // ids 0..k each used, first appearances in increasing order
            let mut seen = 0;
            for &id in &ids {
                assert!(id <= seen);
                if id == seen {
                    seen += 1;
                }
            }
            assert_eq!(seen, count(&ids));
        }
    }
}

#[test]
fn raising_the_threshold_never_merges() {
    // a higher τ removes edges, so the count can only grow
    for seed in 0..10 {
        let emb = random_embeddings(36, 4, 200 + seed);
        let mut prev = 0;
        for k in 0..=40 {
            let tau = -1.0 + 2.0 * k as f64 / 40.0 - 1e-12;
            let n = count(&cluster_grid(&emb, 6, 6, 4, tau));
            assert!(n >= prev, "seed {seed}: {n} clusters at tau {tau} after {prev}");
            prev = n;
        }
        assert_eq!(count(&cluster_grid(&emb, 6, 6, 4, -1.5)), 1);
    }
}

fn constant_sample() -> Sample {
    Sample {
        image: vec![0.43; 3 * 32 * 32],
        height: 32,
        width: 32,
        label: 0,
        domain_id: 0,
        regions: [vec![0; 1024], vec![0; 1024], vec![0; 1024]],
    }
}

#[test]
fn constant_input_is_one_island_per_level() {
    let model = CcNet::new(CcNetConfig::desk(16)).unwrap();
    let params = model.init_params(3);
    let map = islands(&model, &params, &constant_sample(), 0.9, PriorMode::default()).unwrap();
    assert_eq!(map.levels(), 3);
    for l in 1..=3 {
        assert_eq!(map.cluster_count(l), 1, "level {l}");
    }
}

#[test]
fn threshold_outside_open_interval_is_rejected() {
    let model = CcNet::new(CcNetConfig::desk(8)).unwrap();
    let s = constant_sample();
    let state = column_state(&model, &model.init_params(0), &[&s], PriorMode::default(), 0).unwrap();
    for tau in [0.0, 1.0, -0.2, f64::NAN] {
        assert!(islands_of_state(&state, 0, 4, 4, tau).is_err(), "{tau}");
    }
    assert!(islands_of_state(&state, 0, 2, 8, 0.5).is_ok());
    assert!(islands_of_state(&state, 0, 3, 3, 0.5).is_err());
    assert!(islands_of_state(&state, 1, 4, 4, 0.5).is_err());
}

#[test]
fn map_of_a_real_sample_is_consistent_with_its_state() {
    let ds = Dataset::generate(DatasetConfig::new(2, 40)).unwrap();
    let model = CcNet::new(CcNetConfig::desk(16)).unwrap();
    let params = model.init_params(5);
    let s = &ds.domains[1][0];
    let map = islands(&model, &params, s, 0.8, PriorMode::default()).unwrap();
    let state = column_state(&model, &params, &[s], PriorMode::default(), 0).unwrap();
    for l in 1..=3 {
        let emb: Vec<f64> = (0..16).flat_map(|i| state.embedding(0, i, l).to_vec()).collect();
        assert_eq!(map.clusters[l - 1], flood(&emb, 4, 4, 16, 0.8));
    }
}

#[test]
fn palette_is_deterministic_and_spread() {
    let colours: Vec<[u8; 3]> = (0..16).map(palette).collect();
    assert_eq!(colours, (0..16).map(palette).collect::<Vec<_>>());
    for i in 0..16 {
        for j in i + 1..16 {
            assert_ne!(colours[i], colours[j], "ids {i} and {j}");
        }
    }
}

#[test]
fn rasters_and_stacking() {
    let img = Rgb::of_clusters(&[0, 1, 1, 0], 2, 2, 3);
    assert_eq!((img.width, img.height), (6, 6));
    assert_eq!(&img.data[0..3], &palette(0));
    assert_eq!(&img.data[3 * 3..3 * 3 + 3], &palette(1));
    let ppm = img.to_ppm();
    assert!(ppm.starts_with(b"P6\n6 6\n255\n"));
    assert_eq!(ppm.len(), b"P6\n6 6\n255\n".len() + 6 * 6 * 3);
    let strip = Rgb::hstack(&[img.clone(), img], 2);
    assert_eq!((strip.width, strip.height), (14, 6));
    // the gap column is white
    assert_eq!(&strip.data[6 * 3..6 * 3 + 3], &[255, 255, 255]);
}

#[test]
fn export_writes_every_level_and_round_trips() {
    let ds = Dataset::generate(DatasetConfig::new(2, 40)).unwrap();
    let s = &ds.domains[2][3];
    let map = IslandsMap {
        tau: 0.9,
        rows: 4,
        cols: 4,
        clusters: vec![(0..16).collect(), vec![0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3], vec![0; 16]],
    };
    let dir = tempfile::tempdir().unwrap();
    let files = export(&map, s, dir.path()).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["input.ppm", "level1.ppm", "level2.ppm", "level3.ppm", "islands.ppm", "islands.json"]);
    let strip = std::fs::read(dir.path().join("islands.ppm")).unwrap();
    // four 32-pixel panels and three 2-pixel gaps
    assert!(strip.starts_with(b"P6\n134 32\n255\n"));
    let back: IslandsMap = serde_json::from_slice(&std::fs::read(dir.path().join("islands.json")).unwrap()).unwrap();
    assert_eq!(back, map);
    assert_eq!(back.cluster_count(2), 4);
    let input = std::fs::read(dir.path().join("input.ppm")).unwrap();
    let header = b"P6\n32 32\n255\n".len();
    assert_eq!(input[header], (s.pixel(0, 0, 0) * 255.0).round() as u8);
}
