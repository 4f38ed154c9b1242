//! Islands of agreement: connected groups of neighbouring columns whose
//! same-level embeddings point the same way.

use std::fs;
use std::path::{Path, PathBuf};

use ccnet_core::{Batch, CcNet, ColumnState, PriorMode};
use ccnet_data::Sample;
use ccnet_tensor::{ParamSet, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

pub const DEFAULT_TAU: f64 = 0.9;

/// Cluster id of every column, per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandsMap {
    pub tau: f64,
    pub rows: usize,
    pub cols: usize,
    /// `clusters[k]` holds level `k + 1`, row-major over the grid
    pub clusters: Vec<Vec<usize>>,
}

impl IslandsMap {
    pub fn levels(&self) -> usize {
        self.clusters.len()
    }

    /// Number of clusters at hierarchy level `level` (1-based).
    pub fn cluster_count(&self, level: usize) -> usize {
        self.clusters[level - 1].iter().max().map_or(0, |m| m + 1)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (false, false) => dot / (na * nb),
        _ => 0.0,
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the 4-neighbour grid graph whose edges join
/// columns with cosine similarity ≥ `tau`. `emb` is `[rows·cols, dim]`.
/// Ids are numbered in row-major order of each component's first column.
pub fn cluster_grid(emb: &[f64], rows: usize, cols: usize, dim: usize, tau: f64) -> Vec<usize> {
    let n = rows * cols;
    assert_eq!(emb.len(), n * dim, "embedding size");
    let at = |i: usize| &emb[i * dim..(i + 1) * dim];
    let mut parent: Vec<usize> = (0..n).collect();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let mut join = |j: usize| {
                if cosine(at(i), at(j)) >= tau {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            };
            if c + 1 < cols {
                join(i + 1);
            }
            if r + 1 < rows {
                join(i + cols);
            }
        }
    }
    let mut ids = vec![usize::MAX; n];
    let mut out = Vec::with_capacity(n);
    let mut next = 0;
    for i in 0..n {
        let root = find(&mut parent, i);
        if ids[root] == usize::MAX {
            ids[root] = next;
            next += 1;
        }
        out.push(ids[root]);
    }
    out
}

/// Islands of every hierarchy level of one sample's state.
pub fn islands_of_state(state: &ColumnState, sample: usize, rows: usize, cols: usize, tau: f64) -> Result<IslandsMap> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(EvalError::Config(format!("tau {tau} outside (0, 1)")));
    }
    let s = state.z.shape();
    let (n, levels, d) = (s[1], s[2] - 1, s[3]);
    if n != rows * cols || sample >= s[0] {
        return Err(EvalError::Shape(format!("state {s:?} does not fit sample {sample} on a {rows}x{cols} grid")));
    }
    let clusters = (1..=levels)
        .map(|l| {
            let emb: Vec<f64> = (0..n).flat_map(|i| state.embedding(sample, i, l).to_vec()).collect();
            cluster_grid(&emb, rows, cols, d, tau)
        })
        .collect();
    Ok(IslandsMap { tau, rows, cols, clusters })
}

/// Runs the model to `t = 1` on `samples` and returns the state.
pub fn column_state(model: &CcNet, params: &ParamSet, samples: &[&Sample], prior: PriorMode, seed: u64) -> Result<ColumnState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ccnet_core::Backbone::prior_shape(model);
    let batch = Batch::from_samples(samples, shape, prior, &mut rng)?;
    let mut tape = Tape::new();
    let vars: Vec<_> = params.tensors().map(|t| tape.constant(t.clone())).collect();
    let images = tape.constant(batch.images.clone());
    let levels = match &batch.prior {
        ccnet_core::Prior::Masks(m) => model.prior_from_masks(&mut tape, &vars, m)?,
        ccnet_core::Prior::Embedding(e) => {
            let e = tape.constant(e.clone());
            model.prior_levels(&mut tape, e)?
        }
        ccnet_core::Prior::None => return Err(EvalError::Config("islands need a prior".into())),
    };
    let z = model.run(&mut tape, &vars, images, levels)?;
    Ok(z.to_state(&tape))
}

pub fn islands(model: &CcNet, params: &ParamSet, sample: &Sample, tau: f64, prior: PriorMode) -> Result<IslandsMap> {
    let state = column_state(model, params, &[sample], prior, 0)?;
    let c = &model.config;
    islands_of_state(&state, 0, c.grid_rows, c.grid_cols, tau)
}

/// Deterministic colour of a cluster id: hues spaced by the golden angle.
pub fn palette(id: usize) -> [u8; 3] {
    let h = (id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.65, if id % 2 == 0 { 0.95 } else { 0.75 });
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

/// RGB raster of size `width × height`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn of_sample(s: &Sample) -> Self {
        let mut data = Vec::with_capacity(s.height * s.width * 3);
        for y in 0..s.height {
            for x in 0..s.width {
                for c in 0..3 {
                    data.push((s.pixel(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        Self {
            width: s.width,
            height: s.height,
            data,
        }
    }

    /// One `cell × cell` block per column, coloured by cluster id.
    pub fn of_clusters(ids: &[usize], rows: usize, cols: usize, cell: usize) -> Self {
        let (w, h) = (cols * cell, rows * cell);
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&palette(ids[(y / cell) * cols + x / cell]));
            }
        }
        Self { width: w, height: h, data }
    }

    /// Images side by side with a `gap`-pixel white separator, top aligned.
    pub fn hstack(parts: &[Rgb], gap: usize) -> Self {
        let h = parts.iter().map(|p| p.height).max().unwrap_or(0);
        let w = parts.iter().map(|p| p.width).sum::<usize>() + gap * parts.len().saturating_sub(1);
        let mut data = vec![255u8; w * h * 3];
        let mut x0 = 0;
        for p in parts {
            for y in 0..p.height {
                let dst = (y * w + x0) * 3;
                data[dst..dst + p.width * 3].copy_from_slice(&p.data[y * p.width * 3..(y + 1) * p.width * 3]);
            }
            x0 += p.width + gap;
        }
        Self { width: w, height: h, data }
    }
}

/// Writes `input.ppm`, `level{l}.ppm` for every level, `islands.ppm` (input
/// then levels low to high, left to right) and `islands.json`.
pub fn export(map: &IslandsMap, sample: &Sample, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let cell = (sample.height / map.rows).max(1);
    let input = Rgb::of_sample(sample);
    let mut written = Vec::new();
    let mut write = |name: String, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    write("input.ppm".into(), input.to_ppm())?;
    let mut strip = vec![input];
    for (k, ids) in map.clusters.iter().enumerate() {
        let img = Rgb::of_clusters(ids, map.rows, map.cols, cell);
        write(format!("level{}.ppm", k + 1), img.to_ppm())?;
        strip.push(img);
    }
    write("islands.ppm".into(), Rgb::hstack(&strip, 2).to_ppm())?;
    write("islands.json".into(), serde_json::to_vec_pretty(map)?)?;
    Ok(written)
}
