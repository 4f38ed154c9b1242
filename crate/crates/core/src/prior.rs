//! Hierarchical prior: point prompts at column centres, three-level masks per
//! prompt, and the batched, deduplicated mask layout fed to the encoder.

use std::borrow::Borrow;
use std::collections::HashMap;

use ccnet_data::SceneSpec;
use ccnet_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};

/// Centre `(y, x)` of every grid cell, row-major.
pub fn prompt_points(rows: usize, cols: usize, height: usize, width: usize) -> Vec<(f64, f64)> {
    let (ch, cw) = (height as f64 / rows as f64, width as f64 / cols as f64);
    let mut pts = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            pts.push(((r as f64 + 0.5) * ch, (c as f64 + 0.5) * cw));
        }
    }
    pts
}

/// Binary masks for every (column, level) pair of one image. Identical masks
/// are stored once; `index[i * levels + l]` points into `unique`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub columns: usize,
    pub levels: usize,
    pub height: usize,
    pub width: usize,
    pub unique: Vec<Vec<u8>>,
    pub index: Vec<usize>,
}

impl MaskSet {
    /// Builds a set from one mask per (column, level), deduplicating.
    pub fn from_masks(columns: usize, levels: usize, height: usize, width: usize, masks: Vec<Vec<u8>>) -> Result<Self> {
        if masks.len() != columns * levels {
            return Err(CoreError::Shape(format!(
                "expected {} masks for {columns} columns x {levels} levels, got {}",
                columns * levels,
                masks.len()
            )));
        }
        let mut set = Self {
            columns,
            levels,
            height,
            width,
            unique: Vec::new(),
            index: Vec::with_capacity(masks.len()),
        };
        let mut seen: HashMap<Vec<u8>, usize> = HashMap::new();
        for m in masks {
            if m.len() != height * width || m.iter().any(|&v| v > 1) {
                return Err(CoreError::Shape(format!("mask must hold {} binary pixels", height * width)));
            }
            let next = set.unique.len();
            let id = *seen.entry(m.clone()).or_insert(next);
            if id == next {
                set.unique.push(m);
            }
            set.index.push(id);
        }
        Ok(set)
    }

    pub fn mask(&self, column: usize, level: usize) -> &[u8] {
        &self.unique[self.index[column * self.levels + level]]
    }

    /// Dense `[N, L, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.columns * self.levels * self.height * self.width);
        for &u in &self.index {
            data.extend(self.unique[u].iter().map(|&v| v as f64));
        }
        Tensor::new(&[self.columns, self.levels, self.height, self.width], data).expect("consistent mask shape")
    }
}

/// Region id of every level (sub-part, part, whole) under `(y, x)` and the
/// resulting masks. Points on background get the background mask at every
/// level. With `corrupt = Some((q, rng))`, each foreground mask is replaced
/// with probability `q` by another region of the same level.
fn masks_from_regions(
    regions: &[Vec<u8>; 3],
    height: usize,
    width: usize,
    points: &[(f64, f64)],
    levels: usize,
    mut corrupt: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<MaskSet> {
    if levels == 0 || levels > 3 {
        return Err(CoreError::Config(format!("oracle masks provide 1..=3 levels, asked for {levels}")));
    }
    let first = 3 - levels;
    let mut masks = Vec::with_capacity(points.len() * levels);
    for &(y, x) in points {
        let (py, px) = ((y as usize).min(height - 1), (x as usize).min(width - 1));
        let p = py * width + px;
        let background = regions[2][p] == 0;
        for map in &regions[first..] {
            if background {
                masks.push(regions[2].iter().map(|&v| u8::from(v == 0)).collect());
                continue;
            }
            let mut id = map[p];
            if let Some((q, rng)) = corrupt.as_mut() {
                if rng.gen_bool(*q) {
                    let mut others: Vec<u8> = map.iter().copied().filter(|&v| v != 0 && v != id).collect();
                    others.sort_unstable();
                    others.dedup();
                    if !others.is_empty() {
                        id = others[rng.gen_range(0..others.len())];
                    }
                }
            }
            masks.push(map.iter().map(|&v| u8::from(v == id)).collect());
        }
    }
    MaskSet::from_masks(points.len(), levels, height, width, masks)
}

/// Ground-truth three-level masks for every prompt point of a rendered sample,
/// from its region maps (ordered sub-part, part, whole).
pub fn oracle_masks(regions: &[Vec<u8>; 3], height: usize, width: usize, points: &[(f64, f64)], levels: usize) -> Result<MaskSet> {
    masks_from_regions(regions, height, width, points, levels, None)
}

/// Like [`oracle_masks`] but reading the regions straight off a scene.
pub fn oracle_masks_for_scene(scene: &SceneSpec, height: usize, width: usize, points: &[(f64, f64)], levels: usize) -> Result<MaskSet> {
    let regions = scene.rasterize(height, width);
    oracle_masks(&regions, height, width, points, levels)
}

/// Oracle masks with each foreground mask swapped, with probability `q`, for
/// a random sibling region at the same level.
pub fn corrupted_oracle_masks(
    regions: &[Vec<u8>; 3],
    height: usize,
    width: usize,
    points: &[(f64, f64)],
    levels: usize,
    q: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MaskSet> {
    if !(0.0..=1.0).contains(&q) {
        return Err(CoreError::Config(format!("corruption probability {q} outside [0,1]")));
    }
    if q == 0.0 {
        return oracle_masks(regions, height, width, points, levels);
    }
    masks_from_regions(regions, height, width, points, levels, Some((q, rng)))
}

/// Masks of a whole batch: distinct masks across all samples plus, for each
/// level, the row of every `(sample, column)` in that list.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBatch {
    pub height: usize,
    pub width: usize,
    pub levels: usize,
    pub columns: usize,
    pub batch: usize,
    pub unique: Vec<Vec<u8>>,
    /// `rows[l][b * columns + i]`
    pub rows: Vec<Vec<usize>>,
}

impl MaskBatch {
    pub fn new<S: Borrow<MaskSet>>(sets: &[S]) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| CoreError::Shape("mask batch needs at least one sample".into()))?
            .borrow();
        let (h, w, levels, columns) = (first.height, first.width, first.levels, first.columns);
        let mut unique: Vec<Vec<u8>> = Vec::new();
        let mut seen: HashMap<&[u8], usize> = HashMap::new();
        let mut rows = vec![Vec::with_capacity(sets.len() * columns); levels];
        for s in sets {
            let s = s.borrow();
            if (s.height, s.width, s.levels, s.columns) != (h, w, levels, columns) {
                return Err(CoreError::Shape("mask sets in a batch must share dimensions".into()));
            }
            let local: Vec<usize> = s
                .unique
                .iter()
                .map(|m| {
                    *seen.entry(m.as_slice()).or_insert_with(|| {
                        unique.push(m.clone());
                        unique.len() - 1
                    })
                })
                .collect();
            for i in 0..columns {
                for (l, r) in rows.iter_mut().enumerate() {
                    r.push(local[s.index[i * levels + l]]);
                }
            }
        }
        Ok(Self {
            height: h,
            width: w,
            levels,
            columns,
            batch: sets.len(),
            unique,
            rows,
        })
    }

    /// Distinct masks as an NHWC `[U, H, W, 1]` tensor.
    pub fn unique_tensor(&self) -> Tensor {
        let data = self.unique.iter().flat_map(|m| m.iter().map(|&v| v as f64)).collect();
        Tensor::new(&[self.unique.len(), self.height, self.width, 1], data).expect("consistent mask shape")
    }
}

/// I.i.d. Gaussian prior with standard deviation `1/√D`, shape `[N, L, D]`.
pub fn random_prior(columns: usize, levels: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive std");
    let data = (0..columns * levels * dim).map(|_| normal.sample(&mut rng)).collect();
    Tensor::new(&[columns, levels, dim], data).expect("consistent prior shape")
}
