//! Scene graphs: one object per scene, built from a class-specific vocabulary
//! of geometric primitives. Every part is split into sub-parts along a
//! primitive-specific coordinate, so the sub-part ⊆ part ⊆ whole nesting holds
//! by construction.

use std::f64::consts::PI;

use rand::Rng;

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    Circle,
    Rect,
    Triangle,
    Line,
}

/// Primitive in object-local coordinates (y grows downwards, like pixels).
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Circle {
        center: [f64; 2],
        radius: f64,
        /// angular offset of the first sector
        phase: f64,
    },
    Rect {
        center: [f64; 2],
        half: [f64; 2],
    },
    Triangle {
        apex: [f64; 2],
        base_y: f64,
        half_width: f64,
    },
    Line {
        from: [f64; 2],
        to: [f64; 2],
        half_width: f64,
    },
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::Circle { .. } => PrimitiveKind::Circle,
            Primitive::Rect { .. } => PrimitiveKind::Rect,
            Primitive::Triangle { .. } => PrimitiveKind::Triangle,
            Primitive::Line { .. } => PrimitiveKind::Line,
        }
    }

    /// Returns the sub-division coordinate in `[0, 1)` when `p` lies inside.
    pub fn locate(&self, p: [f64; 2]) -> Option<f64> {
        match *self {
            Primitive::Circle { center, radius, phase } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                if dx * dx + dy * dy > radius * radius {
                    return None;
                }
                let a = (dy.atan2(dx) + PI + phase).rem_euclid(2.0 * PI);
                Some((a / (2.0 * PI)).min(1.0 - 1e-12))
            }
            Primitive::Rect { center, half } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                if dx.abs() > half[0] || dy.abs() > half[1] {
                    return None;
                }
                let t = if half[0] >= half[1] {
                    (dx / half[0] + 1.0) / 2.0
                } else {
                    (dy / half[1] + 1.0) / 2.0
                };
                Some(t.clamp(0.0, 1.0 - 1e-12))
            }
            Primitive::Triangle {
                apex,
                base_y,
                half_width,
            } => {
                let h = base_y - apex[1];
                let depth = (p[1] - apex[1]) / h;
                if !(0.0..=1.0).contains(&depth) {
                    return None;
                }
                if (p[0] - apex[0]).abs() > half_width * depth {
                    return None;
                }
                Some(depth.min(1.0 - 1e-12))
            }
            Primitive::Line { from, to, half_width } => {
                let (vx, vy) = (to[0] - from[0], to[1] - from[1]);
                let len2 = vx * vx + vy * vy;
                let t = ((p[0] - from[0]) * vx + (p[1] - from[1]) * vy) / len2;
                if !(0.0..=1.0).contains(&t) {
                    return None;
                }
                let (cx, cy) = (from[0] + t * vx, from[1] + t * vy);
                let d2 = (p[0] - cx).powi(2) + (p[1] - cy).powi(2);
                if d2 > half_width * half_width {
                    return None;
                }
                Some(t.min(1.0 - 1e-12))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub shape: Primitive,
    /// number of sub-parts (2 or 3), equal slices of the locate coordinate
    pub subparts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// object centre in pixels (x, y)
    pub center: [f64; 2],
    /// pixels per object-local unit
    pub scale: f64,
    /// radians
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub class_id: usize,
    pub pose: Pose,
    pub parts: Vec<Part>,
}

/// Ground-truth region ids for one pixel: (sub-part, part, whole). Zero is
/// background at every level; part and sub-part ids are 1-based and unique
/// within the scene.
pub type RegionIds = [u8; 3];

impl SceneSpec {
    pub fn total_subparts(&self) -> usize {
        self.parts.iter().map(|p| p.subparts).sum()
    }

    pub fn to_local(&self, px: f64, py: f64) -> [f64; 2] {
        let (dx, dy) = (px - self.pose.center[0], py - self.pose.center[1]);
        let (s, c) = (-self.pose.rotation).sin_cos();
        [(c * dx - s * dy) / self.pose.scale, (s * dx + c * dy) / self.pose.scale]
    }

    /// Region ids of a point given in object-local coordinates. Earlier parts
    /// win where parts overlap.
    pub fn regions_local(&self, p: [f64; 2]) -> RegionIds {
        let mut first_sub = 1usize;
        for (pi, part) in self.parts.iter().enumerate() {
            if let Some(t) = part.shape.locate(p) {
                let s = ((t * part.subparts as f64) as usize).min(part.subparts - 1);
                return [(first_sub + s) as u8, (pi + 1) as u8, 1];
            }
            first_sub += part.subparts;
        }
        [0, 0, 0]
    }

    /// Region ids sampled at pixel centres; returns three `height × width`
    /// maps ordered sub-part, part, whole.
    pub fn rasterize(&self, height: usize, width: usize) -> [Vec<u8>; 3] {
        let mut maps = [vec![0u8; height * width], vec![0u8; height * width], vec![0u8; height * width]];
        for y in 0..height {
            for x in 0..width {
                let ids = self.regions_local(self.to_local(x as f64 + 0.5, y as f64 + 0.5));
                for l in 0..3 {
                    maps[l][y * width + x] = ids[l];
                }
            }
        }
        maps
    }

    /// Largest pairwise part overlap as a fraction of the smaller part's area,
    /// estimated on a dense grid in object-local coordinates.
    pub fn max_part_overlap(&self) -> f64 {
        const GRID: usize = 96;
        const EXTENT: f64 = 1.3;
        let n = self.parts.len();
        let mut area = vec![0usize; n];
        let mut inter = vec![vec![0usize; n]; n];
        for gy in 0..GRID {
            for gx in 0..GRID {
                let p = [
                    -EXTENT + 2.0 * EXTENT * (gx as f64 + 0.5) / GRID as f64,
                    -EXTENT + 2.0 * EXTENT * (gy as f64 + 0.5) / GRID as f64,
                ];
                let inside: Vec<bool> = self.parts.iter().map(|pt| pt.shape.locate(p).is_some()).collect();
                for i in 0..n {
                    if inside[i] {
                        area[i] += 1;
                        for j in i + 1..n {
                            if inside[j] {
                                inter[i][j] += 1;
                            }
                        }
                    }
                }
            }
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let denom = area[i].min(area[j]).max(1) as f64;
                worst = worst.max(inter[i][j] as f64 / denom);
            }
        }
        worst
    }
}

fn jitter(rng: &mut impl Rng, v: f64, rel: f64) -> f64 {
    v * (1.0 + rng.gen_range(-rel..=rel))
}

fn sample_parts(class_id: usize, rng: &mut impl Rng) -> Vec<Part> {
    let k = rng.gen_range(2..=3usize);
    let mut sub = || rng.gen_range(2..=3usize);
    let subs: Vec<usize> = (0..k).map(|_| sub()).collect();
    let mut parts = Vec::with_capacity(k);
    match class_id {
        // stacked circles, largest at the bottom
        0 => {
            let radii: Vec<f64> = if k == 2 { vec![0.55, 0.4] } else { vec![0.45, 0.34, 0.25] };
            let mut y = if k == 2 { 0.4 } else { 0.52 };
            for (i, &r0) in radii.iter().enumerate() {
                let r = jitter(rng, r0, 0.1);
                if i > 0 {
                    y -= parts_radius(&parts, i - 1) + r * 0.92;
                }
                parts.push(Part {
                    shape: Primitive::Circle {
                        center: [rng.gen_range(-0.05..0.05), y],
                        radius: r,
                        phase: rng.gen_range(0.0..2.0 * PI),
                    },
                    subparts: subs[i],
                });
            }
        }
        // slab on legs (k=3) or on a pedestal (k=2)
        1 => {
            let slab_hw = jitter(rng, 0.85, 0.1);
            let slab_hh = jitter(rng, 0.17, 0.15);
            let top = -0.55;
            parts.push(Part {
                shape: Primitive::Rect {
                    center: [0.0, top + slab_hh],
                    half: [slab_hw, slab_hh],
                },
                subparts: subs[0],
            });
            let leg_top = top + 2.0 * slab_hh;
            let leg_bottom = jitter(rng, 0.8, 0.08);
            let leg_hh = (leg_bottom - leg_top) / 2.0;
            if k == 2 {
                parts.push(Part {
                    shape: Primitive::Rect {
                        center: [0.0, leg_top + leg_hh],
                        half: [jitter(rng, 0.2, 0.15), leg_hh],
                    },
                    subparts: subs[1],
                });
            } else {
                let leg_hw = jitter(rng, 0.13, 0.15);
                for (i, side) in [-1.0, 1.0].into_iter().enumerate() {
                    parts.push(Part {
                        shape: Primitive::Rect {
                            center: [side * (slab_hw - leg_hw - 0.05), leg_top + leg_hh],
                            half: [leg_hw, leg_hh],
                        },
                        subparts: subs[i + 1],
                    });
                }
            }
        }
        // stacked triangles (a pine), widest at the bottom
        2 => {
            let layers: Vec<(f64, f64, f64)> = if k == 2 {
                vec![(-0.15, 0.85, 0.8), (-0.85, 0.0, 0.55)]
            } else {
                vec![(0.1, 0.9, 0.8), (-0.45, 0.25, 0.6), (-0.9, -0.3, 0.42)]
            };
            for (i, (apex, base, hw)) in layers.into_iter().enumerate() {
                let dy = rng.gen_range(-0.04..0.04);
                parts.push(Part {
                    shape: Primitive::Triangle {
                        apex: [0.0, apex + dy],
                        base_y: base + dy,
                        half_width: jitter(rng, hw, 0.1),
                    },
                    subparts: subs[i],
                });
            }
        }
        // connected thick strokes (V or Z)
        _ => {
            let w = jitter(rng, 0.15, 0.15);
            let s = jitter(rng, 0.7, 0.1);
            let points: Vec<[f64; 2]> = if k == 2 {
                vec![[-s, -s], [0.0, s], [s, -s]]
            } else {
                vec![[-s, -s], [s, -s], [-s, s], [s, s]]
            };
            for i in 0..k {
                parts.push(Part {
                    shape: Primitive::Line {
                        from: points[i],
                        to: points[i + 1],
                        half_width: w,
                    },
                    subparts: subs[i],
                });
            }
        }
    }
    parts
}

fn parts_radius(parts: &[Part], i: usize) -> f64 {
    match parts[i].shape {
        Primitive::Circle { radius, .. } => radius,
        _ => 0.0,
    }
}

/// Samples a scene of `class_id`, resampling until no two parts overlap by
/// more than 20% of the smaller part's area.
pub fn make_scene(class_id: usize, height: usize, width: usize, rng: &mut impl Rng) -> SceneSpec {
    assert!(class_id < NUM_CLASSES, "class id {class_id} out of range");
    loop {
        let parts = sample_parts(class_id, rng);
        let side = height.min(width) as f64;
        let scale = rng.gen_range(0.28..0.36) * side;
        let margin = scale * 1.05;
        let pose = Pose {
            center: [
                rng.gen_range(margin.min(width as f64 / 2.0)..=(width as f64 - margin).max(width as f64 / 2.0)),
                rng.gen_range(margin.min(height as f64 / 2.0)..=(height as f64 - margin).max(height as f64 / 2.0)),
            ],
            scale,
            rotation: rng.gen_range(-0.35..0.35),
        };
        let scene = SceneSpec { class_id, pose, parts };
        if scene.max_part_overlap() <= 0.2 {
            return scene;
        }
    }
}

/// Rule-based classifier over scene graphs: the primitive kind of any part
/// identifies the class.
pub fn oracle_class(scene: &SceneSpec) -> usize {
    match scene.parts[0].shape.kind() {
        PrimitiveKind::Circle => 0,
        PrimitiveKind::Rect => 1,
        PrimitiveKind::Triangle => 2,
        PrimitiveKind::Line => 3,
    }
}
