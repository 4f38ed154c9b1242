//! Domain styles. A style decides colours, strokes, textures and noise; it
//! never touches geometry, so the region maps of a scene are identical under
//! every style.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scene::SceneSpec;

pub const NUM_DOMAINS: usize = 4;
pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Renderer {
    FilledSolid,
    OutlineStroke,
    TexturedFill,
    QuantizedFlat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainStyle {
    pub domain_id: usize,
    pub renderer: Renderer,
    /// standard deviation of additive Gaussian pixel noise
    pub noise: f64,
}

impl DomainStyle {
    pub fn for_domain(domain_id: usize) -> Self {
        let (renderer, noise) = match domain_id {
            0 => (Renderer::FilledSolid, 0.02),
            1 => (Renderer::OutlineStroke, 0.03),
            2 => (Renderer::TexturedFill, 0.05),
            3 => (Renderer::QuantizedFlat, 0.06),
            _ => panic!("domain id {domain_id} out of range"),
        };
        Self {
            domain_id,
            renderer,
            noise,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }
}

/// One labelled image with its ground-truth hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[C, H, W]`, values in `[0, 1]`
    pub image: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub label: usize,
    pub domain_id: usize,
    /// region-id maps ordered sub-part, part, whole (0 = background)
    pub regions: [Vec<u8>; 3],
}

impl Sample {
    pub fn pixel(&self, c: usize, y: usize, x: usize) -> f64 {
        self.image[(c * self.height + y) * self.width + x]
    }
}

fn random_hue(rng: &mut impl Rng, sat: f64, val: f64) -> [f64; 3] {
    let h: f64 = rng.gen_range(0.0..6.0);
    let c = val * sat;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = val - c;
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

fn quantize(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| (v * 2.0).round() / 2.0)
}

/// Renders `scene` under `style`. All randomness (palette, texture phase,
/// noise) is drawn from `rng`.
pub fn render(scene: &SceneSpec, style: &DomainStyle, height: usize, width: usize, rng: &mut impl Rng) -> Sample {
    let regions = scene.rasterize(height, width);
    let hw = height * width;
    let mut rgb = vec![[0.0f64; 3]; hw];
    let nparts = scene.parts.len();
    let [sub, part, whole] = &regions;

    match style.renderer {
        Renderer::FilledSolid => {
            let bg = [0.0; 3].map(|_| rng.gen_range(0.78..0.95));
            let colors: Vec<[f64; 3]> = (0..nparts).map(|_| random_hue(rng, 0.85, 0.85)).collect();
            for i in 0..hw {
                rgb[i] = if part[i] == 0 {
                    bg
                } else {
                    let shade = 1.0 - 0.12 * ((sub[i] as usize) % 3) as f64;
                    colors[part[i] as usize - 1].map(|v| v * shade)
                };
            }
        }
        Renderer::OutlineStroke => {
            let bg = [0.0; 3].map(|_| rng.gen_range(0.0..0.12));
            let ink: Vec<[f64; 3]> = (0..nparts).map(|_| random_hue(rng, 0.4, 1.0)).collect();
            for y in 0..height {
                for x in 0..width {
                    let i = y * width + x;
                    let here = sub[i];
                    let edge = here != 0
                        && [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dy, dx)| {
                            let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                            if ny < 0 || nx < 0 || ny >= height as i64 || nx >= width as i64 {
                                return true;
                            }
                            sub[ny as usize * width + nx as usize] != here
                        });
                    rgb[i] = if edge { ink[part[i] as usize - 1] } else { bg };
                }
            }
        }
        Renderer::TexturedFill => {
            let dir = rng.gen_range(0.0..std::f64::consts::PI);
            let (dx, dy) = (dir.cos(), dir.sin());
            let period = rng.gen_range(3.0..5.0);
            let pairs: Vec<([f64; 3], [f64; 3])> = (0..nparts)
                .map(|_| (random_hue(rng, 0.7, 0.9), random_hue(rng, 0.7, 0.45)))
                .collect();
            let bg_base = rng.gen_range(0.35..0.6);
            for y in 0..height {
                for x in 0..width {
                    let i = y * width + x;
                    rgb[i] = if part[i] == 0 {
                        let g = bg_base + rng.gen_range(-0.15..0.15);
                        [g, g * 0.95, g * 0.9]
                    } else {
                        let phase = (x as f64 * dx + y as f64 * dy) / period;
                        let (a, b) = pairs[part[i] as usize - 1];
                        if phase.rem_euclid(1.0) < 0.5 {
                            a
                        } else {
                            b
                        }
                    };
                }
            }
        }
        Renderer::QuantizedFlat => {
            let (bg, fg) = loop {
                let bg = quantize([0.0; 3].map(|_| rng.gen_range(0.0..1.0)));
                let fg = quantize([0.0; 3].map(|_| rng.gen_range(0.0..1.0)));
                let d: f64 = bg.iter().zip(&fg).map(|(a, b)| (a - b).abs()).sum();
                if d >= 1.0 {
                    break (bg, fg);
                }
            };
            for i in 0..hw {
                rgb[i] = if whole[i] == 0 { bg } else { fg };
            }
        }
    }

    let mut image = vec![0.0; CHANNELS * hw];
    let noise = (style.noise > 0.0).then(|| Normal::new(0.0, style.noise).expect("valid noise"));
    for i in 0..hw {
        for c in 0..CHANNELS {
            let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
            image[c * hw + i] = (rgb[i][c] + n).clamp(0.0, 1.0);
        }
    }
    Sample {
        image,
        height,
        width,
        label: scene.class_id,
        domain_id: style.domain_id,
        regions,
    }
}
