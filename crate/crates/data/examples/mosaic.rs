//! Writes a grid of samples (rows: classes, columns: domains) as a PPM image.
use ccnet_data::{generate_one, DatasetConfig};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "mosaic.ppm".into());
    let cfg = DatasetConfig::new(1, 40);
    let (rows, cols, s) = (8, 4, 32);
    let (h, w) = (rows * s, cols * s);
    let mut img = vec![0u8; h * w * 3];
    for r in 0..rows {
        for d in 0..cols {
            let (_, smp) = generate_one(&cfg, d, r, r % 4);
            for y in 0..s {
                for x in 0..s {
                    for c in 0..3 {
                        img[((r * s + y) * w + d * s + x) * 3 + c] = (smp.pixel(c, y, x) * 255.0).round() as u8;
                    }
                }
            }
        }
    }
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend(img);
    std::fs::write(out, bytes).unwrap();
}
