use ccnet_fed::{amplitude, amplitude_mix, spectrum, FedError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn lambda_zero_reconstructs_input() {
    let img = random_image(3, 32, 32, 1);
    let foreign = amplitude(&random_image(3, 32, 32, 2), 3, 32, 32);
    let out = amplitude_mix(&img, &foreign, 3, 32, 32, 0.0).unwrap();
    assert!(max_diff(&img, &out) < 1e-9);
}

#[test]
fn self_mix_reconstructs_input() {
    let img = random_image(3, 16, 24, 3);
    let own = amplitude(&img, 3, 16, 24);
    let out = amplitude_mix(&img, &own, 3, 16, 24, 1.0).unwrap();
    assert!(max_diff(&img, &out) < 1e-9);
}

#[test]
fn impulse_with_flat_foreign_amplitude() {
    // a unit impulse at (1, 2) has |F| = 1 everywhere; mixing with a flat
    // amplitude of 3 at λ = 0.5 scales the spectrum by 2, so the output is
    // the same impulse with height 2
    let (h, w) = (4, 4);
    let mut img = vec![0.0; h * w];
    img[w + 2] = 1.0;
    let out = amplitude_mix(&img, &[3.0; 16], 1, h, w, 0.5).unwrap();
    let mut expect = vec![0.0; h * w];
    expect[w + 2] = 2.0;
    assert!(max_diff(&out, &expect) < 1e-12, "{out:?}");
}

#[test]
fn impulse_amplitude_is_flat() {
    let mut img = vec![0.0; 16];
    img[5] = 1.0;
    for a in amplitude(&img, 1, 4, 4) {
        assert!((a - 1.0).abs() < 1e-12);
    }
}

#[test]
fn phase_kept_and_amplitude_mixed() {
    let (c, h, w) = (3, 8, 8);
    let img = random_image(c, h, w, 4);
    let foreign = amplitude(&random_image(c, h, w, 5), c, h, w);
    let lambda = 0.3;
    let out = amplitude_mix(&img, &foreign, c, h, w, lambda).unwrap();
    let before = spectrum(&img, c, h, w);
    let after = spectrum(&out, c, h, w);
    for ((f, g), &a) in before.iter().zip(&after).zip(&foreign) {
        let want = (1.0 - lambda) * f.norm() + lambda * a;
        // taking the real part symmetrises the amplitude of a conjugate
        // pair; both members of a real image's pair share |F|, and the
        // foreign spectrum comes from a real image as well
        assert!((g.norm() - want).abs() < 1e-6, "{} vs {want}", g.norm());
        if f.norm() > 1e-9 && g.norm() > 1e-9 {
            let d = (g.arg() - f.arg()).rem_euclid(std::f64::consts::TAU);
            assert!(d < 1e-6 || std::f64::consts::TAU - d < 1e-6, "phase moved by {d}");
        }
    }
}

#[test]
fn mismatched_dims_rejected() {
    let img = random_image(1, 4, 4, 6);
    assert!(matches!(amplitude_mix(&img, &[1.0; 9], 1, 4, 4, 0.5), Err(FedError::Shape(_))));
    assert!(matches!(amplitude_mix(&img, &[1.0; 16], 1, 4, 5, 0.5), Err(FedError::Shape(_))));
    assert!(matches!(amplitude_mix(&img, &[1.0; 16], 1, 4, 4, 1.5), Err(FedError::Config(_))));
}
