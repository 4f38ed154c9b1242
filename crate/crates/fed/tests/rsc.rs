use ccnet_fed::{rsc_apply, rsc_drop_count, rsc_mask};
use ccnet_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn single_unit_goes_to_the_largest_saliency() {
    let f = Tensor::new(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap();
    let g = Tensor::new(&[1, 3], vec![3.0, 1.0, 2.0]).unwrap();
    // 33% of 3 units is one unit
    assert_eq!(rsc_drop_count(3, 33.0), 1);
    let m = rsc_mask(&f, &g, 33.0).unwrap();
    assert_eq!(m.data(), &[0.0, 1.0, 1.0]);
    assert_eq!(rsc_apply(&f, &g, 33.0).unwrap().data(), &[0.0, 1.0, 1.0]);
}

#[test]
fn saliency_is_feature_times_gradient() {
    // gradients alone would pick unit 0; the product picks unit 2
    let f = Tensor::new(&[1, 3], vec![0.1, 1.0, 2.0]).unwrap();
    let g = Tensor::new(&[1, 3], vec![3.0, 1.0, 2.0]).unwrap();
    assert_eq!(rsc_mask(&f, &g, 33.0).unwrap().data(), &[1.0, 1.0, 0.0]);
}

#[test]
fn ties_go_to_the_lower_index() {
    let f = Tensor::new(&[1, 4], vec![1.0; 4]).unwrap();
    let g = Tensor::new(&[1, 4], vec![2.0, 5.0, 5.0, 5.0]).unwrap();
    assert_eq!(rsc_mask(&f, &g, 50.0).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn drop_count_is_the_ceiling() {
    assert_eq!(rsc_drop_count(10, 33.0), 4);
    assert_eq!(rsc_drop_count(4, 25.0), 1);
    assert_eq!(rsc_drop_count(100, 33.0), 33);
    assert_eq!(rsc_drop_count(7, 50.0), 4);
    assert_eq!(rsc_drop_count(1, 1.0), 1);
}

#[test]
fn masked_fraction_is_exact_over_many_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (b, units, p) = (8, 96, 33.0);
    let mut zeros = 0usize;
    for _ in 0..1000 {
        let f = Tensor::new(&[b, units], (0..b * units).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let g = Tensor::new(&[b, units], (0..b * units).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        zeros += rsc_mask(&f, &g, p).unwrap().data().iter().filter(|&&v| v == 0.0).count();
    }
    // ⌈0.33 · 96⌉ = 32 units per sample
    assert_eq!(zeros, 1000 * b * 32);
}

#[test]
fn shape_mismatch_rejected() {
    let f = Tensor::new(&[1, 3], vec![1.0; 3]).unwrap();
    let g = Tensor::new(&[3, 1], vec![1.0; 3]).unwrap();
    assert!(rsc_mask(&f, &g, 33.0).is_err());
}
