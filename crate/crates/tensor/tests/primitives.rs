use std::rc::Rc;

use ccnet_tensor::{grad_check, ParamSet, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn softmax_of_uniform_logits() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::from_vec(vec![0.0; 3]));
    let y = t.softmax(x, 0).unwrap();
    assert!(close(t.value(y).data(), &[1.0 / 3.0; 3], 1e-15));
}

#[test]
fn softmax_matches_scalar_formula() {
    // oracle: e^x / Σ e^x evaluated term by term
    let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    let oracle: Vec<f64> = e.iter().map(|v| v / s).collect();
    assert!(close(&oracle, &[0.0900, 0.2447, 0.6652], 1e-4));

    let mut t = Tape::new();
    let x = t.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
    let y = t.softmax(x, 0).unwrap();
    assert!(close(t.value(y).data(), &oracle, 1e-12));
}

#[test]
fn identity_matmul() {
    let a = Tensor::new(&[3, 2], vec![1.0, -2.0, 3.5, 0.0, 7.0, 1e-3]).unwrap();
    let mut t = Tape::new();
    let i = t.constant(Tensor::eye(3));
    let av = t.constant(a.clone());
    let y = t.matmul(i, av).unwrap();
    assert_eq!(t.value(y), &a);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    let err = t.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
}

#[test]
fn square_gradient() {
    let mut t = Tape::new();
    let x = t.param(Tensor::scalar(3.0));
    let y = t.mul(x, x).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 6.0);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = vec![0.3, -1.2, 2.0, 0.5];
    let mut t = Tape::new();
    let x = t.param(Tensor::new(&[1, 4], logits.clone()).unwrap());
    let loss = t.softmax_cross_entropy(x, &[2]).unwrap();
    let g = t.backward(loss).unwrap();

    let e: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    let closed: Vec<f64> = e
        .iter()
        .enumerate()
        .map(|(i, v)| v / s - if i == 2 { 1.0 } else { 0.0 })
        .collect();
    assert!(close(g.get(x).unwrap().data(), &closed, 1e-12));

    let mut p = ParamSet::new();
    p.push("logits", Tensor::new(&[1, 4], logits).unwrap());
    let r = grad_check(|t, v| t.softmax_cross_entropy(v[0], &[2]), &p, 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

#[test]
fn unreachable_leaf_gets_zero() {
    let mut t = Tape::new();
    let x = t.param(Tensor::from_vec(vec![1.0, 2.0]));
    let w = t.param(Tensor::from_vec(vec![5.0, 6.0]));
    let loss = t.dot(x, x).unwrap();
    let g = t.backward(loss).unwrap();
    assert!(g.get(w).is_none());
    assert_eq!(g.wrt(&t, w), Tensor::zeros(&[2]));
}

#[test]
fn non_scalar_loss_rejected() {
    let mut t = Tape::new();
    let x = t.param(Tensor::from_vec(vec![1.0, 2.0]));
    assert_eq!(t.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
}

#[test]
fn double_use_doubles_gradient() {
    let x0 = Tensor::from_vec(vec![0.5, -1.5, 2.0]);
    let single = {
        let mut t = Tape::new();
        let x = t.param(x0.clone());
        let g = t.gelu(x);
        let l = t.sum_all(g);
        t.backward(l).unwrap().wrt(&t, x)
    };
    let twice = {
        let mut t = Tape::new();
        let x = t.param(x0);
        let g1 = t.gelu(x);
        let g2 = t.gelu(x);
        let s = t.add(g1, g2).unwrap();
        let l = t.sum_all(s);
        t.backward(l).unwrap().wrt(&t, x)
    };
    for (a, b) in single.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn masked_softmax_rejects_empty_row() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[2, 2]));
    let mask: Rc<[bool]> = vec![true, false, false, false].into();
    assert!(t.masked_softmax(x, &mask).is_err());
}

// ---- property tests -------------------------------------------------------

/// Every primitive, wrapped into a scalar loss `Σ op(x)·r` with fixed random
/// weights `r` so that no op reduces to a constant.
#[derive(Debug, Clone, Copy)]
enum Prim {
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    ScaleBy,
    MatMul,
    Bmm,
    BmmT,
    Gelu,
    Exp,
    Log,
    Softmax0,
    SoftmaxLast,
    MaskedSoftmax,
    MeanAxis,
    SumAxis,
    Dot,
    L2,
    Concat,
    Im2Col,
    MaxPool,
    Gather,
    Select,
    Nll,
    Xent,
}

const PRIMS: [Prim; 26] = [
    Prim::Add,
    Prim::Sub,
    Prim::Mul,
    Prim::AddRow,
    Prim::Scale,
    Prim::ScaleBy,
    Prim::MatMul,
    Prim::Bmm,
    Prim::BmmT,
    Prim::Gelu,
    Prim::Exp,
    Prim::Log,
    Prim::Softmax0,
    Prim::SoftmaxLast,
    Prim::MaskedSoftmax,
    Prim::MeanAxis,
    Prim::SumAxis,
    Prim::Dot,
    Prim::L2,
    Prim::Concat,
    Prim::Im2Col,
    Prim::MaxPool,
    Prim::Gather,
    Prim::Select,
    Prim::Nll,
    Prim::Xent,
];

fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let n = t.value(y).numel();
    let r: Vec<f64> = (0..n)
        .map(|i| (((i as u64 + 1) * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0)
        .collect();
    let rv = t.constant(Tensor::new(t.shape(y), r).unwrap());
    t.dot(y, rv)
}

fn build(prim: Prim, a: usize, b: usize, c: usize) -> (ParamSet, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>>) {
    let mut p = ParamSet::new();
    let val = |n: usize, k: u64| -> Vec<f64> {
        (0..n)
            .map(|i| ((((i as u64) * 7919 + k * 104729) % 997) as f64 / 997.0) * 2.0 - 1.0)
            .collect()
    };
    let positive = |v: Vec<f64>| v.into_iter().map(|x| x.abs() + 0.5).collect::<Vec<_>>();
    let t2 = |s: &[usize], d: Vec<f64>| Tensor::new(s, d).unwrap();
    match prim {
        Prim::Add | Prim::Sub | Prim::Mul | Prim::Dot => {
            p.push("x", t2(&[a, b], val(a * b, 1)));
            p.push("y", t2(&[a, b], val(a * b, 2)));
        }
        Prim::AddRow => {
            p.push("x", t2(&[a, b], val(a * b, 1)));
            p.push("r", t2(&[b], val(b, 2)));
        }
        Prim::ScaleBy => {
            p.push("x", t2(&[a, b], val(a * b, 1)));
            p.push("s", Tensor::scalar(0.7));
        }
        Prim::MatMul => {
            p.push("x", t2(&[a, b], val(a * b, 1)));
            p.push("y", t2(&[b, c], val(b * c, 2)));
        }
        Prim::Bmm => {
            p.push("x", t2(&[2, a, b], val(2 * a * b, 1)));
            p.push("y", t2(&[2, b, c], val(2 * b * c, 2)));
        }
        Prim::BmmT => {
            p.push("x", t2(&[2, a, b], val(2 * a * b, 1)));
            p.push("y", t2(&[2, c, b], val(2 * b * c, 2)));
        }
        Prim::Log => {
            p.push("x", t2(&[a, b], positive(val(a * b, 1))));
        }
        Prim::Nll => {
            // rows are a softmax so the input is a valid probability table
            p.push("x", t2(&[a, b], val(a * b, 1)));
        }
        Prim::Concat => {
            p.push("x", t2(&[a, b], val(a * b, 1)));
            p.push("y", t2(&[a, c], val(a * c, 2)));
        }
        Prim::Im2Col => {
            p.push("x", t2(&[1, 4, 4, a.min(2)], val(16 * a.min(2), 1)));
        }
        Prim::MaxPool => {
            // distinct values keep the argmax away from ties
            let n = 16 * a.min(2);
            let v: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64 * 0.1).collect();
            p.push("x", t2(&[1, 4, 4, a.min(2)], v));
        }
        _ => {
            p.push("x", t2(&[a, b], val(a * b, 1)));
        }
    }
    let f: Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>> = Box::new(move |t, v| {
        let y = match prim {
            Prim::Add => t.add(v[0], v[1])?,
            Prim::Sub => t.sub(v[0], v[1])?,
            Prim::Mul => t.mul(v[0], v[1])?,
            Prim::AddRow => t.add_row(v[0], v[1])?,
            Prim::Scale => t.scale(v[0], -1.7),
            Prim::ScaleBy => t.scale_by(v[0], v[1])?,
            Prim::MatMul => t.matmul(v[0], v[1])?,
            Prim::Bmm => t.bmm(v[0], v[1], false)?,
            Prim::BmmT => t.bmm(v[0], v[1], true)?,
            Prim::Gelu => t.gelu(v[0]),
            Prim::Exp => t.exp(v[0]),
            Prim::Log => t.log(v[0]),
            Prim::Softmax0 => t.softmax(v[0], 0)?,
            Prim::SoftmaxLast => t.softmax(v[0], 1)?,
            Prim::MaskedSoftmax => {
                let (r, c) = (t.shape(v[0])[0], t.shape(v[0])[1]);
                let mask: Rc<[bool]> = (0..r * c).map(|i| (i / c + i % c) % 2 == 0 || i % c == 0).collect();
                t.masked_softmax(v[0], &mask)?
            }
            Prim::MeanAxis => t.mean_axis(v[0], 0)?,
            Prim::SumAxis => t.sum_axis(v[0], 1)?,
            Prim::Dot => return t.dot(v[0], v[1]),
            Prim::L2 => return Ok(t.l2_norm(v[0])),
            Prim::Concat => t.concat(&[v[0], v[1]], 1)?,
            Prim::Im2Col => t.im2col(v[0], 3, 1, 1)?,
            Prim::MaxPool => t.max_pool2(v[0])?,
            Prim::Gather => {
                let rows = t.shape(v[0])[0];
                let idx: Vec<usize> = (0..rows + 2).map(|i| (i * 3) % rows).collect();
                t.gather_rows(v[0], &idx)?
            }
            Prim::Select => return t.select(v[0], 0),
            Prim::Nll => {
                let p = t.softmax(v[0], 1)?;
                let rows = t.shape(v[0])[0];
                let cols = t.shape(v[0])[1];
                let labels: Vec<usize> = (0..rows).map(|i| i % cols).collect();
                return t.nll_probs(p, &labels);
            }
            Prim::Xent => {
                let rows = t.shape(v[0])[0];
                let cols = t.shape(v[0])[1];
                let labels: Vec<usize> = (0..rows).map(|i| (i * 5) % cols).collect();
                return t.softmax_cross_entropy(v[0], &labels);
            }
        };
        weighted_sum(t, y, 17)
    });
    (p, f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_primitive_matches_central_differences(
        pi in 0..PRIMS.len(),
        a in 1usize..=4,
        b in 1usize..=8,
        c in 1usize..=4,
    ) {
        let (p, f) = build(PRIMS[pi], a, b, c);
        prop_assume!(p.numel() <= 64);
        let r = grad_check(f, &p, 1e-5).unwrap();
        prop_assert!(r.max_rel_error < 1e-4, "{:?}: {:?}", PRIMS[pi], r);
    }

    #[test]
    fn softmax_is_a_simplex(v in proptest::collection::vec(-30.0f64..30.0, 1..64), rows in 1usize..4) {
        let cols = v.len();
        let data: Vec<f64> = (0..rows * cols).map(|i| v[i % cols] * (1.0 + i as f64 * 0.01)).collect();
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[rows, cols], data).unwrap());
        let y = t.softmax(x, 1).unwrap();
        for row in t.value(y).data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn exhaustive_primitive_sweep_small_shapes() {
    for prim in PRIMS {
        for (a, b, c) in [(1, 1, 1), (2, 3, 2), (3, 4, 1)] {
            let (p, f) = build(prim, a, b, c);
            let r = grad_check(f, &p, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "{prim:?} {a}x{b}x{c}: {r:?}");
        }
    }
}

#[test]
fn im2col_matches_naive_indexing() {
    let (b, h, w, c) = (2, 5, 4, 3);
    let x: Vec<f64> = (0..b * h * w * c).map(|i| i as f64 + 1.0).collect();
    for &(k, s, pad) in &[(3, 1, 1), (2, 2, 0), (3, 2, 1), (4, 1, 2), (1, 1, 0)] {
        let mut t = Tape::new();
        let v = t.constant(Tensor::new(&[b, h, w, c], x.clone()).unwrap());
        let cols = t.im2col(v, k, s, pad).unwrap();
        let oh = (h + 2 * pad - k) / s + 1;
        let ow = (w + 2 * pad - k) / s + 1;
        let mut expect = Vec::new();
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..k {
                        for kx in 0..k {
                            for ch in 0..c {
                                let iy = (oy * s + ky) as isize - pad as isize;
                                let ix = (ox * s + kx) as isize - pad as isize;
                                let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                                expect.push(if inside {
                                    x[((bi * h + iy as usize) * w + ix as usize) * c + ch]
                                } else {
                                    0.0
                                });
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(t.shape(cols), &[b * oh * ow, k * k * c]);
        assert_eq!(t.value(cols).data(), &expect[..], "k={k} s={s} pad={pad}");
    }
}
