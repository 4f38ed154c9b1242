//! The tiny instance (D=2, two columns, two levels) recomputed with plain
//! loops, sharing nothing with the tape.

use ccnet_tensor::ParamSet;

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

struct P<'a>(&'a ParamSet);

impl P<'_> {
    fn t(&self, name: &str) -> &[f64] {
        self.0.by_name(name).unwrap_or_else(|| panic!("no parameter {name}")).data()
    }

    /// `y = x·W + b` with `W` stored `[in, out]`.
    fn affine(&self, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
        let (w, b) = (self.t(w), self.t(b));
        let out = b.len();
        (0..out)
            .map(|j| b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + j]).sum::<f64>())
            .collect()
    }

    fn mlp(&self, prefix: &str, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self
            .affine(&format!("{prefix}.w1"), &format!("{prefix}.b1"), x)
            .into_iter()
            .map(gelu)
            .collect();
        self.affine(&format!("{prefix}.w2"), &format!("{prefix}.b2"), &h)
    }

    /// Non-overlapping `k×k` convolution of an `h×w×c` map, then GELU if asked.
    fn conv(&self, w: &str, b: &str, x: &[f64], (h, wd, c): (usize, usize, usize), k: usize, act: bool) -> Vec<f64> {
        let (oh, ow) = (h / k, wd / k);
        let mut out = Vec::new();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut patch = Vec::new();
                for ky in 0..k {
                    for kx in 0..k {
                        for ch in 0..c {
                            patch.push(x[((oy * k + ky) * wd + ox * k + kx) * c + ch]);
                        }
                    }
                }
                let y = self.affine(w, b, &patch);
                out.extend(y.into_iter().map(|v| if act { gelu(v) } else { v }));
            }
        }
        out
    }
}

/// Straight-line forward: image `8×16×3` (HWC), masks `[column][level]`
/// of `8×16`, returns class probabilities.
pub fn oracle_forward(params: &ParamSet, image: &[f64], masks: &[[Vec<f64>; 2]; 2]) -> Vec<f64> {
    let p = P(params);
    // tokens: 2×2 conv to 4×8×2, GELU, then 4×4 conv to 1×2×D
    let h1 = p.conv("tok.conv1.w", "tok.conv1.b", image, (8, 16, 3), 2, true);
    let tok = p.conv("tok.conv2.w", "tok.conv2.b", &h1, (4, 8, 2), 4, false);
    let mut z = vec![vec![vec![0.0; 2]; 3]; 2]; // z[column][level]
    for i in 0..2 {
        z[i][0] = tok[i * 2..i * 2 + 2].to_vec();
        for l in 0..2 {
            let e1 = p.conv("enc.conv1.w", "enc.conv1.b", &masks[i][l], (8, 16, 1), 4, true);
            let e2 = p.conv("enc.conv2.w", "enc.conv2.b", &e1, (2, 4, 2), 2, true);
            z[i][l + 1] = p.affine("enc.fc.w", "enc.fc.b", &e2);
        }
    }

    let beta: Vec<f64> = p.t("attn.log_beta").iter().map(|v| v.exp()).collect();
    let mut next = z.clone();
    for l in 1..=2 {
        let alpha = softmax(p.t(&format!("contrib{l}")));
        for i in 0..2 {
            let bu = p.mlp(&format!("bu{l}"), &z[i][l - 1]);
            let scores: Vec<f64> = (0..2)
                .map(|j| beta[l - 1] * (z[i][l][0] * z[j][l][0] + z[i][l][1] * z[j][l][1]))
                .collect();
            let w = softmax(&scores);
            let attn: Vec<f64> = (0..2).map(|k| w[0] * z[0][l][k] + w[1] * z[1][l][k]).collect();
            next[i][l] = if l == 1 {
                let td = p.mlp("td1", &z[i][2]);
                (0..2)
                    .map(|k| alpha[0] * bu[k] + alpha[1] * td[k] + alpha[2] * z[i][l][k] + alpha[3] * attn[k])
                    .collect()
            } else {
                (0..2)
                    .map(|k| alpha[0] * bu[k] + alpha[1] * z[i][l][k] + alpha[2] * attn[k])
                    .collect()
            };
        }
    }

    let mut probs = vec![0.0; 3];
    for l in [2, 1] {
        let pooled: Vec<f64> = (0..2).map(|k| 0.5 * (next[0][l][k] + next[1][l][k])).collect();
        let h: Vec<f64> = p
            .affine(&format!("head{l}.w1"), &format!("head{l}.b1"), &pooled)
            .into_iter()
            .map(gelu)
            .collect();
        let logits = p.affine(&format!("head{l}.w2"), &format!("head{l}.b2"), &h);
        for (acc, v) in probs.iter_mut().zip(softmax(&logits)) {
            *acc += v / 2.0;
        }
    }
    probs
}

