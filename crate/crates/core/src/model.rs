//! The column network: tokenizer, mask encoder, the four update modules, the
//! single update step and the multi-level heads.

use std::rc::Rc;

use ccnet_tensor::{ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::CcNetConfig;
use crate::error::{CoreError, Result};
use crate::prior::MaskBatch;

/// Hidden state `Z` at one time step: `[B, N, L+1, D]`, level 0 = tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnState {
    pub z: Tensor,
    pub t: usize,
}

impl ColumnState {
    pub fn batch(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn columns(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn levels(&self) -> usize {
        self.z.shape()[2]
    }

    pub fn dim(&self) -> usize {
        self.z.shape()[3]
    }

    /// Embedding of column `i`, level `l` of sample `b`.
    pub fn embedding(&self, b: usize, i: usize, l: usize) -> &[f64] {
        let s = self.z.shape();
        let start = ((b * s[1] + i) * s[2] + l) * s[3];
        &self.z.data()[start..start + s[3]]
    }
}

/// Tape handles of every level of `Z`; each is `[B·N, D]` with rows ordered
/// `(sample, column)`.
#[derive(Debug, Clone)]
pub struct ColumnVars {
    pub levels: Vec<Var>,
    pub batch: usize,
    pub columns: usize,
    pub t: usize,
}

impl ColumnVars {
    pub fn to_state(&self, tape: &Tape) -> ColumnState {
        let (b, n) = (self.batch, self.columns);
        let d = tape.shape(self.levels[0])[1];
        let nl = self.levels.len();
        let mut data = vec![0.0; b * n * nl * d];
        for (l, &v) in self.levels.iter().enumerate() {
            let src = tape.value(v).data();
            for r in 0..b * n {
                let dst = (r * nl + l) * d;
                data[dst..dst + d].copy_from_slice(&src[r * d..(r + 1) * d]);
            }
        }
        ColumnState {
            z: Tensor::new(&[b, n, nl, d], data).expect("consistent state shape"),
            t: self.t,
        }
    }
}

/// Indices of one two-layer MLP in the parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpIndex {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Where every parameter tensor of the model lives in its [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tok: [usize; 4],
    pub enc: [usize; 6],
    /// `bu[l-1]` maps level l−1 to l, for l = 1..=L
    pub bu: Vec<MlpIndex>,
    /// `td[l-1]` maps level l+1 to l, for l = 1..L
    pub td: Vec<MlpIndex>,
    /// `[L]` free parameters, β_l = exp(log_beta[l-1])
    pub log_beta: usize,
    /// `contrib[l-1]` is `[4]` (BU, TD, identity, attention) below the top
    /// level and `[3]` (BU, identity, attention) at level L
    pub contrib: Vec<usize>,
    /// heads in the order of [`CcNetConfig::head_levels`]
    pub heads: Vec<MlpIndex>,
}

/// Column network for one configuration. Holds no parameters; those live in
/// a [`ParamSet`] built by [`CcNet::init_params`].
#[derive(Debug, Clone)]
pub struct CcNet {
    pub config: CcNetConfig,
    pub layout: ParamLayout,
    neighbourhood: Vec<bool>,
}

struct Builder<'a> {
    params: ParamSet,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.params
            .push(name, Tensor::new(&[fan_in, fan_out], data).expect("weight shape"))
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> usize {
        self.params.push(name, Tensor::zeros(shape))
    }

    fn mlp(&mut self, prefix: &str, input: usize, hidden: usize, output: usize) -> MlpIndex {
        MlpIndex {
            w1: self.weight(format!("{prefix}.w1"), input, hidden),
            b1: self.zeros(format!("{prefix}.b1"), &[hidden]),
            w2: self.weight(format!("{prefix}.w2"), hidden, output),
            b2: self.zeros(format!("{prefix}.b2"), &[output]),
        }
    }
}

/// Chebyshev-radius neighbourhood on a `rows × cols` grid as an `N × N` mask.
pub fn neighbourhood(rows: usize, cols: usize, radius: Option<usize>) -> Vec<bool> {
    let n = rows * cols;
    let mut m = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let dy = (i / cols).abs_diff(j / cols);
            let dx = (i % cols).abs_diff(j % cols);
            m[i * n + j] = radius.map_or(true, |r| dy.max(dx) <= r);
        }
    }
    m
}

impl CcNet {
    pub fn new(config: CcNetConfig) -> Result<Self> {
        config.validate()?;
        let neighbourhood = neighbourhood(config.grid_rows, config.grid_cols, config.radius);
        let layout = Self::build(&config, &mut ChaCha8Rng::seed_from_u64(0)).1;
        Ok(Self {
            config,
            layout,
            neighbourhood,
        })
    }

    fn build(c: &CcNetConfig, rng: &mut ChaCha8Rng) -> (ParamSet, ParamLayout) {
        let mut b = Builder {
            params: ParamSet::new(),
            rng,
        };
        let (d, h) = (c.dim, c.mlp_hidden);
        let p = c.patch();
        let tok = [
            b.weight("tok.conv1.w".into(), 2 * 2 * c.channels, c.tokenizer_channels),
            b.zeros("tok.conv1.b".into(), &[c.tokenizer_channels]),
            b.weight("tok.conv2.w".into(), p * p * c.tokenizer_channels, d),
            b.zeros("tok.conv2.b".into(), &[d]),
        ];
        let [e1, e2] = c.encoder_channels;
        let enc = [
            b.weight("enc.conv1.w".into(), 16, e1),
            b.zeros("enc.conv1.b".into(), &[e1]),
            b.weight("enc.conv2.w".into(), 4 * e1, e2),
            b.zeros("enc.conv2.b".into(), &[e2]),
            b.weight("enc.fc.w".into(), (c.height / 8) * (c.width / 8) * e2, d),
            b.zeros("enc.fc.b".into(), &[d]),
        ];
        let bu = (1..=c.levels).map(|l| b.mlp(&format!("bu{l}"), d, h, d)).collect();
        let td = (1..c.levels).map(|l| b.mlp(&format!("td{l}"), d, h, d)).collect();
        let log_beta = b.zeros("attn.log_beta".into(), &[c.levels]);
        let contrib = (1..=c.levels)
            .map(|l| b.zeros(format!("contrib{l}"), &[if l == c.levels { 3 } else { 4 }]))
            .collect();
        let heads = c
            .head_levels()
            .iter()
            .map(|&l| b.mlp(&format!("head{l}"), d, d, c.classes))
            .collect();
        let layout = ParamLayout {
            tok,
            enc,
            bu,
            td,
            log_beta,
            contrib,
            heads,
        };
        (b.params, layout)
    }

    /// Fresh parameters: weights uniform in ±1/√fan_in, biases and
    /// contribution weights zero, β = 1 at every level.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        Self::build(&self.config, &mut ChaCha8Rng::seed_from_u64(seed)).0
    }

    fn mlp(&self, tape: &mut Tape, p: &[Var], m: MlpIndex, x: Var) -> Result<Var> {
        let h = tape.matmul(x, p[m.w1])?;
        let h = tape.add_row(h, p[m.b1])?;
        let h = tape.activation(h, self.config.activation);
        let y = tape.matmul(h, p[m.w2])?;
        Ok(tape.add_row(y, p[m.b2])?)
    }

    /// Strided convolution over NHWC input with bias and activation, returned
    /// as NHWC.
    fn conv(&self, tape: &mut Tape, x: Var, w: Var, b: Var, k: usize, act: bool) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (oh, ow) = (s[1] / k, s[2] / k);
        let cols = tape.im2col(x, k, k, 0)?;
        let y = tape.matmul(cols, w)?;
        let mut y = tape.add_row(y, b)?;
        if act {
            y = tape.activation(y, self.config.activation);
        }
        let c = tape.shape(y)[1];
        Ok(tape.reshape(y, &[s[0], oh, ow, c])?)
    }

    /// Images `[B,H,W,C]` to tokens `[B·N, D]`, one token per grid cell.
    pub fn tokenize(&self, tape: &mut Tape, p: &[Var], images: Var) -> Result<Var> {
        let c = &self.config;
        let s = tape.shape(images).to_vec();
        if s.len() != 4 || s[1] != c.height || s[2] != c.width || s[3] != c.channels {
            return Err(CoreError::Shape(format!(
                "tokenizer expects [B,{},{},{}], got {s:?}",
                c.height, c.width, c.channels
            )));
        }
        let [w1, b1, w2, b2] = self.layout.tok.map(|i| p[i]);
        let h = self.conv(tape, images, w1, b1, 2, true)?;
        let t = self.conv(tape, h, w2, b2, c.patch(), false)?;
        Ok(tape.reshape(t, &[s[0] * c.columns(), c.dim])?)
    }

    /// Masks `[U,H,W,1]` to embeddings `[U, D]`.
    pub fn encode_masks(&self, tape: &mut Tape, p: &[Var], masks: Var) -> Result<Var> {
        let [w1, b1, w2, b2, wf, bf] = self.layout.enc.map(|i| p[i]);
        let u = tape.shape(masks)[0];
        let h = self.conv(tape, masks, w1, b1, 4, true)?;
        let h = self.conv(tape, h, w2, b2, 2, true)?;
        let n = tape.value(h).numel() / u;
        let h = tape.reshape(h, &[u, n])?;
        let e = tape.matmul(h, wf)?;
        Ok(tape.add_row(e, bf)?)
    }

    /// Encodes a batch of masks and returns the prior of every level as
    /// `[B·N, D]`, levels 1..=L.
    pub fn prior_from_masks(&self, tape: &mut Tape, p: &[Var], masks: &MaskBatch) -> Result<Vec<Var>> {
        if masks.levels != self.config.levels || masks.columns != self.config.columns() {
            return Err(CoreError::Shape(format!(
                "mask batch has {} columns x {} levels, model needs {} x {}",
                masks.columns,
                masks.levels,
                self.config.columns(),
                self.config.levels
            )));
        }
        let m = tape.constant(masks.unique_tensor());
        let e = self.encode_masks(tape, p, m)?;
        masks.rows.iter().map(|r| Ok(tape.gather_rows(e, r)?)).collect()
    }

    /// Splits a `[B, N, L, D]` prior embedding held on the tape into levels.
    pub fn prior_levels(&self, tape: &mut Tape, prior: Var) -> Result<Vec<Var>> {
        let s = tape.shape(prior).to_vec();
        let (n, l, d) = (self.config.columns(), self.config.levels, self.config.dim);
        if s.len() != 4 || s[1] != n || s[2] != l || s[3] != d {
            return Err(CoreError::Shape(format!("prior must be [B,{n},{l},{d}], got {s:?}")));
        }
        let b = s[0];
        let flat = tape.reshape(prior, &[b * n * l, d])?;
        (0..l)
            .map(|lv| {
                let rows: Vec<usize> = (0..b * n).map(|r| r * l + lv).collect();
                Ok(tape.gather_rows(flat, &rows)?)
            })
            .collect()
    }

    /// `Z₀`: tokens at level 0, the prior at levels 1..=L.
    pub fn init_state(&self, tape: &Tape, tokens: Var, prior: Vec<Var>) -> Result<ColumnVars> {
        let (n, d) = (self.config.columns(), self.config.dim);
        let ts = tape.shape(tokens);
        if ts.len() != 2 || ts[1] != d || ts[0] % n != 0 {
            return Err(CoreError::Shape(format!("tokens must be [B*{n},{d}], got {ts:?}")));
        }
        if prior.len() != self.config.levels || prior.iter().any(|&v| tape.shape(v) != ts) {
            return Err(CoreError::Shape(format!(
                "prior must hold {} levels shaped like the tokens {ts:?}",
                self.config.levels
            )));
        }
        let mut levels = vec![tokens];
        levels.extend(prior);
        Ok(ColumnVars {
            levels,
            batch: ts[0] / n,
            columns: n,
            t: 0,
        })
    }

    /// BU contributions for levels 1..=L (index l−1).
    pub fn bottom_up(&self, tape: &mut Tape, p: &[Var], z: &ColumnVars) -> Result<Vec<Var>> {
        (1..=self.config.levels)
            .map(|l| self.mlp(tape, p, self.layout.bu[l - 1], z.levels[l - 1]))
            .collect()
    }

    /// TD contributions for levels 1..L (index l−1); the top level has none.
    pub fn top_down(&self, tape: &mut Tape, p: &[Var], z: &ColumnVars) -> Result<Vec<Var>> {
        (1..self.config.levels)
            .map(|l| self.mlp(tape, p, self.layout.td[l - 1], z.levels[l + 1]))
            .collect()
    }

    /// Attention weights `[B, N, N]` at level `l` (1..=L).
    pub fn attention_weights(&self, tape: &mut Tape, p: &[Var], z: &ColumnVars, l: usize) -> Result<Var> {
        let (b, n, d) = (z.batch, z.columns, self.config.dim);
        let x = tape.reshape(z.levels[l], &[b, n, d])?;
        let scores = tape.bmm(x, x, true)?;
        let beta = tape.exp(p[self.layout.log_beta]);
        let beta = tape.select(beta, l - 1)?;
        let scores = tape.scale_by(scores, beta)?;
        let mask: Rc<[bool]> = Rc::from(self.neighbourhood.as_slice());
        Ok(tape.masked_softmax(scores, &mask)?)
    }

    /// Attended values at level `l` as `[B·N, D]`.
    pub fn attention(&self, tape: &mut Tape, p: &[Var], z: &ColumnVars, l: usize) -> Result<Var> {
        let (b, n, d) = (z.batch, z.columns, self.config.dim);
        let w = self.attention_weights(tape, p, z, l)?;
        let x = tape.reshape(z.levels[l], &[b, n, d])?;
        let y = tape.bmm(w, x, false)?;
        Ok(tape.reshape(y, &[b * n, d])?)
    }

    /// One update `t → t+1`. Level 0 is carried over unchanged.
    pub fn step(&self, tape: &mut Tape, p: &[Var], z: &ColumnVars) -> Result<ColumnVars> {
        let top = self.config.levels;
        let bu = self.bottom_up(tape, p, z)?;
        let td = self.top_down(tape, p, z)?;
        let mut next = vec![z.levels[0]];
        for l in 1..=top {
            let attn = self.attention(tape, p, z, l)?;
            let mut terms = vec![bu[l - 1]];
            if l < top {
                terms.push(td[l - 1]);
            }
            terms.push(z.levels[l]);
            terms.push(attn);
            let alpha = tape.softmax(p[self.layout.contrib[l - 1]], 0)?;
            let mut acc: Option<Var> = None;
            for (m, &term) in terms.iter().enumerate() {
                let a = tape.select(alpha, m)?;
                let weighted = tape.scale_by(term, a)?;
                acc = Some(match acc {
                    None => weighted,
                    Some(s) => tape.add(s, weighted)?,
                });
            }
            next.push(acc.expect("at least three terms"));
        }
        Ok(ColumnVars {
            levels: next,
            batch: z.batch,
            columns: z.columns,
            t: z.t + 1,
        })
    }

    /// Mean-pooled head inputs `[B, D]`, one per head.
    pub fn head_features(&self, tape: &mut Tape, z: &ColumnVars) -> Result<Vec<Var>> {
        let (b, n, d) = (z.batch, z.columns, self.config.dim);
        self.config
            .head_levels()
            .iter()
            .map(|&l| {
                let x = tape.reshape(z.levels[l], &[b, n, d])?;
                Ok(tape.mean_axis(x, 1)?)
            })
            .collect()
    }

    /// Class probabilities `[B, C]` from pooled features: mean of the
    /// per-head softmax outputs.
    pub fn classify_features(&self, tape: &mut Tape, p: &[Var], features: &[Var]) -> Result<Var> {
        let mut sum: Option<Var> = None;
        for (k, &f) in features.iter().enumerate() {
            let h = &self.layout.heads[k];
            let hid = tape.matmul(f, p[h.w1])?;
            let hid = tape.add_row(hid, p[h.b1])?;
            let hid = tape.gelu(hid);
            let logits = tape.matmul(hid, p[h.w2])?;
            let logits = tape.add_row(logits, p[h.b2])?;
            let probs = tape.softmax(logits, 1)?;
            sum = Some(match sum {
                None => probs,
                Some(s) => tape.add(s, probs)?,
            });
        }
        let sum = sum.ok_or_else(|| CoreError::Config("no heads".into()))?;
        if features.len() == 1 {
            return Ok(sum);
        }
        Ok(tape.scale(sum, 1.0 / features.len() as f64))
    }

    /// Heads on the configured levels of `z`; optional per-head `[B, D]`
    /// multiplicative masks are applied to the pooled features. Returns
    /// the probabilities and the (unmasked) pooled features.
    pub fn classify(
        &self,
        tape: &mut Tape,
        p: &[Var],
        z: &ColumnVars,
        feature_masks: Option<&[Tensor]>,
    ) -> Result<(Var, Vec<Var>)> {
        let features = self.head_features(tape, z)?;
        let inputs = match feature_masks {
            None => features.clone(),
            Some(masks) => {
                if masks.len() != features.len() {
                    return Err(CoreError::Shape(format!(
                        "{} feature masks for {} heads",
                        masks.len(),
                        features.len()
                    )));
                }
                let mut v = Vec::with_capacity(masks.len());
                for (&f, m) in features.iter().zip(masks) {
                    let m = tape.constant(m.clone());
                    v.push(tape.mul(f, m)?);
                }
                v
            }
        };
        let probs = self.classify_features(tape, p, &inputs)?;
        Ok((probs, features))
    }

    /// Full pass from images and an encoded prior to `Z₁`.
    pub fn run(&self, tape: &mut Tape, p: &[Var], images: Var, prior: Vec<Var>) -> Result<ColumnVars> {
        let tokens = self.tokenize(tape, p, images)?;
        let z0 = self.init_state(tape, tokens, prior)?;
        self.step(tape, p, &z0)
    }
}
