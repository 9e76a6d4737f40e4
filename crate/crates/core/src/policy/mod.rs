//! The recurrent controller.
//!
//! Each unit (layer or branch) is embedded as the sum of one learned vector per
//! describing feature value. An encoder LSTM reads the unit embeddings in order
//! and its final hidden state is the network embedding `z`. Two controller
//! LSTMs start from `tanh(A z + a)`:
//!
//! * the scale controller runs one step per (unit, scale feature) on the unit
//!   embedding plus a learned step embedding, and reads that feature's logits
//!   off its hidden state;
//! * the insert/remove controller runs one step per insert feature and a final
//!   structural step that feeds a 3-way insert/keep/remove head and a remove
//!   head over unit slots.
//!
//! Heads over sources, slots and structural outcomes are masked to valid
//! entries. Only choices that affect the result enter the log-probability:
//! scale features applicable to the unit, the structural outcome, insert
//! features applicable to the new unit when inserting, and the slot when
//! removing. Gradients are exact (backpropagation through time), in `f64`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::action::{remove_mask, structural_mask, ActionChoices, StructuralKind};
use crate::arch::Architecture;
use crate::math::{ln, tanh, uniform_f64};
use crate::space::{Feature, SearchSpace, UnitKind, Value};

mod adam;
mod lstm;

pub use adam::{Adam, AdamError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_encoder")]
    pub encoder_hidden: usize,
    #[serde(default = "default_controller")]
    pub controller_hidden: usize,
    /// Parameters start uniform in `[-init_range, init_range]`.
    #[serde(default = "default_init")]
    pub init_range: f64,
}

fn default_embed() -> usize {
    16
}
fn default_encoder() -> usize {
    32
}
fn default_controller() -> usize {
    128
}
fn default_init() -> f64 {
    0.1
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed_dim: default_embed(),
            encoder_hidden: default_encoder(),
            controller_hidden: default_controller(),
            init_range: default_init(),
        }
    }
}

/// A named row-major parameter matrix inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector; its layout is given by [`PolicyNet::blocks`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Head {
    w: usize,
    b: usize,
    n: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: Vec<(usize, usize)>,
    enc_w: usize,
    enc_b: usize,
    s_init_w: usize,
    s_init_b: usize,
    s_step: usize,
    s_w: usize,
    s_b: usize,
    s_heads: Vec<Head>,
    i_init_w: usize,
    i_init_b: usize,
    i_step: usize,
    i_w: usize,
    i_b: usize,
    i_heads: Vec<Head>,
    structural: Head,
    remove: Head,
}

/// Categorical distributions of every head for one architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    /// Per unit, per scale feature.
    pub scale: Vec<Vec<Vec<f64>>>,
    /// Per insert feature.
    pub insert: Vec<Vec<f64>>,
    /// Insert, keep, remove.
    pub structural: Vec<f64>,
    pub remove: Vec<f64>,
}

/// A sampled action with its log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub choices: ActionChoices,
    pub log_prob: f64,
}

#[derive(Clone, Debug)]
pub struct PolicyNet {
    config: PolicyConfig,
    space: SearchSpace,
    scale_feats: Vec<Feature>,
    insert_feats: Vec<Feature>,
    blocks: Vec<Block>,
    layout: Layout,
    len: usize,
}

struct Forward {
    descr: Vec<Vec<Option<usize>>>,
    enc: Vec<lstm::Cache>,
    z: Vec<f64>,
    s_h0: Vec<f64>,
    s_steps: Vec<lstm::Cache>,
    s_probs: Vec<Vec<f64>>,
    i_h0: Vec<f64>,
    i_steps: Vec<lstm::Cache>,
    i_probs: Vec<Vec<f64>>,
    st_probs: Vec<f64>,
    rm_probs: Vec<f64>,
}

impl PolicyNet {
    pub fn new(config: PolicyConfig, space: SearchSpace) -> Self {
        let e = config.embed_dim;
        let he = config.encoder_hidden;
        let hc = config.controller_hidden;
        let embed_feats = space.embed_features();
        let scale_feats = space.scale_features();
        let insert_feats = space.insert_features();
        let n_of = |f: Feature| space.feature(f).map_or(0, |fs| fs.candidates.len());

        let mut blocks = Vec::new();
        let mut off = 0;
        let mut add = |name: String, rows: usize, cols: usize| {
            let b = Block {
                name,
                rows,
                cols,
                offset: off,
            };
            off += rows * cols;
            blocks.push(b);
            off - rows * cols
        };
        let embed = embed_feats
            .iter()
            .map(|&f| (add(format!("embed.{}", f.name()), n_of(f), e), n_of(f)))
            .collect();
        let enc_w = add("encoder.w".into(), 4 * he, e + he);
        let enc_b = add("encoder.b".into(), 4 * he, 1);
        let s_init_w = add("scale.init.w".into(), hc, he);
        let s_init_b = add("scale.init.b".into(), hc, 1);
        let s_step = add("scale.step".into(), scale_feats.len(), e);
        let s_w = add("scale.lstm.w".into(), 4 * hc, e + hc);
        let s_b = add("scale.lstm.b".into(), 4 * hc, 1);
        let s_heads = scale_feats
            .iter()
            .map(|&f| {
                let n = n_of(f);
                Head {
                    w: add(format!("scale.head.{}.w", f.name()), n, hc),
                    b: add(format!("scale.head.{}.b", f.name()), n, 1),
                    n,
                }
            })
            .collect();
        let i_init_w = add("insert.init.w".into(), hc, he);
        let i_init_b = add("insert.init.b".into(), hc, 1);
        let i_step = add("insert.step".into(), insert_feats.len() + 1, e);
        let i_w = add("insert.lstm.w".into(), 4 * hc, e + hc);
        let i_b = add("insert.lstm.b".into(), 4 * hc, 1);
        let i_heads = insert_feats
            .iter()
            .map(|&f| {
                let n = n_of(f);
                Head {
                    w: add(format!("insert.head.{}.w", f.name()), n, hc),
                    b: add(format!("insert.head.{}.b", f.name()), n, 1),
                    n,
                }
            })
            .collect();
        let structural = Head {
            w: add("structural.w".into(), 3, hc),
            b: add("structural.b".into(), 3, 1),
            n: 3,
        };
        let slots = space.slots();
        let remove = Head {
            w: add("remove.w".into(), slots, hc),
            b: add("remove.b".into(), slots, 1),
            n: slots,
        };
        let layout = Layout {
            embed,
            enc_w,
            enc_b,
            s_init_w,
            s_init_b,
            s_step,
            s_w,
            s_b,
            s_heads,
            i_init_w,
            i_init_b,
            i_step,
            i_w,
            i_b,
            i_heads,
            structural,
            remove,
        };
        Self {
            config,
            space,
            scale_feats,
            insert_feats,
            blocks,
            layout,
            len: off,
        }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_params(&self) -> usize {
        self.len
    }

    /// Parameters drawn uniformly from `[-init_range, init_range]`.
    pub fn init_params<R: RngCore + ?Sized>(&self, rng: &mut R) -> PolicyParams {
        let r = self.config.init_range;
        PolicyParams {
            values: (0..self.len)
                .map(|_| (2.0 * uniform_f64(rng) - 1.0) * r)
                .collect(),
        }
    }

    pub fn zero_params(&self) -> PolicyParams {
        PolicyParams {
            values: vec![0.0; self.len],
        }
    }

    /// Network embedding of `arch` (the encoder's final hidden state).
    pub fn embed(&self, params: &PolicyParams, arch: &Architecture) -> Vec<f64> {
        let p = &params.values;
        let (_, x) = self.unit_embeddings(p, arch);
        self.encode(p, &x).1
    }

    pub fn distribution(&self, params: &PolicyParams, arch: &Architecture) -> ActionDistribution {
        let f = self.forward(&params.values, arch);
        let units = arch.unit_count();
        let k = self.scale_feats.len();
        ActionDistribution {
            scale: (0..units)
                .map(|i| f.s_probs[i * k..(i + 1) * k].to_vec())
                .collect(),
            insert: f.i_probs,
            structural: f.st_probs,
            remove: f.rm_probs,
        }
    }

    /// Draws one value from every head.
    pub fn sample<R: RngCore + ?Sized>(
        &self,
        params: &PolicyParams,
        arch: &Architecture,
        rng: &mut R,
    ) -> Sampled {
        let dist = self.distribution(params, arch);
        self.sample_from(&dist, arch, rng)
    }

    /// Draws one value from every head of a precomputed distribution.
    pub fn sample_from<R: RngCore + ?Sized>(
        &self,
        dist: &ActionDistribution,
        arch: &Architecture,
        rng: &mut R,
    ) -> Sampled {
        let scale = dist
            .scale
            .iter()
            .map(|row| row.iter().map(|p| draw(p, rng)).collect())
            .collect();
        let insert = dist.insert.iter().map(|p| draw(p, rng)).collect();
        let structural = StructuralKind::from_index(draw(&dist.structural, rng))
            .unwrap_or(StructuralKind::Keep);
        let remove = draw(&dist.remove, rng);
        let choices = ActionChoices {
            scale,
            insert,
            structural,
            remove,
        };
        let log_prob = self.log_prob_in(dist, arch, &choices);
        Sampled { choices, log_prob }
    }

    pub fn log_prob(&self, params: &PolicyParams, arch: &Architecture, choices: &ActionChoices) -> f64 {
        self.log_prob_in(&self.distribution(params, arch), arch, choices)
    }

    /// Log-probability of `choices` under a precomputed distribution.
    pub fn log_prob_in(
        &self,
        dist: &ActionDistribution,
        arch: &Architecture,
        choices: &ActionChoices,
    ) -> f64 {
        let c = self.counted(arch, choices);
        let mut lp = 0.0;
        for (i, row) in choices.scale.iter().enumerate() {
            for (k, &j) in row.iter().enumerate() {
                if c.scale[i][k] {
                    lp += ln(dist.scale[i][k][j]);
                }
            }
        }
        for (k, &j) in choices.insert.iter().enumerate() {
            if c.insert[k] {
                lp += ln(dist.insert[k][j]);
            }
        }
        lp += ln(dist.structural[choices.structural as usize]);
        if c.remove {
            lp += ln(dist.remove[choices.remove]);
        }
        lp
    }

    /// `log pi(choices)` and its gradient with respect to every parameter.
    pub fn grad_log_prob(
        &self,
        params: &PolicyParams,
        arch: &Architecture,
        choices: &ActionChoices,
    ) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.len];
        let lp = self.accumulate_grad(params, arch, choices, 1.0, &mut g);
        (lp, g)
    }

    /// Adds `weight * grad log pi(choices)` into `grad`; returns `log pi`.
    pub fn accumulate_grad(
        &self,
        params: &PolicyParams,
        arch: &Architecture,
        choices: &ActionChoices,
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let p = &params.values;
        let f = self.forward(p, arch);
        let c = self.counted(arch, choices);
        let l = &self.layout;
        let e = self.config.embed_dim;
        let hc = self.config.controller_hidden;
        let units = arch.unit_count();
        let ks = self.scale_feats.len();
        let mut lp = 0.0;

        // Gradients of log-softmax heads: weight * (onehot - p).
        let dlogits = |probs: &[f64], chosen: usize, lp: &mut f64| -> Vec<f64> {
            *lp += ln(probs[chosen]);
            probs
                .iter()
                .enumerate()
                .map(|(j, &q)| weight * (if j == chosen { 1.0 } else { 0.0 } - q))
                .collect()
        };

        let mut dx: Vec<Vec<f64>> = vec![vec![0.0; e]; units];
        let mut dz = vec![0.0; self.config.encoder_hidden];

        // Scale controller, reverse time.
        if units > 0 && ks > 0 {
            let mut dh = vec![0.0; hc];
            let mut dc = vec![0.0; hc];
            for t in (0..units * ks).rev() {
                let (i, k) = (t / ks, t % ks);
                let cache = &f.s_steps[t];
                if c.scale[i][k] {
                    let d = dlogits(&f.s_probs[t], choices.scale[i][k], &mut lp);
                    head_backward(p, l.s_heads[k], &cache.h, &d, grad, &mut dh);
                }
                let (w, gw, gb) = lstm_blocks(l.s_w, l.s_b, hc, e, p, grad);
                let (dxi, dhp, dcp) = lstm::backward(w, cache, &dh, &dc, gw, gb);
                for j in 0..e {
                    dx[i][j] += dxi[j];
                    grad[l.s_step + k * e + j] += dxi[j];
                }
                dh = dhp;
                dc = dcp;
            }
            init_backward(p, l.s_init_w, l.s_init_b, &f.z, &f.s_h0, &dh, grad, &mut dz);
        }

        // Insert/remove controller.
        {
            let ki = self.insert_feats.len();
            let mut dh = vec![0.0; hc];
            let mut dc = vec![0.0; hc];
            for t in (0..=ki).rev() {
                let cache = &f.i_steps[t];
                if t == ki {
                    let d = dlogits(&f.st_probs, choices.structural as usize, &mut lp);
                    head_backward(p, l.structural, &cache.h, &d, grad, &mut dh);
                    if c.remove {
                        let d = dlogits(&f.rm_probs, choices.remove, &mut lp);
                        head_backward(p, l.remove, &cache.h, &d, grad, &mut dh);
                    }
                } else if c.insert[t] {
                    let d = dlogits(&f.i_probs[t], choices.insert[t], &mut lp);
                    head_backward(p, l.i_heads[t], &cache.h, &d, grad, &mut dh);
                }
                let (w, gw, gb) = lstm_blocks(l.i_w, l.i_b, hc, e, p, grad);
                let (dxi, dhp, dcp) = lstm::backward(w, cache, &dh, &dc, gw, gb);
                for j in 0..e {
                    grad[l.i_step + t * e + j] += dxi[j];
                }
                dh = dhp;
                dc = dcp;
            }
            init_backward(p, l.i_init_w, l.i_init_b, &f.z, &f.i_h0, &dh, grad, &mut dz);
        }

        // Encoder, reverse time.
        if units > 0 {
            let he = self.config.encoder_hidden;
            let mut dh = dz;
            let mut dc = vec![0.0; he];
            for i in (0..units).rev() {
                let (w, gw, gb) = lstm_blocks(l.enc_w, l.enc_b, he, e, p, grad);
                let (dxi, dhp, dcp) = lstm::backward(w, &f.enc[i], &dh, &dc, gw, gb);
                for j in 0..e {
                    dx[i][j] += dxi[j];
                }
                dh = dhp;
                dc = dcp;
            }
        }

        // Embedding tables.
        for (i, d) in f.descr.iter().enumerate() {
            for (fi, idx) in d.iter().enumerate() {
                if let Some(r) = idx {
                    let base = l.embed[fi].0 + r * e;
                    for j in 0..e {
                        grad[base + j] += dx[i][j];
                    }
                }
            }
        }
        lp
    }

    fn counted(&self, arch: &Architecture, choices: &ActionChoices) -> Counted {
        counted(
            &self.space,
            &SearchSpace::unit_kinds(arch),
            &self.scale_feats,
            &self.insert_feats,
            choices,
        )
    }

    fn unit_embeddings(&self, p: &[f64], arch: &Architecture) -> (Vec<Vec<Option<usize>>>, Vec<Vec<f64>>) {
        let e = self.config.embed_dim;
        let descr: Vec<_> = (0..arch.unit_count())
            .map(|i| self.space.describe_unit(arch, i))
            .collect();
        let x = descr
            .iter()
            .map(|d| {
                let mut v = vec![0.0; e];
                for (fi, idx) in d.iter().enumerate() {
                    if let Some(r) = idx {
                        let base = self.layout.embed[fi].0 + r * e;
                        for j in 0..e {
                            v[j] += p[base + j];
                        }
                    }
                }
                v
            })
            .collect();
        (descr, x)
    }

    fn encode(&self, p: &[f64], x: &[Vec<f64>]) -> (Vec<lstm::Cache>, Vec<f64>) {
        let he = self.config.encoder_hidden;
        let e = self.config.embed_dim;
        let l = &self.layout;
        let w = &p[l.enc_w..l.enc_w + 4 * he * (e + he)];
        let b = &p[l.enc_b..l.enc_b + 4 * he];
        let mut h = vec![0.0; he];
        let mut c = vec![0.0; he];
        let mut caches = Vec::with_capacity(x.len());
        for xi in x {
            let cache = lstm::forward(w, b, xi, &h, &c);
            h = cache.h.clone();
            c = cache.c.clone();
            caches.push(cache);
        }
        (caches, h)
    }

    fn forward(&self, p: &[f64], arch: &Architecture) -> Forward {
        let e = self.config.embed_dim;
        let he = self.config.encoder_hidden;
        let hc = self.config.controller_hidden;
        let l = &self.layout;
        let (descr, x) = self.unit_embeddings(p, arch);
        let (enc, z) = self.encode(p, &x);
        let n = arch.unit_count();

        let init = |w: usize, b: usize| -> Vec<f64> {
            (0..hc)
                .map(|r| tanh(p[b + r] + lstm::dot(&p[w + r * he..w + (r + 1) * he], &z)))
                .collect()
        };

        // Scale controller.
        let s_h0 = init(l.s_init_w, l.s_init_b);
        let ks = self.scale_feats.len();
        let sw = &p[l.s_w..l.s_w + 4 * hc * (e + hc)];
        let sb = &p[l.s_b..l.s_b + 4 * hc];
        let mut h = s_h0.clone();
        let mut c = vec![0.0; hc];
        let mut s_steps = Vec::with_capacity(n * ks);
        let mut s_probs = Vec::with_capacity(n * ks);
        for xi in &x {
            for k in 0..ks {
                let inp: Vec<f64> = (0..e).map(|j| xi[j] + p[l.s_step + k * e + j]).collect();
                let cache = lstm::forward(sw, sb, &inp, &h, &c);
                s_probs.push(head_probs(p, l.s_heads[k], &cache.h, None));
                h = cache.h.clone();
                c = cache.c.clone();
                s_steps.push(cache);
            }
        }

        // Insert/remove controller.
        let i_h0 = init(l.i_init_w, l.i_init_b);
        let iw = &p[l.i_w..l.i_w + 4 * hc * (e + hc)];
        let ib = &p[l.i_b..l.i_b + 4 * hc];
        let mut h = i_h0.clone();
        let mut c = vec![0.0; hc];
        let ki = self.insert_feats.len();
        let mut i_steps = Vec::with_capacity(ki + 1);
        let mut i_probs = Vec::with_capacity(ki);
        for t in 0..=ki {
            let inp = &p[l.i_step + t * e..l.i_step + (t + 1) * e];
            let cache = lstm::forward(iw, ib, inp, &h, &c);
            if t < ki {
                let f = self.insert_feats[t];
                let mask = f.is_source().then(|| self.source_mask(f, n));
                i_probs.push(head_probs(p, l.i_heads[t], &cache.h, mask.as_deref()));
            }
            h = cache.h.clone();
            c = cache.c.clone();
            i_steps.push(cache);
        }
        let last = &i_steps[ki].h;
        let st_probs = head_probs(p, l.structural, last, Some(&structural_mask(&self.space, arch)));
        let rm_probs = head_probs(p, l.remove, last, Some(&remove_mask(&self.space, arch)));
        Forward {
            descr,
            enc,
            z,
            s_h0,
            s_steps,
            s_probs,
            i_h0,
            i_steps,
            i_probs,
            st_probs,
            rm_probs,
        }
    }

    fn source_mask(&self, f: Feature, units: usize) -> Vec<bool> {
        self.space
            .feature(f)
            .map(|fs| {
                fs.candidates
                    .iter()
                    .map(|v| matches!(v, Value::Int(s) if (*s as usize) <= units))
                    .collect()
            })
            .unwrap_or_default()
    }
}

struct Counted {
    scale: Vec<Vec<bool>>,
    insert: Vec<bool>,
    remove: bool,
}

fn counted(
    space: &SearchSpace,
    kinds: &[UnitKind],
    scale_feats: &[Feature],
    insert_feats: &[Feature],
    choices: &ActionChoices,
) -> Counted {
    let scale = kinds
        .iter()
        .map(|&k| scale_feats.iter().map(|&f| space.applies(f, k)).collect())
        .collect();
    let insert = if choices.structural == StructuralKind::Insert {
        let new_kind = insert_feats.iter().zip(&choices.insert).find_map(|(&f, &i)| {
            match space.feature(f)?.candidates.get(i)? {
                Value::Kind(k) => Some(UnitKind::Layer(*k)),
                Value::Branch(b) => Some(UnitKind::Branch(*b)),
                _ => None,
            }
        });
        insert_feats
            .iter()
            .map(|&f| match new_kind {
                Some(k) => space.applies(f, k),
                None => true,
            })
            .collect()
    } else {
        vec![false; insert_feats.len()]
    };
    Counted {
        scale,
        insert,
        remove: choices.structural == StructuralKind::Remove,
    }
}

fn head_probs(p: &[f64], head: Head, h: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let hn = h.len();
    let logits: Vec<f64> = (0..head.n)
        .map(|r| p[head.b + r] + lstm::dot(&p[head.w + r * hn..head.w + (r + 1) * hn], h))
        .collect();
    masked_softmax(&logits, mask)
}

/// Softmax over entries allowed by `mask` (all entries when none is allowed).
pub fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let allowed = |j: usize| mask.is_none_or(|m| m.get(j).copied().unwrap_or(false));
    let any = (0..logits.len()).any(allowed);
    let ok = |j: usize| !any || allowed(j);
    let max = (0..logits.len())
        .filter(|&j| ok(j))
        .map(|j| logits[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = (0..logits.len())
        .map(|j| if ok(j) { crate::math::exp(logits[j] - max) } else { 0.0 })
        .collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

fn head_backward(p: &[f64], head: Head, h: &[f64], d: &[f64], grad: &mut [f64], dh: &mut [f64]) {
    let hn = h.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        grad[head.b + r] += dr;
        let w = head.w + r * hn;
        for j in 0..hn {
            grad[w + j] += dr * h[j];
            dh[j] += dr * p[w + j];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn init_backward(
    p: &[f64],
    w: usize,
    b: usize,
    z: &[f64],
    h0: &[f64],
    dh0: &[f64],
    grad: &mut [f64],
    dz: &mut [f64],
) {
    let he = z.len();
    for r in 0..h0.len() {
        let d = dh0[r] * (1.0 - h0[r] * h0[r]);
        if d == 0.0 {
            continue;
        }
        grad[b + r] += d;
        for j in 0..he {
            grad[w + r * he + j] += d * z[j];
            dz[j] += d * p[w + r * he + j];
        }
    }
}

fn lstm_blocks<'a>(
    w: usize,
    b: usize,
    hidden: usize,
    input: usize,
    p: &'a [f64],
    grad: &'a mut [f64],
) -> (&'a [f64], &'a mut [f64], &'a mut [f64]) {
    let wl = 4 * hidden * (input + hidden);
    let (gw, gb) = if w < b {
        let (lo, hi) = grad.split_at_mut(b);
        (&mut lo[w..w + wl], &mut hi[..4 * hidden])
    } else {
        let (lo, hi) = grad.split_at_mut(w);
        let gb = &mut lo[b..b + 4 * hidden];
        (&mut hi[..wl], gb)
    };
    (&p[w..w + wl], gw, gb)
}

fn draw<R: RngCore + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u = uniform_f64(rng);
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &q) in probs.iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        acc += q;
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}

#[cfg(test)]
mod tests;
