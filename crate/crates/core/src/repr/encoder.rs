//! Post-LN transformer encoder with sinusoidal positions, in `f64`, with a
//! hand-written backward pass.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::PAD;
use crate::error::{Error, Result};
use crate::nn::{self, gelu, gelu_grad, glorot, layer_norm, layer_norm_backward, LayerNormCache, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Longest input accepted by [`encode`](super::EncoderModel::encode).
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            layers: 2,
            heads: 2,
            d_ff: 128,
            max_len: 200,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_ff == 0 || self.max_len < 2 {
            return Err(Error::Config("d_ff must be positive and max_len at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

impl LayerParams {
    fn init<R: Rng>(c: &EncoderConfig, rng: &mut R) -> Self {
        let d = c.d_model;
        LayerParams {
            wq: glorot(d, d, rng),
            bq: Array1::zeros(d),
            wk: glorot(d, d, rng),
            bk: Array1::zeros(d),
            wv: glorot(d, d, rng),
            bv: Array1::zeros(d),
            wo: glorot(d, d, rng),
            bo: Array1::zeros(d),
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            w1: glorot(d, c.d_ff, rng),
            b1: Array1::zeros(c.d_ff),
            w2: glorot(c.d_ff, d, rng),
            b2: Array1::zeros(d),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
        }
    }
}

/// All encoder parameters, including the masked-prediction head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embed: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl Params for EncoderParams {
    fn slices(&self) -> Vec<&[f64]> {
        use nn::{sl1, sl2};
        let mut v = vec![sl2(&self.embed)];
        for l in &self.layers {
            v.extend([
                sl2(&l.wq),
                sl1(&l.bq),
                sl2(&l.wk),
                sl1(&l.bk),
                sl2(&l.wv),
                sl1(&l.bv),
                sl2(&l.wo),
                sl1(&l.bo),
                sl1(&l.ln1_g),
                sl1(&l.ln1_b),
                sl2(&l.w1),
                sl1(&l.b1),
                sl2(&l.w2),
                sl1(&l.b2),
                sl1(&l.ln2_g),
                sl1(&l.ln2_b),
            ]);
        }
        v.push(sl2(&self.out_w));
        v.push(sl1(&self.out_b));
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        use nn::{sl1_mut, sl2_mut};
        let mut v = vec![sl2_mut(&mut self.embed)];
        for l in &mut self.layers {
            v.extend([
                sl2_mut(&mut l.wq),
                sl1_mut(&mut l.bq),
                sl2_mut(&mut l.wk),
                sl1_mut(&mut l.bk),
                sl2_mut(&mut l.wv),
                sl1_mut(&mut l.bv),
                sl2_mut(&mut l.wo),
                sl1_mut(&mut l.bo),
                sl1_mut(&mut l.ln1_g),
                sl1_mut(&mut l.ln1_b),
                sl2_mut(&mut l.w1),
                sl1_mut(&mut l.b1),
                sl2_mut(&mut l.w2),
                sl1_mut(&mut l.b2),
                sl1_mut(&mut l.ln2_g),
                sl1_mut(&mut l.ln2_b),
            ]);
        }
        v.push(sl2_mut(&mut self.out_w));
        v.push(sl1_mut(&mut self.out_b));
        v
    }
}

/// Scale of the initial output head. Small enough that initial predictions
/// are close to uniform over the vocabulary.
pub const HEAD_INIT: f64 = 1e-3;

impl EncoderParams {
    pub fn init<R: Rng>(c: &EncoderConfig, vocab_size: usize, rng: &mut R) -> Self {
        let embed = nn::uniform(vocab_size, c.d_model, 1.0, rng);
        let layers = (0..c.layers).map(|_| LayerParams::init(c, rng)).collect();
        EncoderParams {
            embed,
            layers,
            out_w: nn::uniform(c.d_model, vocab_size, HEAD_INIT, rng),
            out_b: Array1::zeros(vocab_size),
        }
    }
}

pub fn sinusoidal(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(pos, j)| {
        let i = (j / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * i / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub(crate) struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln1: LayerNormCache,
    h1: Array2<f64>,
    u: Array2<f64>,
    act: Array2<f64>,
    ln2: LayerNormCache,
}

pub(crate) struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
}

fn attention_probs(scores: &mut Array2<f64>, key_ok: &[bool]) {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row
            .iter()
            .zip(key_ok)
            .filter(|(_, &ok)| ok)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for (v, &ok) in row.iter_mut().zip(key_ok) {
            *v = if ok { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

fn layer_forward(p: &LayerParams, x: Array2<f64>, heads: usize, key_ok: &[bool]) -> (Array2<f64>, LayerCache) {
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = x.dot(&p.wq) + &p.bq;
    let k = x.dot(&p.wk) + &p.bk;
    let v = x.dot(&p.wv) + &p.bv;
    let mut o = Array2::zeros(x.raw_dim());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        attention_probs(&mut sc, key_ok);
        o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
        probs.push(sc);
    }
    let z = o.dot(&p.wo) + &p.bo;
    let (h1, ln1) = layer_norm(&(&x + &z), &p.ln1_g, &p.ln1_b);
    let u = h1.dot(&p.w1) + &p.b1;
    let act = u.mapv(gelu);
    let f = act.dot(&p.w2) + &p.b2;
    let (out, ln2) = layer_norm(&(&h1 + &f), &p.ln2_g, &p.ln2_b);
    let cache = LayerCache {
        x,
        q,
        k,
        v,
        probs,
        o,
        ln1,
        h1,
        u,
        act,
        ln2,
    };
    (out, cache)
}

fn layer_backward(p: &LayerParams, c: &LayerCache, dout: &Array2<f64>, heads: usize, g: &mut LayerParams) -> Array2<f64> {
    let d = dout.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (ds2, dg2, db2) = layer_norm_backward(dout, &p.ln2_g, &c.ln2);
    g.ln2_g += &dg2;
    g.ln2_b += &db2;
    g.w2 += &c.act.t().dot(&ds2);
    g.b2 += &ds2.sum_axis(Axis(0));
    let dact = ds2.dot(&p.w2.t());
    let du = &dact * &c.u.mapv(gelu_grad);
    g.w1 += &c.h1.t().dot(&du);
    g.b1 += &du.sum_axis(Axis(0));
    let dh1 = &ds2 + &du.dot(&p.w1.t());

    let (ds1, dg1, db1) = layer_norm_backward(&dh1, &p.ln1_g, &c.ln1);
    g.ln1_g += &dg1;
    g.ln1_b += &db1;
    g.wo += &c.o.t().dot(&ds1);
    g.bo += &ds1.sum_axis(Axis(0));
    let do_ = ds1.dot(&p.wo.t());

    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let pr = &c.probs[h];
        let doh = do_.slice(cols);
        let dp = doh.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&pr.t().dot(&doh));
        let rowdot = (&dp * pr).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ds = pr * &(&dp - &rowdot) * scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    g.wq += &c.x.t().dot(&dq);
    g.bq += &dq.sum_axis(Axis(0));
    g.wk += &c.x.t().dot(&dk);
    g.bk += &dk.sum_axis(Axis(0));
    g.wv += &c.x.t().dot(&dv);
    g.bv += &dv.sum_axis(Axis(0));
    ds1 + dq.dot(&p.wq.t()) + dk.dot(&p.wk.t()) + dv.dot(&p.wv.t())
}

/// Runs the encoder stack. `ids` must already fit the configured length.
pub(crate) fn forward(p: &EncoderParams, c: &EncoderConfig, ids: &[u32], keep_cache: bool) -> (Array2<f64>, Option<ForwardCache>) {
    let n = ids.len();
    let mut x = sinusoidal(n, c.d_model);
    for (i, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row += &p.embed.row(id as usize);
    }
    let key_ok: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
    let mut caches = Vec::new();
    for l in &p.layers {
        let (out, cache) = layer_forward(l, x, c.heads, &key_ok);
        x = out;
        if keep_cache {
            caches.push(cache);
        }
    }
    let cache = keep_cache.then(|| ForwardCache {
        ids: ids.to_vec(),
        layers: caches,
    });
    (x, cache)
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the encoder output is `dout`.
pub(crate) fn backward(p: &EncoderParams, c: &EncoderConfig, cache: &ForwardCache, dout: &Array2<f64>, grads: &mut EncoderParams) {
    let mut d = dout.clone();
    for (i, l) in p.layers.iter().enumerate().rev() {
        d = layer_backward(l, &cache.layers[i], &d, c.heads, &mut grads.layers[i]);
    }
    for (i, &id) in cache.ids.iter().enumerate() {
        let mut row = grads.embed.row_mut(id as usize);
        row += &d.row(i);
    }
}
