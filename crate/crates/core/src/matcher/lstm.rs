//! Bidirectional LSTM feature extractor with backpropagation through time.
//! Gate layout in the stacked weights is `[input, forget, cell, output]`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::nn::{self, sigmoid, Params};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `input_dim × 4h`
    pub wx: Array2<f64>,
    /// `h × 4h`
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmParams {
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        LstmParams {
            wx: nn::glorot(input, 4 * hidden, rng),
            wh: nn::glorot(hidden, 4 * hidden, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstmParams {
            fwd: LstmParams::init(input, hidden, rng),
            bwd: LstmParams::init(input, hidden, rng),
        }
    }

    /// A unit whose backward direction shares the forward weights.
    pub fn tied(fwd: LstmParams) -> Self {
        BiLstmParams { bwd: fwd.clone(), fwd }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.hidden()
    }

    pub(crate) fn push_slices<'a>(&'a self, v: &mut Vec<&'a [f64]>) {
        for p in [&self.fwd, &self.bwd] {
            v.extend([nn::sl2(&p.wx), nn::sl2(&p.wh), nn::sl1(&p.b)]);
        }
    }

    pub(crate) fn push_slices_mut<'a>(&'a mut self, v: &mut Vec<&'a mut [f64]>) {
        for p in [&mut self.fwd, &mut self.bwd] {
            v.push(nn::sl2_mut(&mut p.wx));
            v.push(nn::sl2_mut(&mut p.wh));
            v.push(nn::sl1_mut(&mut p.b));
        }
    }
}

impl Params for BiLstmParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        self.push_slices(&mut v);
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        self.push_slices_mut(&mut v);
        v
    }
}

struct DirCache {
    /// Post-activation gates per step, `n × 4h`.
    gates: Array2<f64>,
    cells: Array2<f64>,
    hiddens: Array2<f64>,
}

pub struct BiLstmCache {
    fwd: Option<DirCache>,
    bwd: Option<DirCache>,
}

fn run(p: &LstmParams, x: &ArrayView2<f64>) -> (Array1<f64>, DirCache) {
    let h = p.hidden();
    let w = 4 * h;
    let n = x.nrows();
    let pre = x.dot(&p.wx) + &p.b;
    let pre = pre.as_slice().expect("standard layout");
    let wh = p.wh.as_slice().expect("standard layout");
    let mut gates = vec![0.0; n * w];
    let mut cells = vec![0.0; n * h];
    let mut hiddens = vec![0.0; n * h];
    let mut z = vec![0.0; w];
    for t in 0..n {
        z.copy_from_slice(&pre[t * w..(t + 1) * w]);
        if t > 0 {
            let hp = &hiddens[(t - 1) * h..t * h];
            for (j, &hv) in hp.iter().enumerate() {
                for (zk, wk) in z.iter_mut().zip(&wh[j * w..(j + 1) * w]) {
                    *zk += hv * wk;
                }
            }
        }
        let g = &mut gates[t * w..(t + 1) * w];
        for j in 0..h {
            g[j] = sigmoid(z[j]);
            g[h + j] = sigmoid(z[h + j]);
            g[2 * h + j] = z[2 * h + j].tanh();
            g[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        for j in 0..h {
            let cp = if t == 0 { 0.0 } else { cells[(t - 1) * h + j] };
            let c = g[h + j] * cp + g[j] * g[2 * h + j];
            cells[t * h + j] = c;
            hiddens[t * h + j] = g[3 * h + j] * c.tanh();
        }
    }
    let last = Array1::from(hiddens[(n - 1) * h..].to_vec());
    let shape = |cols: usize, v: Vec<f64>| Array2::from_shape_vec((n, cols), v).expect("sized");
    (
        last,
        DirCache {
            gates: shape(w, gates),
            cells: shape(h, cells),
            hiddens: shape(h, hiddens),
        },
    )
}

/// Gradient of one direction given the gradient `dh_last` on its final
/// hidden state. Returns the gradient with respect to `x`.
fn run_backward(
    p: &LstmParams,
    x: &ArrayView2<f64>,
    c: &DirCache,
    dh_last: &[f64],
    g: &mut LstmParams,
    want_dx: bool,
) -> Option<Array2<f64>> {
    let h = p.hidden();
    let w = 4 * h;
    let n = x.nrows();
    let gates = c.gates.as_slice().expect("standard layout");
    let cells = c.cells.as_slice().expect("standard layout");
    let hiddens = c.hiddens.as_slice().expect("standard layout");
    let wh = p.wh.as_slice().expect("standard layout");
    let gwh = g.wh.as_slice_mut().expect("standard layout");
    let mut dz_all = vec![0.0; n * w];
    let mut dh = dh_last.to_vec();
    let mut dc = vec![0.0; h];
    for t in (0..n).rev() {
        let gt = &gates[t * w..(t + 1) * w];
        let dz = &mut dz_all[t * w..(t + 1) * w];
        for j in 0..h {
            let (i, f, gg, o) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
            let tc = cells[t * h + j].tanh();
            let cprev = if t == 0 { 0.0 } else { cells[(t - 1) * h + j] };
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dct * gg * i * (1.0 - i);
            dz[h + j] = dct * cprev * f * (1.0 - f);
            dz[2 * h + j] = dct * i * (1.0 - gg * gg);
            dz[3 * h + j] = dh[j] * tc * o * (1.0 - o);
            dc[j] = dct * f;
        }
        for j in 0..h {
            let row = &wh[j * w..(j + 1) * w];
            dh[j] = row.iter().zip(dz.iter()).map(|(a, b)| a * b).sum();
        }
        if t > 0 {
            let hprev = &hiddens[(t - 1) * h..t * h];
            for (j, &hv) in hprev.iter().enumerate() {
                for (gk, dk) in gwh[j * w..(j + 1) * w].iter_mut().zip(dz.iter()) {
                    *gk += hv * dk;
                }
            }
        }
    }
    let dz_all = Array2::from_shape_vec((n, w), dz_all).expect("sized");
    g.wx += &x.t().dot(&dz_all);
    g.b += &dz_all.sum_axis(Axis(0));
    want_dx.then(|| dz_all.dot(&p.wx.t()))
}

fn reversed(x: &ArrayView2<f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

/// `[final forward state, final backward state]` over the rows of `x`.
/// An empty input gives the zero vector.
pub fn extract_features(p: &BiLstmParams, x: &ArrayView2<f64>) -> Array1<f64> {
    extract_features_cached(p, x).0
}

pub fn extract_features_cached(p: &BiLstmParams, x: &ArrayView2<f64>) -> (Array1<f64>, BiLstmCache) {
    let h = p.hidden();
    let mut out = Array1::zeros(2 * h);
    if x.nrows() == 0 {
        return (out, BiLstmCache { fwd: None, bwd: None });
    }
    let (hf, cf) = run(&p.fwd, x);
    let xr = reversed(x);
    let (hb, cb) = run(&p.bwd, &xr.view());
    out.slice_mut(s![..h]).assign(&hf);
    out.slice_mut(s![h..]).assign(&hb);
    (out, BiLstmCache { fwd: Some(cf), bwd: Some(cb) })
}

/// Accumulates parameter gradients into `g` and returns the gradient with
/// respect to `x`.
pub fn features_backward(p: &BiLstmParams, x: &ArrayView2<f64>, cache: &BiLstmCache, dfeat: &[f64], g: &mut BiLstmParams) -> Array2<f64> {
    backward_impl(p, x, cache, dfeat, g, true).expect("input gradient requested")
}

/// As [`features_backward`] without the input gradient.
pub fn params_backward(p: &BiLstmParams, x: &ArrayView2<f64>, cache: &BiLstmCache, dfeat: &[f64], g: &mut BiLstmParams) {
    backward_impl(p, x, cache, dfeat, g, false);
}

fn backward_impl(
    p: &BiLstmParams,
    x: &ArrayView2<f64>,
    cache: &BiLstmCache,
    dfeat: &[f64],
    g: &mut BiLstmParams,
    want_dx: bool,
) -> Option<Array2<f64>> {
    let h = p.hidden();
    let (Some(cf), Some(cb)) = (&cache.fwd, &cache.bwd) else {
        return want_dx.then(|| Array2::zeros(x.raw_dim()));
    };
    let dx_f = run_backward(&p.fwd, x, cf, &dfeat[..h], &mut g.fwd, want_dx);
    let xr = reversed(x);
    let dx_b = run_backward(&p.bwd, &xr.view(), cb, &dfeat[h..], &mut g.bwd, want_dx);
    match (dx_f, dx_b) {
        (Some(f), Some(b)) => Some(f + reversed(&b.view())),
        _ => None,
    }
}
