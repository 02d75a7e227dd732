//! GRU decoder with a softmax output layer.
//!
//! Gate layout in the stacked weights: rows `0..H` update gate `z`,
//! `H..2H` reset gate `r`, `2H..3H` candidate `n`, with
//! `n = tanh(W_n x + r ⊙ (U_n h) + b_n)` and `h' = (1 − z) ⊙ n + z ⊙ h`.

use super::params::Params;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[i] += Σ_j m[i][j] v[j]` for a row-major `rows × v.len()` matrix.
fn matvec_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[j] += Σ_i m[i][j] g[i]`.
fn matvec_t_add(m: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&gi, row) in g.iter().zip(m.chunks_exact(cols)) {
        if gi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * gi;
        }
    }
}

/// `m[i][j] += g[i] v[j]`.
fn outer_add(m: &mut [f64], g: &[f64], v: &[f64]) {
    let cols = v.len();
    for (&gi, row) in g.iter().zip(m.chunks_exact_mut(cols)) {
        if gi == 0.0 {
            continue;
        }
        for (a, b) in row.iter_mut().zip(v) {
            *a += gi * b;
        }
    }
}

pub(crate) fn initial_state(p: &Params, pooled: &[f64]) -> Vec<f64> {
    let mut a = p.init_b.data.clone();
    matvec_add(&p.init_w.data, pooled, &mut a);
    a.iter().map(|v| v.tanh()).collect()
}

/// Backward through `h0 = tanh(W pooled + b)`; returns d(pooled).
pub(crate) fn initial_state_backward(p: &Params, pooled: &[f64], h0: &[f64], dh0: &[f64], grad: &mut Params) -> Vec<f64> {
    let da: Vec<f64> = dh0.iter().zip(h0).map(|(d, h)| d * (1.0 - h * h)).collect();
    outer_add(&mut grad.init_w.data, &da, pooled);
    for (g, d) in grad.init_b.data.iter_mut().zip(&da) {
        *g += d;
    }
    let mut dpooled = vec![0.0; pooled.len()];
    matvec_t_add(&p.init_w.data, &da, &mut dpooled);
    dpooled
}

/// Cached activations of one decoder step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub input: usize,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    /// `U_n h_prev`.
    pub u: Vec<f64>,
    pub n: Vec<f64>,
    pub h: Vec<f64>,
    pub logits: Vec<f64>,
}

pub(crate) fn step(p: &Params, input: usize, h_prev: &[f64]) -> StepTrace {
    let hd = h_prev.len();
    let e = p.embed.shape[1];
    let x = &p.embed.data[input * e..(input + 1) * e];

    let mut ax = p.gru_b.data.clone();
    matvec_add(&p.gru_wx.data, x, &mut ax);
    let mut ah = vec![0.0; 3 * hd];
    matvec_add(&p.gru_wh.data, h_prev, &mut ah);

    let z: Vec<f64> = (0..hd).map(|i| sigmoid(ax[i] + ah[i])).collect();
    let r: Vec<f64> = (0..hd).map(|i| sigmoid(ax[hd + i] + ah[hd + i])).collect();
    let u = ah[2 * hd..].to_vec();
    let n: Vec<f64> = (0..hd).map(|i| (ax[2 * hd + i] + r[i] * u[i]).tanh()).collect();
    let h: Vec<f64> = (0..hd).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();

    let mut logits = p.out_b.data.clone();
    matvec_add(&p.out_w.data, &h, &mut logits);
    StepTrace {
        input,
        h_prev: h_prev.to_vec(),
        z,
        r,
        u,
        n,
        h,
        logits,
    }
}

/// Backward through one step. `dlogits` is the loss gradient on this step's
/// logits and `dh_next` the gradient flowing back from later steps.
/// Returns d(h_prev).
pub(crate) fn step_backward(p: &Params, t: &StepTrace, dlogits: &[f64], dh_next: &[f64], grad: &mut Params) -> Vec<f64> {
    let hd = t.h.len();
    let e = p.embed.shape[1];

    outer_add(&mut grad.out_w.data, dlogits, &t.h);
    for (g, d) in grad.out_b.data.iter_mut().zip(dlogits) {
        *g += d;
    }
    let mut dh = dh_next.to_vec();
    matvec_t_add(&p.out_w.data, dlogits, &mut dh);

    let mut dh_prev: Vec<f64> = (0..hd).map(|i| dh[i] * t.z[i]).collect();
    let mut dax = vec![0.0; 3 * hd];
    let mut dah = vec![0.0; 3 * hd];
    for i in 0..hd {
        let dn = dh[i] * (1.0 - t.z[i]);
        let dz = dh[i] * (t.h_prev[i] - t.n[i]);
        let dan = dn * (1.0 - t.n[i] * t.n[i]);
        let dr = dan * t.u[i];
        let dar = dr * t.r[i] * (1.0 - t.r[i]);
        let daz = dz * t.z[i] * (1.0 - t.z[i]);
        dax[i] = daz;
        dax[hd + i] = dar;
        dax[2 * hd + i] = dan;
        dah[i] = daz;
        dah[hd + i] = dar;
        dah[2 * hd + i] = dan * t.r[i];
    }

    let x = &p.embed.data[t.input * e..(t.input + 1) * e];
    outer_add(&mut grad.gru_wx.data, &dax, x);
    outer_add(&mut grad.gru_wh.data, &dah, &t.h_prev);
    for (g, d) in grad.gru_b.data.iter_mut().zip(&dax) {
        *g += d;
    }
    matvec_t_add(&p.gru_wx.data, &dax, &mut grad.embed.data[t.input * e..(t.input + 1) * e]);
    matvec_t_add(&p.gru_wh.data, &dah, &mut dh_prev);
    dh_prev
}
