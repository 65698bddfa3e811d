//! Analytic gradients of the encoder forward pass.

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut2};

use super::forward::{forward_cached, DropoutMode, GruCache, SeqCache};
use super::{EncoderParams, ParamGradients};
use crate::error::{Error, Result};
use crate::textproc::TokenSequence;

fn add_outer(mut acc: ArrayViewMut2<'_, f64>, a: ArrayView1<'_, f64>, b: &Array1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let mut row = acc.row_mut(i);
        for (j, &bj) in b.iter().enumerate() {
            row[j] += ai * bj;
        }
    }
}

/// Backpropagate one GRU direction. `order` is the processing order used in
/// the forward pass; `dstate[pos]` is the external gradient into the state
/// emitted at position `pos`. Accumulates weight gradients and adds input
/// gradients into `dxs`.
///
/// The recurrence walks step by step, but the weight-gradient outer
/// products and the input gradients batch into three GEMMs at the end.
#[allow(clippy::too_many_arguments)]
fn gru_backward(
    params: &EncoderParams,
    cache: &GruCache,
    order: &[usize],
    dstate: &Array2<f64>,
    col: usize,
    fwd: bool,
    grads: &mut ParamGradients,
    dxs: &mut Array2<f64>,
    xs: &Array2<f64>,
) {
    let h_dim = params.cfg().d_hid;
    let e_dim = params.cfg().d_emb;
    let len = order.len();
    let w_ih = params.gru_w_ih(fwd).to_owned();
    let w_hh = params.gru_w_hh(fwd).to_owned();
    let layout = params.layout.clone();
    let (r_w_ih, r_w_hh, r_b_ih, r_b_hh) = if fwd {
        (
            layout.fwd_w_ih.clone(),
            layout.fwd_w_hh.clone(),
            layout.fwd_b_ih.clone(),
            layout.fwd_b_hh.clone(),
        )
    } else {
        (
            layout.bwd_w_ih.clone(),
            layout.bwd_w_hh.clone(),
            layout.bwd_b_ih.clone(),
            layout.bwd_b_hh.clone(),
        )
    };

    // dgi rows indexed by position, dgh and h_prev rows by processing step
    let mut dgi_pos = Array2::<f64>::zeros((len, 3 * h_dim));
    let mut dgh_step = Array2::<f64>::zeros((len, 3 * h_dim));
    let mut hprev_step = Array2::<f64>::zeros((len, h_dim));
    let mut carry = Array1::<f64>::zeros(h_dim);
    let mut dgh = Array1::<f64>::zeros(3 * h_dim);
    for k in (0..len).rev() {
        let pos = order[k];
        let h_prev = &cache.h[k];
        let (r, z, n, ghn) = (&cache.r[k], &cache.z[k], &cache.n[k], &cache.ghn[k]);
        {
            let mut dgi = dgi_pos.row_mut(pos);
            for c in 0..h_dim {
                let dh = dstate[[pos, col + c]] + carry[c];
                let dn = dh * (1.0 - z[c]);
                let dz = dh * (h_prev[c] - n[c]);
                let dgn = dn * (1.0 - n[c] * n[c]);
                let dr = dgn * ghn[c];
                dgi[c] = dr * r[c] * (1.0 - r[c]);
                dgi[h_dim + c] = dz * z[c] * (1.0 - z[c]);
                dgi[2 * h_dim + c] = dgn;
                dgh[c] = dgi[c];
                dgh[h_dim + c] = dgi[h_dim + c];
                dgh[2 * h_dim + c] = dgn * r[c];
                carry[c] = dh * z[c];
            }
        }
        dgh_step.row_mut(k).assign(&dgh);
        hprev_step.row_mut(k).assign(h_prev);
        carry += &w_hh.dot(&dgh);
    }

    {
        let mut acc = grads.view2_mut(r_w_ih, e_dim, 3 * h_dim);
        acc += &xs.t().dot(&dgi_pos);
    }
    {
        let mut acc = grads.view2_mut(r_w_hh, h_dim, 3 * h_dim);
        acc += &hprev_step.t().dot(&dgh_step);
    }
    {
        let mut b = grads.view1_mut(r_b_ih);
        b += &dgi_pos.sum_axis(ndarray::Axis(0));
    }
    {
        let mut b = grads.view1_mut(r_b_hh);
        b += &dgh_step.sum_axis(ndarray::Axis(0));
    }
    *dxs += &dgi_pos.dot(&w_ih.t());
}

/// Backpropagate one sequence's upstream gradient (d_out values) through the
/// cached forward pass, accumulating into `grads`.
pub(crate) fn backward_into(
    params: &EncoderParams,
    cache: &SeqCache,
    upstream: &Array1<f64>,
    grads: &mut ParamGradients,
) {
    let cfg = params.cfg();
    let len = cache.len;
    let h = cfg.d_hid;
    let dh_dim = cfg.d_head;
    let scale = 1.0 / (dh_dim as f64).sqrt();

    // dropout
    let mut gy = upstream.clone();
    if let Some(scales) = &cache.drop_scale {
        for (g, &sc) in gy.iter_mut().zip(scales) {
            *g *= sc;
        }
    }

    // output projection: y = pooled . W_out
    add_outer(
        grads.view2_mut(params.layout.pool_out.clone(), 2 * h, cfg.d_out),
        cache.pooled.view(),
        &gy,
    );
    let dpooled = params.pool_out().dot(&gy); // 2H

    // attention heads
    let mut dxcat = Array2::<f64>::zeros((len, 2 * h));
    for hi in 0..cfg.n_heads {
        let head = &cache.heads[hi];
        let dout = dpooled.slice(ndarray::s![hi * dh_dim..(hi + 1) * dh_dim]);
        let mut ds = Array2::<f64>::zeros((len, dh_dim));
        // head output = sum_i w_i S_i
        let mut dw = Array1::<f64>::zeros(len);
        for i in 0..len {
            let si = head.s.row(i);
            dw[i] = dout.dot(&si);
            let mut row = ds.row_mut(i);
            for c in 0..dh_dim {
                row[c] += head.w[i] * dout[c];
            }
        }
        // softmax over row maxima
        let wdot: f64 = head.w.iter().zip(dw.iter()).map(|(&a, &b)| a * b).sum();
        for i in 0..len {
            let dm = head.w[i] * (dw[i] - wdot);
            if dm == 0.0 {
                continue;
            }
            // row max picked logit (i, j*): logit = scale * S_i . S_j*
            let j = head.argmax[i];
            let si = head.s.row(i).to_owned();
            let sj = head.s.row(j).to_owned();
            {
                let mut row_i = ds.row_mut(i);
                for c in 0..dh_dim {
                    row_i[c] += dm * scale * sj[c];
                }
            }
            {
                let mut row_j = ds.row_mut(j);
                for c in 0..dh_dim {
                    row_j[c] += dm * scale * si[c];
                }
            }
        }
        // S = xcat . W_h
        let dwh = cache.xcat.t().dot(&ds); // 2H x d_head
        {
            let mut acc = grads.view2_mut(params.layout.heads[hi].clone(), 2 * h, dh_dim);
            acc += &dwh;
        }
        dxcat += &ds.dot(&params.head(hi).t());
    }

    // bidirectional GRU; forward states sit in columns 0..H, backward in H..2H
    let mut dxs = Array2::<f64>::zeros((len, cfg.d_emb));
    let fwd_order: Vec<usize> = (0..len).collect();
    let bwd_order: Vec<usize> = (0..len).rev().collect();
    gru_backward(
        params, &cache.fwd, &fwd_order, &dxcat, 0, true, grads, &mut dxs, &cache.xs,
    );
    gru_backward(
        params, &cache.bwd, &bwd_order, &dxcat, h, false, grads, &mut dxs, &cache.xs,
    );

    // embeddings
    let mut emb = grads.view2_mut(params.layout.emb.clone(), cfg.vocab_size, cfg.d_emb);
    for (t, &id) in cache.ids.iter().enumerate() {
        let mut row = emb.row_mut(id as usize);
        row += &dxs.row(t);
    }
}

/// Exact gradients of all encoder parameters for a batch of sequences with
/// the given per-sequence upstream gradients (each d_out long), summed over
/// the batch. The forward pass runs without dropout; the projection-head
/// segments stay zero because [`encode`](super::encode) does not apply them.
pub fn backward(
    params: &EncoderParams,
    seqs: &[TokenSequence],
    upstreams: &[Array1<f64>],
) -> Result<ParamGradients> {
    if seqs.len() != upstreams.len() {
        return Err(Error::validation(format!(
            "{} sequences but {} upstream gradients",
            seqs.len(),
            upstreams.len()
        )));
    }
    let cfg = params.cfg();
    for g in upstreams {
        if g.len() != cfg.d_out {
            return Err(Error::validation(format!(
                "upstream gradient has {} entries, expected {}",
                g.len(),
                cfg.d_out
            )));
        }
    }
    let mut grads = ParamGradients::zeros(cfg);
    for (seq, g) in seqs.iter().zip(upstreams) {
        let (_, cache) = forward_cached(params, seq, DropoutMode::Off)?;
        backward_into(params, &cache, g, &mut grads);
    }
    Ok(grads)
}
