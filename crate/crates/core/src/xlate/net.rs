//! Parameter layout, forward pass and hand-written backward pass of the
//! encoder-decoder network. All parameters live in one flat `f64` buffer.

use crate::corpus::{BOS, EOS, PAD, UNK};
use crate::embed::EmbeddingMatrix;
use crate::linalg::{axpy, dot, matvec_add, matvec_t_add, outer_add, sigmoid, softmax_in_place};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default)]
struct Alloc {
    next: usize,
    specs: Vec<TensorSpec>,
}

impl Alloc {
    fn take(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.next;
        self.next += shape.iter().product::<usize>();
        self.specs.push(TensorSpec { name, shape, offset });
        offset
    }
}

/// Offsets of one gated recurrent cell with PyTorch gate order `r, z, n`.
#[derive(Debug, Clone, Copy)]
pub struct Gru {
    pub input: usize,
    pub hidden: usize,
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
}

/// Activations of one cell step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`, needed for the reset-gate gradient.
    ghn: Vec<f64>,
}

impl Gru {
    fn new(a: &mut Alloc, prefix: &str, input: usize, hidden: usize) -> Self {
        Gru {
            input,
            hidden,
            w_ih: a.take(format!("{prefix}.w_ih"), vec![3 * hidden, input]),
            w_hh: a.take(format!("{prefix}.w_hh"), vec![3 * hidden, hidden]),
            b_ih: a.take(format!("{prefix}.b_ih"), vec![3 * hidden]),
            b_hh: a.take(format!("{prefix}.b_hh"), vec![3 * hidden]),
        }
    }

    pub fn step(&self, p: &[f64], x: &[f64], h: &[f64]) -> GruStep {
        let (hs, i) = (self.hidden, self.input);
        let mut gi = p[self.b_ih..self.b_ih + 3 * hs].to_vec();
        matvec_add(&p[self.w_ih..self.w_ih + 3 * hs * i], 3 * hs, i, x, &mut gi);
        let mut gh = p[self.b_hh..self.b_hh + 3 * hs].to_vec();
        matvec_add(&p[self.w_hh..self.w_hh + 3 * hs * hs], 3 * hs, hs, h, &mut gh);
        let mut r = vec![0.0; hs];
        let mut z = vec![0.0; hs];
        let mut n = vec![0.0; hs];
        let mut out = vec![0.0; hs];
        for k in 0..hs {
            r[k] = sigmoid(gi[k] + gh[k]);
            z[k] = sigmoid(gi[hs + k] + gh[hs + k]);
            n[k] = (gi[2 * hs + k] + r[k] * gh[2 * hs + k]).tanh();
            out[k] = (1.0 - z[k]) * n[k] + z[k] * h[k];
        }
        GruStep { h: out, r, z, n, ghn: gh[2 * hs..].to_vec() }
    }

    /// Accumulates parameter gradients for `dh` flowing into the step
    /// output and adds the gradient with respect to `h_prev` to `dh_prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], h_prev: &[f64], st: &GruStep, dh: &[f64], dh_prev: &mut [f64]) {
        let (hs, i) = (self.hidden, self.input);
        let mut dgi = vec![0.0; 3 * hs];
        let mut dgh = vec![0.0; 3 * hs];
        for k in 0..hs {
            let (r, z, n) = (st.r[k], st.z[k], st.n[k]);
            let dn = dh[k] * (1.0 - z);
            let dz = dh[k] * (h_prev[k] - n);
            dh_prev[k] += dh[k] * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * st.ghn[k];
            let dr_pre = dr * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            dgi[k] = dr_pre;
            dgi[hs + k] = dz_pre;
            dgi[2 * hs + k] = dn_pre;
            dgh[k] = dr_pre;
            dgh[hs + k] = dz_pre;
            dgh[2 * hs + k] = dn_pre * r;
        }
        outer_add(&mut g[self.w_ih..self.w_ih + 3 * hs * i], 3 * hs, i, &dgi, x);
        axpy(1.0, &dgi, &mut g[self.b_ih..self.b_ih + 3 * hs]);
        outer_add(&mut g[self.w_hh..self.w_hh + 3 * hs * hs], 3 * hs, hs, &dgh, h_prev);
        axpy(1.0, &dgh, &mut g[self.b_hh..self.b_hh + 3 * hs]);
        matvec_t_add(&p[self.w_hh..self.w_hh + 3 * hs * hs], 3 * hs, hs, &dgh, dh_prev);
    }
}

/// One decoder: recurrent cell, multiplicative attention, output layer.
#[derive(Debug, Clone, Copy)]
pub struct Decoder {
    pub gru: Gru,
    w_a: usize,
    w_c: usize,
    b_c: usize,
    w_o: usize,
    b_o: usize,
    pub vocab: usize,
}

#[derive(Debug, Clone)]
pub struct Net {
    pub dim: usize,
    /// Hidden size of each encoder direction.
    pub hidden: usize,
    pub enc: [Gru; 2],
    pub dec: [Decoder; 2],
    pub specs: Vec<TensorSpec>,
    pub n_params: usize,
}

/// Encoder outputs for one source block.
pub struct Encoded {
    /// Context vector `[h_fwd; h_bwd]` per source position.
    pub ctx: Vec<Vec<f64>>,
    pub init: Vec<f64>,
    fwd: Vec<GruStep>,
    bwd: Vec<GruStep>,
}

struct DecStep {
    gru: GruStep,
    alpha: Vec<f64>,
    u: Vec<f64>,
    ht: Vec<f64>,
    probs: Vec<f64>,
}

impl Net {
    pub fn new(dim: usize, hidden: usize, vocab: [usize; 2]) -> Self {
        let mut a = Alloc::default();
        let hd = 2 * hidden;
        let enc = [Gru::new(&mut a, "enc.fwd", dim, hidden), Gru::new(&mut a, "enc.bwd", dim, hidden)];
        let mut dec_at = |side: usize| {
            let pre = format!("dec{side}");
            Decoder {
                gru: Gru::new(&mut a, &format!("{pre}.gru"), dim, hd),
                w_a: a.take(format!("{pre}.w_a"), vec![hd, hd]),
                w_c: a.take(format!("{pre}.w_c"), vec![hd, 2 * hd]),
                b_c: a.take(format!("{pre}.b_c"), vec![hd]),
                w_o: a.take(format!("{pre}.w_o"), vec![vocab[side], hd]),
                b_o: a.take(format!("{pre}.b_o"), vec![vocab[side]]),
                vocab: vocab[side],
            }
        };
        let dec = [dec_at(0), dec_at(1)];
        Net { dim, hidden, enc, dec, n_params: a.next, specs: a.specs }
    }

    /// Decoder state width.
    pub fn hd(&self) -> usize {
        2 * self.hidden
    }

    /// Offset range of every tensor belonging to decoder `side`.
    pub fn decoder_range(&self, side: usize) -> std::ops::Range<usize> {
        let d = &self.dec[side];
        d.gru.w_ih..d.b_o + d.vocab
    }

    pub fn encode(&self, p: &[f64], emb: &EmbeddingMatrix, src: &[u32]) -> Encoded {
        let h = self.hidden;
        let n = src.len();
        let zeros = vec![0.0; h];
        let mut fwd: Vec<GruStep> = Vec::with_capacity(n);
        for &id in src {
            let prev = fwd.last().map_or(&zeros, |s| &s.h);
            let st = self.enc[0].step(p, emb.row(id as usize), prev);
            fwd.push(st);
        }
        let mut bwd_rev: Vec<GruStep> = Vec::with_capacity(n);
        for &id in src.iter().rev() {
            let prev = bwd_rev.last().map_or(&zeros, |s| &s.h);
            let st = self.enc[1].step(p, emb.row(id as usize), prev);
            bwd_rev.push(st);
        }
        bwd_rev.reverse();
        let bwd = bwd_rev;
        let ctx = (0..n).map(|j| [fwd[j].h.as_slice(), bwd[j].h.as_slice()].concat()).collect();
        let init = [fwd[n - 1].h.as_slice(), bwd[0].h.as_slice()].concat();
        Encoded { ctx, init, fwd, bwd }
    }

    fn keys(&self, p: &[f64], dec: &Decoder, enc: &Encoded) -> Vec<Vec<f64>> {
        let hd = self.hd();
        enc.ctx
            .iter()
            .map(|c| {
                let mut k = vec![0.0; hd];
                matvec_add(&p[dec.w_a..dec.w_a + hd * hd], hd, hd, c, &mut k);
                k
            })
            .collect()
    }

    /// Attention, combination layer and output logits for decoder state `s`.
    /// Returns `(alpha, u, ht, logits)`.
    fn readout(&self, p: &[f64], dec: &Decoder, enc: &Encoded, keys: &[Vec<f64>], s: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hd();
        let mut alpha: Vec<f64> = keys.iter().map(|k| dot(s, k)).collect();
        softmax_in_place(&mut alpha);
        let mut u = vec![0.0; 2 * hd];
        for (a, c) in alpha.iter().zip(&enc.ctx) {
            axpy(*a, c, &mut u[..hd]);
        }
        u[hd..].copy_from_slice(s);
        let mut ht = p[dec.b_c..dec.b_c + hd].to_vec();
        matvec_add(&p[dec.w_c..dec.w_c + hd * 2 * hd], hd, 2 * hd, &u, &mut ht);
        ht.iter_mut().for_each(|v| *v = v.tanh());
        let mut logits = p[dec.b_o..dec.b_o + dec.vocab].to_vec();
        matvec_add(&p[dec.w_o..dec.w_o + dec.vocab * hd], dec.vocab, hd, &ht, &mut logits);
        (alpha, u, ht, logits)
    }

    /// Summed token cross-entropy of decoding `tgt` followed by `<EOS>` from
    /// `src` with decoder `side`. With `grad`, adds `scale × ∂loss/∂θ`.
    #[allow(clippy::too_many_arguments)]
    pub fn seq_loss(
        &self,
        p: &[f64],
        src_emb: &EmbeddingMatrix,
        tgt_emb: &EmbeddingMatrix,
        src: &[u32],
        tgt: &[u32],
        side: usize,
        grad: Option<(&mut [f64], f64)>,
    ) -> f64 {
        let dec = &self.dec[side];
        let hd = self.hd();
        let enc = self.encode(p, src_emb, src);
        let keys = self.keys(p, dec, &enc);
        let targets: Vec<u32> = tgt.iter().copied().chain(std::iter::once(EOS)).collect();
        let mut inputs = Vec::with_capacity(targets.len());
        inputs.push(BOS);
        inputs.extend_from_slice(tgt);

        let mut loss = 0.0;
        let mut steps: Vec<DecStep> = Vec::with_capacity(targets.len());
        for (t, (&x, &y)) in inputs.iter().zip(&targets).enumerate() {
            let prev = if t == 0 { &enc.init } else { &steps[t - 1].gru.h };
            let gru = dec.gru.step(p, tgt_emb.row(x as usize), prev);
            let (alpha, u, ht, mut logits) = self.readout(p, dec, &enc, &keys, &gru.h);
            let zy = logits[y as usize];
            loss += softmax_in_place(&mut logits) - zy;
            steps.push(DecStep { gru, alpha, u, ht, probs: logits });
        }

        let Some((g, scale)) = grad else {
            return loss;
        };

        let n = src.len();
        let mut dctx = vec![vec![0.0; hd]; n];
        let mut dkeys = vec![vec![0.0; hd]; n];
        let mut ds_att: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
        for (st, &y) in steps.iter().zip(&targets) {
            let mut dlogits: Vec<f64> = st.probs.iter().map(|v| v * scale).collect();
            dlogits[y as usize] -= scale;
            outer_add(&mut g[dec.w_o..dec.w_o + dec.vocab * hd], dec.vocab, hd, &dlogits, &st.ht);
            axpy(1.0, &dlogits, &mut g[dec.b_o..dec.b_o + dec.vocab]);
            let mut dht = vec![0.0; hd];
            matvec_t_add(&p[dec.w_o..dec.w_o + dec.vocab * hd], dec.vocab, hd, &dlogits, &mut dht);
            let da: Vec<f64> = dht.iter().zip(&st.ht).map(|(d, h)| d * (1.0 - h * h)).collect();
            outer_add(&mut g[dec.w_c..dec.w_c + hd * 2 * hd], hd, 2 * hd, &da, &st.u);
            axpy(1.0, &da, &mut g[dec.b_c..dec.b_c + hd]);
            let mut du = vec![0.0; 2 * hd];
            matvec_t_add(&p[dec.w_c..dec.w_c + hd * 2 * hd], hd, 2 * hd, &da, &mut du);
            let (d_ctx, d_s) = du.split_at(hd);
            let dalpha: Vec<f64> = enc.ctx.iter().map(|c| dot(d_ctx, c)).collect();
            let mean: f64 = st.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
            let mut ds = d_s.to_vec();
            for j in 0..n {
                axpy(st.alpha[j], d_ctx, &mut dctx[j]);
                let dscore = st.alpha[j] * (dalpha[j] - mean);
                axpy(dscore, &keys[j], &mut ds);
                axpy(dscore, &st.gru.h, &mut dkeys[j]);
            }
            ds_att.push(ds);
        }
        for j in 0..n {
            outer_add(&mut g[dec.w_a..dec.w_a + hd * hd], hd, hd, &dkeys[j], &enc.ctx[j]);
            matvec_t_add(&p[dec.w_a..dec.w_a + hd * hd], hd, hd, &dkeys[j], &mut dctx[j]);
        }

        // Back through the decoder recurrence.
        let mut carry = vec![0.0; hd];
        for t in (0..steps.len()).rev() {
            let dh: Vec<f64> = ds_att[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
            let prev = if t == 0 { &enc.init } else { &steps[t - 1].gru.h };
            let mut dprev = vec![0.0; hd];
            dec.gru.backward(p, g, tgt_emb.row(inputs[t] as usize), prev, &steps[t].gru, &dh, &mut dprev);
            carry = dprev;
        }

        // Encoder: the initial decoder state is [h_fwd[n-1]; h_bwd[0]].
        let h = self.hidden;
        let zeros = vec![0.0; h];
        let mut carry_f = carry[..h].to_vec();
        for j in (0..n).rev() {
            let dh: Vec<f64> = dctx[j][..h].iter().zip(&carry_f).map(|(a, b)| a + b).collect();
            let prev = if j == 0 { &zeros } else { &enc.fwd[j - 1].h };
            let mut dprev = vec![0.0; h];
            self.enc[0].backward(p, g, src_emb.row(src[j] as usize), prev, &enc.fwd[j], &dh, &mut dprev);
            carry_f = dprev;
        }
        let mut carry_b = carry[h..].to_vec();
        for j in 0..n {
            let dh: Vec<f64> = dctx[j][h..].iter().zip(&carry_b).map(|(a, b)| a + b).collect();
            let prev = if j + 1 == n { &zeros } else { &enc.bwd[j + 1].h };
            let mut dprev = vec![0.0; h];
            self.enc[1].backward(p, g, src_emb.row(src[j] as usize), prev, &enc.bwd[j], &dh, &mut dprev);
            carry_b = dprev;
        }
        loss
    }

    /// Beam search with `width` beams; `width == 1` is greedy decoding.
    /// `<PAD>`, `<UNK>` and `<BOS>` are never emitted, and `<EOS>` is not
    /// allowed before `min_len` tokens.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        p: &[f64],
        src_emb: &EmbeddingMatrix,
        tgt_emb: &EmbeddingMatrix,
        src: &[u32],
        side: usize,
        width: usize,
        min_len: usize,
        max_len: usize,
    ) -> Vec<u32> {
        let dec = &self.dec[side];
        let enc = self.encode(p, src_emb, src);
        let keys = self.keys(p, dec, &enc);
        let width = width.max(1);
        struct Hyp {
            score: f64,
            tokens: Vec<u32>,
            state: Vec<f64>,
        }
        let mut beams = vec![Hyp { score: 0.0, tokens: Vec::new(), state: enc.init.clone() }];
        let mut finished: Vec<(f64, Vec<u32>)> = Vec::new();
        for _ in 0..=max_len {
            let mut cand: Vec<(f64, usize, u32, Vec<f64>)> = Vec::new();
            for (bi, b) in beams.iter().enumerate() {
                let x = *b.tokens.last().unwrap_or(&BOS);
                let st = dec.gru.step(p, tgt_emb.row(x as usize), &b.state);
                let (_, _, _, mut logits) = self.readout(p, dec, &enc, &keys, &st.h);
                softmax_in_place(&mut logits);
                let mut options: Vec<(f64, u32)> = logits
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| ![PAD, UNK, BOS].contains(&(k as u32)))
                    .filter(|&(k, _)| k as u32 != EOS || b.tokens.len() >= min_len)
                    .map(|(k, &pr)| (pr.ln(), k as u32))
                    .collect();
                options.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                for &(lp, k) in options.iter().take(width) {
                    cand.push((b.score + lp, bi, k, st.h.clone()));
                }
            }
            cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(width);
            for (score, bi, k, state) in cand.into_iter().take(width) {
                let mut tokens = beams[bi].tokens.clone();
                if k == EOS {
                    finished.push((score, tokens));
                } else {
                    tokens.push(k);
                    next.push(Hyp { score, tokens, state });
                }
            }
            beams = next;
            let best_finished = finished.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max);
            if beams.is_empty() || beams.iter().all(|b| b.score <= best_finished) || beams[0].tokens.len() >= max_len {
                break;
            }
        }
        finished.extend(beams.into_iter().map(|b| (b.score, b.tokens)));
        finished.sort_by(|a, b| b.0.total_cmp(&a.0));
        finished.into_iter().next().map(|f| f.1).unwrap_or_default()
    }
}
