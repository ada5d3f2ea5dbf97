//! Teacher-forced negative log-likelihood, its exact gradient by
//! backpropagation through time, and plain SGD updates.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use super::{log_softmax, ContextVector, GruGates, ModelParams, Tensors};
use crate::error::{Error, Result};
use crate::lexicon::TokenId;

pub type Gradients = Tensors;

/// One training pair: context and a complete sequence ending in eos.
pub type Example<'a> = (&'a ContextVector, &'a [TokenId]);

fn add_outer(m: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

impl ModelParams {
    /// Negative log-likelihood of one sequence and its gradient.
    pub fn nll_and_gradients(&self, ctx: &ContextVector, seq: &[TokenId]) -> Result<(f64, Gradients)> {
        self.check_context(ctx)?;
        self.check_sequence(seq)?;
        let t = &self.tensors;
        let len = seq.len();

        let mut hs: Vec<Array1<f64>> = Vec::with_capacity(len);
        let mut gates: Vec<GruGates> = Vec::with_capacity(len.saturating_sub(1));
        hs.push(self.initial_hidden(ctx));
        for &tok in &seq[..len - 1] {
            let g = self.gru_gates(hs.last().unwrap(), tok);
            hs.push(g.h_next.clone());
            gates.push(g);
        }

        let mut grads = Tensors::zeros(&self.config, self.tied_output);
        let mut nll = 0.0;
        let mut dh = Array1::<f64>::zeros(self.config.hidden_dim);
        for step in (0..len).rev() {
            let h = &hs[step];
            let target = seq[step];

            let pre = t.out_w.dot(h) + &t.out_b;
            let (logits, v) = if self.tied_output {
                let v = pre.mapv(f64::tanh);
                (t.embed.t().dot(&v), Some(v))
            } else {
                (pre, None)
            };
            let logp = log_softmax(&logits);
            nll -= logp[target];
            let mut dlogits = logp.mapv(f64::exp);
            dlogits[target] -= 1.0;

            match v {
                Some(v) => {
                    add_outer(&mut grads.embed, v.view(), dlogits.view());
                    let dv = t.embed.dot(&dlogits);
                    let da = &dv * &v.mapv(|x| 1.0 - x * x);
                    add_outer(&mut grads.out_w, da.view(), h.view());
                    grads.out_b += &da;
                    dh += &t.out_w.t().dot(&da);
                }
                None => {
                    add_outer(&mut grads.out_w, dlogits.view(), h.view());
                    grads.out_b += &dlogits;
                    dh += &t.out_w.t().dot(&dlogits);
                }
            }

            if step == 0 {
                let da0 = &dh * &h.mapv(|x| 1.0 - x * x);
                add_outer(&mut grads.ctx_w, da0.view(), ctx.view());
                grads.ctx_b += &da0;
                break;
            }

            let g = &gates[step - 1];
            let h_prev = &hs[step - 1];
            let tok = seq[step - 1];
            let x = t.embed.column(tok);

            let dn = &dh * &g.z.mapv(|z| 1.0 - z);
            let dz = &dh * &(h_prev - &g.n);
            let mut dh_prev = &dh * &g.z;

            let da_n = &dn * &g.n.mapv(|n| 1.0 - n * n);
            add_outer(&mut grads.w_n, da_n.view(), x);
            add_outer(&mut grads.u_n, da_n.view(), g.rh.view());
            grads.b_n += &da_n;
            let drh = t.u_n.t().dot(&da_n);
            let dr = &drh * h_prev;
            dh_prev += &(&drh * &g.r);
            let mut dx = t.w_n.t().dot(&da_n);

            let da_z = &dz * &g.z.mapv(|z| z * (1.0 - z));
            add_outer(&mut grads.w_z, da_z.view(), x);
            add_outer(&mut grads.u_z, da_z.view(), h_prev.view());
            grads.b_z += &da_z;
            dh_prev += &t.u_z.t().dot(&da_z);
            dx += &t.w_z.t().dot(&da_z);

            let da_r = &dr * &g.r.mapv(|r| r * (1.0 - r));
            add_outer(&mut grads.w_r, da_r.view(), x);
            add_outer(&mut grads.u_r, da_r.view(), h_prev.view());
            grads.b_r += &da_r;
            dh_prev += &t.u_r.t().dot(&da_r);
            dx += &t.w_r.t().dot(&da_r);

            let mut col = grads.embed.column_mut(tok);
            col += &dx;
            dh = dh_prev;
        }
        Ok((nll, grads))
    }

    /// Mean per-sequence NLL over the batch and its gradient. Per-example
    /// work runs in parallel; the reduction is sequential in batch order so
    /// results do not depend on scheduling.
    pub fn batch_gradients(&self, batch: &[Example<'_>]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let parts = batch
            .par_iter()
            .map(|&(ctx, seq)| self.nll_and_gradients(ctx, seq))
            .collect::<Result<Vec<_>>>()?;
        let mut iter = parts.into_iter();
        let (mut loss, mut grads) = iter.next().unwrap();
        for (l, g) in iter {
            loss += l;
            grads.add_assign(&g);
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        Ok((loss * scale, grads))
    }

    /// Mean per-sequence NLL without gradients.
    pub fn mean_nll(&self, batch: &[Example<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let total = batch
            .par_iter()
            .map(|&(ctx, seq)| self.sequence_logprob(ctx, seq))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum::<f64>();
        Ok(-total / batch.len() as f64)
    }

    /// The parameter delta an SGD step with `lr` would subtract. Frozen
    /// embeddings get an all-zero slot.
    pub fn applied_update(&self, grads: &Gradients, lr: f64) -> Tensors {
        let mut update = grads.clone();
        update.scale(lr);
        if self.freeze_embeddings {
            update.embed.fill(0.0);
        } else {
            update.embed *= self.embed_lr_scale;
        }
        update
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        if lr == 0.0 {
            return;
        }
        let update = self.applied_update(grads, lr);
        for (dst, src) in self.tensors.slices_mut().into_iter().zip(update.slices()) {
            for (d, u) in dst.iter_mut().zip(src) {
                *d -= u;
            }
        }
    }

    /// One SGD step on the mean NLL of `batch`; returns the pre-update loss.
    pub fn train_step(&mut self, batch: &[Example<'_>], lr: f64) -> Result<f64> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {lr}")));
        }
        let (loss, grads) = self.batch_gradients(batch)?;
        self.apply_gradients(&grads, lr);
        Ok(loss)
    }
}

const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Largest relative error between the analytic NLL gradient and central
/// finite differences over every parameter, using
/// `|a - n| / max(|a| + |n|, 1e-5)`. Components smaller than the floor are
/// below what central differences resolve in f64, so they are compared on an
/// absolute scale.
pub fn gradient_check(model: &ModelParams, ctx: &ContextVector, seq: &[TokenId], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::InvalidConfig(format!("epsilon {epsilon}")));
    }
    let (_, analytic) = model.nll_and_gradients(ctx, seq)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, grad) in analytic.slices().iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = probe.tensors.slices()[k][i];
            probe.tensors.slices_mut()[k][i] = orig + epsilon;
            let plus = -probe.sequence_logprob(ctx, seq)?;
            probe.tensors.slices_mut()[k][i] = orig - epsilon;
            let minus = -probe.sequence_logprob(ctx, seq)?;
            probe.tensors.slices_mut()[k][i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
