//! Gated recurrent units with a fused backward pass through time.

use super::gemm::gemm;
use super::ops::concat_last;
use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights of one recurrent direction. Gate rows are stacked as `[r; z; n]`:
/// `w_ih: 3H×n_in`, `w_hh: 3H×H`, biases `3H`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars<'t> {
    pub w_ih: Var<'t>,
    pub w_hh: Var<'t>,
    pub b_ih: Var<'t>,
    pub b_hh: Var<'t>,
}

/// Runs a GRU over `x: T×B×n_in` from `h0: B×H` (zeros when `None`) and
/// returns every hidden state, `T×B×H`. With `reverse` the sequence is consumed from the last step;
/// outputs stay aligned with their input positions.
///
/// ```text
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_sequence<'t>(x: Var<'t>, h0: Option<Var<'t>>, w: GruVars<'t>, reverse: bool) -> Result<Var<'t>> {
    let xv = x.value();
    let (wih, whh, bih, bhh) = (w.w_ih.value(), w.w_hh.value(), w.b_ih.value(), w.b_hh.value());
    let xs = xv.shape().to_vec();
    let hs = whh.shape();
    if xs.len() != 3 || hs.len() != 2 || hs[0] != 3 * hs[1] {
        return Err(Error::shape("gru", format!("input {xs:?}, w_hh {hs:?}")));
    }
    let (steps, batch, n_in) = (xs[0], xs[1], xs[2]);
    let h = hs[1];
    let g3 = 3 * h;
    if wih.shape() != [g3, n_in] || bih.shape() != [g3] || bhh.shape() != [g3] {
        return Err(Error::shape(
            "gru",
            format!(
                "input {xs:?}, w_ih {:?}, b_ih {:?}, b_hh {:?} for hidden size {h}",
                wih.shape(),
                bih.shape(),
                bhh.shape()
            ),
        ));
    }
    let rows = steps * batch;
    let mut hcur = match h0 {
        Some(h0) => {
            let v = h0.value();
            if v.shape() != [batch, h] {
                return Err(Error::shape("gru", format!("h0 {:?}, expected [{batch}, {h}]", v.shape())));
            }
            v.data().to_vec()
        }
        None => vec![0.0; batch * h],
    };

    // Input projections for every step at once.
    let mut gi = Vec::with_capacity(rows * g3);
    for _ in 0..rows {
        gi.extend_from_slice(bih.data());
    }
    gemm(rows, n_in, g3, xv.data(), false, wih.data(), true, 1.0, &mut gi);

    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    let mut out = vec![0.0; rows * h];
    // Per position t (input order): gate activations, ghn = W_hn h + b_hn, and the state fed in.
    let mut r_all = vec![0.0; rows * h];
    let mut z_all = vec![0.0; rows * h];
    let mut n_all = vec![0.0; rows * h];
    let mut ghn_all = vec![0.0; rows * h];
    let mut hprev_all = vec![0.0; rows * h];
    let mut gh = vec![0.0; batch * g3];
    for &t in &order {
        for row in gh.chunks_mut(g3) {
            row.copy_from_slice(bhh.data());
        }
        gemm(batch, h, g3, &hcur, false, whh.data(), true, 1.0, &mut gh);
        let base = t * batch * h;
        hprev_all[base..base + batch * h].copy_from_slice(&hcur);
        for b in 0..batch {
            let gi_row = &gi[(t * batch + b) * g3..][..g3];
            let gh_row = &gh[b * g3..][..g3];
            for j in 0..h {
                let k = base + b * h + j;
                let r = sigmoid(gi_row[j] + gh_row[j]);
                let z = sigmoid(gi_row[h + j] + gh_row[h + j]);
                let ghn = gh_row[2 * h + j];
                let n = (gi_row[2 * h + j] + r * ghn).tanh();
                let hp = hcur[b * h + j];
                let hn = (1.0 - z) * n + z * hp;
                r_all[k] = r;
                z_all[k] = z;
                n_all[k] = n;
                ghn_all[k] = ghn;
                out[k] = hn;
            }
        }
        hcur.copy_from_slice(&out[base..base + batch * h]);
    }
    let out = Tensor::new(vec![steps, batch, h], out)?;

    let mut parents = vec![x, w.w_ih, w.w_hh, w.b_ih, w.b_hh];
    parents.extend(h0);
    Ok(x.tape().op(
        out,
        &parents,
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut dgi = vec![0.0; rows * g3];
            let mut dgh = vec![0.0; rows * g3];
            let mut dh_next = vec![0.0; batch * h];
            let mut dh_prev = vec![0.0; batch * h];
            for &t in order.iter().rev() {
                let base = t * batch * h;
                dh_prev.fill(0.0);
                for b in 0..batch {
                    let gi_row = &mut dgi[(t * batch + b) * g3..][..g3];
                    let gh_row = &mut dgh[(t * batch + b) * g3..][..g3];
                    for j in 0..h {
                        let k = base + b * h + j;
                        let dh = gd[k] + dh_next[b * h + j];
                        let (r, z, n) = (r_all[k], z_all[k], n_all[k]);
                        let dn = dh * (1.0 - z) * (1.0 - n * n);
                        let dz = dh * (hprev_all[k] - n) * z * (1.0 - z);
                        let dr = dn * ghn_all[k] * r * (1.0 - r);
                        dh_prev[b * h + j] = dh * z;
                        gi_row[j] = dr;
                        gi_row[h + j] = dz;
                        gi_row[2 * h + j] = dn;
                        gh_row[j] = dr;
                        gh_row[h + j] = dz;
                        gh_row[2 * h + j] = dn * r;
                    }
                }
                let dgh_t = &dgh[t * batch * g3..(t + 1) * batch * g3];
                gemm(batch, g3, h, dgh_t, false, whh.data(), false, 1.0, &mut dh_prev);
                std::mem::swap(&mut dh_next, &mut dh_prev);
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![0.0; rows * n_in];
                gemm(rows, g3, n_in, &dgi, false, wih.data(), false, 0.0, &mut dx);
                Tensor::new(vec![steps, batch, n_in], dx).expect("dx")
            });
            let dwih = needs[1].then(|| {
                let mut d = vec![0.0; g3 * n_in];
                gemm(g3, rows, n_in, &dgi, true, xv.data(), false, 0.0, &mut d);
                Tensor::new(vec![g3, n_in], d).expect("dw_ih")
            });
            let dwhh = needs[2].then(|| {
                let mut d = vec![0.0; g3 * h];
                gemm(g3, rows, h, &dgh, true, &hprev_all, false, 0.0, &mut d);
                Tensor::new(vec![g3, h], d).expect("dw_hh")
            });
            let col_sum = |m: &[f64]| {
                let mut s = vec![0.0; g3];
                for row in m.chunks(g3) {
                    s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                Tensor::new(vec![g3], s).expect("bias grad")
            };
            let dbih = needs[3].then(|| col_sum(&dgi));
            let dbhh = needs[4].then(|| col_sum(&dgh));
            let mut grads = vec![dx, dwih, dwhh, dbih, dbhh];
            if needs.len() > 5 {
                grads.push(needs[5].then(|| Tensor::new(vec![batch, h], dh_next.clone()).expect("dh0")));
            }
            grads
        }),
    ))
}

/// Bidirectional GRU: forward and reverse hidden states concatenated, `T×B×2H`.
pub fn bigru<'t>(x: Var<'t>, fwd: GruVars<'t>, bwd: GruVars<'t>) -> Result<Var<'t>> {
    let f = gru_sequence(x, None, fwd, false)?;
    let b = gru_sequence(x, None, bwd, true)?;
    concat_last(f, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;

    /// Straightforward single-sample recurrence used as a reference.
    fn reference(x: &[Vec<f64>], wih: &[f64], whh: &[f64], bih: &[f64], bhh: &[f64], h: usize) -> Vec<Vec<f64>> {
        let n_in = x[0].len();
        let mut state = vec![0.0; h];
        let mut out = Vec::new();
        for xt in x {
            let gi: Vec<f64> = (0..3 * h)
                .map(|i| bih[i] + (0..n_in).map(|k| wih[i * n_in + k] * xt[k]).sum::<f64>())
                .collect();
            let gh: Vec<f64> = (0..3 * h)
                .map(|i| bhh[i] + (0..h).map(|k| whh[i * h + k] * state[k]).sum::<f64>())
                .collect();
            let next: Vec<f64> = (0..h)
                .map(|j| {
                    let r = sigmoid(gi[j] + gh[j]);
                    let z = sigmoid(gi[h + j] + gh[h + j]);
                    let n = (gi[2 * h + j] + r * gh[2 * h + j]).tanh();
                    (1.0 - z) * n + z * state[j]
                })
                .collect();
            state = next.clone();
            out.push(next);
        }
        out
    }

    fn seeded(n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 1000.0 - 0.5)
            .collect()
    }

    #[test]
    fn matches_reference_both_directions() {
        let (steps, n_in, h) = (5, 3, 4);
        let xdata = seeded(steps * n_in, 1);
        let (wih, whh, bih, bhh) = (seeded(3 * h * n_in, 2), seeded(3 * h * h, 3), seeded(3 * h, 4), seeded(3 * h, 5));
        let tape = Tape::inference();
        let vars = GruVars {
            w_ih: tape.constant(Tensor::new(vec![3 * h, n_in], wih.clone()).unwrap()),
            w_hh: tape.constant(Tensor::new(vec![3 * h, h], whh.clone()).unwrap()),
            b_ih: tape.constant(Tensor::new(vec![3 * h], bih.clone()).unwrap()),
            b_hh: tape.constant(Tensor::new(vec![3 * h], bhh.clone()).unwrap()),
        };
        let x = tape.constant(Tensor::new(vec![steps, 1, n_in], xdata.clone()).unwrap());
        let seq: Vec<Vec<f64>> = xdata.chunks(n_in).map(<[f64]>::to_vec).collect();

        let fwd = gru_sequence(x, None, vars, false).unwrap().value();
        let want = reference(&seq, &wih, &whh, &bih, &bhh, h);
        for t in 0..steps {
            for j in 0..h {
                assert!((fwd.data()[t * h + j] - want[t][j]).abs() < 1e-12);
            }
        }

        let rev = gru_sequence(x, None, vars, true).unwrap().value();
        let rseq: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
        let want = reference(&rseq, &wih, &whh, &bih, &bhh, h);
        for t in 0..steps {
            for j in 0..h {
                assert!((rev.data()[t * h + j] - want[steps - 1 - t][j]).abs() < 1e-12);
            }
        }

        let both = bigru(x, vars, vars).unwrap();
        assert_eq!(both.shape(), vec![steps, 1, 2 * h]);
    }

    #[test]
    fn zero_weights_halve_the_state() {
        // All weights zero: r = z = 0.5 and n = 0, so h' = h / 2.
        let tape = Tape::inference();
        let h = 3;
        let vars = GruVars {
            w_ih: tape.constant(Tensor::zeros([3 * h, 2])),
            w_hh: tape.constant(Tensor::zeros([3 * h, h])),
            b_ih: tape.constant(Tensor::zeros([3 * h])),
            b_hh: tape.constant(Tensor::zeros([3 * h])),
        };
        let x = tape.constant(Tensor::ones([4, 2, 2]));
        let h0 = tape.constant(Tensor::new(vec![2, h], vec![1.0, -2.0, 4.0, 8.0, 0.5, -1.0]).unwrap());
        let y = gru_sequence(x, Some(h0), vars, false).unwrap().value();
        let mut prev = h0.value().data().to_vec();
        for t in 0..4 {
            let step = &y.data()[t * 2 * h..(t + 1) * 2 * h];
            for (a, p) in step.iter().zip(&prev) {
                assert_eq!(*a, 0.5 * p);
            }
            prev = step.to_vec();
        }
        assert!(bigru(x, vars, vars).unwrap().value().data().iter().all(|&v| v == 0.0));
        let bad = tape.constant(Tensor::ones([4, 2, 5]));
        assert!(gru_sequence(bad, None, vars, false).is_err());
        assert_eq!(3 * (512 * 512 + 512 * 512 + 2 * 512), 1_575_936);
    }

    #[test]
    fn bigru_time_reversal_symmetry() {
        let (steps, batch, n_in, h) = (6, 2, 3, 4);
        let tape = Tape::inference();
        let mk = |seed: u64| GruVars {
            w_ih: tape.constant(Tensor::new(vec![3 * h, n_in], seeded(3 * h * n_in, seed)).unwrap()),
            w_hh: tape.constant(Tensor::new(vec![3 * h, h], seeded(3 * h * h, seed + 1)).unwrap()),
            b_ih: tape.constant(Tensor::new(vec![3 * h], seeded(3 * h, seed + 2)).unwrap()),
            b_hh: tape.constant(Tensor::new(vec![3 * h], seeded(3 * h, seed + 3)).unwrap()),
        };
        let (a, b) = (mk(10), mk(20));
        let xdata = seeded(steps * batch * n_in, 7);
        let x = tape.constant(Tensor::new(vec![steps, batch, n_in], xdata.clone()).unwrap());
        let mut rev = Vec::new();
        for t in (0..steps).rev() {
            rev.extend_from_slice(&xdata[t * batch * n_in..(t + 1) * batch * n_in]);
        }
        let xr = tape.constant(Tensor::new(vec![steps, batch, n_in], rev).unwrap());
        let y = bigru(x, a, b).unwrap().value();
        let yr = bigru(xr, b, a).unwrap().value();
        for t in 0..steps {
            for bi in 0..batch {
                let row = &y.data()[(t * batch + bi) * 2 * h..][..2 * h];
                let rrow = &yr.data()[((steps - 1 - t) * batch + bi) * 2 * h..][..2 * h];
                for j in 0..h {
                    assert!((row[j] - rrow[h + j]).abs() < 1e-12);
                    assert!((row[h + j] - rrow[j]).abs() < 1e-12);
                }
            }
        }
    }
}
