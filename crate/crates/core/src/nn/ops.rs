//! Shape and arithmetic operations.

use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (av, bv) = (a.value(), b.value());
    if av.shape() != bv.shape() {
        return Err(Error::shape("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
    }
    let mut out = (*av).clone();
    out.add_assign(&bv);
    Ok(a.tape().op(out, &[a, b], Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())])))
}

pub fn reshape<'t>(x: Var<'t>, shape: &[usize]) -> Result<Var<'t>> {
    let xv = x.value();
    let old = xv.shape().to_vec();
    let out = (*xv).clone().reshaped(shape.to_vec())?;
    Ok(x.tape().op(
        out,
        &[x],
        Box::new(move |g, _| vec![Some(g.clone().reshaped(old.clone()).expect("same size"))]),
    ))
}

pub(crate) fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    let shape = t.shape();
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let data = t.data();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..data.len() {
        out.push(data[off]);
        let mut ax = rank;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permutation preserves size")
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute<'t>(x: Var<'t>, perm: &[usize]) -> Result<Var<'t>> {
    let xv = x.value();
    let rank = xv.shape().len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::shape("permute", format!("{perm:?} for rank {rank}")));
    }
    let mut inverse = vec![0; rank];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let out = permute_tensor(&xv, perm);
    Ok(x.tape().op(out, &[x], Box::new(move |g, _| vec![Some(permute_tensor(g, &inverse))])))
}

/// Concatenates along the trailing axis.
pub fn concat_last<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (av, bv) = (a.value(), b.value());
    let (sa, sb) = (av.shape(), bv.shape());
    if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        return Err(Error::shape("concat_last", format!("{sa:?} vs {sb:?}")));
    }
    let (na, nb) = (av.last_dim(), bv.last_dim());
    let mut data = Vec::with_capacity(av.len() + bv.len());
    for (ra, rb) in av.data().chunks(na).zip(bv.data().chunks(nb)) {
        data.extend_from_slice(ra);
        data.extend_from_slice(rb);
    }
    let mut shape = sa.to_vec();
    *shape.last_mut().unwrap() = na + nb;
    let (shape_a, shape_b) = (sa.to_vec(), sb.to_vec());
    let out = Tensor::new(shape, data)?;
    Ok(a.tape().op(
        out,
        &[a, b],
        Box::new(move |g, _| {
            let mut ga = Vec::with_capacity(g.len() / (na + nb) * na);
            let mut gb = Vec::with_capacity(g.len() / (na + nb) * nb);
            for row in g.data().chunks(na + nb) {
                ga.extend_from_slice(&row[..na]);
                gb.extend_from_slice(&row[na..]);
            }
            vec![
                Some(Tensor::new(shape_a.clone(), ga).expect("split")),
                Some(Tensor::new(shape_b.clone(), gb).expect("split")),
            ]
        }),
    ))
}

/// Mean over the leading axis: `(T, ...) -> (...)`.
pub fn mean_axis0<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    if shape.len() < 2 {
        return Err(Error::shape("mean_axis0", format!("{shape:?} needs rank >= 2")));
    }
    let steps = shape[0];
    let inner = xv.len() / steps;
    let mut out = vec![0.0; inner];
    for row in xv.data().chunks(inner) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    let scale = 1.0 / steps as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    let out = Tensor::new(shape[1..].to_vec(), out)?;
    Ok(x.tape().op(
        out,
        &[x],
        Box::new(move |g, _| {
            let mut data = Vec::with_capacity(steps * inner);
            for _ in 0..steps {
                data.extend(g.data().iter().map(|v| v * scale));
            }
            vec![Some(Tensor::new(shape.clone(), data).expect("broadcast"))]
        }),
    ))
}

/// `Σ x_i · weights_i`, a scalar.
pub fn dot_const<'t>(x: Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    let xv = x.value();
    if xv.shape() != weights.shape() {
        return Err(Error::shape("dot_const", format!("{:?} vs {:?}", xv.shape(), weights.shape())));
    }
    let s: f64 = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
    let w = weights.clone();
    Ok(x.tape().op(
        Tensor::scalar(s),
        &[x],
        Box::new(move |g, _| {
            let k = g.data()[0];
            let mut out = w.clone();
            out.data_mut().iter_mut().for_each(|v| *v *= k);
            vec![Some(out)]
        }),
    ))
}
