//! Differentiable layers: convolution, layer normalization, GELU, affine maps
//! and dropout.

use std::rc::Rc;

use rand::Rng as _;

use super::gemm::gemm;
use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub channels_in: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.channels_in * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Unfolds one image (`C×H×W`) into a `(C·k·k) × (H'·W')` patch matrix.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        for c in 0..self.channels_in {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for i in 0..oh {
                        let ih = (i * self.stride + ki) as isize - self.padding as isize;
                        let line = &mut dst[i * ow..(i + 1) * ow];
                        if ih < 0 || ih >= self.height as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &x[(c * self.height + ih as usize) * self.width..][..self.width];
                        for (j, v) in line.iter_mut().enumerate() {
                            let iw = (j * self.stride + kj) as isize - self.padding as isize;
                            *v = if iw < 0 || iw >= self.width as isize { 0.0 } else { src[iw as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back onto the image.
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        for c in 0..self.channels_in {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for i in 0..oh {
                        let ih = (i * self.stride + ki) as isize - self.padding as isize;
                        if ih < 0 || ih >= self.height as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * self.height + ih as usize) * self.width..][..self.width];
                        for (j, v) in src[i * ow..(i + 1) * ow].iter().enumerate() {
                            let iw = (j * self.stride + kj) as isize - self.padding as isize;
                            if iw >= 0 && iw < self.width as isize {
                                dst[iw as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation with zero padding.
/// `x: B×C_in×H×W`, `w: C_out×C_in×k×k`, `b: C_out` → `B×C_out×H'×W'`.
pub fn conv2d<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
    let (xv, wv, bv) = (x.value(), w.value(), b.value());
    let (xs, ws) = (xv.shape(), wv.shape());
    if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || ws[1] != xs[1] || bv.shape() != [ws[0]] || stride == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("input {xs:?}, weight {ws:?}, bias {:?}, stride {stride}", bv.shape()),
        ));
    }
    let geo = Conv2dGeometry {
        channels_in: xs[1],
        height: xs[2],
        width: xs[3],
        kernel: ws[2],
        stride,
        padding,
    };
    if geo.kernel > geo.height + 2 * padding || geo.kernel > geo.width + 2 * padding {
        return Err(Error::shape("conv2d", format!("kernel {} exceeds padded input {xs:?}", geo.kernel)));
    }
    let (batch, c_out) = (xs[0], ws[0]);
    let (plen, olen) = (geo.patch_len(), geo.out_len());
    let in_len = geo.channels_in * geo.height * geo.width;
    let mut out = vec![0.0; batch * c_out * olen];
    let mut cols = vec![0.0; plen * olen];
    for n in 0..batch {
        geo.im2col(&xv.data()[n * in_len..(n + 1) * in_len], &mut cols);
        let y = &mut out[n * c_out * olen..(n + 1) * c_out * olen];
        for (o, row) in y.chunks_mut(olen).enumerate() {
            row.fill(bv.data()[o]);
        }
        gemm(c_out, plen, olen, wv.data(), false, &cols, false, 1.0, y);
    }
    let out = Tensor::new(vec![batch, c_out, geo.out_height(), geo.out_width()], out)?;
    let (xs, ws) = (xs.to_vec(), ws.to_vec());
    Ok(x.tape().op(
        out,
        &[x, w, b],
        Box::new(move |g, needs| {
            let mut dx = needs[0].then(|| vec![0.0; xv.len()]);
            let mut dw = vec![0.0; wv.len()];
            let mut db = vec![0.0; c_out];
            let mut cols = vec![0.0; plen * olen];
            let mut dcols = vec![0.0; plen * olen];
            for n in 0..batch {
                let gy = &g.data()[n * c_out * olen..(n + 1) * c_out * olen];
                for (o, row) in gy.chunks(olen).enumerate() {
                    db[o] += row.iter().sum::<f64>();
                }
                if needs[1] {
                    geo.im2col(&xv.data()[n * in_len..(n + 1) * in_len], &mut cols);
                    gemm(c_out, olen, plen, gy, false, &cols, true, 1.0, &mut dw);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(plen, c_out, olen, wv.data(), true, gy, false, 0.0, &mut dcols);
                    geo.col2im(&dcols, &mut dx[n * in_len..(n + 1) * in_len]);
                }
            }
            vec![
                dx.map(|d| Tensor::new(xs.clone(), d).expect("dx")),
                Some(Tensor::new(ws.clone(), dw).expect("dw")),
                Some(Tensor::new(vec![c_out], db).expect("db")),
            ]
        }),
    ))
}

/// Normalizes every slice along the trailing axis, then applies `gamma`, `beta`.
pub fn layer_norm<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let n = xv.last_dim();
    if gv.shape() != [n] || bv.shape() != [n] {
        return Err(Error::shape(
            "layer_norm",
            format!("input {:?}, gamma {:?}, beta {:?}", xv.shape(), gv.shape(), bv.shape()),
        ));
    }
    let rows = xv.len() / n;
    let mut xhat = vec![0.0; xv.len()];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; xv.len()];
    for r in 0..rows {
        let row = &xv.data()[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for i in 0..n {
            let h = (row[i] - mean) * inv;
            xhat[r * n + i] = h;
            out[r * n + i] = gv.data()[i] * h + bv.data()[i];
        }
    }
    let shape = xv.shape().to_vec();
    let out = Tensor::new(shape.clone(), out)?;
    Ok(x.tape().op(
        out,
        &[x, gamma, beta],
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut dgamma = vec![0.0; n];
            let mut dbeta = vec![0.0; n];
            let mut dx = needs[0].then(|| vec![0.0; gd.len()]);
            for r in 0..rows {
                let gy = &gd[r * n..(r + 1) * n];
                let xh = &xhat[r * n..(r + 1) * n];
                let (mut sum_d, mut sum_dx) = (0.0, 0.0);
                for i in 0..n {
                    dgamma[i] += gy[i] * xh[i];
                    dbeta[i] += gy[i];
                    let d = gy[i] * gv.data()[i];
                    sum_d += d;
                    sum_dx += d * xh[i];
                }
                if let Some(dx) = dx.as_mut() {
                    let k = inv_std[r] / n as f64;
                    for i in 0..n {
                        let d = gy[i] * gv.data()[i];
                        dx[r * n + i] = k * (n as f64 * d - sum_d - xh[i] * sum_dx);
                    }
                }
            }
            vec![
                dx.map(|d| Tensor::new(shape.clone(), d).expect("dx")),
                Some(Tensor::new(vec![n], dgamma).expect("dgamma")),
                Some(Tensor::new(vec![n], dbeta).expect("dbeta")),
            ]
        }),
    ))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh approximation of GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn gelu<'t>(x: Var<'t>) -> Var<'t> {
    let xv = x.value();
    let out = Tensor::from_fn(xv.shape().to_vec(), |i| gelu_scalar(xv.data()[i]));
    x.tape().op(
        out,
        &[x],
        Box::new(move |g, _| {
            let mut d = g.clone();
            d.data_mut()
                .iter_mut()
                .zip(xv.data())
                .for_each(|(gv, &xi)| *gv *= gelu_derivative(xi));
            vec![Some(d)]
        }),
    )
}

/// `y = x Wᵀ + b` over the trailing axis; `w: n_out×n_in`.
pub fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (xv, wv, bv) = (x.value(), w.value(), b.value());
    let ws = wv.shape();
    let n_in = xv.last_dim();
    if ws.len() != 2 || ws[1] != n_in || bv.shape() != [ws[0]] {
        return Err(Error::shape(
            "linear",
            format!("input {:?}, weight {ws:?}, bias {:?}", xv.shape(), bv.shape()),
        ));
    }
    let n_out = ws[0];
    let rows = xv.len() / n_in;
    let mut out = Vec::with_capacity(rows * n_out);
    for _ in 0..rows {
        out.extend_from_slice(bv.data());
    }
    gemm(rows, n_in, n_out, xv.data(), false, wv.data(), true, 1.0, &mut out);
    let mut shape = xv.shape().to_vec();
    *shape.last_mut().unwrap() = n_out;
    let out = Tensor::new(shape, out)?;
    let (xs, ws) = (xv.shape().to_vec(), ws.to_vec());
    Ok(x.tape().op(
        out,
        &[x, w, b],
        Box::new(move |g, needs| {
            let gd = g.data();
            let dx = needs[0].then(|| {
                let mut dx = vec![0.0; rows * n_in];
                gemm(rows, n_out, n_in, gd, false, wv.data(), false, 0.0, &mut dx);
                Tensor::new(xs.clone(), dx).expect("dx")
            });
            let dw = needs[1].then(|| {
                let mut dw = vec![0.0; n_out * n_in];
                gemm(n_out, rows, n_in, gd, true, xv.data(), false, 0.0, &mut dw);
                Tensor::new(ws.clone(), dw).expect("dw")
            });
            let mut db = vec![0.0; n_out];
            for row in gd.chunks(n_out) {
                db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            vec![dx, dw, Some(Tensor::new(vec![n_out], db).expect("db"))]
        }),
    ))
}

/// Inverted dropout. Evaluation mode and `p == 0` return `x` unchanged.
pub fn dropout<'t>(x: Var<'t>, p: f64, training: bool, rng: &mut Rng) -> Result<Var<'t>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let xv = x.value();
    let scale = 1.0 / (1.0 - p);
    let mask: Rc<Vec<f64>> = Rc::new(
        (0..xv.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
            .collect(),
    );
    let out = Tensor::from_fn(xv.shape().to_vec(), |i| xv.data()[i] * mask[i]);
    Ok(x.tape().op(
        out,
        &[x],
        Box::new(move |g, _| {
            let mut d = g.clone();
            d.data_mut().iter_mut().zip(mask.iter()).for_each(|(a, m)| *a *= m);
            vec![Some(d)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;
    use crate::rng::rng_from_seed;

    fn var<'t>(tape: &'t Tape, shape: &[usize], data: Vec<f64>) -> Var<'t> {
        tape.leaf(Tensor::new(shape.to_vec(), data).unwrap())
    }

    #[test]
    fn conv_shapes_and_values() {
        let tape = Tape::inference();
        let x = tape.constant(Tensor::zeros([1, 1, 40, 80]));
        let w = tape.constant(Tensor::zeros([32, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros([32]));
        assert_eq!(conv2d(x, w, b, 2, 1).unwrap().shape(), vec![1, 32, 20, 40]);

        let x = tape.constant(Tensor::from_fn([2, 1, 3, 4], |i| i as f64));
        let w = tape.constant(Tensor::ones([1, 1, 1, 1]));
        let b = tape.constant(Tensor::zeros([1]));
        assert_eq!(*conv2d(x, w, b, 1, 0).unwrap().value(), *x.value());

        let x = tape.constant(Tensor::ones([1, 1, 5, 5]));
        let w = tape.constant(Tensor::ones([1, 1, 3, 3]));
        let y = conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 3, 3]);
        assert!(y.value().data().iter().all(|&v| v == 9.0));

        let big = tape.constant(Tensor::ones([1, 1, 5, 5]));
        let w7 = tape.constant(Tensor::ones([1, 1, 7, 7]));
        assert!(matches!(conv2d(big, w7, b, 1, 0), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn layer_norm_examples() {
        let tape = Tape::inference();
        let g = var(&tape, &[2], vec![1.0, 1.0]);
        let b = var(&tape, &[2], vec![0.0, 0.0]);
        let x = var(&tape, &[1, 2], vec![1.0, 3.0]);
        let y = layer_norm(x, g, b, 1e-5).unwrap();
        // mean 2, variance 1: (±1) / sqrt(1 + 1e-5)
        let want = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.value().data()[0] + want).abs() < 1e-12);
        assert!((y.value().data()[1] - want).abs() < 1e-12);
        assert!((y.value().data()[1] - 1.0).abs() < 1e-5);

        let c = var(&tape, &[1, 2], vec![4.0, 4.0]);
        assert!(layer_norm(c, g, b, 1e-5).unwrap().value().data().iter().all(|&v| v == 0.0));

        let shifted = var(&tape, &[2], vec![0.5, 0.5]);
        let y2 = layer_norm(x, g, shifted, 1e-5).unwrap();
        for (a, b) in y2.value().data().iter().zip(y.value().data()) {
            assert!((a - b - 0.5).abs() < 1e-12);
        }
        let wrong = var(&tape, &[3], vec![1.0; 3]);
        assert!(layer_norm(x, wrong, b, 1e-5).is_err());
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        // 0.5 (1 + tanh(sqrt(2/pi) * 1.044715))
        let expected = 0.5 * (1.0 + (GELU_C * 1.044715f64).tanh());
        assert!((gelu_scalar(1.0) - expected).abs() < 1e-15);
        assert!((gelu_scalar(1.0) - 0.841192).abs() < 1e-6);
    }

    #[test]
    fn linear_examples() {
        let tape = Tape::inference();
        let x = var(&tape, &[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let eye = var(&tape, &[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let zero = var(&tape, &[3], vec![0.0; 3]);
        assert_eq!(*linear(x, eye, zero).unwrap().value(), *x.value());
        let z = var(&tape, &[2, 3], vec![0.0; 6]);
        let b = var(&tape, &[3], vec![1.0, -2.0, 0.5]);
        assert_eq!(linear(z, eye, b).unwrap().value().data(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
        let wide = var(&tape, &[3, 4], vec![0.0; 12]);
        assert!(linear(x, wide, zero).is_err());
        assert_eq!(640 * 512 + 512, 328_192);
    }

    #[test]
    fn dropout_modes() {
        let tape = Tape::inference();
        let mut rng = rng_from_seed(1);
        let x = var(&tape, &[4], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(*dropout(x, 0.0, true, &mut rng).unwrap().value(), *x.value());
        assert_eq!(*dropout(x, 0.9, false, &mut rng).unwrap().value(), *x.value());
        assert!(dropout(x, 1.0, true, &mut rng).is_err());
        let ones = tape.constant(Tensor::ones([1_000_000]));
        let y = dropout(ones, 0.5, true, &mut rng).unwrap();
        let mean = y.value().data().iter().sum::<f64>() / 1e6;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }
}
