//! Dense row-major `f64` kernel: linear map, valid 2D cross-correlation,
//! ReLU and sigmoid, each with an analytic backward pass, plus a
//! central-difference gradient oracle used to verify them.
//!
//! Only the operations the two scorers need are provided. There is no
//! broadcasting and no autodiff graph; callers thread gradients by hand.

use crate::error::{Error, Result};

/// Row-major tensor of finite doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{expected} values for shape {shape:?}"),
                data.len(),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }
}

/// Geometry of the scorer's convolution: square kernel, stride 1, no padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
}

impl ConvSpec {
    pub const KERNEL: usize = 5;

    pub fn new(channels: usize) -> Self {
        Self {
            kernel: Self::KERNEL,
            channels,
        }
    }

    /// Output spatial extent for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h < self.kernel || w < self.kernel {
            None
        } else {
            Some((h - self.kernel + 1, w - self.kernel + 1))
        }
    }
}

pub(crate) fn linear_slice(x: &[f64], w: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; out];
    for (xi, wrow) in x.iter().zip(w.chunks_exact(out)) {
        if *xi == 0.0 {
            continue;
        }
        for (yk, wik) in y.iter_mut().zip(wrow) {
            *yk += xi * wik;
        }
    }
    y
}

/// `grad_x[i] = Σ_k w[i,k]·dy[k]`
pub(crate) fn linear_grad_input(w: &[f64], dy: &[f64]) -> Vec<f64> {
    w.chunks_exact(dy.len())
        .map(|wrow| wrow.iter().zip(dy).map(|(a, b)| a * b).sum())
        .collect()
}

/// `grad_w[i,k] += x[i]·dy[k]`
pub(crate) fn accumulate_outer(grad_w: &mut [f64], x: &[f64], dy: &[f64]) {
    for (xi, grow) in x.iter().zip(grad_w.chunks_exact_mut(dy.len())) {
        if *xi == 0.0 {
            continue;
        }
        for (g, d) in grow.iter_mut().zip(dy) {
            *g += xi * d;
        }
    }
}

fn check_linear(x: &Tensor, w: &Tensor) -> Result<(usize, usize)> {
    if x.shape.len() != 1 || w.shape.len() != 2 || w.shape[0] != x.shape[0] {
        return Err(Error::shape(
            "linear",
            format!("x[{0}] and W[{0}×out]", x.shape.first().copied().unwrap_or(0)),
            format!("x{:?}, W{:?}", x.shape, w.shape),
        ));
    }
    Ok((w.shape[0], w.shape[1]))
}

/// `y_k = Σ_i x_i·W_ik`
pub fn linear_fwd(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (_, out) = check_linear(x, w)?;
    Ok(Tensor {
        shape: vec![out],
        data: linear_slice(&x.data, &w.data, out),
    })
}

/// Returns `(grad_x, grad_W)` for upstream gradient `dy` of the output.
pub fn linear_bwd(x: &Tensor, w: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    let (inp, out) = check_linear(x, w)?;
    if upstream.shape != [out] {
        return Err(Error::shape(
            "linear_bwd",
            format!("[{out}]"),
            format!("{:?}", upstream.shape),
        ));
    }
    let grad_x = linear_grad_input(&w.data, &upstream.data);
    let mut grad_w = vec![0.0; inp * out];
    accumulate_outer(&mut grad_w, &x.data, &upstream.data);
    Ok((
        Tensor {
            shape: vec![inp],
            data: grad_x,
        },
        Tensor {
            shape: vec![inp, out],
            data: grad_w,
        },
    ))
}

fn check_conv(input: &Tensor, spec: &ConvSpec, kernels: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if spec.channels == 0 {
        return Err(Error::Config("convolution needs at least one channel".into()));
    }
    let k = spec.kernel;
    if kernels.shape != [spec.channels, k, k] {
        return Err(Error::shape(
            "conv2d",
            format!("kernels [{}, {k}, {k}]", spec.channels),
            format!("{:?}", kernels.shape),
        ));
    }
    if input.shape.len() != 2 {
        return Err(Error::shape("conv2d", "rank-2 input", format!("{:?}", input.shape)));
    }
    let (h, w) = (input.shape[0], input.shape[1]);
    let (oh, ow) = spec
        .output_hw(h, w)
        .ok_or_else(|| Error::shape("conv2d", format!("input at least {k}×{k}"), format!("{h}×{w}")))?;
    Ok((h, w, oh, ow))
}

/// Valid cross-correlation (no kernel flip), one output map per channel.
pub fn conv2d_fwd(input: &Tensor, spec: &ConvSpec, kernels: &Tensor) -> Result<Tensor> {
    let (_, w, oh, ow) = check_conv(input, spec, kernels)?;
    let k = spec.kernel;
    let mut out = vec![0.0; spec.channels * oh * ow];
    for (c, kernel) in kernels.data.chunks_exact(k * k).enumerate() {
        let plane = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..k {
                    let irow = &input.data[(oy + ky) * w + ox..(oy + ky) * w + ox + k];
                    let krow = &kernel[ky * k..(ky + 1) * k];
                    acc += irow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                }
                plane[oy * ow + ox] = acc;
            }
        }
    }
    Ok(Tensor {
        shape: vec![spec.channels, oh, ow],
        data: out,
    })
}

/// Returns `(grad_input, grad_kernels)` for upstream gradient of shape `C×oh×ow`.
pub fn conv2d_bwd(input: &Tensor, spec: &ConvSpec, kernels: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    let (h, w, oh, ow) = check_conv(input, spec, kernels)?;
    if upstream.shape != [spec.channels, oh, ow] {
        return Err(Error::shape(
            "conv2d_bwd",
            format!("[{}, {oh}, {ow}]", spec.channels),
            format!("{:?}", upstream.shape),
        ));
    }
    let k = spec.kernel;
    let mut grad_in = vec![0.0; h * w];
    let mut grad_k = vec![0.0; spec.channels * k * k];
    for c in 0..spec.channels {
        let kernel = &kernels.data[c * k * k..(c + 1) * k * k];
        let gk = &mut grad_k[c * k * k..(c + 1) * k * k];
        let up = &upstream.data[c * oh * ow..(c + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = up[oy * ow + ox];
                if g == 0.0 {
                    continue;
                }
                for ky in 0..k {
                    let base = (oy + ky) * w + ox;
                    for kx in 0..k {
                        gk[ky * k + kx] += g * input.data[base + kx];
                        grad_in[base + kx] += g * kernel[ky * k + kx];
                    }
                }
            }
        }
    }
    Ok((
        Tensor {
            shape: vec![h, w],
            data: grad_in,
        },
        Tensor {
            shape: vec![spec.channels, k, k],
            data: grad_k,
        },
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

/// Passes upstream through where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_bwd(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if x.shape != upstream.shape {
        return Err(Error::shape(
            "relu_bwd",
            format!("{:?}", x.shape),
            format!("{:?}", upstream.shape),
        ));
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&upstream.data)
            .map(|(xi, g)| if *xi > 0.0 { *g } else { 0.0 })
            .collect(),
    })
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central differences `(f(θ+h·e_i) − f(θ−h·e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, params: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = params.clone();
    let mut grad = vec![0.0; params.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let plus = f(&probe);
        probe.data[i] = orig - h;
        let minus = f(&probe);
        probe.data[i] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    Tensor {
        shape: params.shape.clone(),
        data: grad,
    }
}
