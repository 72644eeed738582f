//! Scalar abstraction shared by the plain `f64` path (evaluation) and the
//! taped [`Var`] path (training).

use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::autodiff::{self, affine_kernel, layer_norm_kernel, Opcode, Var};
use crate::math;

pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn asin(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn max_c(self, c: f64) -> Self;
    fn min_c(self, c: f64) -> Self;
    fn softplus(self) -> Self;
    fn smooth_l1(self, beta: f64) -> Self;

    fn sum(xs: &[Self]) -> Self;
    fn dot(a: &[Self], b: &[Self]) -> Self;
    /// Euclidean norm with the derivative defined as zero at the origin.
    fn norm(xs: &[Self]) -> Self;

    /// `W x + b` with `W` row-major `b.len() x x.len()`.
    fn affine(w: &[Self], b: &[Self], x: &[Self]) -> Vec<Self>;
    /// Layer normalisation followed by an elementwise gain and bias.
    fn layer_norm(x: &[Self], gain: &[Self], bias: &[Self], eps: f64) -> Vec<Self>;

    /// Scalar computed outside the tape with known partials with respect to
    /// `inputs`.
    fn custom(inputs: &[Self], value: f64, partials: &[f64]) -> Self;

    /// Marks a rollout-step handoff for temporal gradient decay.
    fn boundary(self) -> Self {
        self
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        math::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        math::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        math::ln(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        math::tanh(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        math::sigmoid(self)
    }
    #[inline]
    fn sin(self) -> Self {
        math::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        math::cos(self)
    }
    #[inline]
    fn asin(self) -> Self {
        math::asin(self.clamp(-1.0, 1.0))
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        math::atan2(self, x)
    }
    #[inline]
    fn max_c(self, c: f64) -> Self {
        if self > c {
            self
        } else {
            c
        }
    }
    #[inline]
    fn min_c(self, c: f64) -> Self {
        if self < c {
            self
        } else {
            c
        }
    }
    #[inline]
    fn softplus(self) -> Self {
        math::softplus(self)
    }
    #[inline]
    fn smooth_l1(self, beta: f64) -> Self {
        autodiff::smooth_l1(self, beta).0
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn norm(xs: &[Self]) -> Self {
        math::sqrt(xs.iter().map(|x| x * x).sum())
    }
    fn custom(_inputs: &[Self], value: f64, _partials: &[f64]) -> Self {
        value
    }
    fn affine(w: &[Self], b: &[Self], x: &[Self]) -> Vec<Self> {
        let mut out = alloc::vec![0.0; b.len()];
        affine_kernel(w, b, x, &mut out);
        out
    }
    fn layer_norm(x: &[Self], gain: &[Self], bias: &[Self], eps: f64) -> Vec<Self> {
        let mut out = alloc::vec![0.0; x.len()];
        let mut xhat = alloc::vec![0.0; x.len()];
        layer_norm_kernel(x, gain, bias, eps, &mut xhat, &mut out);
        out
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    #[inline]
    fn val(self) -> f64 {
        self.value()
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn sigmoid(self) -> Self {
        Var::sigmoid(self)
    }
    fn sin(self) -> Self {
        Var::sin(self)
    }
    fn cos(self) -> Self {
        Var::cos(self)
    }
    fn asin(self) -> Self {
        Var::asin(self)
    }
    fn atan2(self, x: Self) -> Self {
        Var::atan2(self, x)
    }
    fn max_c(self, c: f64) -> Self {
        Var::max_c(self, c)
    }
    fn min_c(self, c: f64) -> Self {
        Var::min_c(self, c)
    }
    fn softplus(self) -> Self {
        Var::softplus(self)
    }
    fn smooth_l1(self, beta: f64) -> Self {
        Var::smooth_l1(self, beta)
    }
    fn sum(xs: &[Self]) -> Self {
        let value = xs.iter().map(|v| v.value()).sum();
        let ones = alloc::vec![1.0; xs.len()];
        Var::nary(Opcode::Sum, xs, value, &ones)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        let value = a.iter().zip(b).map(|(x, y)| x.value() * y.value()).sum();
        let mut inputs = Vec::with_capacity(2 * a.len());
        let mut partials = Vec::with_capacity(2 * a.len());
        inputs.extend_from_slice(a);
        inputs.extend_from_slice(b);
        partials.extend(b.iter().map(|v| v.value()));
        partials.extend(a.iter().map(|v| v.value()));
        Var::nary(Opcode::Dot, &inputs, value, &partials)
    }
    fn norm(xs: &[Self]) -> Self {
        let n = math::sqrt(xs.iter().map(|v| v.value() * v.value()).sum());
        let partials: Vec<f64> = if n > 0.0 {
            xs.iter().map(|v| v.value() / n).collect()
        } else {
            alloc::vec![0.0; xs.len()]
        };
        Var::nary(Opcode::Norm, xs, n, &partials)
    }
    fn custom(inputs: &[Self], value: f64, partials: &[f64]) -> Self {
        Var::nary(Opcode::Custom, inputs, value, partials)
    }
    fn affine(w: &[Self], b: &[Self], x: &[Self]) -> Vec<Self> {
        if let Some(t) = w.first().and_then(|v| v.tape()) {
            if let Some(out) = t.affine(w, b, x) {
                return out;
            }
        }
        let n_in = x.len();
        b.iter()
            .enumerate()
            .map(|(i, &bi)| {
                let row = &w[i * n_in..(i + 1) * n_in];
                Self::dot(row, x) + bi
            })
            .collect()
    }
    fn layer_norm(x: &[Self], gain: &[Self], bias: &[Self], eps: f64) -> Vec<Self> {
        if let Some(t) = gain.first().and_then(|v| v.tape()) {
            if let Some(out) = t.layer_norm(x, gain, bias, eps) {
                return out;
            }
        }
        let n = x.len() as f64;
        let mean = Self::sum(x) / n;
        let centered: Vec<Self> = x.iter().map(|&v| v - mean).collect();
        let var = Self::dot(&centered, &centered) / n;
        let inv_std = 1.0 / (var + eps).sqrt();
        centered
            .iter()
            .zip(gain.iter().zip(bias))
            .map(|(&c, (&g, &b))| g * (c * inv_std) + b)
            .collect()
    }
    fn boundary(self) -> Self {
        match self.tape() {
            Some(t) => t.boundary(self),
            None => self,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn norm_at_origin_has_zero_gradient() {
        let tape = Tape::new();
        let xs = tape.leaves(&[0.0, 0.0, 0.0]);
        let n = <Var as Real>::norm(&xs);
        assert_eq!(n.value(), 0.0);
        let g = tape.backward(n, None);
        assert_eq!(g.collect(&xs), alloc::vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn taped_and_plain_layer_norm_agree() {
        let xs = [0.3, -1.2, 2.5, 0.0, 0.8];
        let gain = [1.0, 0.5, -0.3, 2.0, 1.1];
        let bias = [0.0, 0.1, 0.2, -0.1, 0.05];
        let plain = f64::layer_norm(&xs, &gain, &bias, 1e-5);
        let tape = Tape::new();
        let x = tape.leaves(&xs);
        let g = tape.leaves(&gain);
        let b = tape.leaves(&bias);
        let blocked = <Var as Real>::layer_norm(&x, &g, &b, 1e-5);
        // Interleaved leaves are not contiguous, forcing the scalar fallback.
        let scattered: Vec<Var> = gain
            .iter()
            .map(|&v| {
                let g = tape.leaf(v);
                let _spacer = tape.leaf(0.0);
                g
            })
            .collect();
        let scalar = <Var as Real>::layer_norm(&x, &scattered, &b, 1e-5);
        for i in 0..xs.len() {
            assert!((plain[i] - blocked[i].value()).abs() < 1e-14);
            assert!((plain[i] - scalar[i].value()).abs() < 1e-14);
        }
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(0.5f64.smooth_l1(1.0), 0.125);
        assert_eq!(3.0f64.smooth_l1(1.0), 2.5);
        assert_eq!((-3.0f64).smooth_l1(1.0), 2.5);
    }
}
