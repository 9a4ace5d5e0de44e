//! Same-padded 2-D convolution and its transpose, via im2col + GEMM.
//!
//! Same padding maps a spatial extent `d` to `ceil(d / stride)`; when the
//! total pad is odd the extra row/column goes on the bottom/right.
//!
//! The transposed convolution is defined as the exact adjoint of the
//! convolution that maps its output back onto its input, so
//! `<conv2d(x), y> == <x, deconv2d(y)>` for a shared zero-bias filter bank.

use super::{Dims4, Real, Tensor4};
use crate::{Error, Result};

/// Upper bound on im2col scratch elements; the batch is processed in chunks
/// that fit.
const COLS_BUDGET: usize = 1 << 22;

/// Filter bank and bias for a convolution or transposed convolution.
///
/// For [`conv2d`] filters are laid out `(kh, kw, in_channels, out_channels)`.
/// For [`deconv2d`] they are laid out `(kh, kw, out_channels, in_channels)`,
/// which is the layout of the forward convolution being transposed; see
/// [`ConvParams::transposed`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub filters: Vec<T>,
    pub bias: Vec<T>,
    pub kernel: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub filters: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    /// Zero filters and bias.
    pub fn zeros(
        kernel: (usize, usize),
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Self {
        ConvParams {
            filters: vec![T::zero(); kernel.0 * kernel.1 * in_channels * out_channels],
            bias: vec![T::zero(); out_channels],
            kernel,
            in_channels,
            out_channels,
            stride,
        }
    }

    /// Params for the adjoint layer: channels swapped, filter buffer shared
    /// as-is, bias reset to zero.
    pub fn transposed(&self) -> Self {
        ConvParams {
            filters: self.filters.clone(),
            bias: vec![T::zero(); self.in_channels],
            kernel: self.kernel,
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            stride: self.stride,
        }
    }

    pub fn param_count(&self) -> usize {
        self.filters.len() + self.bias.len()
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        let (kh, kw) = self.kernel;
        if self.stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "{op}: stride must be positive"
            )));
        }
        if kh == 0 || kw == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "{op}: kernel and channel counts must be >= 1"
            )));
        }
        let want = kh * kw * self.in_channels * self.out_channels;
        if self.filters.len() != want {
            return Err(Error::shape(op, want, self.filters.len()));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::shape(op, self.out_channels, self.bias.len()));
        }
        Ok(())
    }
}

/// Output extent and leading pad for a same-padded window of size `k` and
/// stride `s` over extent `d`.
pub fn same_padding(d: usize, k: usize, s: usize) -> (usize, usize) {
    let out = d.div_ceil(s);
    let total = ((out - 1) * s + k).saturating_sub(d);
    (out, total / 2)
}

/// Geometry of a forward convolution from a `big` grid onto a `small` grid.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    big_h: usize,
    big_w: usize,
    small_h: usize,
    small_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn new(big_h: usize, big_w: usize, kernel: (usize, usize), stride: usize) -> Self {
        let (small_h, pad_top) = same_padding(big_h, kernel.0, stride);
        let (small_w, pad_left) = same_padding(big_w, kernel.1, stride);
        Geometry {
            big_h,
            big_w,
            small_h,
            small_w,
            kh: kernel.0,
            kw: kernel.1,
            stride,
            pad_top,
            pad_left,
        }
    }

    fn small_len(&self) -> usize {
        self.small_h * self.small_w
    }

    /// Samples per im2col chunk.
    fn chunk(&self, channels: usize) -> usize {
        let per_sample = self.small_len() * self.kh * self.kw * channels;
        (COLS_BUDGET / per_sample.max(1)).max(1)
    }

    /// Source pixel for window tap `(ki, kj)` at output `(oy, ox)`, if inside.
    #[inline]
    fn tap(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<usize> {
        let y = (oy * self.stride + ki).checked_sub(self.pad_top)?;
        let x = (ox * self.stride + kj).checked_sub(self.pad_left)?;
        (y < self.big_h && x < self.big_w).then_some(y * self.big_w + x)
    }

    fn im2col<T: Real>(&self, channels: usize, src: &[T], cols: &mut [T]) {
        let kdim = self.kh * self.kw * channels;
        for oy in 0..self.small_h {
            for ox in 0..self.small_w {
                let row = &mut cols[(oy * self.small_w + ox) * kdim..][..kdim];
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let dst = &mut row[(ki * self.kw + kj) * channels..][..channels];
                        match self.tap(oy, ox, ki, kj) {
                            Some(p) => dst.copy_from_slice(&src[p * channels..][..channels]),
                            None => dst.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Real>(&self, channels: usize, cols: &[T], dst: &mut [T]) {
        let kdim = self.kh * self.kw * channels;
        for oy in 0..self.small_h {
            for ox in 0..self.small_w {
                let row = &cols[(oy * self.small_w + ox) * kdim..][..kdim];
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        if let Some(p) = self.tap(oy, ox, ki, kj) {
                            let src = &row[(ki * self.kw + kj) * channels..][..channels];
                            for (d, &s) in dst[p * channels..][..channels].iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o = *o + b;
        }
    }
}

fn channel_sums<T: Real>(data: &[T], channels: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); channels];
    for row in data.chunks_exact(channels) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s = *s + v;
        }
    }
    sums
}

pub fn conv2d<T: Real>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<Tensor4<T>> {
    params.validate("conv2d")?;
    let d = input.dims();
    if d.c != params.in_channels {
        return Err(Error::shape("conv2d channels", params.in_channels, d.c));
    }
    let g = Geometry::new(d.h, d.w, params.kernel, params.stride);
    let kdim = g.kh * g.kw * d.c;
    let cout = params.out_channels;
    let out_dims = Dims4::new(d.n, g.small_h, g.small_w, cout);
    let mut out = Tensor4::zeros(out_dims);

    let chunk = g.chunk(d.c);
    let mut cols = vec![T::zero(); chunk.min(d.n) * g.small_len() * kdim];
    for start in (0..d.n).step_by(chunk) {
        let count = chunk.min(d.n - start);
        let rows = count * g.small_len();
        for i in 0..count {
            g.im2col(
                d.c,
                input.sample(start + i),
                &mut cols[i * g.small_len() * kdim..],
            );
        }
        let dst = &mut out.data_mut()[start * g.small_len() * cout..][..rows * cout];
        T::gemm(
            rows,
            kdim,
            cout,
            T::one(),
            &cols,
            false,
            &params.filters,
            false,
            T::zero(),
            dst,
        );
        add_bias(dst, &params.bias);
    }
    Ok(out)
}

pub fn conv2d_grad<T: Real>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    upstream: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    params.validate("conv2d_grad")?;
    let d = input.dims();
    if d.c != params.in_channels {
        return Err(Error::shape(
            "conv2d_grad channels",
            params.in_channels,
            d.c,
        ));
    }
    let g = Geometry::new(d.h, d.w, params.kernel, params.stride);
    let cout = params.out_channels;
    upstream.ensure_dims(
        "conv2d_grad upstream",
        Dims4::new(d.n, g.small_h, g.small_w, cout),
    )?;
    let kdim = g.kh * g.kw * d.c;

    let mut grad_input = Tensor4::zeros(d);
    let mut grad_filters = vec![T::zero(); params.filters.len()];
    let chunk = g.chunk(d.c);
    let mut cols = vec![T::zero(); chunk.min(d.n) * g.small_len() * kdim];
    let mut grad_cols = cols.clone();
    for start in (0..d.n).step_by(chunk) {
        let count = chunk.min(d.n - start);
        let rows = count * g.small_len();
        let up = &upstream.data()[start * g.small_len() * cout..][..rows * cout];
        for i in 0..count {
            g.im2col(
                d.c,
                input.sample(start + i),
                &mut cols[i * g.small_len() * kdim..],
            );
        }
        T::gemm(
            kdim,
            rows,
            cout,
            T::one(),
            &cols,
            true,
            up,
            false,
            T::one(),
            &mut grad_filters,
        );
        T::gemm(
            rows,
            cout,
            kdim,
            T::one(),
            up,
            false,
            &params.filters,
            true,
            T::zero(),
            &mut grad_cols,
        );
        let sample_len = d.sample_len();
        for i in 0..count {
            let dst = &mut grad_input.data_mut()[(start + i) * sample_len..][..sample_len];
            g.col2im_add(d.c, &grad_cols[i * g.small_len() * kdim..], dst);
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        filters: grad_filters,
        bias: channel_sums(upstream.data(), cout),
    })
}

/// Same-padded transposed convolution: `(n, h, w, in)` to `(n, h*s, w*s, out)`.
pub fn deconv2d<T: Real>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<Tensor4<T>> {
    params.validate("deconv2d")?;
    let d = input.dims();
    if d.c != params.in_channels {
        return Err(Error::shape("deconv2d channels", params.in_channels, d.c));
    }
    let s = params.stride;
    let cout = params.out_channels;
    let g = Geometry::new(d.h * s, d.w * s, params.kernel, s);
    debug_assert_eq!((g.small_h, g.small_w), (d.h, d.w));
    let kdim = g.kh * g.kw * cout;
    let out_dims = Dims4::new(d.n, g.big_h, g.big_w, cout);
    let mut out = Tensor4::zeros(out_dims);

    let chunk = g.chunk(cout);
    let mut cols = vec![T::zero(); chunk.min(d.n) * g.small_len() * kdim];
    let out_len = out_dims.sample_len();
    for start in (0..d.n).step_by(chunk) {
        let count = chunk.min(d.n - start);
        let rows = count * g.small_len();
        let src = &input.data()[start * d.sample_len()..][..count * d.sample_len()];
        T::gemm(
            rows,
            d.c,
            kdim,
            T::one(),
            src,
            false,
            &params.filters,
            true,
            T::zero(),
            &mut cols,
        );
        for i in 0..count {
            let dst = &mut out.data_mut()[(start + i) * out_len..][..out_len];
            g.col2im_add(cout, &cols[i * g.small_len() * kdim..], dst);
        }
    }
    add_bias(out.data_mut(), &params.bias);
    Ok(out)
}

pub fn deconv2d_grad<T: Real>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    upstream: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    params.validate("deconv2d_grad")?;
    let d = input.dims();
    if d.c != params.in_channels {
        return Err(Error::shape(
            "deconv2d_grad channels",
            params.in_channels,
            d.c,
        ));
    }
    let s = params.stride;
    let cout = params.out_channels;
    let g = Geometry::new(d.h * s, d.w * s, params.kernel, s);
    upstream.ensure_dims(
        "deconv2d_grad upstream",
        Dims4::new(d.n, g.big_h, g.big_w, cout),
    )?;
    let kdim = g.kh * g.kw * cout;

    let mut grad_input = Tensor4::zeros(d);
    let mut grad_filters = vec![T::zero(); params.filters.len()];
    let chunk = g.chunk(cout);
    let mut cols = vec![T::zero(); chunk.min(d.n) * g.small_len() * kdim];
    for start in (0..d.n).step_by(chunk) {
        let count = chunk.min(d.n - start);
        let rows = count * g.small_len();
        for i in 0..count {
            g.im2col(
                cout,
                upstream.sample(start + i),
                &mut cols[i * g.small_len() * kdim..],
            );
        }
        let x = &input.data()[start * d.sample_len()..][..count * d.sample_len()];
        let gx = &mut grad_input.data_mut()[start * d.sample_len()..][..count * d.sample_len()];
        T::gemm(
            rows,
            kdim,
            d.c,
            T::one(),
            &cols,
            false,
            &params.filters,
            false,
            T::zero(),
            gx,
        );
        T::gemm(
            kdim,
            rows,
            d.c,
            T::one(),
            &cols,
            true,
            x,
            false,
            T::one(),
            &mut grad_filters,
        );
    }
    Ok(ConvGrads {
        input: grad_input,
        filters: grad_filters,
        bias: channel_sums(upstream.data(), cout),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct sliding-window convolution with explicit same padding.
    fn brute_conv(x: &Tensor4<f64>, p: &ConvParams<f64>) -> Tensor4<f64> {
        let d = x.dims();
        let (kh, kw) = p.kernel;
        let (oh, pt) = same_padding(d.h, kh, p.stride);
        let (ow, pl) = same_padding(d.w, kw, p.stride);
        let mut out = Tensor4::zeros(Dims4::new(d.n, oh, ow, p.out_channels));
        for n in 0..d.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..p.out_channels {
                        let mut acc = p.bias[co];
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let y = (oy * p.stride + ki) as isize - pt as isize;
                                let xx = (ox * p.stride + kj) as isize - pl as isize;
                                if y < 0 || xx < 0 || y >= d.h as isize || xx >= d.w as isize {
                                    continue;
                                }
                                for ci in 0..d.c {
                                    let f = p.filters
                                        [((ki * kw + kj) * d.c + ci) * p.out_channels + co];
                                    acc += f * x.at(n, y as usize, xx as usize, ci);
                                }
                            }
                        }
                        let idx = out.index(n, oy, ox, co);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_params(
        rng: &mut ChaCha8Rng,
        k: (usize, usize),
        cin: usize,
        cout: usize,
        s: usize,
    ) -> ConvParams<f64> {
        use rand::Rng;
        let mut p = ConvParams::zeros(k, cin, cout, s);
        p.filters
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        p.bias
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        p
    }

    #[test]
    fn same_padding_puts_extra_pad_bottom_right() {
        assert_eq!(same_padding(64, 6, 1), (64, 2));
        assert_eq!(same_padding(64, 5, 2), (32, 1));
        assert_eq!(same_padding(8, 2, 2), (4, 0));
        assert_eq!(same_padding(7, 3, 2), (4, 1));
    }

    #[test]
    fn a4_conv1_shape() {
        let x = Tensor4::<f32>::zeros(Dims4::new(1, 64, 64, 3));
        let p = ConvParams::zeros((6, 6), 3, 16, 1);
        assert_eq!(conv2d(&x, &p).unwrap().dims(), Dims4::new(1, 64, 64, 16));
    }

    #[test]
    fn identity_filter() {
        let x = Tensor4::from_vec(Dims4::new(1, 1, 1, 1), vec![3.5f64]).unwrap();
        let mut p = ConvParams::zeros((1, 1), 1, 1, 1);
        p.filters[0] = 1.0;
        assert_eq!(conv2d(&x, &p).unwrap(), x);
        assert_eq!(deconv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn all_ones_3x3_over_1_to_9() {
        let x =
            Tensor4::from_vec(Dims4::new(1, 3, 3, 1), (1..=9).map(f64::from).collect()).unwrap();
        let mut p = ConvParams::zeros((3, 3), 1, 1, 1);
        p.filters.fill(1.0);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.at(0, 1, 1, 0), 45.0);
        // Full map from the sliding-window oracle.
        assert_eq!(y, brute_conv(&x, &p));
        assert_eq!(y.data(), &[12., 21., 16., 27., 45., 33., 24., 39., 28.]);
    }

    #[test]
    fn matches_brute_force_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(h, w, k, s, cin, cout) in &[
            (7, 5, (3, 2), 2, 2, 3),
            (8, 8, (5, 5), 2, 3, 4),
            (6, 6, (6, 6), 1, 1, 2),
            (9, 4, (4, 4), 3, 2, 2),
        ] {
            let x = Tensor4::random_uniform(Dims4::new(2, h, w, cin), -1.0, 1.0, &mut rng);
            let p = random_params(&mut rng, k, cin, cout, s);
            let got = conv2d(&x, &p).unwrap();
            let want = brute_conv(&x, &p);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_and_zero_stride_rejected() {
        let x = Tensor4::<f32>::zeros(Dims4::new(1, 4, 4, 2));
        assert!(conv2d(&x, &ConvParams::zeros((2, 2), 3, 1, 1)).is_err());
        assert!(conv2d(&x, &ConvParams::zeros((2, 2), 2, 1, 0)).is_err());
        assert!(deconv2d(&x, &ConvParams::zeros((2, 2), 3, 1, 2)).is_err());
    }

    #[test]
    fn deconv_shape_a4_dconv1() {
        let x = Tensor4::<f32>::zeros(Dims4::new(1, 4, 4, 128));
        let p = ConvParams::zeros((2, 2), 128, 64, 2);
        assert_eq!(deconv2d(&x, &p).unwrap().dims(), Dims4::new(1, 8, 8, 64));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4::random_uniform(Dims4::new(1, 5, 5, 2), -1.0, 1.0, &mut rng);
        let p = random_params(&mut rng, (3, 3), 2, 3, 2);
        let up = Tensor4::zeros(Dims4::new(1, 3, 3, 3));
        let g = conv2d_grad(&x, &p, &up).unwrap();
        assert!(g
            .input
            .data()
            .iter()
            .chain(&g.filters)
            .chain(&g.bias)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let x = Tensor4::from_vec(Dims4::new(1, 1, 1, 1), vec![1.5f64]).unwrap();
        let mut p = ConvParams::zeros((1, 1), 1, 1, 1);
        p.filters[0] = -2.0;
        let up = Tensor4::from_vec(Dims4::new(1, 1, 1, 1), vec![0.25]).unwrap();
        let g = conv2d_grad(&x, &p, &up).unwrap();
        assert_eq!(g.input.data(), &[-0.5]);
        assert_eq!(g.filters, vec![0.375]);
        assert_eq!(g.bias, vec![0.25]);
    }

    #[test]
    fn grad_bias_is_channel_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor4::random_uniform(Dims4::new(2, 4, 4, 1), -1.0, 1.0, &mut rng);
        let p = random_params(&mut rng, (2, 2), 1, 2, 2);
        let up = Tensor4::random_uniform(Dims4::new(2, 2, 2, 2), -1.0, 1.0, &mut rng);
        let g = conv2d_grad(&x, &p, &up).unwrap();
        let s0: f64 = up.data().iter().step_by(2).sum();
        assert!((g.bias[0] - s0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(k, s) in &[
            ((2, 2), 2),
            ((3, 3), 2),
            ((5, 5), 1),
            ((4, 4), 2),
            ((6, 6), 1),
            ((3, 3), 3),
        ] {
            let x = Tensor4::random_uniform(Dims4::new(1, 6, 6, 2), -1.0, 1.0, &mut rng);
            let mut p = random_params(&mut rng, k, 2, 3, s);
            p.bias.fill(0.0);
            let y_dims = conv2d(&x, &p).unwrap().dims();
            let y = Tensor4::random_uniform(y_dims, -1.0, 1.0, &mut rng);
            let lhs = conv2d(&x, &p).unwrap().dot(&y).unwrap();
            let rhs = x.dot(&deconv2d(&y, &p.transposed()).unwrap()).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
                "{k:?} {s}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn chunked_batches_match_single_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Large enough spatial extent to force several im2col chunks.
        let x = Tensor4::random_uniform(Dims4::new(5, 96, 96, 8), -1.0, 1.0, &mut rng);
        let p = random_params(&mut rng, (5, 5), 8, 4, 1);
        let full = conv2d(&x, &p).unwrap();
        for i in 0..5 {
            let one = conv2d(&x.gather(&[i]), &p).unwrap();
            assert_eq!(one.data(), full.sample(i));
        }
    }
}
