//! Haar subbands and the wavelet convolution: analysis, an independent
//! depthwise filter per subband, synthesis.

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, shape_err, Result};
use crate::kernels::{conv::PadMode, haar};
use crate::params::{Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SUBBAND_NAMES: [&str; 4] = ["ll", "lh", "hl", "hh"];

/// The four detail/approximation bands of one analysis level, each `[B,C,H/2,W/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Subbands<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Scalar> Subbands<T> {
    pub fn bands(&self) -> [&Tensor<T>; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    pub fn energy(&self) -> f64 {
        self.bands().iter().map(|b| b.sq_norm_f64()).sum()
    }

    fn pack(&self) -> Result<Tensor<T>> {
        let s = self.ll.shape();
        if s.len() != 4 || self.bands().iter().any(|b| b.shape() != s) {
            return Err(shape_err(
                "haar_idwt2",
                format!(
                    "subbands must share one [B,C,h,w] shape; got {:?}",
                    self.bands().map(|b| b.shape().to_vec())
                ),
            ));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let band = c * h * w;
        let mut out = Vec::with_capacity(4 * b * band);
        for bi in 0..b {
            for t in self.bands() {
                out.extend_from_slice(&t.data()[bi * band..(bi + 1) * band]);
            }
        }
        Ok(Tensor::from_parts(vec![b, 4 * c, h, w], out))
    }

    fn unpack(packed: &Tensor<T>) -> Self {
        let s = packed.shape();
        let (b, c, h, w) = (s[0], s[1] / 4, s[2], s[3]);
        let band = c * h * w;
        let mut parts: [Vec<T>; 4] = Default::default();
        for bi in 0..b {
            for (k, p) in parts.iter_mut().enumerate() {
                let o = (4 * bi + k) * band;
                p.extend_from_slice(&packed.data()[o..o + band]);
            }
        }
        let [ll, lh, hl, hh] = parts.map(|d| Tensor::from_parts(vec![b, c, h, w], d));
        Self { ll, lh, hl, hh }
    }
}

/// Orthonormal single-level analysis. Odd spatial sizes are an error.
pub fn haar_dwt2<T: Scalar>(x: &Tensor<T>) -> Result<Subbands<T>> {
    Ok(Subbands::unpack(&haar::dwt2(x)?))
}

pub fn haar_idwt2<T: Scalar>(s: &Subbands<T>) -> Result<Tensor<T>> {
    haar::idwt2(&s.pack()?)
}

/// `idwt(depthwise_k(dwt(x)))` with one `[C,1,k,k]` kernel per subband, in
/// [`SUBBAND_NAMES`] order. Subband convolutions use zero padding `k/2`.
/// An odd spatial axis is extended by repeating its last sample and the
/// result is cropped back, so output shape always equals input shape.
pub fn wavelet_conv<T: Scalar>(g: &mut Graph<'_, T>, x: Var, kernels: [Var; 4]) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    if xs.len() != 4 {
        return Err(shape_err("wavelet_conv", format!("expected [B,C,H,W], got {xs:?}")));
    }
    let c = xs[1];
    let ks = g.shape(kernels[0]).to_vec();
    if ks.len() != 4 || ks[0] != c || ks[1] != 1 || ks[2] != ks[3] || kernels.iter().any(|&k| g.shape(k) != ks) {
        return Err(shape_err(
            "wavelet_conv",
            format!("kernels must all be [{c},1,k,k]; got {:?}", kernels.map(|k| g.shape(k).to_vec())),
        ));
    }
    let k = ks[2];
    if k % 2 == 0 {
        return Err(invalid("wavelet_conv", format!("kernel size must be odd, got {k}")));
    }
    let (h, wd) = (xs[2], xs[3]);
    let mut xe = x;
    for (axis, n) in [(2, h), (3, wd)] {
        if n % 2 == 1 {
            let edge = g.slice(xe, axis, n - 1, 1)?;
            xe = g.concat(&[xe, edge], axis)?;
        }
    }
    let packed = g.haar_dwt2(xe)?;
    let w = g.concat(&kernels, 0)?;
    let filtered = g.conv2d(packed, w, None, 1, k / 2, PadMode::Zero, 4 * c)?;
    let mut y = g.haar_idwt2(filtered)?;
    if h % 2 == 1 {
        y = g.slice(y, 2, 0, h)?;
    }
    if wd % 2 == 1 {
        y = g.slice(y, 3, 0, wd)?;
    }
    Ok(y)
}

/// Trainable wavelet convolution over `channels` with kernel size `k`.
#[derive(Clone, Debug)]
pub struct WaveletConv {
    pub kernels: [ParamId; 4],
    pub k: usize,
}

impl WaveletConv {
    /// Kernels are registered as `{name}.wc.{ll,lh,hl,hh}`.
    pub fn new<T: Scalar>(s: &mut ParamStore<T>, name: &str, channels: usize, k: usize, frozen: bool) -> Result<Self> {
        if k % 2 == 0 {
            return Err(invalid("wavelet_conv", format!("kernel size must be odd, got {k}")));
        }
        let kernels = SUBBAND_NAMES.map(|b| s.register(&format!("{name}.wc.{b}"), &[channels, 1, k, k], Init::Weight, frozen));
        Ok(Self { kernels, k })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let ks = self.kernels.map(|p| g.param(p));
        wavelet_conv(g, x, ks)
    }
}
