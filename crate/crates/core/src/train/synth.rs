//! Deterministic synthetic segmentation samples: a smooth textured
//! background with 1 to 5 bright rotated shapes (rectangles, ellipses, thin
//! bars) whose sizes span two orders of magnitude.

use std::ops::Range;
use std::path::Path;

use crate::error::{invalid, shape_err, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wten;

/// Foreground share of the image a sample must fall strictly inside.
pub const MASK_FRACTION: (f64, f64) = (0.01, 0.6);
/// Range of a single shape's nominal area as a share of the image.
const OBJECT_AREA: (f64, f64) = (0.004, 0.3);
const MAX_ATTEMPTS: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Rect,
    Ellipse,
    Bar,
}

#[derive(Clone, Copy, Debug)]
struct Shape {
    kind: Kind,
    cx: f64,
    cy: f64,
    /// Half extents along the rotated axes.
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    color: [f64; 3],
}

impl Shape {
    fn random(r: &mut Rng, size: f64) -> Self {
        let kind = [Kind::Rect, Kind::Ellipse, Kind::Bar][r.below(3)];
        let (lo, hi) = OBJECT_AREA;
        let area = (lo.ln() + (hi.ln() - lo.ln()) * r.uniform()).exp() * size * size;
        let aspect = match kind {
            Kind::Bar => r.range(5.0, 12.0),
            _ => r.range(1.0, 2.5),
        };
        let fill = if kind == Kind::Ellipse { std::f64::consts::PI } else { 4.0 };
        let a = (area * aspect / fill).sqrt();
        let b = (a / aspect).max(2.0);
        let angle = r.range(0.0, std::f64::consts::PI);
        let mut color = [0.0; 3];
        for c in &mut color {
            *c = r.range(0.55, 0.95);
        }
        Self {
            kind,
            cx: r.range(0.1, 0.9) * size,
            cy: r.range(0.1, 0.9) * size,
            a,
            b,
            cos: angle.cos(),
            sin: angle.sin(),
            color,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        match self.kind {
            Kind::Ellipse => u * u + v * v <= 1.0,
            Kind::Rect | Kind::Bar => u.abs() <= 1.0 && v.abs() <= 1.0,
        }
    }
}

/// Bilinear value noise with smoothstep easing on a `cells × cells` lattice.
fn value_noise(r: &mut Rng, cells: usize, size: usize) -> Vec<f64> {
    let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| r.range(-1.0, 1.0)).collect();
    let ease = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let fy = (y as f64 + 0.5) / size as f64 * cells as f64;
        let (iy, ty) = ((fy as usize).min(cells - 1), ease(fy - (fy as usize).min(cells - 1) as f64));
        for x in 0..size {
            let fx = (x as f64 + 0.5) / size as f64 * cells as f64;
            let (ix, tx) = ((fx as usize).min(cells - 1), ease(fx - (fx as usize).min(cells - 1) as f64));
            let at = |i: usize, j: usize| lattice[i * (cells + 1) + j];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out[y * size + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// One generated sample in `f64`.
#[derive(Clone, Debug)]
pub struct RawSample {
    /// `[3,H,W]` channel-major, values in `[0,1]`.
    pub image: Vec<f64>,
    /// `[H,W]`, values in `{0,1}`.
    pub mask: Vec<f64>,
    /// Pixel share of each shape (before union).
    pub object_fractions: Vec<f64>,
}

fn attempt(r: &mut Rng, size: usize) -> RawSample {
    let n = size * size;
    let shapes: Vec<Shape> = (0..1 + r.below(5)).map(|_| Shape::random(r, size as f64)).collect();
    let mut image = vec![0.0; 3 * n];
    for c in 0..3 {
        let base = r.range(0.1, 0.4);
        let coarse = value_noise(r, 4, size);
        let fine = value_noise(r, 12, size);
        for i in 0..n {
            image[c * n + i] = base + 0.12 * coarse[i] + 0.05 * fine[i];
        }
    }
    let mut mask = vec![0.0; n];
    let mut counts = vec![0usize; shapes.len()];
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            for (s, cnt) in shapes.iter().zip(&mut counts) {
                if s.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    *cnt += 1;
                    mask[i] = 1.0;
                    for c in 0..3 {
                        image[c * n + i] = s.color[c];
                    }
                }
            }
        }
    }
    for v in &mut image {
        *v = (*v + 0.02 * r.normal()).clamp(0.0, 1.0);
    }
    RawSample {
        image,
        mask,
        object_fractions: counts.iter().map(|&c| c as f64 / n as f64).collect(),
    }
}

/// Sample `index` of the stream keyed by `seed`. Draws are redone until the
/// foreground share lies inside [`MASK_FRACTION`].
pub fn generate(seed: u64, index: u64, size: usize) -> Result<RawSample> {
    if size < 8 {
        return Err(invalid("synth", format!("image size {size} is below 8")));
    }
    let root = Rng::new(seed).split("synth").split_index(index);
    for k in 0..MAX_ATTEMPTS {
        let s = attempt(&mut root.split_index(k), size);
        let frac = s.mask.iter().sum::<f64>() / s.mask.len() as f64;
        if frac > MASK_FRACTION.0 && frac < MASK_FRACTION.1 {
            return Ok(s);
        }
    }
    Err(invalid("synth", format!("no admissible sample for index {index} after {MAX_ATTEMPTS} draws")))
}

/// Images `[B,3,H,W]` in `[0,1]` and binary masks `[B,1,H,W]`.
#[derive(Clone, Debug)]
pub struct SampleBatch<T> {
    pub images: Tensor<T>,
    pub masks: Tensor<T>,
}

impl<T: Scalar> SampleBatch<T> {
    pub fn validate(&self) -> Result<()> {
        let (si, sm) = (self.images.shape(), self.masks.shape());
        if si.len() != 4 || si[1] != 3 || sm.len() != 4 || sm[1] != 1 || si[0] != sm[0] || si[2..] != sm[2..] {
            return Err(shape_err("sample_batch", format!("images {si:?} vs masks {sm:?}")));
        }
        if self.masks.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(invalid("sample_batch", "masks must be binary"));
        }
        Ok(())
    }
}

/// An in-memory split of samples.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub size: usize,
    images: Vec<Tensor<T>>,
    masks: Vec<Tensor<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Samples `range` of the stream keyed by `seed`.
    pub fn synth(seed: u64, range: Range<u64>, size: usize) -> Result<Self> {
        if range.is_empty() {
            return Err(invalid("synth", "sample count must be at least 1"));
        }
        let mut d = Self {
            size,
            images: Vec::new(),
            masks: Vec::new(),
        };
        for i in range {
            let s = generate(seed, i, size)?;
            d.images.push(Tensor::from_f64(&[3, size, size], &s.image)?);
            d.masks.push(Tensor::from_f64(&[1, size, size], &s.mask)?);
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> SampleBatch<T> {
        let stack = |v: &[Tensor<T>], c: usize| {
            let mut data = Vec::with_capacity(indices.len() * c * self.size * self.size);
            for &i in indices {
                data.extend_from_slice(v[i].data());
            }
            Tensor::from_vec(&[indices.len(), c, self.size, self.size], data).expect("stacked sample shapes agree")
        };
        SampleBatch {
            images: stack(&self.images, 3),
            masks: stack(&self.masks, 1),
        }
    }

    /// Consecutive batches covering every sample once, in order.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = SampleBatch<T>> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(batch_size.max(1)).map(|c| self.batch(c)).collect::<Vec<_>>().into_iter()
    }

    /// Writes `{i}.image` and `{i}.mask` entries for every sample.
    pub fn save(&self, path: &Path) -> Result<()> {
        let names: Vec<(String, String)> = (0..self.len()).map(|i| (format!("{i:05}.image"), format!("{i:05}.mask"))).collect();
        let mut entries = Vec::with_capacity(2 * self.len());
        for (i, (ni, nm)) in names.iter().enumerate() {
            entries.push((ni.as_str(), &self.images[i]));
            entries.push((nm.as_str(), &self.masks[i]));
        }
        wten::save(path, &entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = wten::load(path)?;
        if entries.is_empty() || entries.len() % 2 != 0 {
            return Err(Error::Config(format!("{}: expected image/mask pairs, found {} tensors", path.display(), entries.len())));
        }
        let mut d = Self {
            size: 0,
            images: Vec::new(),
            masks: Vec::new(),
        };
        for pair in entries.chunks(2) {
            let ((ni, img), (nm, mask)) = (&pair[0], &pair[1]);
            let (si, sm) = (img.shape(), mask.shape());
            let square = si.len() == 3 && si[1] == si[2];
            if !ni.ends_with(".image") || !nm.ends_with(".mask") || !square || si[0] != 3 || sm != [1, si[1], si[2]] {
                return Err(Error::Config(format!("{}: malformed sample pair `{ni}` {si:?} / `{nm}` {sm:?}", path.display())));
            }
            if d.size != 0 && d.size != si[1] {
                return Err(Error::Config(format!("{}: mixed image sizes {} and {}", path.display(), d.size, si[1])));
            }
            d.size = si[1];
            d.images.push(img.cast());
            d.masks.push(mask.cast());
        }
        d.batch(&(0..d.len()).collect::<Vec<_>>()).validate()?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_index_is_bitwise_identical() {
        let a = generate(5, 17, 64).unwrap();
        let b = generate(5, 17, 64).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        assert_ne!(generate(5, 18, 64).unwrap().mask, a.mask);
        assert_ne!(generate(6, 17, 64).unwrap().mask, a.mask);
    }

    #[test]
    fn mask_fraction_and_value_ranges_over_1000_samples() {
        for i in 0..1000 {
            let s = generate(1, i, 64).unwrap();
            let frac = s.mask.iter().sum::<f64>() / s.mask.len() as f64;
            assert!(frac > 0.01 && frac < 0.6, "sample {i}: {frac}");
            assert!(s.mask.iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((1..=5).contains(&s.object_fractions.len()));
        }
    }

    #[test]
    fn every_window_of_100_spans_small_and_large_objects() {
        let all: Vec<Vec<f64>> = (0..300).map(|i| generate(2, i, 128).unwrap().object_fractions).collect();
        for w in all.windows(100).step_by(25) {
            assert!(w.iter().flatten().any(|&f| f > 0.0 && f < 0.02));
            assert!(w.iter().flatten().any(|&f| f > 0.2));
        }
    }

    #[test]
    fn batches_stack_samples_and_round_trip_through_wten() {
        let d = Dataset::<f32>::synth(3, 0..5, 32).unwrap();
        let b = d.batch(&[4, 1]);
        b.validate().unwrap();
        assert_eq!(b.images.shape(), &[2, 3, 32, 32]);
        assert_eq!(b.masks.data()[..32 * 32], d.batch(&[4]).masks.data()[..]);
        assert_eq!(d.batches(2).count(), 3);

        let path = std::env::temp_dir().join(format!("weft-synth-{}.wten", std::process::id()));
        d.save(&path).unwrap();
        let e = Dataset::<f32>::load(&path).unwrap();
        assert_eq!((e.len(), e.size), (5, 32));
        assert_eq!(e.batch(&[0, 1, 2, 3, 4]).images, d.batch(&[0, 1, 2, 3, 4]).images);
        std::fs::remove_file(&path).unwrap();
        assert!(Dataset::<f32>::synth(3, 2..2, 32).is_err());
    }
}
