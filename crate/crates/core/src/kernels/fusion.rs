//! Multi-layer and multi-scale visual feature fusion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{KernelError, Tensor};

/// A `h × w × c` feature map stored row-major (`[(y·w + x)·c + ch]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl ScaleMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self, KernelError> {
        if height == 0 || width == 0 || channels == 0 || values.len() != height * width * channels {
            return Err(KernelError::Shape(format!("scale map {height}x{width}x{channels} with {} values", values.len())));
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }
}

/// Encoder outputs: per-layer token features (all `[N_tokens × C_i]`) and
/// per-scale feature maps, plus the base image extents.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub layers: Vec<Tensor>,
    pub scales: Vec<ScaleMap>,
    pub image_height: usize,
    pub image_width: usize,
}

pub fn fuse_layers(stack: &FeatureStack) -> Result<Tensor, KernelError> {
    let first = stack.layers.first().ok_or_else(|| KernelError::Shape("no layer features".into()))?;
    if let Some(l) = stack.layers.iter().find(|l| l.rows() != first.rows()) {
        return Err(KernelError::Shape(format!("layer token counts differ: {} vs {}", l.rows(), first.rows())));
    }
    let refs: Vec<&Tensor> = stack.layers.iter().collect();
    Tensor::hstack(&refs)
}

/// Average-pools every map to the coarsest grid, concatenates channels and
/// flattens to `[(h_m·w_m) × ΣC']` tokens in row-major grid order.
pub fn fuse_scales(stack: &FeatureStack) -> Result<Tensor, KernelError> {
    if stack.scales.is_empty() {
        return Err(KernelError::Shape("no scale features".into()));
    }
    let h = stack.scales.iter().map(|s| s.height).min().unwrap();
    let w = stack.scales.iter().map(|s| s.width).min().unwrap();
    let mut pooled = Vec::with_capacity(stack.scales.len());
    for s in &stack.scales {
        if s.height % h != 0 || s.width % w != 0 {
            return Err(KernelError::Shape(format!(
                "{}x{} grid does not pool evenly to {h}x{w}",
                s.height, s.width
            )));
        }
        let (fy, fx) = (s.height / h, s.width / w);
        let inv = 1.0 / (fy * fx) as f64;
        let mut t = Tensor::zeros(&[h * w, s.channels]);
        for y in 0..h {
            for x in 0..w {
                let row = t.row_mut(y * w + x);
                for dy in 0..fy {
                    for dx in 0..fx {
                        for (c, r) in row.iter_mut().enumerate() {
                            *r += s.at(y * fy + dy, x * fx + dx, c);
                        }
                    }
                }
                row.iter_mut().for_each(|r| *r *= inv);
            }
        }
        pooled.push(t);
    }
    let refs: Vec<&Tensor> = pooled.iter().collect();
    Tensor::hstack(&refs)
}

/// Channel concatenation of the two fused views. Both must describe the same
/// number of visual tokens.
pub fn concat_visual(layers: &Tensor, scales: &Tensor) -> Result<Tensor, KernelError> {
    if layers.rows() != scales.rows() {
        return Err(KernelError::Shape(format!(
            "layer tokens ({}) and pooled scale tokens ({}) differ",
            layers.rows(),
            scales.rows()
        )));
    }
    Tensor::hstack(&[layers, scales])
}

/// Stand-in for the frozen image encoders.
pub trait FeatureGenerator {
    fn generate(&self, image_id: &str) -> FeatureStack;
}

/// Gaussian features seeded from `(seed, image id)`; the same inputs always
/// produce the same stack.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededFeatureGenerator {
    pub seed: u64,
    pub tokens: usize,
    pub layer_channels: Vec<usize>,
    /// `(height, width, channels)` per scale.
    pub scale_shapes: Vec<(usize, usize, usize)>,
    pub image_size: (usize, usize),
}

impl SeededFeatureGenerator {
    /// Square image with scales at H/4, H/8 and H/16 and as many layer tokens
    /// as the coarsest grid.
    pub fn pyramid(seed: u64, image: usize, layer_channels: Vec<usize>, scale_channels: [usize; 3]) -> Self {
        let scale_shapes: Vec<_> = [4, 8, 16].iter().zip(scale_channels).map(|(f, c)| (image / f, image / f, c)).collect();
        let tokens = (image / 16) * (image / 16);
        Self { seed, tokens, layer_channels, scale_shapes, image_size: (image, image) }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl FeatureGenerator for SeededFeatureGenerator {
    fn generate(&self, image_id: &str) -> FeatureStack {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(image_id));
        let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let layers = self
            .layer_channels
            .iter()
            .map(|&c| Tensor::matrix(self.tokens, c, normal(self.tokens * c)).expect("sized"))
            .collect();
        let scales = self
            .scale_shapes
            .iter()
            .map(|&(h, w, c)| ScaleMap::new(h, w, c, normal(h * w * c)).expect("sized"))
            .collect();
        FeatureStack { layers, scales, image_height: self.image_size.0, image_width: self.image_size.1 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(layers: Vec<Tensor>, scales: Vec<ScaleMap>) -> FeatureStack {
        FeatureStack { layers, scales, image_height: 32, image_width: 32 }
    }

    #[test]
    fn layer_concat_shapes() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let b = Tensor::from_fn(&[2, 5], |i| 10.0 + i as f64);
        let out = fuse_layers(&stack(vec![a.clone(), b.clone()], vec![])).unwrap();
        assert_eq!(out.shape(), [2, 8]);
        assert_eq!(out.slice_cols(0, 3), a);
        assert_eq!(out.slice_cols(3, 8), b);
        assert_eq!(fuse_layers(&stack(vec![a.clone()], vec![])).unwrap(), a);
        let c = Tensor::zeros(&[3, 1]);
        assert!(fuse_layers(&stack(vec![a, c], vec![])).is_err());
    }

    #[test]
    fn scale_pooling() {
        let fine = ScaleMap::new(8, 8, 2, vec![0.75; 128]).unwrap();
        let coarse = ScaleMap::new(4, 4, 3, vec![-2.0; 48]).unwrap();
        let out = fuse_scales(&stack(vec![], vec![fine, coarse])).unwrap();
        assert_eq!(out.shape(), [16, 5]);
        assert!(out.row(7)[..2].iter().all(|v| *v == 0.75));
        assert!(out.row(7)[2..].iter().all(|v| *v == -2.0));
        let odd = ScaleMap::new(6, 6, 1, vec![0.0; 36]).unwrap();
        let four = ScaleMap::new(4, 4, 1, vec![0.0; 16]).unwrap();
        assert!(fuse_scales(&stack(vec![], vec![odd, four])).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let g = SeededFeatureGenerator::pyramid(7, 64, vec![3, 2], [2, 2, 4]);
        let a = g.generate("img");
        assert_eq!(a, g.generate("img"));
        assert_ne!(a, g.generate("other"));
        let fused = concat_visual(&fuse_layers(&a).unwrap(), &fuse_scales(&a).unwrap()).unwrap();
        assert_eq!(fused.shape(), [16, 5 + 8]);
    }
}
