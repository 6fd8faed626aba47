use ndarray::{s, Array2, Array3};
use rand::Rng;

use super::nn::{join, Block, BlockCache, LayerNorm, LayerNormCache, Linear, Module, Param};
use super::ModelConfig;
use crate::error::{Error, Result};

/// An image handed to the vision tower: thermal (H×W) or colour (H×W×3),
/// intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageInput {
    Gray(Array2<f64>),
    Rgb(Array3<f64>),
}

impl ImageInput {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            ImageInput::Gray(g) => g.dim(),
            ImageInput::Rgb(c) => (c.dim().0, c.dim().1),
        }
    }

    /// Replicates a single channel into three; colour input is returned as is.
    pub fn to_rgb(&self) -> Array3<f64> {
        match self {
            ImageInput::Gray(g) => {
                let (h, w) = g.dim();
                Array3::from_shape_fn((h, w, 3), |(y, x, _)| g[(y, x)])
            }
            ImageInput::Rgb(c) => c.clone(),
        }
    }
}

/// Flattens non-overlapping `patch × patch × 3` tiles in raster order.
pub fn patchify(image: &ImageInput, patch: usize) -> Result<Array2<f64>> {
    let (h, w) = image.dims();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Shape(format!("image {h}x{w} is not divisible into {patch}-pixel patches")));
    }
    let rgb = image.to_rgb();
    let (ph, pw) = (h / patch, w / patch);
    let mut out = Array2::zeros((ph * pw, patch * patch * 3));
    for py in 0..ph {
        for px in 0..pw {
            let tile = rgb.slice(s![py * patch..(py + 1) * patch, px * patch..(px + 1) * patch, ..]);
            let mut row = out.row_mut(py * pw + px);
            for (dst, src) in row.iter_mut().zip(tile.iter()) {
                *dst = *src;
            }
        }
    }
    Ok(out)
}

/// Patch embedding, learned positions, bidirectional transformer blocks and
/// a final layer norm. Produces one `vision_dim` feature per patch.
#[derive(Clone, Debug)]
pub struct VisionEncoder {
    pub patch_size: usize,
    pub patch_embed: Linear,
    pub pos: Param,
    pub blocks: Vec<Block>,
    pub ln: LayerNorm,
    pub trainable: bool,
}

pub struct EncoderCache {
    patches: Array2<f64>,
    blocks: Vec<BlockCache>,
    ln: LayerNormCache,
}

impl VisionEncoder {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &ModelConfig) -> Self {
        let d = cfg.vision_dim;
        let blocks = (0..cfg.vision_blocks)
            .map(|_| Block::new(rng, d, cfg.vision_heads, cfg.mlp_ratio, false))
            .collect();
        Self {
            patch_size: cfg.patch_size,
            patch_embed: Linear::new(rng, cfg.patch_size * cfg.patch_size * 3, d),
            pos: Param::normal(rng, cfg.num_patches(), d, 0.02),
            blocks,
            ln: LayerNorm::new(d),
            trainable: true,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.patch_embed.output_dim()
    }

    pub fn encode(&self, image: &ImageInput) -> Result<Array2<f64>> {
        Ok(self.forward(image)?.0)
    }

    pub fn forward(&self, image: &ImageInput) -> Result<(Array2<f64>, EncoderCache)> {
        // Centred to [-1, 1] so the layer norms see how bright a patch is.
        let patches = patchify(image, self.patch_size)?.mapv(|v| 2.0 * v - 1.0);
        if patches.nrows() != self.pos.value.nrows() {
            return Err(Error::Shape(format!(
                "{} patches but encoder was built for {}",
                patches.nrows(),
                self.pos.value.nrows()
            )));
        }
        let mut x = self.patch_embed.forward(patches.view());
        x += &self.pos.value;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(x);
            caches.push(c);
            x = y;
        }
        let (y, ln) = self.ln.forward(x.view());
        Ok((y, EncoderCache { patches, blocks: caches, ln }))
    }

    /// Accumulates parameter gradients. Nothing flows further back.
    pub fn backward(&mut self, cache: &EncoderCache, dy: &Array2<f64>) {
        let mut dx = self.ln.backward(&cache.ln, dy.view(), true);
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dx = block.backward(c, dx.view(), true);
        }
        self.pos.grad += &dx;
        self.patch_embed.backward(cache.patches.view(), dx.view(), true);
    }
}

impl Module for VisionEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), f);
        f(&join(prefix, "pos"), &self.pos);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.ln.visit(&join(prefix, "ln"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.patch_embed.visit_mut(&join(prefix, "patch_embed"), f);
        f(&join(prefix, "pos"), &mut self.pos);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.ln.visit_mut(&join(prefix, "ln"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_image_yields_64_patch_features() {
        let cfg = ModelConfig::default();
        let enc = VisionEncoder::new(&mut ChaCha8Rng::seed_from_u64(0), &cfg);
        let img = ImageInput::Gray(Array2::from_elem((64, 64), 0.3));
        let f = enc.encode(&img).unwrap();
        assert_eq!(f.dim(), (64, 64));
    }

    #[test]
    fn gray_input_encodes_like_its_channel_replica() {
        let cfg = ModelConfig::default();
        let enc = VisionEncoder::new(&mut ChaCha8Rng::seed_from_u64(1), &cfg);
        let gray = Array2::from_shape_fn((64, 64), |(y, x)| ((y * 7 + x * 3) % 11) as f64 / 11.0);
        let g = ImageInput::Gray(gray.clone());
        let rgb = ImageInput::Rgb(g.to_rgb());
        assert_eq!(enc.encode(&g).unwrap(), enc.encode(&rgb).unwrap());
    }

    #[test]
    fn indivisible_image_is_a_shape_error() {
        let img = ImageInput::Gray(Array2::zeros((60, 64)));
        assert!(matches!(patchify(&img, 8), Err(Error::Shape(_))));
    }

    #[test]
    fn patch_rows_follow_raster_order() {
        let gray = Array2::from_shape_fn((16, 16), |(y, x)| (y * 16 + x) as f64);
        let p = patchify(&ImageInput::Gray(gray), 8).unwrap();
        assert_eq!(p.dim(), (4, 192));
        // Patch 1 is the top-right tile; its first pixel is (0, 8), three channels.
        assert_eq!(p[(1, 0)], 8.0);
        assert_eq!(p[(1, 2)], 8.0);
        assert_eq!(p[(2, 0)], 128.0);
    }
}
