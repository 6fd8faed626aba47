//! Deterministic paired pseudo-thermal / pseudo-RGB scenes with species and
//! count labels.

pub mod corpus;
pub mod glyph;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::species::Species;

pub use corpus::{generate_corpus, load_manifest, plan_corpus, CorpusConfig, ManifestRecord, ScenePlan};
pub use glyph::{connected_components, render_glyph};

pub const MAX_COUNT: u32 = 12;
pub const NOISE_SIGMA: f64 = 0.02;
pub const CONTRAST_MARGIN: f64 = 0.4;
pub const BACKGROUND_MAX: f64 = 0.2;
const MAX_ATTEMPTS: u32 = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub species: Species,
    pub count: u32,
    pub glyph_scale: u32,
    pub allow_overlap: bool,
    /// Minimum gap in pixels between glyphs and from the image border.
    pub placement_margin: u32,
}

impl SceneSpec {
    pub fn new(seed: u64, species: Species, count: u32) -> Self {
        Self {
            seed,
            width: 64,
            height: 64,
            species,
            count,
            glyph_scale: 6,
            allow_overlap: false,
            placement_margin: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.count > MAX_COUNT {
            return Err(Error::InvalidSpec(format!("count {} outside 1..={MAX_COUNT}", self.count)));
        }
        if self.glyph_scale < glyph::MIN_SCALE {
            return Err(Error::InvalidScale(self.glyph_scale));
        }
        if self.glyph_scale * 2 >= self.width.min(self.height) {
            return Err(Error::InvalidSpec(format!(
                "glyph scale {} too large for {}x{}",
                self.glyph_scale, self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Row and column of the glyph origin.
    pub row: i64,
    pub col: i64,
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub thermal: Array2<f64>,
    pub rgb: Array3<f64>,
    /// Noiseless union of glyph pixels.
    pub mask: Array2<bool>,
    pub placements: Vec<Placement>,
    pub species: Species,
    pub count: u32,
    pub seed: u64,
}

impl SyntheticScene {
    /// Pixels brighter than the background ceiling plus the contrast margin.
    pub fn thermal_foreground(&self) -> Array2<bool> {
        self.thermal.mapv(|v| v > BACKGROUND_MAX + CONTRAST_MARGIN)
    }
}

fn glyph_pixels(mask: &Array2<bool>) -> Vec<(i64, i64)> {
    let half = (mask.nrows() / 2) as i64;
    mask.indexed_iter()
        .filter(|(_, &b)| b)
        .map(|((r, c), _)| (r as i64 - half, c as i64 - half))
        .collect()
}

/// Places `count` glyphs by rejection sampling and renders both modalities.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height as usize, spec.width as usize);
    let margin = spec.placement_margin as i64;

    let mut mask = Array2::from_elem((h, w), false);
    let mut blocked = Array2::from_elem((h, w), false);
    let mut glyph_id = Array2::from_elem((h, w), usize::MAX);
    let mut placements = Vec::with_capacity(spec.count as usize);

    for placed in 0..spec.count {
        let mut attempts = 0;
        loop {
            if attempts == MAX_ATTEMPTS {
                return Err(Error::PlacementFailure { placed, count: spec.count, attempts });
            }
            attempts += 1;
            let angle = rng.random_range(0.0..360.0);
            let pixels = glyph_pixels(&render_glyph(spec.species, spec.glyph_scale, angle)?);
            let row = rng.random_range(0..h as i64);
            let col = rng.random_range(0..w as i64);
            let fits = pixels.iter().all(|&(dr, dc)| {
                let (r, c) = (row + dr, col + dc);
                r >= margin
                    && c >= margin
                    && r < h as i64 - margin
                    && c < w as i64 - margin
                    && (spec.allow_overlap || !blocked[(r as usize, c as usize)])
            });
            if !fits {
                continue;
            }
            for &(dr, dc) in &pixels {
                let (r, c) = ((row + dr) as usize, (col + dc) as usize);
                mask[(r, c)] = true;
                glyph_id[(r, c)] = placed as usize;
                for br in (r as i64 - margin).max(0)..=(r as i64 + margin).min(h as i64 - 1) {
                    for bc in (c as i64 - margin).max(0)..=(c as i64 + margin).min(w as i64 - 1) {
                        blocked[(br as usize, bc as usize)] = true;
                    }
                }
            }
            placements.push(Placement { row, col, angle });
            break;
        }
    }

    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let heat: Vec<f64> = (0..spec.count).map(|_| rng.random_range(0.8..=1.0)).collect();
    let coats: Vec<[f64; 3]> = (0..spec.count)
        .map(|_| {
            let v: f64 = rng.random_range(0.55..0.85);
            let warm: f64 = rng.random_range(0.85..1.0);
            [v, v * warm, v * warm * rng.random_range(0.8..0.95)]
        })
        .collect();

    let mut thermal = Array2::zeros((h, w));
    for ((r, c), v) in thermal.indexed_iter_mut() {
        let base = match glyph_id[(r, c)] {
            usize::MAX => rng.random_range(0.0..=BACKGROUND_MAX),
            g => heat[g],
        };
        *v = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
    }

    // Vegetation-like background: a few random plane waves plus jitter.
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut rgb = Array3::zeros((h, w, 3));
    for r in 0..h {
        for c in 0..w {
            let px = match glyph_id[(r, c)] {
                usize::MAX => {
                    let tex = waves.iter().map(|&(fy, fx, ph)| (fy * r as f64 + fx * c as f64 + ph).sin()).sum::<f64>() / 3.0;
                    let jitter: f64 = rng.random_range(-0.04..0.04);
                    [0.22 + 0.06 * tex + jitter, 0.34 + 0.1 * tex + jitter, 0.14 + 0.04 * tex + jitter]
                }
                g => {
                    let shade: f64 = rng.random_range(-0.05..0.05);
                    let coat = coats[g];
                    [coat[0] + shade, coat[1] + shade, coat[2] + shade]
                }
            };
            for (ch, v) in px.iter().enumerate() {
                rgb[(r, c, ch)] = (v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }

    Ok(SyntheticScene { thermal, rgb, mask, placements, species: spec.species, count: spec.count, seed: spec.seed })
}
