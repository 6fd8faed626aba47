//! Corpus planning and on-disk generation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_scene, SceneSpec, SyntheticScene, MAX_COUNT};
use crate::error::{Error, Result};
use crate::imageio;
use crate::model::ImageInput;
use crate::species::Species;
use crate::{fsio, seeds};

/// Re-seeds per scene when rejection sampling fails.
const MAX_RESEEDS: u64 = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_per_species: usize,
    pub seed: u64,
    pub size: u32,
    pub glyph_scale: u32,
    pub placement_margin: u32,
    pub min_count: u32,
    pub max_count: u32,
    pub species: Vec<Species>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_per_species: 600,
            seed: 1,
            size: 64,
            glyph_scale: 6,
            placement_margin: 1,
            min_count: 1,
            max_count: MAX_COUNT,
            species: Species::ALL.to_vec(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_species == 0 {
            return Err(Error::InvalidSpec("n_per_species must be at least 1".into()));
        }
        if self.min_count == 0 || self.min_count > self.max_count || self.max_count > MAX_COUNT {
            return Err(Error::InvalidSpec(format!(
                "count range {}..={} must lie within 1..={MAX_COUNT}",
                self.min_count, self.max_count
            )));
        }
        if self.species.is_empty() {
            return Err(Error::InvalidSpec("no species selected".into()));
        }
        Ok(())
    }

    pub fn scene_spec(&self, species: Species, count: u32, seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            width: self.size,
            height: self.size,
            species,
            count,
            glyph_scale: self.glyph_scale,
            allow_overlap: false,
            placement_margin: self.placement_margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenePlan {
    pub id: String,
    pub species: Species,
    pub count: u32,
    pub seed: u64,
}

/// Labels and seeds for every scene, species-major. Counts are uniform over
/// the configured range.
pub fn plan_corpus(cfg: &CorpusConfig) -> Result<Vec<ScenePlan>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut plans = Vec::with_capacity(cfg.n_per_species * cfg.species.len());
    for &species in &cfg.species {
        for i in 0..cfg.n_per_species {
            let count = rng.random_range(cfg.min_count..=cfg.max_count);
            let seed = rng.random::<u64>();
            plans.push(ScenePlan { id: format!("{species}_{i:05}"), species, count, seed });
        }
    }
    Ok(plans)
}

/// Renders a planned scene, re-deriving the seed if placement fails. Returns
/// the scene and the seed that produced it.
pub fn render_plan(cfg: &CorpusConfig, plan: &ScenePlan) -> Result<SyntheticScene> {
    let mut last = None;
    for attempt in 0..MAX_RESEEDS {
        let seed = if attempt == 0 { plan.seed } else { seeds::derive(plan.seed, attempt) };
        match generate_scene(&cfg.scene_spec(plan.species, plan.count, seed)) {
            Ok(scene) => return Ok(scene),
            Err(e @ Error::PlacementFailure { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image: String,
    pub rgb_image: String,
    pub species: Species,
    pub count: u32,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn id(&self) -> String {
        Path::new(&self.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image.clone())
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `thermal/<id>.png`, `rgb/<id>.png` and `manifest.json` under `out`.
pub fn generate_corpus(cfg: &CorpusConfig, out: &Path) -> Result<Vec<ManifestRecord>> {
    let plans = plan_corpus(cfg)?;
    fsio::create_dir_all(&out.join("thermal"))?;
    fsio::create_dir_all(&out.join("rgb"))?;
    let mut records = Vec::with_capacity(plans.len());
    for plan in &plans {
        let scene = render_plan(cfg, plan)?;
        let image = format!("thermal/{}.png", plan.id);
        let rgb_image = format!("rgb/{}.png", plan.id);
        imageio::save_png(&out.join(&image), &ImageInput::Gray(scene.thermal))?;
        imageio::save_png(&out.join(&rgb_image), &ImageInput::Rgb(scene.rgb))?;
        records.push(ManifestRecord { image, rgb_image, species: plan.species, count: plan.count, seed: scene.seed });
    }
    fsio::write_json_atomic(&out.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fsio::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        locus: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_cardinality_and_determinism() {
        let cfg = CorpusConfig { n_per_species: 30, ..Default::default() };
        let a = plan_corpus(&cfg).unwrap();
        assert_eq!(a.len(), 90);
        for sp in Species::ALL {
            assert_eq!(a.iter().filter(|p| p.species == sp).count(), 30);
        }
        assert_eq!(a, plan_corpus(&cfg).unwrap());
    }

    #[test]
    fn zero_per_species_is_rejected() {
        let cfg = CorpusConfig { n_per_species: 0, ..Default::default() };
        assert!(plan_corpus(&cfg).is_err());
    }

    #[test]
    fn count_histogram_is_uniform_under_chi_square() {
        let cfg = CorpusConfig { n_per_species: 1000, ..Default::default() };
        let plans = plan_corpus(&cfg).unwrap();
        assert_eq!(plans.len(), 3000);
        let mut hist = [0f64; 12];
        for p in &plans {
            hist[(p.count - 1) as usize] += 1.0;
        }
        let expected = 3000.0 / 12.0;
        let chi2: f64 = hist.iter().map(|o| (o - expected).powi(2) / expected).sum();
        // Upper 1% point of chi-square with 11 degrees of freedom.
        assert!(chi2 < 24.725, "chi2 = {chi2}");
    }

    #[test]
    fn every_count_renders_for_every_species() {
        let cfg = CorpusConfig::default();
        for sp in Species::ALL {
            for count in 1..=MAX_COUNT {
                let plan = ScenePlan { id: "x".into(), species: sp, count, seed: 77 + count as u64 };
                let scene = render_plan(&cfg, &plan).unwrap();
                assert_eq!(scene.placements.len(), count as usize);
            }
        }
    }

    #[test]
    fn corpus_on_disk_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig { n_per_species: 2, ..Default::default() };
        let a = generate_corpus(&cfg, &dir.path().join("a")).unwrap();
        let b = generate_corpus(&cfg, &dir.path().join("b")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        let ma = std::fs::read(dir.path().join("a/manifest.json")).unwrap();
        let mb = std::fs::read(dir.path().join("b/manifest.json")).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(load_manifest(&dir.path().join("a/manifest.json")).unwrap(), a);
        let img = imageio::load_png(&dir.path().join("a").join(&a[0].image)).unwrap();
        assert!(matches!(img, ImageInput::Gray(ref g) if g.dim() == (64, 64)));
        let img = imageio::load_png(&dir.path().join("a").join(&a[0].rgb_image)).unwrap();
        assert!(matches!(img, ImageInput::Rgb(_)));
    }

    #[test]
    fn unwritable_output_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let cfg = CorpusConfig { n_per_species: 1, ..Default::default() };
        assert!(matches!(generate_corpus(&cfg, &blocker.join("sub")), Err(Error::Io { .. })));
    }
}
