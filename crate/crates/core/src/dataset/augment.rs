//! Quarter-turn rotation and class balancing by rotated copies.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AnnotationRecord;
use crate::error::{Error, Result};
use crate::model::ImageInput;
use crate::species::Species;

/// Rotates by `k` quarter-turns clockwise (k taken mod 4). With rows growing
/// downward this maps +x onto +y, the same sense as a positive glyph angle.
pub fn rotate_quarter<T: Clone>(a: &Array2<T>, k: u8) -> Array2<T> {
    let (h, w) = a.dim();
    match k % 4 {
        0 => a.clone(),
        1 => Array2::from_shape_fn((w, h), |(r, c)| a[(h - 1 - c, r)].clone()),
        2 => Array2::from_shape_fn((h, w), |(r, c)| a[(h - 1 - r, w - 1 - c)].clone()),
        _ => Array2::from_shape_fn((w, h), |(r, c)| a[(c, w - 1 - r)].clone()),
    }
}

fn rotate_channels(a: &Array3<f64>, k: u8) -> Array3<f64> {
    let (h, w, ch) = a.dim();
    let (oh, ow) = if k % 2 == 1 { (w, h) } else { (h, w) };
    let mut out = Array3::zeros((oh, ow, ch));
    for c in 0..ch {
        let plane = rotate_quarter(&a.index_axis(ndarray::Axis(2), c).to_owned(), k);
        out.index_axis_mut(ndarray::Axis(2), c).assign(&plane);
    }
    out
}

/// Augmentation rotation; only proper quarter-turns are accepted.
pub fn rotate_augment<T: Clone>(image: &Array2<T>, k: u8) -> Result<Array2<T>> {
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidRotation(k));
    }
    Ok(rotate_quarter(image, k))
}

pub fn rotate_image(image: &ImageInput, k: u8) -> Result<ImageInput> {
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidRotation(k));
    }
    Ok(match image {
        ImageInput::Gray(g) => ImageInput::Gray(rotate_quarter(g, k)),
        ImageInput::Rgb(c) => ImageInput::Rgb(rotate_channels(c, k)),
    })
}

pub fn species_counts(records: &[AnnotationRecord]) -> BTreeMap<Species, usize> {
    let mut counts: BTreeMap<Species, usize> = Species::ALL.iter().map(|&s| (s, 0)).collect();
    for r in records {
        *counts.entry(r.species).or_default() += 1;
    }
    counts
}

/// Tops every species up to the largest class with rotated copies of
/// uniformly drawn originals. Originals are kept in their input order and
/// the copies are appended species by species.
pub fn balance_classes(records: &[AnnotationRecord], seed: u64) -> Result<Vec<AnnotationRecord>> {
    let counts = species_counts(records);
    if let Some((sp, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(Error::EmptyClass(sp.to_string()));
    }
    let target = counts.values().copied().max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = records.to_vec();
    for sp in Species::ALL {
        let originals: Vec<&AnnotationRecord> =
            records.iter().filter(|r| r.species == sp && r.augmented_from.is_none()).collect();
        let deficit = target - counts[&sp];
        if deficit > 0 && originals.is_empty() {
            return Err(Error::EmptyClass(format!("{sp} has only augmented records")));
        }
        for i in 0..deficit {
            let src = originals[rng.random_range(0..originals.len())];
            let k: u8 = rng.random_range(1..=3);
            let image_id = format!("{}_aug{i:05}_r{k}", src.image_id);
            out.push(AnnotationRecord {
                image_path: format!("images/{image_id}.png"),
                image_id,
                species: sp,
                count: src.count,
                augmented_from: Some(src.image_id.clone()),
                rotation_k: Some(k),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(deer: usize, rhino: usize, elephant: usize) -> Vec<AnnotationRecord> {
        let mut v = Vec::new();
        for (sp, n) in [(Species::Deer, deer), (Species::Rhino, rhino), (Species::Elephant, elephant)] {
            for i in 0..n {
                v.push(AnnotationRecord::original(format!("{sp}_{i}"), format!("images/{sp}_{i}.png"), sp, 1 + i as u32 % 12));
            }
        }
        v
    }

    #[test]
    fn half_turn_is_an_involution() {
        let a = Array2::from_shape_fn((3, 5), |(r, c)| r * 5 + c);
        let twice = rotate_augment(&rotate_augment(&a, 2).unwrap(), 2).unwrap();
        assert_eq!(twice, a);
    }

    #[test]
    fn odd_turns_swap_dimensions_and_keep_pixels() {
        let a = Array2::from_shape_fn((3, 5), |(r, c)| r * 5 + c);
        for k in 1..=3 {
            let b = rotate_augment(&a, k).unwrap();
            let expect = if k % 2 == 1 { (5, 3) } else { (3, 5) };
            assert_eq!(b.dim(), expect);
            let mut x: Vec<_> = a.iter().copied().collect();
            let mut y: Vec<_> = b.iter().copied().collect();
            x.sort();
            y.sort();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn quarter_turn_index_map_on_64_square() {
        let a = Array2::from_shape_fn((64, 64), |(r, c)| (r * 64 + c) as f64);
        let b = rotate_augment(&a, 1).unwrap();
        // Clockwise: source (r, c) lands at (c, 63 - r).
        let (r, c) = (5usize, 17usize);
        assert_eq!(b[(c, 63 - r)], a[(r, c)]);
        assert_eq!(b[(17, 58)], 5.0 * 64.0 + 17.0);
    }

    #[test]
    fn invalid_turns_are_rejected() {
        let a = Array2::<f64>::zeros((2, 2));
        assert!(matches!(rotate_augment(&a, 0), Err(Error::InvalidRotation(0))));
        assert!(matches!(rotate_augment(&a, 4), Err(Error::InvalidRotation(4))));
    }

    #[test]
    fn rgb_rotation_rotates_every_channel() {
        let a = Array3::from_shape_fn((2, 3, 3), |(r, c, ch)| (r * 9 + c * 3 + ch) as f64);
        let ImageInput::Rgb(b) = rotate_image(&ImageInput::Rgb(a.clone()), 1).unwrap() else { panic!() };
        assert_eq!(b.dim(), (3, 2, 3));
        for ch in 0..3 {
            assert_eq!(b[(0, 1, ch)], a[(0, 0, ch)]);
        }
    }

    #[test]
    fn balancing_follows_the_max_class_rule() {
        let out = balance_classes(&recs(9, 5, 3), 4).unwrap();
        let counts = species_counts(&out);
        assert!(counts.values().all(|&n| n == 9));
        let aug = |sp| out.iter().filter(|r| r.species == sp && r.augmented_from.is_some()).count();
        assert_eq!((aug(Species::Deer), aug(Species::Rhino), aug(Species::Elephant)), (0, 4, 6));
        assert_eq!(&out[..17], &recs(9, 5, 3)[..]);
        for r in &out[17..] {
            let src = out.iter().find(|o| Some(&o.image_id) == r.augmented_from.as_ref()).unwrap();
            assert_eq!((src.species, src.count), (r.species, r.count));
            assert!((1..=3).contains(&r.rotation_k.unwrap()));
        }
    }

    #[test]
    fn balanced_input_is_a_fixed_point() {
        let input = recs(4, 4, 4);
        assert_eq!(balance_classes(&input, 1).unwrap(), input);
    }

    #[test]
    fn scaled_inputs_reach_reference_class_size() {
        let out = balance_classes(&recs(2266, 1500, 900), 2).unwrap();
        assert!(species_counts(&out).values().all(|&n| n == 2266));
    }

    #[test]
    fn missing_species_is_an_empty_class() {
        assert!(matches!(balance_classes(&recs(3, 0, 2), 1), Err(Error::EmptyClass(_))));
    }
}
