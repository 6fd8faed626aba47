//! Species silhouettes rasterized as binary masks.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::species::Species;

pub const MIN_SCALE: u32 = 4;

/// Exact sine/cosine for multiples of 90°, so quarter-turn rotations of a
/// glyph are bit-identical to rotating its mask array.
fn sin_cos_deg(angle: f64) -> (f64, f64) {
    let quarter = angle / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        angle.to_radians().sin_cos()
    }
}

fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let dx = (x - cx) / rx;
    let dy = (y - cy) / ry;
    dx * dx + dy * dy <= 1.0
}

fn in_rect(x: f64, y: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
    x >= x0 && x <= x1 && y >= y0 && y <= y1
}

fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let sign = |p1: (f64, f64), p2: (f64, f64), p3: (f64, f64)| {
        (p1.0 - p3.0) * (p2.1 - p3.1) - (p2.0 - p3.0) * (p1.1 - p3.1)
    };
    let d1 = sign(p, a, b);
    let d2 = sign(p, b, c);
    let d3 = sign(p, c, a);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// Membership test in glyph-local units (scale = 1), body along +x.
fn inside(species: Species, x: f64, y: f64) -> bool {
    match species {
        // Large body with a trunk lobe at the front.
        Species::Elephant => {
            in_ellipse(x, y, 0.0, 0.0, 1.0, 0.75)
                || in_ellipse(x, y, 0.95, 0.35, 0.42, 0.3)
                || in_rect(x, y, 1.05, 1.35, 0.3, 0.85)
        }
        // Medium body with a horn wedge.
        Species::Rhino => {
            in_ellipse(x, y, 0.0, 0.0, 0.85, 0.5)
                || in_triangle((x, y), (0.6, -0.25), (0.6, 0.2), (1.35, -0.45))
        }
        // Slim body with four leg stubs.
        Species::Deer => {
            in_ellipse(x, y, 0.0, 0.0, 0.75, 0.28)
                || in_rect(x, y, -0.55, -0.3, -0.65, 0.65)
                || in_rect(x, y, 0.3, 0.55, -0.65, 0.65)
        }
    }
}

/// Half-width of the mask in glyph units; bounds every shape above.
const EXTENT: f64 = 1.45;

/// Rasterizes `species` at `scale` pixels per glyph unit, rotated by `angle`
/// degrees. The mask is square with odd side and the glyph origin at the
/// centre pixel.
pub fn render_glyph(species: Species, scale: u32, angle: f64) -> Result<Array2<bool>> {
    if scale < MIN_SCALE {
        return Err(Error::InvalidScale(scale));
    }
    let s = scale as f64;
    let half = (EXTENT * s).ceil() as i64;
    let side = (2 * half + 1) as usize;
    let (sin, cos) = sin_cos_deg(angle);
    let raw = Array2::from_shape_fn((side, side), |(r, c)| {
        let dx = (c as i64 - half) as f64;
        let dy = (r as i64 - half) as f64;
        // Inverse rotation into glyph coordinates.
        let gx = (cos * dx + sin * dy) / s;
        let gy = (-sin * dx + cos * dy) / s;
        inside(species, gx, gy)
    });
    // Thin wedge tips can alias into detached pixels at small scales; keep
    // the region grown from the body centre.
    Ok(component_at(&raw, (half as usize, half as usize)))
}

fn neighbours(mask: &Array2<bool>, (y, x): (usize, usize)) -> impl Iterator<Item = (usize, usize)> + '_ {
    let (h, w) = mask.dim();
    (-1i64..=1).flat_map(move |dy| (-1i64..=1).map(move |dx| (y as i64 + dy, x as i64 + dx))).filter_map(
        move |(ny, nx)| {
            (ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64 && mask[(ny as usize, nx as usize)])
                .then_some((ny as usize, nx as usize))
        },
    )
}

/// The 8-connected region containing `seed` (empty if `seed` is unset).
fn component_at(mask: &Array2<bool>, seed: (usize, usize)) -> Array2<bool> {
    let mut out = Array2::from_elem(mask.dim(), false);
    if !mask[seed] {
        return out;
    }
    out[seed] = true;
    let mut stack = vec![seed];
    while let Some(p) = stack.pop() {
        for n in neighbours(mask, p) {
            if !out[n] {
                out[n] = true;
                stack.push(n);
            }
        }
    }
    out
}

pub fn area(mask: &Array2<bool>) -> usize {
    mask.iter().filter(|&&b| b).count()
}

/// Intersection over union of two equally sized masks.
pub fn iou(a: &Array2<bool>, b: &Array2<bool>) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Number of 8-connected `true` regions.
pub fn connected_components(mask: &Array2<bool>) -> usize {
    let (h, w) = mask.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut stack = Vec::new();
    let mut count = 0;
    for r in 0..h {
        for c in 0..w {
            if !mask[(r, c)] || seen[(r, c)] {
                continue;
            }
            count += 1;
            seen[(r, c)] = true;
            stack.push((r, c));
            while let Some(p) = stack.pop() {
                for n in neighbours(mask, p) {
                    if !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::rotate_quarter;

    #[test]
    fn quarter_turn_composes_with_mask_rotation() {
        let a = render_glyph(Species::Deer, 8, 180.0).unwrap();
        let b = render_glyph(Species::Deer, 8, 90.0).unwrap();
        assert_eq!(a, rotate_quarter(&b, 1));
        for sp in Species::ALL {
            let base = render_glyph(sp, 6, 0.0).unwrap();
            for k in 1..4u8 {
                let turned = render_glyph(sp, 6, 90.0 * k as f64).unwrap();
                assert_eq!(turned, rotate_quarter(&base, k), "{sp:?} k={k}");
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_glyph(Species::Rhino, 7, 33.0).unwrap();
        let b = render_glyph(Species::Rhino, 7, 33.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_scale_is_rejected() {
        assert!(matches!(render_glyph(Species::Deer, 3, 0.0), Err(Error::InvalidScale(3))));
    }

    #[test]
    fn pinned_areas_at_scale_12_are_ordered() {
        let areas: Vec<usize> = [Species::Elephant, Species::Rhino, Species::Deer]
            .iter()
            .map(|&s| area(&render_glyph(s, 12, 0.0).unwrap()))
            .collect();
        assert_eq!(areas, [383, 203, 157]);
        assert!(areas[0] > areas[1] && areas[1] > areas[2]);
    }

    #[test]
    fn glyphs_are_single_components_at_any_angle() {
        for sp in Species::ALL {
            for scale in [4, 5, 6, 8] {
                for angle in (0..720).map(|i| i as f64 * 0.5) {
                    let m = render_glyph(sp, scale, angle).unwrap();
                    assert_eq!(connected_components(&m), 1, "{sp:?} scale {scale} angle {angle}");
                }
            }
        }
    }

    #[test]
    fn species_silhouettes_are_separable() {
        let mut total = 0.0;
        let mut n = 0;
        for angle in [0.0, 30.0, 60.0, 90.0] {
            let masks: Vec<_> = Species::ALL.iter().map(|&s| render_glyph(s, 5, angle).unwrap()).collect();
            for i in 0..3 {
                for j in i + 1..3 {
                    total += iou(&masks[i], &masks[j]);
                    n += 1;
                }
            }
        }
        let mean = total / n as f64;
        assert!(mean < 0.7, "mean IoU {mean}");
        assert!((mean - 0.4756).abs() < 1e-4, "pinned mean IoU drifted: {mean}");
    }
}
