//! Loss curves, smoothing, checkpoint selection and plotting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub kind: CurveKind,
    pub points: Vec<(u64, f64)>,
}

impl LossCurve {
    pub fn new(kind: CurveKind) -> Self {
        Self { kind, points: Vec::new() }
    }

    pub fn push(&mut self, step: u64, value: f64) {
        debug_assert!(self.points.last().is_none_or(|&(s, _)| s < step));
        self.points.push((step, value));
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|&(_, v)| v).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,value\n");
        for (s, v) in &self.points {
            let _ = writeln!(out, "{s},{v}");
        }
        out
    }

    pub fn from_csv(kind: CurveKind, text: &str) -> std::result::Result<Self, String> {
        let mut curve = Self::new(kind);
        for (i, line) in text.lines().enumerate().skip(1) {
            let (s, v) = line.split_once(',').ok_or_else(|| format!("line {}: expected step,value", i + 1))?;
            let s = s.trim().parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            let v = v.trim().parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            curve.points.push((s, v));
        }
        Ok(curve)
    }
}

/// Exponential moving average seeded with the first value.
pub fn smooth(values: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let (&first, rest) = values.split_first().ok_or(Error::EmptyInput)?;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("smoothing alpha {alpha} outside [0, 1)")));
    }
    let mut out = Vec::with_capacity(values.len());
    out.push(first);
    let mut s = first;
    for &x in rest {
        s = alpha * s + (1.0 - alpha) * x;
        out.push(s);
    }
    Ok(out)
}

/// Step with the lowest raw validation loss; the earliest wins a tie.
pub fn select_checkpoint(val: &LossCurve) -> Option<u64> {
    let mut best: Option<(u64, f64)> = None;
    for &(s, v) in &val.points {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((s, v));
        }
    }
    best.map(|(s, _)| s)
}

/// Raw and smoothed training loss plus validation loss on shared axes.
pub fn loss_svg(train: &LossCurve, val: &LossCurve, alpha: f64) -> String {
    let (w, h, pad) = (640.0, 400.0, 48.0);
    let smoothed = smooth(&train.values(), alpha).unwrap_or_default();
    let all = train.points.iter().chain(&val.points);
    let max_step = all.clone().map(|&(s, _)| s).max().unwrap_or(1).max(1) as f64;
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let x = |s: f64| pad + (w - 2.0 * pad) * s / max_step;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let poly = |pts: &mut dyn Iterator<Item = (f64, f64)>, colour: &str, width: f64| {
        let coords: Vec<String> = pts.map(|(s, v)| format!("{:.2},{:.2}", x(s), y(v))).collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
            coords.join(" ")
        )
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{pad}\" y=\"{t}\" font-size=\"12\">loss {hi:.3}</text>\n\
         <text x=\"{pad}\" y=\"{bl}\" font-size=\"12\">{lo:.3}</text>\n\
         <text x=\"{r}\" y=\"{bl}\" font-size=\"12\" text-anchor=\"end\">step {max_step}</text>\n",
        b = h - pad,
        r = w - pad,
        t = pad - 8.0,
        bl = h - pad + 16.0,
    );
    svg += &poly(&mut train.points.iter().map(|&(s, v)| (s as f64, v)), "#9ecae1", 1.0);
    svg += &poly(&mut train.points.iter().zip(&smoothed).map(|(&(s, _), &v)| (s as f64, v)), "#08519c", 2.0);
    svg += &poly(&mut val.points.iter().map(|&(s, v)| (s as f64, v)), "#d94801", 2.0);
    for (i, (label, colour)) in
        [("train (raw)", "#9ecae1"), ("train (smoothed)", "#08519c"), ("validation", "#d94801")].iter().enumerate()
    {
        let ly = pad + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{ly}\" font-size=\"12\" fill=\"{colour}\" text-anchor=\"end\">{label}</text>",
            w - pad
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(u64, f64)]) -> LossCurve {
        LossCurve { kind: CurveKind::Val, points: points.to_vec() }
    }

    #[test]
    fn smoothing_recurrence() {
        assert_eq!(smooth(&[4.0, 2.0, 2.0], 0.5).unwrap(), [4.0, 3.0, 2.5]);
        assert_eq!(smooth(&[1.0, 5.0, -2.0], 0.0).unwrap(), [1.0, 5.0, -2.0]);
        assert_eq!(smooth(&[3.0; 5], 0.9).unwrap(), [3.0; 5]);
        assert!(matches!(smooth(&[], 0.9), Err(Error::EmptyInput)));
        assert!(smooth(&[1.0], 1.0).is_err());
    }

    #[test]
    fn selection_is_argmin_with_earliest_tie() {
        assert_eq!(select_checkpoint(&curve(&[(500, 2.0), (1000, 1.5), (1500, 1.7)])), Some(1000));
        assert_eq!(select_checkpoint(&curve(&[(100, 3.0), (200, 2.0), (300, 1.0)])), Some(300));
        assert_eq!(select_checkpoint(&curve(&[(500, 1.5), (1000, 1.5), (1500, 1.7)])), Some(500));
        assert_eq!(select_checkpoint(&curve(&[])), None);
    }

    #[test]
    fn csv_round_trip() {
        let c = curve(&[(100, 1.25), (200, 0.5)]);
        assert_eq!(c.to_csv(), "step,value\n100,1.25\n200,0.5\n");
        assert_eq!(LossCurve::from_csv(CurveKind::Val, &c.to_csv()).unwrap(), c);
    }

    #[test]
    fn svg_has_three_series() {
        let t = LossCurve { kind: CurveKind::Train, points: vec![(1, 3.0), (2, 2.0), (3, 2.5)] };
        let svg = loss_svg(&t, &curve(&[(2, 2.2)]), 0.9);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("train (smoothed)"));
    }
}
