//! Attribute classifier built from the renderer's own palette and geometry.

use serde::{Deserialize, Serialize};

use super::scene::{
    background, checker, colors, grid_coord, inside, primary, secondary, shapes, stripe, textures, CENTER_RANGE,
    HALF_SIZE_RANGE,
};
use crate::tensor::Tensor;

/// Radius around a reference color within which a pixel counts as that color.
const NEAR: f64 = 0.2;
/// Maximum distance from a color's primary-secondary segment for a pixel to
/// count as foreground.
const FOREGROUND: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub value: String,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attributes {
    pub shape: Label,
    pub color: Label,
    pub texture: Label,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

/// Distance to segment `a..b` and the position along it in `[0, 1]`.
fn seg(p: &[f64; 3], a: &[f64; 3], b: &[f64; 3]) -> (f64, f64) {
    let ab: Vec<f64> = (0..3).map(|k| b[k] - a[k]).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = ((0..3).map(|k| (p[k] - a[k]) * ab[k]).sum::<f64>() / len2).clamp(0.0, 1.0);
    let q = [0, 1, 2].map(|k| a[k] + t * ab[k]);
    (dist(p, &q), t)
}

fn pixel(img: &Tensor, x: usize, y: usize) -> [f64; 3] {
    let s = img.shape()[1];
    [0, 1, 2].map(|k| img.data()[k * s * s + y * s + x])
}

struct Palette {
    names: Vec<&'static str>,
    prim: Vec<[f64; 3]>,
    sec: Vec<[f64; 3]>,
}

impl Palette {
    fn new() -> Self {
        let names = colors();
        let prim = names.iter().map(|c| primary(c).expect("palette")).collect();
        let sec = names.iter().map(|c| secondary(c).expect("palette")).collect();
        Palette { names, prim, sec }
    }

    /// Nearest color segment, its distance and the position along it.
    fn nearest(&self, p: &[f64; 3]) -> (usize, f64, f64) {
        let mut best = (0, f64::INFINITY, 0.0);
        for i in 0..self.names.len() {
            let (d, t) = seg(p, &self.prim[i], &self.sec[i]);
            if d < best.1 {
                best = (i, d, t);
            }
        }
        best
    }
}

fn best_label(scores: Vec<(&'static str, f64)>) -> Label {
    let mut best = ("", -1.0);
    for (n, s) in scores {
        if s > best.1 {
            best = (n, s);
        }
    }
    Label {
        value: best.0.to_string(),
        confidence: best.1.clamp(0.0, 1.0),
    }
}

/// Per-class scores in `[0, 1]`, in the order of the scene word lists.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeScores {
    pub shape: Vec<(&'static str, f64)>,
    pub color: Vec<(&'static str, f64)>,
    pub texture: Vec<(&'static str, f64)>,
}

/// Classifies shape, color and texture of a `[3, S, S]` image.
///
/// Color confidence is the fraction of foreground pixels voting for the
/// winning color. Shape confidence is the best intersection-over-union with
/// a template over every placement the renderer can produce. Texture
/// confidence is the winning pattern's agreement score.
pub fn attribute_oracle(img: &Tensor) -> Attributes {
    let sc = attribute_scores(img);
    Attributes {
        shape: best_label(sc.shape),
        color: best_label(sc.color),
        texture: best_label(sc.texture),
    }
}

/// Scores behind [`attribute_oracle`]. Texture scores are measured against
/// the winning color.
pub fn attribute_scores(img: &Tensor) -> AttributeScores {
    let s = img.shape()[1];
    let pal = Palette::new();
    let bg = background();
    let mut fg = vec![false; s * s];
    let mut votes = vec![0usize; pal.names.len()];
    let mut nearest = vec![(0usize, 0.0f64, 0.0f64); s * s];
    for y in 0..s {
        for x in 0..s {
            let p = pixel(img, x, y);
            let n = pal.nearest(&p);
            nearest[y * s + x] = n;
            if n.1 < FOREGROUND && n.1 < dist(&p, &bg) {
                fg[y * s + x] = true;
                votes[n.0] += 1;
            }
        }
    }
    let n_fg: usize = votes.iter().sum();
    let ci = (0..votes.len()).max_by_key(|&i| (votes[i], usize::MAX - i)).unwrap_or(0);
    let color = (0..votes.len())
        .map(|i| (pal.names[i], if n_fg == 0 { 0.0 } else { votes[i] as f64 / n_fg as f64 }))
        .collect();

    // shape: best IoU against every template placement
    let mut shape_scores = Vec::new();
    for sh in shapes() {
        let mut best: f64 = 0.0;
        for half in HALF_SIZE_RANGE.0..=HALF_SIZE_RANGE.1 {
            for cy in CENTER_RANGE.0..=CENTER_RANGE.1 {
                for cx in CENTER_RANGE.0..=CENTER_RANGE.1 {
                    let (mut inter, mut uni) = (0usize, 0usize);
                    for y in 0..s {
                        let dy = grid_coord(y, s) - f64::from(cy);
                        for x in 0..s {
                            let t = inside(sh, grid_coord(x, s) - f64::from(cx), dy, f64::from(half));
                            let f = fg[y * s + x];
                            inter += usize::from(t && f);
                            uni += usize::from(t || f);
                        }
                    }
                    if uni > 0 {
                        best = best.max(inter as f64 / uni as f64);
                    }
                }
            }
        }
        shape_scores.push((sh, best));
    }

    // texture: pattern agreement over foreground pixels
    let (p, q) = (pal.prim[ci], pal.sec[ci]);
    let (mut xmin, mut xmax) = (usize::MAX, 0);
    for y in 0..s {
        for x in 0..s {
            if fg[y * s + x] {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
            }
        }
    }
    let (mut near_p, mut near_s, mut grad_ok) = (0usize, 0usize, 0usize);
    let (mut stripe_ok, mut checker_ok, mut binary) = (0usize, 0usize, 0usize);
    for y in 0..s {
        for x in 0..s {
            if !fg[y * s + x] {
                continue;
            }
            let px = pixel(img, x, y);
            let (is_p, is_s) = (dist(&px, &p) < NEAR, dist(&px, &q) < NEAR);
            near_p += usize::from(is_p);
            near_s += usize::from(is_s);
            if is_p || is_s {
                binary += 1;
                let (gx, gy) = (grid_coord(x, s), grid_coord(y, s));
                stripe_ok += usize::from(is_s == stripe(gy));
                checker_ok += usize::from(is_s == checker(gx, gy));
            }
            let span = (xmax - xmin).max(1) as f64;
            let te = (x - xmin) as f64 / span;
            let expect = [0, 1, 2].map(|k| p[k] + te * (q[k] - p[k]));
            grad_ok += usize::from(dist(&px, &expect) < NEAR);
        }
    }
    let texture = if n_fg == 0 {
        textures().into_iter().map(|t| (t, 0.0)).collect()
    } else {
        let n = n_fg as f64;
        let frac_bin = binary as f64 / n;
        let above_chance = |ok: usize| {
            if binary == 0 {
                0.0
            } else {
                (2.0 * ok as f64 / binary as f64 - 1.0).max(0.0)
            }
        };
        let (st, ch) = (above_chance(stripe_ok), above_chance(checker_ok));
        let balance = if binary == 0 {
            0.0
        } else {
            1.0 - (2.0 * near_s as f64 / binary as f64 - 1.0).abs()
        };
        vec![
            ("solid", near_p as f64 / n),
            ("stripes", st * frac_bin * balance),
            ("checker", ch * frac_bin * balance),
            ("noise", frac_bin * balance * (1.0 - st.max(ch))),
            ("gradient", grad_ok as f64 / n),
        ]
    };
    AttributeScores {
        shape: shape_scores,
        color,
        texture,
    }
}

#[cfg(test)]
mod tests {
    use super::super::scene::{render, render_at, SceneSpec};
    use super::*;

    #[test]
    fn exact_on_every_noiseless_render() {
        let mut k = 0u64;
        for sh in shapes() {
            for c in colors() {
                for tx in super::super::scene::textures() {
                    k += 1;
                    let spec = SceneSpec {
                        shape: sh.into(),
                        color: c.into(),
                        texture: tx.into(),
                        cx: 12 + (k % 9) as u32,
                        cy: 12 + (k * 7 % 9) as u32,
                        half: 7 + (k % 5) as u32,
                        seed: k,
                    };
                    let a = attribute_oracle(&render(&spec).unwrap());
                    assert_eq!(
                        (a.shape.value.as_str(), a.color.value.as_str(), a.texture.value.as_str()),
                        (sh, c, tx),
                        "{spec:?} {a:?}"
                    );
                    if tx == "solid" {
                        assert_eq!(a.color.confidence, 1.0);
                        assert_eq!(a.shape.confidence, 1.0);
                        assert_eq!(a.texture.confidence, 1.0);
                    }
                    let small = attribute_oracle(&render_at(&spec, 16).unwrap());
                    assert_eq!(small.color.value, c);
                }
            }
        }
    }
}
