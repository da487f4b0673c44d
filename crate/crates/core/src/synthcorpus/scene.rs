use serde::{Deserialize, Serialize};

use crate::conditioning::wordlists;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length of the canonical render grid; geometry is expressed in these units.
pub const GRID: usize = 32;
pub const CENTER_RANGE: (u32, u32) = (12, 20);
pub const HALF_SIZE_RANGE: (u32, u32) = (7, 11);

/// Primary and secondary colors, `[0, 255]` RGB, in the order of the color
/// word list. Secondaries darken bright colors and lighten dark ones; the
/// achromatic entries get tinted secondaries so no two primary-secondary
/// segments overlap.
const PALETTE: [(&str, [u8; 3], [u8; 3]); 11] = [
    ("black", [20, 20, 20], [70, 70, 140]),
    ("blue", [40, 70, 220], [148, 162, 238]),
    ("brown", [130, 80, 40], [192, 168, 148]),
    ("gray", [128, 128, 128], [200, 200, 120]),
    ("green", [40, 170, 60], [16, 68, 24]),
    ("orange", [245, 140, 20], [98, 56, 8]),
    ("pink", [245, 150, 200], [98, 60, 80]),
    ("purple", [130, 50, 170], [192, 152, 212]),
    ("red", [220, 30, 30], [238, 142, 142]),
    ("white", [240, 240, 240], [200, 235, 180]),
    ("yellow", [240, 220, 40], [96, 88, 16]),
];

/// Background, away from every palette entry.
pub const BACKGROUND: [u8; 3] = [0, 128, 128];

pub fn shapes() -> Vec<&'static str> {
    wordlists::toy_shapes()
}

pub fn textures() -> Vec<&'static str> {
    wordlists::toy_textures()
}

pub fn colors() -> Vec<&'static str> {
    PALETTE.iter().map(|(n, _, _)| *n).collect()
}

fn to_unit(c: [u8; 3]) -> [f64; 3] {
    c.map(|v| f64::from(v) / 127.5 - 1.0)
}

fn entry(name: &str) -> Result<&'static (&'static str, [u8; 3], [u8; 3])> {
    PALETTE
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown color {name:?}")))
}

/// Primary color of `name` in `[-1, 1]`.
pub fn primary(name: &str) -> Result<[f64; 3]> {
    entry(name).map(|e| to_unit(e.1))
}

/// Second color of patterned textures, in `[-1, 1]`.
pub fn secondary(name: &str) -> Result<[f64; 3]> {
    entry(name).map(|e| to_unit(e.2))
}

pub fn background() -> [f64; 3] {
    to_unit(BACKGROUND)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: String,
    pub color: String,
    pub texture: String,
    /// Center in grid units.
    pub cx: u32,
    pub cy: u32,
    /// Half extent in grid units.
    pub half: u32,
    /// Drives the per-pixel pattern of the `noise` texture.
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !shapes().contains(&self.shape.as_str()) {
            return bad(format!("unknown shape {:?}", self.shape));
        }
        if !textures().contains(&self.texture.as_str()) {
            return bad(format!("unknown texture {:?}", self.texture));
        }
        primary(&self.color)?;
        let inr = |v: u32, (a, b): (u32, u32)| (a..=b).contains(&v);
        if !inr(self.cx, CENTER_RANGE) || !inr(self.cy, CENTER_RANGE) || !inr(self.half, HALF_SIZE_RANGE) {
            return bad(format!("placement out of range in {self:?}"));
        }
        Ok(())
    }

    /// `"color shape, texture"`
    pub fn caption(&self) -> String {
        format!("{} {}, {}", self.color, self.shape, self.texture)
    }
}

/// Inside test for `shape` at offset `(dx, dy)` from the center, half size `r`.
pub fn inside(shape: &str, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        "square" => dx.abs() <= r && dy.abs() <= r,
        "circle" => dx * dx + dy * dy <= r * r,
        // apex up, base at dy = r
        "triangle" => dy.abs() <= r && dx.abs() <= (dy + r) / 2.0,
        "cross" => {
            let arm = r / 3.0;
            (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
        }
        "diamond" => dx.abs() + dy.abs() <= r,
        _ => false,
    }
}

/// Grid coordinate of the center of pixel `i` at render size `size`.
pub fn grid_coord(i: usize, size: usize) -> f64 {
    (i as f64 + 0.5) * GRID as f64 / size as f64
}

/// Stripe/checker label of a grid location; `true` selects the second color.
pub fn stripe(gy: f64) -> bool {
    (gy / 2.0).floor() as i64 % 2 == 1
}

pub fn checker(gx: f64, gy: f64) -> bool {
    ((gx / 2.0).floor() as i64 + (gy / 2.0).floor() as i64) % 2 == 1
}

fn noise_bit(seed: u64, x: usize, y: usize) -> bool {
    // splitmix64 of the pixel index
    let mut z = seed ^ ((y as u64) << 32 | x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) & 1 == 1
}

/// Renders at the canonical 32x32 size.
pub fn render(spec: &SceneSpec) -> Result<Tensor> {
    render_at(spec, GRID)
}

/// Renders `[3, size, size]` in `[-1, 1]` by sampling the scene at pixel centers.
pub fn render_at(spec: &SceneSpec, size: usize) -> Result<Tensor> {
    if size != 16 && size != GRID {
        return Err(Error::InvalidArgument(format!("render size must be 16 or {GRID}, got {size}")));
    }
    spec.validate()?;
    let p = primary(&spec.color)?;
    let s = secondary(&spec.color)?;
    let bg = background();
    let r = f64::from(spec.half);
    let mut d = vec![0.0; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let (gx, gy) = (grid_coord(x, size), grid_coord(y, size));
            let (dx, dy) = (gx - f64::from(spec.cx), gy - f64::from(spec.cy));
            let c = if !inside(&spec.shape, dx, dy, r) {
                bg
            } else {
                let mix = match spec.texture.as_str() {
                    "solid" => 0.0,
                    "stripes" => f64::from(u8::from(stripe(gy))),
                    "checker" => f64::from(u8::from(checker(gx, gy))),
                    "noise" => f64::from(u8::from(noise_bit(spec.seed, x, y))),
                    _ => ((dx + r) / (2.0 * r)).clamp(0.0, 1.0),
                };
                [0, 1, 2].map(|k| p[k] + mix * (s[k] - p[k]))
            };
            for k in 0..3 {
                d[k * size * size + y * size + x] = c[k];
            }
        }
    }
    Tensor::new([3, size, size], d)
}
