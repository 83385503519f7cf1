//! Seeded vascular tree phantoms: a recursive binary branching tree drawn
//! over a synthetic pre-contrast background.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{CdsaError, Result};
use crate::image::{BinaryMask, Image};
use crate::morphology::dilate;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundStyle {
    Flat,
    Gradient,
    /// Low-frequency sinusoidal bands standing in for overlapping ribs.
    RibBands,
}

impl FromStr for BackgroundStyle {
    type Err = CdsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "gradient" => Ok(Self::Gradient),
            "rib_bands" | "rib-bands" => Ok(Self::RibBands),
            _ => Err(CdsaError::arg(format!("unknown background style '{s}' (flat, gradient, rib_bands)"))),
        }
    }
}

impl fmt::Display for BackgroundStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Flat => "flat",
            Self::Gradient => "gradient",
            Self::RibBands => "rib_bands",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhantomConfig {
    pub seed: u64,
    /// Number of branching levels; 1 draws the root segment only.
    pub tree_depth: usize,
    pub root_width: f64,
    pub width_decay: f64,
    pub background_style: BackgroundStyle,
    /// Side of the square image.
    pub image_size: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tree_depth: 3,
            root_width: 7.0,
            width_decay: 0.7,
            background_style: BackgroundStyle::RibBands,
            image_size: 128,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.root_width >= 2.0) || !self.root_width.is_finite() {
            return Err(CdsaError::arg(format!("root_width must be >= 2, got {}", self.root_width)));
        }
        if !(self.width_decay > 0.0 && self.width_decay < 1.0) {
            return Err(CdsaError::arg(format!("width_decay must lie in (0, 1), got {}", self.width_decay)));
        }
        if self.tree_depth < 1 {
            return Err(CdsaError::arg("tree_depth must be >= 1"));
        }
        if self.image_size < 16 {
            return Err(CdsaError::arg(format!("image_size must be >= 16, got {}", self.image_size)));
        }
        Ok(())
    }
}

/// One straight piece of the tree in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub y0: f64,
    pub x0: f64,
    pub y1: f64,
    pub x1: f64,
    pub width: f64,
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    /// Pre-contrast frame `exp(−optical depth)`, in (0, 1].
    pub background: Image,
    pub optical_depth: Image,
    pub mask: BinaryMask,
    pub centerline: BinaryMask,
    pub segments: Vec<Segment>,
}

const ROOT_LENGTH: f64 = 0.42;
const LENGTH_DECAY: f64 = 0.72;

fn grow(rng: &mut SeededRng, cfg: &PhantomConfig, y: f64, x: f64, angle: f64, level: usize, out: &mut Vec<Segment>) {
    let n = cfg.image_size as f64;
    let length = n * ROOT_LENGTH * LENGTH_DECAY.powi(level as i32) * rng.next_range(0.85, 1.15);
    let (y1, x1) = (y + length * angle.sin(), x + length * angle.cos());
    out.push(Segment { y0: y, x0: x, y1, x1, width: cfg.root_width * cfg.width_decay.powi(level as i32), level });
    if level + 1 < cfg.tree_depth {
        let spread_l = rng.next_range(0.3, 0.65);
        let spread_r = rng.next_range(0.3, 0.65);
        grow(rng, cfg, y1, x1, angle - spread_l, level + 1, out);
        grow(rng, cfg, y1, x1, angle + spread_r, level + 1, out);
    }
}

/// Bresenham line between the rounded endpoints, clipped to the raster.
fn draw_line(mask: &mut BinaryMask, s: &Segment) {
    let (h, w) = mask.shape();
    let (mut y, mut x) = (s.y0.round() as i64, s.x0.round() as i64);
    let (y1, x1) = (s.y1.round() as i64, s.x1.round() as i64);
    let (dy, dx) = (-(y1 - y).abs(), (x1 - x).abs());
    let (sy, sx) = (if y < y1 { 1 } else { -1 }, if x < x1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            mask.set(y as usize, x as usize, true);
        }
        if y == y1 && x == x1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn optical_depth(cfg: &PhantomConfig, rng: &mut SeededRng) -> Image {
    let n = cfg.image_size;
    let nf = n as f64;
    match cfg.background_style {
        BackgroundStyle::Flat => Image::filled(n, n, 0.5),
        BackgroundStyle::Gradient => Image::from_fn(n, n, |y, x| 0.3 + 0.4 * (x + y) as f64 / (2.0 * nf)),
        BackgroundStyle::RibBands => {
            let tilt = rng.next_range(-0.35, 0.35);
            let phase = rng.next_range(0.0, 2.0 * PI);
            let period = nf / rng.next_range(3.5, 5.5);
            Image::from_fn(n, n, |y, x| {
                let t = y as f64 * tilt.cos() + x as f64 * tilt.sin();
                let band = 0.5 + 0.5 * (2.0 * PI * t / period + phase).sin();
                0.35 + 0.3 * band * band + 0.1 * x as f64 / nf
            })
        }
    }
}

pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let n = cfg.image_size;
    let nf = n as f64;
    let mut segments = Vec::new();
    let y0 = 0.08 * nf;
    let x0 = nf * rng.next_range(0.42, 0.58);
    let angle = PI / 2.0 + rng.next_range(-0.15, 0.15);
    grow(&mut rng, cfg, y0, x0, angle, 0, &mut segments);

    let mut centerline = BinaryMask::empty(n, n);
    let mut mask = BinaryMask::empty(n, n);
    for level in 0..cfg.tree_depth {
        let mut line = BinaryMask::empty(n, n);
        let mut width = 0.0;
        for s in segments.iter().filter(|s| s.level == level) {
            draw_line(&mut line, s);
            width = s.width;
        }
        let radius = ((width - 1.0) / 2.0).max(0.0);
        mask = mask.or(&dilate(&line, radius)?)?;
        centerline = centerline.or(&line)?;
    }
    let optical_depth = optical_depth(cfg, &mut rng);
    Ok(Phantom { background: optical_depth.map(|d| (-d).exp()), optical_depth, mask, centerline, segments })
}
