//! Layered synthetic scenes with exact disparity and occlusion.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::ImageField;
use crate::sample::{linear_support, sample_linear_h};

/// Texture family of the scene layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    Checker,
    Noise,
    Bars,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(SceneKind::Checker),
            "noise" => Ok(SceneKind::Noise),
            "bars" => Ok(SceneKind::Bars),
            other => Err(Error::precondition(format!(
                "unknown scene kind '{other}' (expected checker, noise or bars)"
            ))),
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Checker => "checker",
            SceneKind::Noise => "noise",
            SceneKind::Bars => "bars",
        })
    }
}

/// A fronto-parallel layer: texture, binary opacity and disparity in pixels.
#[derive(Clone, Debug)]
pub struct Layer {
    pub texture: ImageField,
    pub mask: ImageField,
    pub disparity: f64,
}

/// A layered scene and its views at the scene's reference pan.
///
/// Layers are ordered front to back; the last one is an opaque background.
/// A view at pan `P` composites the layers back to front, each read at
/// `x + disparity * P / reference_pan`.
#[derive(Clone, Debug)]
pub struct SceneOracle {
    pub kind: SceneKind,
    pub seed: u64,
    pub reference_pan: f64,
    pub layers: Vec<Layer>,
    pub center: ImageField,
    pub panned: ImageField,
    /// Disparity in pixels of the visible layer, center frame.
    pub disparity: ImageField,
    /// Center-frame pixels covered by a nearer layer in the panned view.
    pub occlusion: ImageField,
    /// Disparity in pixels of the visible layer, panned frame.
    pub panned_disparity: ImageField,
    /// Panned-frame pixels whose source is hidden in the center view.
    pub disocclusion: ImageField,
}

/// Color channels of every generated scene.
pub const SCENE_CHANNELS: usize = 3;

fn texture(kind: SceneKind, h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageField {
    let c = SCENE_CHANNELS;
    let color = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..c).map(|_| rng.gen_range(0.05..0.95)).collect() };
    let data: Vec<f32> = match kind {
        SceneKind::Noise => (0..h * w * c).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
        SceneKind::Checker => {
            let (a, b) = (color(rng), color(rng));
            let cell = rng.gen_range(3..7usize);
            (0..h * w * c)
                .map(|i| {
                    let (y, x, ch) = (i / (w * c), (i / c) % w, i % c);
                    let pick = if (y / cell + x / cell) % 2 == 0 { &a } else { &b };
                    pick[ch] as f32
                })
                .collect()
        }
        SceneKind::Bars => {
            let mut cols = Vec::with_capacity(w);
            while cols.len() < w {
                let width = rng.gen_range(1..6usize);
                let col = color(rng);
                for _ in 0..width {
                    cols.push(col.clone());
                }
            }
            (0..h * w * c)
                .map(|i| cols[(i / c) % w][i % c] as f32)
                .collect()
        }
    };
    ImageField::new(h, w, c, data).expect("generated texture is well formed")
}

/// Nested rectangles: nearer layers are smaller and left of center.
fn layer_mask(k: usize, layers: usize, h: usize, w: usize) -> ImageField {
    if k + 1 == layers {
        return ImageField::filled(h, w, 1, 1.0);
    }
    let x0 = (w / 4).saturating_sub(k * w / 16);
    let x1 = (w / 2 + k * w / 8).min(w);
    let y0 = (h / 4).saturating_sub(k * h / 16);
    let y1 = (3 * h / 4 + k * h / 16).min(h);
    ImageField::from_fn(h, w, 1, |y, x, _| {
        if (y0..y1).contains(&y) && (x0..x1).contains(&x) {
            1.0
        } else {
            0.0
        }
    })
}

/// Whether a linear read of `mask` at real column `xs` gives any weight to
/// an opaque pixel.
fn touches(mask: &ImageField, xs: f64, y: usize) -> bool {
    let (x0, x1, f) = linear_support(xs, mask.width());
    (f < 1.0 && mask.get(y, x0, 0) > 0.0) || (f > 0.0 && mask.get(y, x1, 0) > 0.0)
}

impl SceneOracle {
    fn shift(&self, k: usize, pan: f64) -> f64 {
        self.layers[k].disparity * pan / self.reference_pan
    }

    fn height(&self) -> usize {
        self.center.height()
    }

    fn width(&self) -> usize {
        self.center.width()
    }

    /// Renders the view at pan amount `pan` by back-to-front compositing.
    pub fn render(&self, pan: f64) -> ImageField {
        let c = SCENE_CHANNELS;
        ImageField::from_fn(self.height(), self.width(), c, |y, x, ch| {
            let mut out = 0.0f64;
            for k in (0..self.layers.len()).rev() {
                let xs = x as f64 + self.shift(k, pan);
                let layer = &self.layers[k];
                let alpha = sample_linear_h(&layer.mask, xs, y, 0);
                let color = sample_linear_h(&layer.texture, xs, y, ch);
                out = alpha * color + (1.0 - alpha) * out;
            }
            out
        })
    }

    /// Whether any layer nearer than `k` covers real column `xs` of row `y`
    /// in the center frame.
    fn covered_by_nearer(&self, k: usize, xs: f64, y: usize) -> bool {
        self.layers[..k].iter().any(|l| touches(&l.mask, xs, y))
    }

    /// Index of the front-most layer whose mask covers `xs` on row `y`.
    fn visible_layer(&self, xs_of: impl Fn(usize) -> f64, y: usize) -> usize {
        (0..self.layers.len())
            .find(|&k| sample_linear_h(&self.layers[k].mask, xs_of(k), y, 0) > 0.5)
            .unwrap_or(self.layers.len() - 1)
    }

    fn truth_maps(&mut self) {
        let (h, w) = (self.height(), self.width());
        let pan = self.reference_pan;
        let center_layer: Vec<usize> = (0..h * w)
            .map(|i| self.visible_layer(|_| (i % w) as f64, i / w))
            .collect();
        let panned_layer: Vec<usize> = (0..h * w)
            .map(|i| self.visible_layer(|k| (i % w) as f64 + self.shift(k, pan), i / w))
            .collect();
        self.disparity = ImageField::from_fn(h, w, 1, |y, x, _| {
            self.layers[center_layer[y * w + x]].disparity
        });
        self.panned_disparity = ImageField::from_fn(h, w, 1, |y, x, _| {
            self.layers[panned_layer[y * w + x]].disparity
        });
        // A center pixel on layer k lands at x - shift_k in the panned view and
        // is hidden there if a nearer layer j reads its mask at that spot.
        self.occlusion = ImageField::from_fn(h, w, 1, |y, x, _| {
            let k = center_layer[y * w + x];
            let xp = x as f64 - self.shift(k, pan);
            let hidden = (0..k).any(|j| touches(&self.layers[j].mask, xp + self.shift(j, pan), y));
            let inside = xp >= 0.0 && xp <= (w - 1) as f64;
            if hidden && inside {
                1.0
            } else {
                0.0
            }
        });
        self.disocclusion = ImageField::from_fn(h, w, 1, |y, x, _| {
            let k = panned_layer[y * w + x];
            let xs = x as f64 + self.shift(k, pan);
            if self.covered_by_nearer(k, xs, y) {
                1.0
            } else {
                0.0
            }
        });
    }
}

/// Builds a deterministic layered scene.
///
/// `disparities` are in pixels at `reference_pan`, front to back, and must be
/// strictly decreasing, nonnegative and below `|reference_pan|`.
pub fn make_scene(
    kind: SceneKind,
    height: usize,
    width: usize,
    disparities: &[f64],
    reference_pan: f64,
    seed: u64,
) -> Result<SceneOracle> {
    if height == 0 || width == 0 || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
        return Err(Error::precondition(format!(
            "scene dimensions must be positive and even, got {height}x{width}"
        )));
    }
    if !(reference_pan.is_finite() && reference_pan != 0.0) {
        return Err(Error::precondition("scene pan must be finite and nonzero"));
    }
    if disparities.is_empty() {
        return Err(Error::precondition("scene needs at least one layer"));
    }
    for (i, &d) in disparities.iter().enumerate() {
        if !(d.is_finite() && d >= 0.0 && d < reference_pan.abs()) {
            return Err(Error::precondition(format!(
                "layer disparity {d} must lie in [0, {})",
                reference_pan.abs()
            )));
        }
        if i > 0 && d >= disparities[i - 1] {
            return Err(Error::precondition(
                "layer disparities must strictly decrease front to back",
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = disparities.len();
    let layers: Vec<Layer> = disparities
        .iter()
        .enumerate()
        .map(|(k, &disparity)| Layer {
            texture: texture(kind, height, width, &mut rng),
            mask: layer_mask(k, n, height, width),
            disparity,
        })
        .collect();
    let empty = ImageField::zeros(height, width, 1);
    let mut scene = SceneOracle {
        kind,
        seed,
        reference_pan,
        layers,
        center: ImageField::zeros(height, width, SCENE_CHANNELS),
        panned: ImageField::zeros(height, width, SCENE_CHANNELS),
        disparity: empty.clone(),
        occlusion: empty.clone(),
        panned_disparity: empty.clone(),
        disocclusion: empty,
    };
    scene.center = scene.render(0.0);
    scene.panned = scene.render(reference_pan);
    scene.truth_maps();
    Ok(scene)
}

/// Columns within this distance of the left or right edge can read clamped
/// samples in a view at `pan`.
pub fn border_margin(scene: &SceneOracle, pan: f64) -> usize {
    let max_shift = scene
        .layers
        .iter()
        .map(|l| (l.disparity * pan / scene.reference_pan).abs())
        .fold(0.0, f64::max);
    max_shift.ceil() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_disparity_pans_to_center() {
        let s = make_scene(SceneKind::Noise, 8, 12, &[0.0], 32.0, 3).unwrap();
        assert_eq!(s.panned, s.center);
        assert!(s.occlusion.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_integer_shift() {
        let s = make_scene(SceneKind::Bars, 6, 20, &[4.0], 32.0, 1).unwrap();
        for y in 0..6 {
            for x in 0..20 {
                for c in 0..3 {
                    let src = (x + 4).min(19);
                    assert_eq!(s.panned.get(y, x, c), s.center.get(y, src, c));
                }
            }
        }
        assert!(s.occlusion.data().iter().all(|&v| v == 0.0));
        assert!(s.disocclusion.data().iter().all(|&v| v == 0.0));
        assert!(s.disparity.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn two_layer_bands() {
        let (h, w) = (64, 96);
        let s = make_scene(SceneKind::Noise, h, w, &[8.0, 2.0], 32.0, 0).unwrap();
        // Foreground occupies columns [24, 48) of rows [16, 48) in the center view.
        let y = 32;
        let occluded: Vec<usize> = (0..w).filter(|&x| s.occlusion.get(y, x, 0) > 0.0).collect();
        let disoccluded: Vec<usize> =
            (0..w).filter(|&x| s.disocclusion.get(y, x, 0) > 0.0).collect();
        // Background pixels left of the foreground slide under it.
        assert_eq!(occluded, (18..24).collect::<Vec<_>>());
        // Trailing edge of the foreground uncovers a 6 px band in the panned view.
        assert_eq!(disoccluded, (40..46).collect::<Vec<_>>());
        assert_eq!(s.panned_disparity.get(y, 30, 0), 8.0);
        assert_eq!(s.panned_disparity.get(y, 41, 0), 2.0);
        assert!(s.occlusion.row(4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_scene(SceneKind::Checker, 8, 8, &[3.0, 1.0], 32.0, 9).unwrap();
        let b = make_scene(SceneKind::Checker, 8, 8, &[3.0, 1.0], 32.0, 9).unwrap();
        let c = make_scene(SceneKind::Checker, 8, 8, &[3.0, 1.0], 32.0, 10).unwrap();
        assert_eq!(a.panned, b.panned);
        assert_ne!(a.center, c.center);
    }

    #[test]
    fn invalid_scenes() {
        assert!(make_scene(SceneKind::Noise, 7, 8, &[1.0], 32.0, 0).is_err());
        assert!(make_scene(SceneKind::Noise, 8, 8, &[40.0], 32.0, 0).is_err());
        assert!(make_scene(SceneKind::Noise, 8, 8, &[1.0, 2.0], 32.0, 0).is_err());
        assert!(make_scene(SceneKind::Noise, 8, 8, &[], 32.0, 0).is_err());
        assert!("plaid".parse::<SceneKind>().is_err());
        assert_eq!("bars".parse::<SceneKind>().unwrap(), SceneKind::Bars);
    }
}
