//! Procedural synthetic faces with pixel-exact attribute ground truth.
//!
//! Every image is drawn on an aligned layout: background, hair, a face
//! ellipse, eyes with brows, a nose line and a mouth. Each attribute toggles
//! one dark feature drawn strictly inside a fixed canonical rectangle:
//!
//! | index | feature                         |
//! |-------|---------------------------------|
//! | 0     | mustache bar above the mouth    |
//! | 1     | eyeglass rings and bridge       |
//! | 2     | chin beard patch                |
//! | 3     | fringe band on the forehead     |
//! | 4     | mark on the left cheek          |
//!
//! Appearance randomness is drawn before any attribute is consulted, so two
//! renders with the same seed differ only inside the canonical rectangles of
//! the attributes that differ.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{AttributeVector, Rect, Sample};
use crate::error::{bail, Result};
use crate::tensor::{Real, Tensor};

pub const MIN_RESOLUTION: usize = 32;
pub const MAX_ATTRIBUTES: usize = 5;

pub const ATTRIBUTE_NAMES: [&str; MAX_ATTRIBUTES] = ["Mustache", "Eyeglasses", "Goatee", "Bangs", "Cheek_Mark"];

const EYE_ROW: f64 = 0.42;
const EYE_COLS: [f64; 2] = [0.35, 0.65];
const RING_OUTER: f64 = 0.10;
const RING_INNER: f64 = 0.075;

/// Fractional rectangle `(rows, cols)` fully covered by attribute `i`.
fn probe_fractions(i: usize) -> ((f64, f64), (f64, f64)) {
    match i {
        0 => ((0.625, 0.675), (0.38, 0.62)),
        1 => ((0.405, 0.435), (0.435, 0.565)),
        2 => ((0.78, 0.85), (0.40, 0.60)),
        3 => ((0.23, 0.29), (0.40, 0.60)),
        _ => ((0.54, 0.60), (0.26, 0.33)),
    }
}

/// Pixels that attribute `i` may change.
pub fn attribute_region(i: usize, resolution: usize) -> Rect {
    if i == 1 {
        Rect::from_fractions(resolution, (0.31, 0.53), (0.24, 0.76))
    } else {
        attribute_probe(i, resolution)
    }
}

/// Pixels that attribute `i` paints completely when present.
pub fn attribute_probe(i: usize, resolution: usize) -> Rect {
    let (rows, cols) = probe_fractions(i);
    Rect::from_fractions(resolution, rows, cols)
}

struct Appearance {
    background: [f64; 3],
    hair: [f64; 3],
    skin: [f64; 3],
    iris: [f64; 3],
    lips: [f64; 3],
    feature: [f64; 3],
    face_radii: (f64, f64),
    eye_shift: f64,
    mouth_half_width: f64,
}

impl Appearance {
    fn draw(rng: &mut impl Rng) -> Self {
        let mut jitter3 = |base: [f64; 3], amp: f64| base.map(|b| b + rng.gen_range(-amp..=amp));
        let background = jitter3([-0.4, -0.35, -0.2], 0.3);
        let hair = jitter3([-0.45, -0.55, -0.65], 0.25);
        let s = rng.gen_range(0.25..=0.8);
        let skin = [s, s - 0.12, s - 0.25];
        let iris = [rng.gen_range(-0.9..=-0.5), rng.gen_range(-0.9..=-0.5), rng.gen_range(-0.9..=-0.4)];
        let lips = [rng.gen_range(0.45..=0.8), rng.gen_range(-0.6..=-0.3), rng.gen_range(-0.5..=-0.25)];
        let feature = [rng.gen_range(-0.95..=-0.75), rng.gen_range(-0.95..=-0.75), rng.gen_range(-0.95..=-0.75)];
        let face_radii = (0.36 + rng.gen_range(-0.01..=0.01), 0.30 + rng.gen_range(-0.01..=0.01));
        let eye_shift = rng.gen_range(-0.01..=0.01);
        let mouth_half_width = rng.gen_range(0.08..=0.13);
        Appearance { background, hair, skin, iris, lips, feature, face_radii, eye_shift, mouth_half_width }
    }
}

fn in_ellipse(y: f64, x: f64, cy: f64, cx: f64, ry: f64, rx: f64) -> bool {
    let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
    dy * dy + dx * dx <= 1.0
}

fn in_frac(y: f64, x: f64, rows: (f64, f64), cols: (f64, f64)) -> bool {
    y >= rows.0 && y < rows.1 && x >= cols.0 && x < cols.1
}

/// Renders one face. Attributes beyond the supported five are rejected.
pub fn synthesize_face<T: Real>(
    rng: &mut impl Rng,
    attributes: &AttributeVector,
    resolution: usize,
) -> Result<Sample<T>> {
    if resolution < MIN_RESOLUTION {
        bail!(Config, "synthetic faces need a resolution of at least {MIN_RESOLUTION}, got {resolution}");
    }
    if attributes.len() > MAX_ATTRIBUTES {
        bail!(Config, "synthetic faces support at most {MAX_ATTRIBUTES} attributes, got {}", attributes.len());
    }
    let look = Appearance::draw(rng);
    let res = resolution;
    let plane = res * res;
    let mut img = Tensor::<T>::zeros(&[3, res, res]);
    let mut put = |row: usize, col: usize, c: [f64; 3]| {
        for (ch, v) in c.iter().enumerate() {
            img.data_mut()[ch * plane + row * res + col] = T::from_f64(v.clamp(-1.0, 1.0));
        }
    };
    for row in 0..res {
        for col in 0..res {
            let y = (row as f64 + 0.5) / res as f64;
            let x = (col as f64 + 0.5) / res as f64;
            let mut c = look.background;
            if in_ellipse(y, x, 0.45, 0.5, 0.42, 0.36) {
                c = look.hair;
            }
            if in_ellipse(y, x, 0.54, 0.5, look.face_radii.0, look.face_radii.1) {
                c = look.skin;
                let ey = EYE_ROW + look.eye_shift;
                for ex in EYE_COLS {
                    if in_frac(y, x, (ey - 0.075, ey - 0.055), (ex - 0.07, ex + 0.07)) {
                        c = look.hair;
                    }
                    if in_ellipse(y, x, ey, ex, 0.035, 0.06) {
                        c = [0.85, 0.85, 0.8];
                    }
                    if in_ellipse(y, x, ey, ex, 0.028, 0.028) {
                        c = look.iris;
                    }
                }
                if in_frac(y, x, (0.48, 0.58), (0.49, 0.51)) {
                    c = look.skin.map(|v| v - 0.2);
                }
                let mw = look.mouth_half_width;
                if in_frac(y, x, (0.70, 0.735), (0.5 - mw, 0.5 + mw)) {
                    c = look.lips;
                }
            }
            put(row, col, c);
        }
    }
    for (i, _) in attributes.values().iter().enumerate().filter(|(_, &v)| v == 1) {
        let probe = attribute_probe(i, res);
        let region = attribute_region(i, res);
        for row in region.row0..region.row1 {
            for col in region.col0..region.col1 {
                let paint = probe.contains(row, col)
                    || (i == 1 && {
                        let y = (row as f64 + 0.5) / res as f64;
                        let x = (col as f64 + 0.5) / res as f64;
                        EYE_COLS.iter().any(|&ex| {
                            in_ellipse(y, x, EYE_ROW, ex, RING_OUTER, RING_OUTER)
                                && !in_ellipse(y, x, EYE_ROW, ex, RING_INNER, RING_INNER)
                        })
                    });
                if paint {
                    put(row, col, look.feature);
                }
            }
        }
    }
    Sample::new("synthetic".into(), img, attributes.clone())
}

/// A deterministic, indexable population of synthetic faces. Sample `k`
/// depends only on `(seed, k)`; each attribute is present with probability ½.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticFaces {
    pub seed: u64,
    pub resolution: usize,
    pub n_attributes: usize,
    pub count: usize,
}

impl SyntheticFaces {
    pub fn new(seed: u64, resolution: usize, n_attributes: usize, count: usize) -> Result<Self> {
        if n_attributes > MAX_ATTRIBUTES {
            bail!(Config, "synthetic faces support at most {MAX_ATTRIBUTES} attributes, got {n_attributes}");
        }
        if resolution < MIN_RESOLUTION {
            bail!(Config, "synthetic faces need a resolution of at least {MIN_RESOLUTION}, got {resolution}");
        }
        Ok(SyntheticFaces { seed, resolution, n_attributes, count })
    }

    pub fn id(&self, index: usize) -> alloc::string::String {
        format!("synth-{index:06}")
    }

    pub fn ids(&self) -> Vec<alloc::string::String> {
        (0..self.count).map(|i| self.id(i)).collect()
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    pub fn attributes(&self, index: usize) -> AttributeVector {
        let mut rng = self.rng(index);
        AttributeVector::new((0..self.n_attributes).map(|_| rng.gen_bool(0.5) as u8).collect())
            .expect("binary by construction")
    }

    pub fn sample<T: Real>(&self, index: usize) -> Result<Sample<T>> {
        self.sample_with(index, &self.attributes(index))
    }

    /// Sample `index`'s appearance with overridden attributes.
    pub fn sample_with<T: Real>(&self, index: usize, attributes: &AttributeVector) -> Result<Sample<T>> {
        let mut rng = self.rng(index);
        for _ in 0..self.n_attributes {
            rng.gen_bool(0.5);
        }
        let mut s = synthesize_face(&mut rng, attributes, self.resolution)?;
        s.id = self.id(index);
        Ok(s)
    }
}
