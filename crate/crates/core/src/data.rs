//! Samples, editing regions, splits and batch assembly.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::{Real, Tensor};

/// Binary attribute labels, one entry per configured attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct AttributeVector(Vec<u8>);

impl AttributeVector {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            bail!(Validation, "attribute labels must be 0 or 1, got {v}");
        }
        Ok(AttributeVector(values))
    }

    /// Builds labels from floats that must each be exactly 0 or 1.
    pub fn from_reals<T: Real>(values: &[T]) -> Result<Self> {
        values
            .iter()
            .map(|v| match v.to_f64() {
                0.0 => Ok(0),
                1.0 => Ok(1),
                x => bail!(Validation, "attribute labels must be 0 or 1, got {x}"),
            })
            .collect::<Result<Vec<u8>>>()
            .map(AttributeVector)
    }

    pub fn zeros(n: usize) -> Self {
        AttributeVector(vec![0; n])
    }

    pub fn ones(n: usize) -> Self {
        AttributeVector(vec![1; n])
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    /// Entrywise AND.
    pub fn and(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            bail!(Validation, "label lengths differ: {} vs {}", self.len(), other.len());
        }
        Ok(AttributeVector(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect()))
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.len()], |i| if self.0[i] == 1 { T::ONE } else { T::ZERO })
    }
}

impl TryFrom<Vec<u8>> for AttributeVector {
    type Error = crate::error::Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        AttributeVector::new(v)
    }
}

impl From<AttributeVector> for Vec<u8> {
    fn from(a: AttributeVector) -> Self {
        a.0
    }
}

/// Stacks label vectors into an `(N, n)` matrix.
pub fn labels_matrix<T: Real>(labels: &[&AttributeVector]) -> Result<Tensor<T>> {
    let n = labels.first().map_or(0, |l| l.len());
    let mut data = Vec::with_capacity(labels.len() * n);
    for l in labels {
        if l.len() != n {
            bail!(Validation, "label vectors of differing length {} and {}", n, l.len());
        }
        data.extend(l.values().iter().map(|&v| if v == 1 { T::ONE } else { T::ZERO }));
    }
    Tensor::from_vec(&[labels.len(), n], data)
}

/// Half-open pixel rectangle `[row0, row1) × [col0, col1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Rect {
    pub const fn new(row0: usize, row1: usize, col0: usize, col1: usize) -> Self {
        Rect { row0, row1, col0, col1 }
    }

    /// Rectangle from fractions of a square image side, rounded to pixels.
    pub fn from_fractions(res: usize, rows: (f64, f64), cols: (f64, f64)) -> Self {
        let px = |f: f64| (libm::round(f * res as f64) as usize).min(res);
        Rect::new(px(rows.0), px(rows.1), px(cols.0), px(cols.1))
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row1 && col >= self.col0 && col < self.col1
    }

    pub fn area(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    Rectangle,
    UnionOfRectangles,
    /// The whole image.
    Full,
}

/// An editing region: the pixels the generator regenerates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub kind: RegionKind,
    #[serde(default)]
    pub rectangles: Vec<Rect>,
}

impl RegionSpec {
    pub fn full() -> Self {
        RegionSpec { kind: RegionKind::Full, rectangles: Vec::new() }
    }

    pub fn rect(r: Rect) -> Self {
        RegionSpec { kind: RegionKind::Rectangle, rectangles: vec![r] }
    }

    pub fn union(rects: Vec<Rect>) -> Self {
        RegionSpec { kind: RegionKind::UnionOfRectangles, rectangles: rects }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.kind == RegionKind::Rectangle && self.rectangles.len() > 1 {
            bail!(Validation, "a rectangle region holds one rectangle, got {}", self.rectangles.len());
        }
        for r in &self.rectangles {
            if r.row0 > r.row1 || r.row1 > height || r.col0 > r.col1 || r.col1 > width {
                bail!(Validation, "rectangle {:?} lies outside a {}x{} image", r, height, width);
            }
        }
        Ok(())
    }
}

/// Named editing regions in aligned-face coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionPreset {
    /// Mouth and the area above it.
    Mouth,
    /// Both eyes with brows.
    Eyes,
    /// Eyes, nose and mouth together.
    Components,
    /// The central face area.
    Face,
    /// Every pixel.
    All,
}

impl RegionPreset {
    pub const ROTATION: [RegionPreset; 4] =
        [RegionPreset::Mouth, RegionPreset::Eyes, RegionPreset::Components, RegionPreset::Face];

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "mouth" => RegionPreset::Mouth,
            "eyes" => RegionPreset::Eyes,
            "components" | "multi" => RegionPreset::Components,
            "face" | "full" => RegionPreset::Face,
            "all" => RegionPreset::All,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionPreset::Mouth => "mouth",
            RegionPreset::Eyes => "eyes",
            RegionPreset::Components => "components",
            RegionPreset::Face => "full",
            RegionPreset::All => "all",
        }
    }

    /// Default rectangles for a square image of side `res`.
    pub fn region(self, res: usize) -> RegionSpec {
        let r = |rows, cols| Rect::from_fractions(res, rows, cols);
        match self {
            RegionPreset::Mouth => RegionSpec::rect(r((0.58, 0.80), (0.30, 0.70))),
            RegionPreset::Eyes => RegionSpec::rect(r((0.30, 0.53), (0.20, 0.80))),
            RegionPreset::Components => RegionSpec::union(vec![
                r((0.30, 0.53), (0.20, 0.80)),
                r((0.48, 0.60), (0.40, 0.60)),
                r((0.58, 0.80), (0.30, 0.70)),
            ]),
            RegionPreset::Face => RegionSpec::rect(r((0.22, 0.88), (0.20, 0.80))),
            RegionPreset::All => RegionSpec::full(),
        }
    }
}

/// Parses a preset name or a `;`-separated list of `r0,r1,c0,c1` pixel
/// rectangles for a square image of side `res`.
pub fn parse_region(text: &str, res: usize) -> Result<RegionSpec> {
    let text = text.trim();
    if let Some(preset) = RegionPreset::parse(text) {
        return Ok(preset.region(res));
    }
    let mut rects = Vec::new();
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let nums: Vec<usize> = match part.split(',').map(|v| v.trim().parse::<usize>()).collect() {
            Ok(v) => v,
            Err(_) => bail!(Validation, "region `{part}` is neither a preset nor r0,r1,c0,c1"),
        };
        let [r0, r1, c0, c1] = nums[..] else {
            bail!(Validation, "region rectangle `{part}` needs four values r0,r1,c0,c1");
        };
        rects.push(Rect::new(r0, r1, c0, c1));
    }
    if rects.is_empty() {
        bail!(Validation, "empty region `{text}`");
    }
    let spec = if rects.len() == 1 { RegionSpec::rect(rects[0]) } else { RegionSpec::union(rects) };
    spec.validate(res, res)?;
    Ok(spec)
}

/// Mirrors a `(C, H, W)` image left to right.
pub fn flip_horizontal<T: Real>(image: &Tensor<T>) -> Tensor<T> {
    let w = image.dim(image.shape().len() - 1);
    let mut out = image.clone();
    for (dst, src) in out.data_mut().chunks_mut(w).zip(image.data().chunks(w)) {
        for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *s;
        }
    }
    out
}

/// Binary `H × W` mask: 1 inside the region, 0 elsewhere.
pub fn generate_mask<T: Real>(region: &RegionSpec, height: usize, width: usize) -> Result<Tensor<T>> {
    region.validate(height, width)?;
    if region.kind == RegionKind::Full {
        return Ok(Tensor::ones(&[height, width]));
    }
    let mut m = Tensor::zeros(&[height, width]);
    for r in &region.rectangles {
        for row in r.row0..r.row1 {
            m.data_mut()[row * width + r.col0..row * width + r.col1].fill(T::ONE);
        }
    }
    Ok(m)
}

/// Disjoint train/validation/test identifier sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Contiguous partition in input order.
pub fn make_split(ids: &[String], counts: (usize, usize, usize)) -> Result<SplitSpec> {
    let (tr, va, te) = counts;
    let total = tr.checked_add(va).and_then(|s| s.checked_add(te));
    match total {
        Some(t) if t <= ids.len() => {}
        _ => bail!(Config, "split counts {:?} exceed the {} available ids", counts, ids.len()),
    }
    Ok(SplitSpec {
        train: ids[..tr].to_vec(),
        val: ids[tr..tr + va].to_vec(),
        test: ids[tr + va..tr + va + te].to_vec(),
    })
}

/// Uniform random permutation of `0..batch_size` with no fixed points
/// (rejection sampling); the identity when `batch_size == 1`.
pub fn shuffle_exemplars(batch_size: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..batch_size).collect();
    if batch_size < 2 {
        return perm;
    }
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    /// `(3, H, W)` in `[-1, 1]`.
    pub image: Tensor<T>,
    pub attributes: AttributeVector,
}

impl<T: Real> Sample<T> {
    pub fn new(id: String, image: Tensor<T>, attributes: AttributeVector) -> Result<Self> {
        if image.shape().len() != 3 || image.dim(0) != 3 {
            bail!(Validation, "sample {id}: image must be (3, H, W), got {:?}", image.shape());
        }
        let lim = T::ONE;
        if image.data().iter().any(|&v| !(v >= -lim && v <= lim)) {
            bail!(Validation, "sample {id}: pixel values must lie in [-1, 1]");
        }
        Ok(Sample { id, image, attributes })
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.image.dim(1), self.image.dim(2))
    }
}

/// One training batch: sources `a` with labels `ya`, exemplars `b` with
/// labels `yb`, and the shared mask `m` broadcast to `(N, 1, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub a: Tensor<T>,
    pub ya: Tensor<T>,
    pub b: Tensor<T>,
    pub yb: Tensor<T>,
    pub m: Tensor<T>,
    /// `b[i] = a[perm[i]]`.
    pub perm: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.a.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn assemble_batch<T: Real>(samples: &[Sample<T>], region: &RegionSpec, rng: &mut impl Rng) -> Result<Batch<T>> {
    let Some(first) = samples.first() else {
        bail!(Validation, "cannot assemble an empty batch");
    };
    let (h, w) = first.resolution();
    for s in samples {
        if s.resolution() != (h, w) {
            bail!(Validation, "mixed resolutions in batch: {:?} and {:?}", (h, w), s.resolution());
        }
    }
    let images: Vec<&Tensor<T>> = samples.iter().map(|s| &s.image).collect();
    let labels: Vec<&AttributeVector> = samples.iter().map(|s| &s.attributes).collect();
    let a = Tensor::stack(&images)?;
    let ya = labels_matrix(&labels)?;
    let perm = shuffle_exemplars(samples.len(), rng);
    let b = a.gather_batch(&perm);
    let yb = ya.gather_batch(&perm);
    let plane = generate_mask::<T>(region, h, w)?;
    let mut m = Tensor::zeros(&[samples.len(), 1, h, w]);
    for chunk in m.data_mut().chunks_mut(h * w) {
        chunk.copy_from_slice(plane.data());
    }
    Ok(Batch { a, ya, b, yb, m, perm })
}
