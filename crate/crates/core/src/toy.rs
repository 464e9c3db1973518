//! Synthetic dual encoder with a controllable modality gap.
//!
//! Captions come from a fixed template `a <color> <material> <shape>`. The
//! text encoder sums one fixed random unit vector per attribute word. The
//! "image" encoder starts from the same text embedding and applies a seeded
//! rotation, a constant offset and Gaussian noise, which gives an image cloud
//! that is correlated with, but displaced from, the text cloud.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::corpus::TextEncoder;
use crate::decoder::Vocab;
use crate::embedding::kernels::{dot_f64, l2_norm};
use crate::embedding::{check_dim, Embedding, RawEmbedding};
use crate::error::{Error, Result};

pub const ARTICLE: &str = "a";

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub values: Vec<String>,
}

/// Attribute value index per slot; `None` when the caption omits the slot.
pub type Attributes = Vec<Option<usize>>;

#[derive(Debug, Clone)]
pub struct ToyWorld {
    slots: Vec<Slot>,
    dim: usize,
    /// `vectors[slot][value]`, unit norm.
    vectors: Vec<Vec<Vec<f64>>>,
    article: Vec<f64>,
}

impl ToyWorld {
    pub fn new(slots: Vec<Slot>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || slots.is_empty() || slots.iter().any(|s| s.values.is_empty()) {
            return Err(Error::InvalidArgument("world needs a positive dimension and non-empty slots".into()));
        }
        let mut words: Vec<&str> = slots.iter().flat_map(|s| s.values.iter().map(String::as_str)).collect();
        words.push(ARTICLE);
        let total = words.len();
        words.sort_unstable();
        words.dedup();
        if words.len() != total {
            return Err(Error::InvalidArgument("attribute words must be distinct".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = slots
            .iter()
            .map(|s| s.values.iter().map(|_| random_unit(&mut rng, dim)).collect())
            .collect();
        let article = random_unit(&mut rng, dim);
        Ok(ToyWorld { slots, dim, vectors, article })
    }

    /// 8 colors × 6 materials × 5 shapes = 240 captions.
    pub fn standard(dim: usize, seed: u64) -> Self {
        let slot = |name: &str, values: &[&str]| Slot {
            name: name.to_owned(),
            values: values.iter().map(|v| (*v).to_owned()).collect(),
        };
        let slots = vec![
            slot("color", &["red", "green", "blue", "yellow", "purple", "orange", "white", "black"]),
            slot("material", &["metal", "rubber", "glass", "wooden", "plastic", "stone"]),
            slot("shape", &["cube", "sphere", "cylinder", "cone", "torus"]),
        ];
        Self::new(slots, dim, seed).expect("standard world is valid")
    }

    /// Five slots of twelve words each, `a <size> <pattern> <color> <material> <shape>`.
    ///
    /// Its 61 word vectors span the embedding space for `dim` up to about
    /// 60, which the standard world's 20 do not.
    pub fn rich(dim: usize, seed: u64) -> Self {
        let slot = |name: &str, values: &[&str]| Slot {
            name: name.to_owned(),
            values: values.iter().map(|v| (*v).to_owned()).collect(),
        };
        let slots = vec![
            slot("size", &["tiny", "small", "medium", "large", "huge", "giant", "little", "big", "miniature", "massive", "short", "tall"]),
            slot("pattern", &["striped", "dotted", "plain", "shiny", "matte", "rough", "smooth", "spotted", "checkered", "glossy", "dull", "fuzzy"]),
            slot("color", &["red", "green", "blue", "yellow", "purple", "orange", "white", "black", "gray", "brown", "pink", "cyan"]),
            slot("material", &["metal", "rubber", "glass", "wooden", "plastic", "stone", "paper", "leather", "ceramic", "marble", "copper", "silk"]),
            slot("shape", &["cube", "sphere", "cylinder", "cone", "torus", "pyramid", "prism", "disk", "ring", "capsule", "wedge", "star"]),
        ];
        Self::new(slots, dim, seed).expect("rich world is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn attribute_vector(&self, slot: usize, value: usize) -> &[f64] {
        &self.vectors[slot][value]
    }

    /// Caption for a full or partial attribute tuple.
    pub fn caption(&self, attrs: &[Option<usize>]) -> String {
        let mut words = vec![ARTICLE];
        for (slot, a) in self.slots.iter().zip(attrs) {
            if let Some(v) = a {
                words.push(&slot.values[*v]);
            }
        }
        words.join(" ")
    }

    /// Every full caption, slots varying fastest on the right.
    pub fn captions(&self) -> Vec<String> {
        let mut out = vec![Vec::new()];
        for slot in &self.slots {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<Option<usize>>| {
                    (0..slot.values.len()).map(move |v| {
                        let mut p = prefix.clone();
                        p.push(Some(v));
                        p
                    })
                })
                .collect();
        }
        out.iter().map(|a| self.caption(a)).collect()
    }

    /// `n` distinct full captions drawn uniformly, in draw order.
    pub fn sample_captions(&self, n: usize, seed: u64) -> Result<Vec<String>> {
        let total = self.slots.iter().try_fold(1usize, |acc, s| acc.checked_mul(s.values.len()));
        if total.is_some_and(|t| n > t) {
            return Err(Error::InvalidArgument(format!("cannot draw {n} distinct captions")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = std::collections::HashSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let attrs: Attributes = self.slots.iter().map(|s| Some(rng.random_range(0..s.values.len()))).collect();
            let c = self.caption(&attrs);
            if seen.insert(c.clone()) {
                out.push(c);
            }
        }
        Ok(out)
    }

    /// Each caption repeated `copies` times, shuffled.
    pub fn redundant_corpus(captions: &[String], copies: usize, seed: u64) -> Vec<String> {
        let mut out: Vec<String> = captions.iter().flat_map(|c| std::iter::repeat_n(c.clone(), copies)).collect();
        out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        out
    }

    /// Direction of the expected caption vector (article plus every slot's
    /// mean word vector), unit norm.
    pub fn mean_direction(&self) -> Vec<f64> {
        let mut m = self.article.clone();
        for slot in &self.vectors {
            for v in slot {
                m.iter_mut().zip(v).for_each(|(a, b)| *a += b / slot.len() as f64);
            }
        }
        let n = l2_norm(&m);
        m.into_iter().map(|x| x / n).collect()
    }

    pub fn article_vector(&self) -> &[f64] {
        &self.article
    }

    /// Inverse of [`ToyWorld::caption`]: optional article, then at most one
    /// word per slot in slot order.
    pub fn parse(&self, text: &str) -> Result<Attributes> {
        Ok(self.parse_tokens(text)?.1)
    }

    /// Parsed attributes plus whether the caption starts with the article.
    fn parse_tokens(&self, text: &str) -> Result<(bool, Attributes)> {
        let bad = || Error::UnparseableCaption(text.to_owned());
        let mut words = text.split_whitespace().peekable();
        let has_article = words.peek() == Some(&ARTICLE);
        if has_article {
            words.next();
        }
        let mut attrs = vec![None; self.slots.len()];
        let mut next_slot = 0;
        for w in words {
            let (slot, value) = (next_slot..self.slots.len())
                .find_map(|s| self.slots[s].values.iter().position(|v| v == w).map(|v| (s, v)))
                .ok_or_else(bad)?;
            attrs[slot] = Some(value);
            next_slot = slot + 1;
        }
        if attrs.iter().all(Option::is_none) {
            return Err(bad());
        }
        Ok((has_article, attrs))
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::from_words(
            std::iter::once(ARTICLE).chain(self.slots.iter().flat_map(|s| s.values.iter().map(String::as_str))),
        )
    }

    /// Sum of the vectors of the caption's words, article included.
    pub fn encode_text(&self, text: &str) -> Result<RawEmbedding> {
        let (has_article, attrs) = self.parse_tokens(text)?;
        let mut v = if has_article { self.article.clone() } else { vec![0.0; self.dim] };
        for (slot, a) in attrs.iter().enumerate() {
            if let Some(value) = a {
                for (x, y) in v.iter_mut().zip(&self.vectors[slot][*value]) {
                    *x += y;
                }
            }
        }
        Ok(RawEmbedding::new(v))
    }
}

impl TextEncoder for ToyWorld {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<RawEmbedding> {
        self.encode_text(text)
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = l2_norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Parameters of the synthetic modality gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSpec {
    /// Radians in [0, π].
    pub rotation_angle: f64,
    pub offset_scale: f64,
    /// Per-component standard deviation of the additive noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl GapSpec {
    pub fn new(rotation_angle: f64, offset_scale: f64, noise_sigma: f64, seed: u64) -> Result<Self> {
        if !(0.0..=std::f64::consts::PI).contains(&rotation_angle) {
            return Err(Error::InvalidArgument(format!("rotation angle {rotation_angle} outside [0, π]")));
        }
        if !(offset_scale >= 0.0 && offset_scale.is_finite()) || !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("offset and noise scales must be non-negative".into()));
        }
        Ok(GapSpec { rotation_angle, offset_scale, noise_sigma, seed })
    }

    pub fn none() -> Self {
        GapSpec { rotation_angle: 0.0, offset_scale: 0.0, noise_sigma: 0.0, seed: 0 }
    }
}

/// Image-side encoder of the toy world.
///
/// The rotation turns every vector by exactly `rotation_angle`: a seeded
/// orthonormal basis is split into coordinate pairs and each pair's plane is
/// rotated by the same angle. The offset is a fixed seeded unit direction,
/// orthogonal to the text cloud's mean direction and to its rotation, so a
/// larger offset always moves the image cloud further from the text cloud.
#[derive(Debug, Clone)]
pub struct ToyImageEncoder {
    world: ToyWorld,
    spec: GapSpec,
    /// Rows are the orthonormal basis vectors.
    basis: Vec<f64>,
    offset_dir: Vec<f64>,
}

impl ToyImageEncoder {
    pub fn new(world: ToyWorld, spec: GapSpec) -> Self {
        let d = world.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        let basis = if spec.rotation_angle != 0.0 { orthonormal_basis(&mut rng, d) } else { Vec::new() };
        let raw_offset = random_unit(&mut rng, d);
        let mut enc = ToyImageEncoder { world, spec, basis, offset_dir: Vec::new() };
        let mean = enc.world.mean_direction();
        let rotated = enc.rotate(&mean);
        enc.offset_dir = orthogonal_unit(raw_offset, &[mean, rotated]);
        enc
    }

    pub fn world(&self) -> &ToyWorld {
        &self.world
    }

    pub fn spec(&self) -> &GapSpec {
        &self.spec
    }

    pub fn offset_direction(&self) -> &[f64] {
        &self.offset_dir
    }

    pub fn rotate(&self, x: &[f64]) -> Vec<f64> {
        let d = self.world.dim();
        if self.basis.is_empty() {
            return x.to_vec();
        }
        let (s, c) = self.spec.rotation_angle.sin_cos();
        let coords: Vec<f64> = self.basis.chunks_exact(d).map(|b| dot_f64(b, x)).collect();
        let mut out = x.to_vec();
        for p in 0..d / 2 {
            let (a, b) = (coords[2 * p], coords[2 * p + 1]);
            let da = a * c - b * s - a;
            let db = a * s + b * c - b;
            for (k, o) in out.iter_mut().enumerate() {
                *o += da * self.basis[2 * p * d + k] + db * self.basis[(2 * p + 1) * d + k];
            }
        }
        out
    }

    /// Image embedding for a caption. `instance` distinguishes several
    /// views (e.g. video frames) of the same caption.
    pub fn encode(&self, text: &str, instance: u64) -> Result<Embedding> {
        let t = self.world.encode_text(text)?.normalized()?;
        self.apply(&t, text, instance)
    }

    /// Apply the gap to an already-normalized text embedding.
    pub fn apply(&self, text_embedding: &Embedding, key: &str, instance: u64) -> Result<Embedding> {
        check_dim(self.world.dim(), text_embedding.dim())?;
        if self.spec.rotation_angle == 0.0 && self.spec.offset_scale == 0.0 && self.spec.noise_sigma == 0.0 {
            return Ok(text_embedding.clone());
        }
        let mut x = self.rotate(text_embedding.as_slice());
        if self.spec.offset_scale != 0.0 {
            for (xi, u) in x.iter_mut().zip(&self.offset_dir) {
                *xi += self.spec.offset_scale * u;
            }
        }
        if self.spec.noise_sigma != 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ fnv1a(key.as_bytes()) ^ instance.rotate_left(32));
            let noise = Normal::new(0.0, self.spec.noise_sigma).expect("finite sigma");
            for xi in x.iter_mut() {
                *xi += noise.sample(&mut rng);
            }
        }
        Ok(Embedding::normalize(&x)?.0)
    }
}

/// Remove the components of `v` along `against` (Gram–Schmidt), then
/// normalize. Falls back to `v` when nothing is left.
fn orthogonal_unit(v: Vec<f64>, against: &[Vec<f64>]) -> Vec<f64> {
    let mut out = v.clone();
    let mut done: Vec<Vec<f64>> = Vec::new();
    for a in against {
        let mut a = a.clone();
        for b in &done {
            let p = dot_f64(b, &a);
            a.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = l2_norm(&a);
        if n > 1e-9 {
            done.push(a.into_iter().map(|x| x / n).collect());
        }
    }
    for b in &done {
        let p = dot_f64(b, &out);
        out.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
    let n = l2_norm(&out);
    if n > 1e-9 {
        out.into_iter().map(|x| x / n).collect()
    } else {
        v
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Modified Gram–Schmidt on Gaussian rows; returns `d × d` row-major.
fn orthonormal_basis(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let p = dot_f64(r, &v);
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
        }
        // second pass for numerical orthogonality
        for r in &rows {
            let p = dot_f64(r, &v);
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
        }
        let n = l2_norm(&v);
        if n > 1e-8 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows.concat()
}

/// Distance between the component-wise means of two clouds.
pub fn centroid_distance(a: &[Embedding], b: &[Embedding]) -> Result<f64> {
    let ca = centroid(a)?;
    let cb = centroid(b)?;
    check_dim(ca.len(), cb.len())?;
    let diff: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x - y).collect();
    Ok(l2_norm(&diff))
}

pub fn centroid(cloud: &[Embedding]) -> Result<Vec<f64>> {
    let first = cloud.first().ok_or(Error::EmptyInput)?;
    let mut c = vec![0.0; first.dim()];
    for e in cloud {
        check_dim(c.len(), e.dim())?;
        c.iter_mut().zip(e.as_slice()).for_each(|(a, b)| *a += b);
    }
    c.iter_mut().for_each(|x| *x /= cloud.len() as f64);
    Ok(c)
}

/// Mean cosine over aligned pairs.
pub fn mean_paired_cosine(a: &[Embedding], b: &[Embedding]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += crate::embedding::cosine(x, y)?;
    }
    Ok(total / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GapReport {
    pub centroid_distance: f64,
    pub mean_paired_cosine: f64,
}

pub fn gap_metrics(text_cloud: &[Embedding], other_cloud: &[Embedding]) -> Result<GapReport> {
    Ok(GapReport {
        mean_paired_cosine: mean_paired_cosine(text_cloud, other_cloud)?,
        centroid_distance: centroid_distance(text_cloud, other_cloud)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;

    fn world() -> ToyWorld {
        ToyWorld::standard(64, 1)
    }

    #[test]
    fn standard_world_shape() {
        let w = world();
        let caps = w.captions();
        assert_eq!(caps.len(), 240);
        assert_eq!(caps[0], "a red metal cube");
        assert_eq!(w.vocab().len(), 3 + 1 + 19);
        for c in &caps {
            let attrs = w.parse(c).unwrap();
            assert_eq!(&w.caption(&attrs), c);
        }
    }

    #[test]
    fn rich_world_sampling() {
        let w = ToyWorld::rich(48, 3);
        assert_eq!(w.vocab().len(), 3 + 1 + 60);
        let caps = w.sample_captions(500, 9).unwrap();
        assert_eq!(caps, w.sample_captions(500, 9).unwrap());
        let unique: std::collections::HashSet<&String> = caps.iter().collect();
        assert_eq!(unique.len(), 500);
        for c in &caps {
            assert_eq!(c.split_whitespace().count(), 6);
            assert_eq!(&w.caption(&w.parse(c).unwrap()), c);
        }
        assert!(world().sample_captions(241, 0).is_err());
        assert_eq!(world().sample_captions(240, 0).unwrap().len(), 240);
    }

    #[test]
    fn redundant_corpus_counts() {
        let caps = vec!["a cube".to_owned(), "a cone".to_owned()];
        let r = ToyWorld::redundant_corpus(&caps, 3, 1);
        assert_eq!(r.len(), 6);
        assert_eq!(r.iter().filter(|c| *c == "a cube").count(), 3);
    }

    #[test]
    fn parse_rejects_garbage() {
        let w = world();
        for bad in ["", "a", "a cube red", "a red red cube", "a pink cube", "red a cube"] {
            assert!(matches!(w.parse(bad), Err(Error::UnparseableCaption(_))), "{bad}");
        }
        assert_eq!(w.parse("cube").unwrap(), vec![None, None, Some(0)]);
    }

    #[test]
    fn text_encoder_is_deterministic() {
        let w = world();
        assert_eq!(w.encode_text("a red metal cube").unwrap(), w.encode_text("a red metal cube").unwrap());
        assert_eq!(ToyWorld::standard(64, 1).encode_text("a blue cone").unwrap(), w.encode_text("a blue cone").unwrap());
    }

    #[test]
    fn single_attribute_is_its_vector() {
        let w = world();
        let r = w.encode_text("sphere").unwrap();
        assert_eq!(r.values, w.attribute_vector(2, 1));
        assert!((r.prenorm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_attributes_raise_cosine() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sizes: Vec<usize> = w.slots().iter().map(|s| s.values.len()).collect();
        let enc = |a: &[usize]| {
            let attrs: Vec<Option<usize>> = a.iter().map(|&v| Some(v)).collect();
            w.encode_text(&w.caption(&attrs)).unwrap().normalized().unwrap()
        };
        for _ in 0..1000 {
            let base: Vec<usize> = sizes.iter().map(|&n| rng.random_range(0..n)).collect();
            // share two attributes: change one slot
            let mut two = base.clone();
            let s = rng.random_range(0..3);
            two[s] = (two[s] + 1 + rng.random_range(0..sizes[s] - 1)) % sizes[s];
            // share none: change every slot
            let none: Vec<usize> = base.iter().zip(&sizes).map(|(&b, &n)| (b + 1 + rng.random_range(0..n - 1)) % n).collect();
            let b = enc(&base);
            assert!(cosine(&b, &enc(&two)).unwrap() > cosine(&b, &enc(&none)).unwrap());
        }
    }

    #[test]
    fn zero_gap_is_identity() {
        let w = world();
        let img = ToyImageEncoder::new(w.clone(), GapSpec::none());
        for c in w.captions().iter().take(20) {
            assert_eq!(img.encode(c, 0).unwrap(), w.encode_text(c).unwrap().normalized().unwrap());
        }
    }

    #[test]
    fn rotation_turns_every_vector_by_the_angle() {
        let w = world();
        for angle in [std::f64::consts::FRAC_PI_2, 0.5] {
            let img = ToyImageEncoder::new(w.clone(), GapSpec::new(angle, 0.0, 0.0, 3).unwrap());
            for c in w.captions().iter().step_by(37) {
                let t = w.encode_text(c).unwrap().normalized().unwrap();
                let r = img.encode(c, 0).unwrap();
                assert!((cosine(&t, &r).unwrap() - angle.cos()).abs() < 1e-12);
                assert!((r.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn offset_shift_matches_closed_form() {
        let w = world();
        let scale = 0.3;
        let img = ToyImageEncoder::new(w.clone(), GapSpec::new(0.0, scale, 0.0, 8).unwrap());
        let u = img.offset_direction().to_vec();
        let caps: Vec<String> = w.captions().into_iter().step_by(7).collect();
        let text: Vec<Embedding> = caps.iter().map(|c| w.encode_text(c).unwrap().normalized().unwrap()).collect();
        let image: Vec<Embedding> = caps.iter().map(|c| img.encode(c, 0).unwrap()).collect();
        // each image is (t + s·u) / sqrt(1 + 2s·tᵀu + s²)
        let mut expected = vec![0.0; w.dim()];
        for t in &text {
            let tu: f64 = t.as_slice().iter().zip(&u).map(|(a, b)| a * b).sum();
            let n = (1.0 + 2.0 * scale * tu + scale * scale).sqrt();
            for k in 0..w.dim() {
                expected[k] += (t.as_slice()[k] + scale * u[k]) / n / text.len() as f64;
            }
        }
        let got = centroid(&image).unwrap();
        for k in 0..w.dim() {
            assert!((got[k] - expected[k]).abs() < 1e-12);
        }
        let ct = centroid(&text).unwrap();
        let shift: f64 = ct.iter().zip(&expected).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((centroid_distance(&text, &image).unwrap() - shift).abs() < 1e-12);
    }

    #[test]
    fn noise_is_deterministic_per_instance() {
        let w = world();
        let img = ToyImageEncoder::new(w, GapSpec::new(0.0, 0.0, 0.2, 4).unwrap());
        let a = img.encode("a red metal cube", 0).unwrap();
        assert_eq!(a, img.encode("a red metal cube", 0).unwrap());
        assert_ne!(a, img.encode("a red metal cube", 1).unwrap());
    }

    #[test]
    fn gap_metric_cases() {
        let e = |v: &[f64]| Embedding::normalize(v).unwrap().0;
        let cloud = vec![e(&[1.0, 0.0]), e(&[0.0, 1.0])];
        let r = gap_metrics(&cloud, &cloud).unwrap();
        assert_eq!(r.centroid_distance, 0.0);
        assert_eq!(r.mean_paired_cosine, 1.0);
        assert_eq!(centroid_distance(&[e(&[1.0, 0.0])], &[e(&[-1.0, 0.0])]).unwrap(), 2.0);
        assert!(matches!(mean_paired_cosine(&cloud, &cloud[..1]), Err(Error::LengthMismatch { .. })));
        assert!(centroid_distance(&[], &cloud).is_err());
    }

    #[test]
    fn gap_spec_validation() {
        assert!(GapSpec::new(-0.1, 0.0, 0.0, 0).is_err());
        assert!(GapSpec::new(4.0, 0.0, 0.0, 0).is_err());
        assert!(GapSpec::new(0.5, -1.0, 0.0, 0).is_err());
        assert!(GapSpec::new(0.5, 0.3, 0.05, 0).is_ok());
    }

    #[test]
    fn centroid_distance_grows_with_offset() {
        let w = world();
        let caps = w.captions();
        let text: Vec<Embedding> = caps.iter().map(|c| w.encode_text(c).unwrap().normalized().unwrap()).collect();
        let mut last = -1.0;
        for step in 0..=10 {
            let spec = GapSpec::new(0.5, step as f64 * 0.1, 0.05, 2).unwrap();
            let img = ToyImageEncoder::new(w.clone(), spec);
            let cloud: Vec<Embedding> = caps.iter().map(|c| img.encode(c, 0).unwrap()).collect();
            let d = centroid_distance(&text, &cloud).unwrap();
            assert!(d >= last, "offset {} gave {d} < {last}", step as f64 * 0.1);
            last = d;
        }
    }
}
