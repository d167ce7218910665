//! Two-modality labeled samples, the synthetic zero-shot dataset generator,
//! and the embedding interchange file format.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as SampleDistribution, StandardNormal};

use crate::error::{Error, Result};
use crate::format::{put_f32_slice, put_u32, put_u64, ByteReader};
use crate::numerics::RngSeed;

/// Magic for embedding interchange files.
pub const EMBEDDING_MAGIC: &[u8; 8] = b"SBKAEMB1";

/// Which of the two input modalities a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Sketch,
    Photo,
}

impl Modality {
    pub fn tag(self) -> u8 {
        match self {
            Modality::Sketch => 0,
            Modality::Photo => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Modality::Sketch),
            1 => Ok(Modality::Photo),
            other => Err(Error::Data(format!(
                "modality tag must be 0 (sketch) or 1 (photo), got {other}"
            ))),
        }
    }
}

/// One embedding-bearing item.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub input: Vec<f64>,
    pub label: usize,
    pub modality: Modality,
}

/// A collection of samples split into seen (training) and unseen (testing)
/// classes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub seen_classes: Vec<usize>,
    pub unseen_classes: Vec<usize>,
    pub d_in: usize,
}

impl Dataset {
    pub fn seen_samples(&self) -> Vec<&LabeledSample> {
        self.samples
            .iter()
            .filter(|s| self.seen_classes.contains(&s.label))
            .collect()
    }

    pub fn unseen_samples(&self) -> Vec<&LabeledSample> {
        self.samples
            .iter()
            .filter(|s| self.unseen_classes.contains(&s.label))
            .collect()
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub n_classes: usize,
    pub n_seen: usize,
    pub per_class_per_modality: usize,
    pub d_in: usize,
    /// Scale of the perturbation separating the sketch map from the photo map.
    pub modality_gap: f64,
    /// Standard deviation of per-sample noise around the class image.
    pub intra_class_spread: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_seen: 8,
            per_class_per_modality: 20,
            d_in: 16,
            modality_gap: 0.5,
            intra_class_spread: 0.1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seen < 2 || self.n_seen >= self.n_classes {
            return Err(Error::Config(format!(
                "need 2 <= n_seen < n_classes, got n_seen={}, n_classes={}",
                self.n_seen, self.n_classes
            )));
        }
        if self.per_class_per_modality < 2 {
            return Err(Error::Config(format!(
                "per_class_per_modality must be at least 2, got {}",
                self.per_class_per_modality
            )));
        }
        if self.d_in == 0 {
            return Err(Error::Config("d_in must be at least 1".into()));
        }
        if !(self.modality_gap.is_finite() && self.modality_gap >= 0.0) {
            return Err(Error::Config(format!(
                "modality_gap must be finite and >= 0, got {}",
                self.modality_gap
            )));
        }
        if !(self.intra_class_spread.is_finite() && self.intra_class_spread >= 0.0) {
            return Err(Error::Config(format!(
                "intra_class_spread must be finite and >= 0, got {}",
                self.intra_class_spread
            )));
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Generates the two-modality zero-shot dataset.
///
/// Each class c gets a latent center `z_c ~ N(0, I)`. Photo samples are
/// `A_P z_c + noise` and sketch samples `A_S z_c + noise`, where `A_P` is a
/// random near-isometry (entries `N(0, 1/d_in)`) and
/// `A_S = A_P + modality_gap * dA` for an independent `dA` of the same scale.
/// Noise entries are `N(0, intra_class_spread^2)`.
///
/// Draw order is fixed (centers, `A_P`, `dA`, then per class: photo noise,
/// sketch noise) so a seed pins every byte. Inputs are quantized to f32
/// precision because the interchange format stores 32-bit floats; an
/// in-memory dataset is therefore bit-identical to its file round-trip.
///
/// Classes `0..n_seen` are seen, the rest unseen.
pub fn generate_synthetic_dataset(cfg: &DatasetConfig, seed: RngSeed) -> Result<Dataset> {
    cfg.validate()?;
    let d = cfg.d_in;
    let mut rng = seed.rng();

    let centers: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| normal_vec(&mut rng, d, 1.0))
        .collect();
    let iso_scale = 1.0 / (d as f64).sqrt();
    let a_photo: Vec<Vec<f64>> = (0..d).map(|_| normal_vec(&mut rng, d, iso_scale)).collect();
    let delta: Vec<Vec<f64>> = (0..d).map(|_| normal_vec(&mut rng, d, iso_scale)).collect();
    let a_sketch: Vec<Vec<f64>> = a_photo
        .iter()
        .zip(&delta)
        .map(|(ar, dr)| {
            ar.iter()
                .zip(dr)
                .map(|(&a, &dv)| a + cfg.modality_gap * dv)
                .collect()
        })
        .collect();

    let apply = |mat: &[Vec<f64>], v: &[f64]| -> Vec<f64> {
        mat.iter()
            .map(|row| row.iter().zip(v).map(|(&m, &x)| m * x).sum())
            .collect()
    };

    let mut samples = Vec::with_capacity(cfg.n_classes * cfg.per_class_per_modality * 2);
    for (label, center) in centers.iter().enumerate() {
        let photo_image = apply(&a_photo, center);
        let sketch_image = apply(&a_sketch, center);
        for _ in 0..cfg.per_class_per_modality {
            let noise = normal_vec(&mut rng, d, cfg.intra_class_spread);
            let input: Vec<f64> = photo_image
                .iter()
                .zip(&noise)
                .map(|(&x, &n)| (x + n) as f32 as f64)
                .collect();
            samples.push(LabeledSample {
                input,
                label,
                modality: Modality::Photo,
            });
        }
        for _ in 0..cfg.per_class_per_modality {
            let noise = normal_vec(&mut rng, d, cfg.intra_class_spread);
            let input: Vec<f64> = sketch_image
                .iter()
                .zip(&noise)
                .map(|(&x, &n)| (x + n) as f32 as f64)
                .collect();
            samples.push(LabeledSample {
                input,
                label,
                modality: Modality::Sketch,
            });
        }
    }

    Ok(Dataset {
        samples,
        seen_classes: (0..cfg.n_seen).collect(),
        unseen_classes: (cfg.n_seen..cfg.n_classes).collect(),
        d_in: d,
    })
}

/// Serializes samples to the embedding interchange layout: magic, u32 dim,
/// u64 count, `count x dim` f32 values, count u32 labels, count u8 modality
/// tags.
pub fn embedding_to_bytes(samples: &[LabeledSample]) -> Result<Vec<u8>> {
    if samples.is_empty() {
        return Err(Error::Data("cannot serialize an empty sample set".into()));
    }
    let dim = samples[0].input.len();
    let mut out = Vec::new();
    out.extend_from_slice(EMBEDDING_MAGIC);
    put_u32(&mut out, dim as u32);
    put_u64(&mut out, samples.len() as u64);
    for s in samples {
        if s.input.len() != dim {
            return Err(Error::Dimension(format!(
                "sample dimension {} does not match first sample dimension {dim}",
                s.input.len()
            )));
        }
        put_f32_slice(&mut out, &s.input);
    }
    for s in samples {
        put_u32(&mut out, s.label as u32);
    }
    for s in samples {
        out.push(s.modality.tag());
    }
    Ok(out)
}

pub fn embedding_from_bytes(bytes: &[u8]) -> Result<Vec<LabeledSample>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(EMBEDDING_MAGIC)?;
    let dim = r.read_u32("dim")? as usize;
    let count = r.read_u64("count")? as usize;
    if dim == 0 {
        return Err(Error::Format {
            offset: 8,
            detail: "dim must be at least 1".into(),
        });
    }
    let mut inputs = Vec::with_capacity(count);
    for _ in 0..count {
        inputs.push(r.read_f32_vec(dim, "embedding values")?);
    }
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(r.read_u32("label")? as usize);
    }
    let mut samples = Vec::with_capacity(count);
    for (input, label) in inputs.into_iter().zip(labels) {
        let offset = r.offset();
        let tag = r.read_u8("modality tag")?;
        let modality = Modality::from_tag(tag).map_err(|_| Error::Format {
            offset,
            detail: format!("invalid modality tag {tag}"),
        })?;
        samples.push(LabeledSample {
            input,
            label,
            modality,
        });
    }
    r.finish()?;
    Ok(samples)
}

pub fn write_embedding_file(path: &std::path::Path, samples: &[LabeledSample]) -> Result<()> {
    std::fs::write(path, embedding_to_bytes(samples)?)?;
    Ok(())
}

pub fn read_embedding_file(path: &std::path::Path) -> Result<Vec<LabeledSample>> {
    embedding_from_bytes(&std::fs::read(path)?)
}
