//! One-to-many cluster matching: per-subspace mixtures over the gallery,
//! hard component assignments, and the fused dissimilarity used for ranking.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{put_f32_slice, put_u32, put_u64, ByteReader};
use crate::gmm::{fit_gmm, EmConfig, GmmModel};
use crate::numerics::euclidean_distance;

/// Magic for codebook files.
pub const CODEBOOK_MAGIC: &[u8; 8] = b"SBKACBK1";

/// How a query is scored against a gallery item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// Plain embedding distance only.
    OneToOne,
    /// Embedding distance plus per-subspace distances to the item's
    /// assigned cluster centroids.
    OneToMany,
}

/// Per-subspace mixtures over a fixed gallery plus each gallery item's
/// component assignment in every subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceCodebook {
    subspaces: Vec<GmmModel>,
    /// `assignments[item][m]` is the component of gallery item `item` in
    /// subspace `m`.
    assignments: Vec<Vec<u32>>,
    sub_dim: usize,
    k: usize,
}

impl SubspaceCodebook {
    pub fn m(&self) -> usize {
        self.subspaces.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    /// Full embedding dimension covered by the subspaces.
    pub fn dim(&self) -> usize {
        self.m() * self.sub_dim
    }

    pub fn gallery_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn subspace(&self, m: usize) -> &GmmModel {
        &self.subspaces[m]
    }

    pub fn assignment(&self, item: usize, m: usize) -> u32 {
        self.assignments[item][m]
    }

    pub fn centroid(&self, m: usize, component: usize) -> &[f64] {
        &self.subspaces[m].means[component]
    }
}

fn sub_slices(emb: &[f64], m: usize, sub_dim: usize) -> Vec<&[f64]> {
    (0..m)
        .map(|i| &emb[i * sub_dim..(i + 1) * sub_dim])
        .collect()
}

/// Splits each gallery embedding into `m` contiguous equal-length blocks,
/// fits one `k`-component mixture per block (independently, same config), and
/// hard-assigns every item to its maximal-responsibility component.
pub fn fit_subspace_codebook(
    gallery: &[Vec<f64>],
    m: usize,
    k: usize,
    cfg: &EmConfig,
) -> Result<SubspaceCodebook> {
    if m == 0 {
        return Err(Error::Config("subspace count must be at least 1".into()));
    }
    if gallery.is_empty() {
        return Err(Error::Data(
            "cannot fit a codebook over an empty gallery".into(),
        ));
    }
    let dim = gallery[0].len();
    if !dim.is_multiple_of(m) {
        return Err(Error::Config(format!(
            "embedding dimension {dim} is not divisible by {m} subspaces"
        )));
    }
    let sub_dim = dim / m;
    for (i, e) in gallery.iter().enumerate() {
        if e.len() != dim {
            return Err(Error::Dimension(format!(
                "gallery item {i} has dimension {}, expected {dim}",
                e.len()
            )));
        }
    }

    let subspaces: Vec<GmmModel> = (0..m)
        .into_par_iter()
        .map(|sub| {
            let points: Vec<Vec<f64>> = gallery
                .iter()
                .map(|e| e[sub * sub_dim..(sub + 1) * sub_dim].to_vec())
                .collect();
            fit_gmm(&points, k, cfg)
        })
        .collect::<Result<_>>()?;

    let assignments: Vec<Vec<u32>> = gallery
        .iter()
        .map(|e| {
            sub_slices(e, m, sub_dim)
                .into_iter()
                .zip(&subspaces)
                .map(|(block, model)| model.assign(block) as u32)
                .collect()
        })
        .collect();

    Ok(SubspaceCodebook {
        subspaces,
        assignments,
        sub_dim,
        k,
    })
}

/// Fused dissimilarity: embedding distance plus, per subspace, the distance
/// between the query block and the centroid assigned to the gallery item.
pub fn fused_dissimilarity(
    query: &[f64],
    gallery_emb: &[f64],
    gallery_index: usize,
    codebook: &SubspaceCodebook,
) -> Result<f64> {
    if gallery_index >= codebook.gallery_count() {
        return Err(Error::Index(format!(
            "gallery index {gallery_index} out of range for {} items",
            codebook.gallery_count()
        )));
    }
    if query.len() != codebook.dim() || gallery_emb.len() != codebook.dim() {
        return Err(Error::Dimension(format!(
            "query ({}) and gallery ({}) must match the codebook dimension {}",
            query.len(),
            gallery_emb.len(),
            codebook.dim()
        )));
    }
    let mut d = euclidean_distance(query, gallery_emb)?;
    for (m, block) in sub_slices(query, codebook.m(), codebook.sub_dim())
        .into_iter()
        .enumerate()
    {
        let component = codebook.assignment(gallery_index, m) as usize;
        d += euclidean_distance(block, codebook.centroid(m, component))?;
    }
    Ok(d)
}

/// Ranks the whole gallery by ascending dissimilarity; exact ties resolve to
/// the lower gallery index.
pub fn retrieve(
    query: &[f64],
    gallery: &[Vec<f64>],
    codebook: &SubspaceCodebook,
) -> Result<Vec<usize>> {
    rank_gallery(query, gallery, Some(codebook), MatchMode::OneToMany)
}

/// Ranking under either matching mode; `OneToOne` needs no codebook.
pub fn rank_gallery(
    query: &[f64],
    gallery: &[Vec<f64>],
    codebook: Option<&SubspaceCodebook>,
    mode: MatchMode,
) -> Result<Vec<usize>> {
    if gallery.is_empty() {
        return Err(Error::Data("cannot rank an empty gallery".into()));
    }
    let scores: Vec<f64> = match mode {
        MatchMode::OneToOne => gallery
            .iter()
            .map(|g| euclidean_distance(query, g))
            .collect::<Result<_>>()?,
        MatchMode::OneToMany => {
            let cb = codebook
                .ok_or_else(|| Error::Config("one-to-many matching requires a codebook".into()))?;
            if cb.gallery_count() != gallery.len() {
                return Err(Error::Data(format!(
                    "codebook covers {} items but the gallery has {}",
                    cb.gallery_count(),
                    gallery.len()
                )));
            }
            gallery
                .iter()
                .enumerate()
                .map(|(j, g)| fused_dissimilarity(query, g, j, cb))
                .collect::<Result<_>>()?
        }
    };
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    Ok(order)
}

/// Serializes to the codebook layout: magic, u32 `m`, u32 `k`, u32 sub_dim,
/// u64 gallery count; per subspace the weights, means and variances as f32;
/// then per item `m` u32 assignments.
pub fn codebook_to_bytes(codebook: &SubspaceCodebook) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CODEBOOK_MAGIC);
    put_u32(&mut out, codebook.m() as u32);
    put_u32(&mut out, codebook.k() as u32);
    put_u32(&mut out, codebook.sub_dim() as u32);
    put_u64(&mut out, codebook.gallery_count() as u64);
    for sub in &codebook.subspaces {
        put_f32_slice(&mut out, &sub.weights);
        for mean in &sub.means {
            put_f32_slice(&mut out, mean);
        }
        for var in &sub.variances {
            put_f32_slice(&mut out, var);
        }
    }
    for item in &codebook.assignments {
        for &a in item {
            put_u32(&mut out, a);
        }
    }
    out
}

/// Reads a codebook; the log-likelihood trace is a fitting diagnostic and is
/// not stored, so it comes back empty.
pub fn codebook_from_bytes(bytes: &[u8]) -> Result<SubspaceCodebook> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CODEBOOK_MAGIC)?;
    let m = r.read_u32("m")? as usize;
    let k = r.read_u32("k")? as usize;
    let sub_dim = r.read_u32("sub_dim")? as usize;
    let count = r.read_u64("gallery_count")? as usize;
    if m == 0 || k == 0 || sub_dim == 0 {
        return Err(Error::Format {
            offset: 8,
            detail: format!("m ({m}), k ({k}) and sub_dim ({sub_dim}) must all be at least 1"),
        });
    }
    let mut subspaces = Vec::with_capacity(m);
    for _ in 0..m {
        let weights = r.read_f32_vec(k, "weights")?;
        let mut means = Vec::with_capacity(k);
        for _ in 0..k {
            means.push(r.read_f32_vec(sub_dim, "mean")?);
        }
        let mut variances = Vec::with_capacity(k);
        for _ in 0..k {
            variances.push(r.read_f32_vec(sub_dim, "variance")?);
        }
        subspaces.push(GmmModel {
            weights,
            means,
            variances,
            log_likelihood_trace: Vec::new(),
        });
    }
    let mut assignments = Vec::with_capacity(count);
    for _ in 0..count {
        let mut item = Vec::with_capacity(m);
        for _ in 0..m {
            let offset = r.offset();
            let a = r.read_u32("assignment")?;
            if a as usize >= k {
                return Err(Error::Format {
                    offset,
                    detail: format!("assignment {a} out of range for {k} components"),
                });
            }
            item.push(a);
        }
        assignments.push(item);
    }
    r.finish()?;
    Ok(SubspaceCodebook {
        subspaces,
        assignments,
        sub_dim,
        k,
    })
}

pub fn save_codebook(codebook: &SubspaceCodebook, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, codebook_to_bytes(codebook))?;
    Ok(())
}

pub fn load_codebook(path: &std::path::Path) -> Result<SubspaceCodebook> {
    codebook_from_bytes(&std::fs::read(path)?)
}
