//! The four training loss terms and their gradients: hard-label
//! classification, inter-modality alignment against a fixed reference
//! distribution, soft-label construction from source-head logits plus a
//! semantic prior, and the bidirectional knowledge-alignment cross-entropy.
//!
//! Soft labels are plain probability vectors; a model receiving them never
//! propagates gradients back into whichever model produced them.

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::model::ForwardCache;
use crate::numerics::{
    ensure_finite, kl_divergence, log_softmax, seeded_gaussian_vector, softmax, Distribution,
    RngSeed, DEFAULT_KL_FLOOR,
};

/// Per-training-class semantic similarity vectors over the source-label
/// space: `k_train` rows of `k_src` values.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPrior {
    rows: Vec<Vec<f64>>,
    k_src: usize,
}

impl SemanticPrior {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("semantic prior needs at least one row".into()));
        }
        let k_src = rows[0].len();
        if k_src == 0 {
            return Err(Error::Dimension(
                "semantic prior rows must be non-empty".into(),
            ));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k_src {
                return Err(Error::Dimension(format!(
                    "semantic prior row {i} has {} entries, expected {k_src}",
                    row.len()
                )));
            }
            ensure_finite(row, "semantic prior row")?;
        }
        Ok(Self { rows, k_src })
    }

    /// All-zero prior: soft labels reduce to plain source-head softmax.
    pub fn zero(k_train: usize, k_src: usize) -> Result<Self> {
        Self::new(vec![vec![0.0; k_src]; k_train])
    }

    pub fn k_train(&self) -> usize {
        self.rows.len()
    }

    pub fn k_src(&self) -> usize {
        self.k_src
    }

    pub fn row(&self, class: usize) -> Result<&[f64]> {
        self.rows.get(class).map(Vec::as_slice).ok_or(Error::Label {
            label: class,
            classes: self.rows.len(),
        })
    }

    /// Parses the text format: one row per training class, whitespace-
    /// separated decimal values.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| {
                        Error::Data(format!(
                            "semantic prior line {}: cannot parse {tok:?} as a number",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// A labeled two-modality mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub modalities: Vec<Modality>,
}

impl Batch {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        modalities: Vec<Modality>,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Data("batch must be non-empty".into()));
        }
        if inputs.len() != labels.len() || inputs.len() != modalities.len() {
            return Err(Error::Dimension(format!(
                "batch field lengths disagree: {} inputs, {} labels, {} modalities",
                inputs.len(),
                labels.len(),
                modalities.len()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            modalities,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// The fixed distribution both modalities are pulled towards.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDistribution(Distribution);

impl ReferenceDistribution {
    pub fn probs(&self) -> &Distribution {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Builds the run-wide reference: softmax of one seeded standard-Gaussian
/// draw. Drawn once per training run.
pub fn build_reference(seed: RngSeed, dim: usize) -> Result<ReferenceDistribution> {
    let g = seeded_gaussian_vector(seed, dim)?;
    Ok(ReferenceDistribution(softmax(&g)?))
}

/// Loss values of one student step. `total = l_cls + l_ka + lambda_ma * l_ma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_ma: f64,
    pub l_ka: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_cls: f64, l_ma: f64, l_ka: f64, lambda_ma: f64) -> Self {
        Self {
            l_cls,
            l_ma,
            l_ka,
            total: l_cls + l_ka + lambda_ma * l_ma,
        }
    }
}

/// Sum of hard-label cross-entropies over the batch.
///
/// Returns the loss and, per sample, the gradient wrt the logit vector:
/// `softmax(f) - onehot(y)`.
pub fn classification_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.is_empty() {
        return Err(Error::Data(
            "classification loss over an empty batch".into(),
        ));
    }
    if logits.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit vectors but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (f, &y) in logits.iter().zip(labels) {
        if y >= f.len() {
            return Err(Error::Label {
                label: y,
                classes: f.len(),
            });
        }
        let log_probs = log_softmax(f)?;
        value -= log_probs[y];
        let mut g: Vec<f64> = log_probs.iter().map(|&l| l.exp()).collect();
        g[y] -= 1.0;
        grads.push(g);
    }
    Ok((value, grads))
}

/// KL of each softmax-normalized embedding against the reference, summed over
/// the sketch batch and the photo batch.
///
/// Returns the loss and the gradient wrt each raw embedding (sketch gradients
/// first, then photo), propagated through the softmax normalization.
#[allow(clippy::type_complexity)]
pub fn modality_alignment_loss(
    sketch_embs: &[Vec<f64>],
    photo_embs: &[Vec<f64>],
    reference: &ReferenceDistribution,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if sketch_embs.is_empty() || photo_embs.is_empty() {
        return Err(Error::Data(format!(
            "modality alignment needs both modalities, got {} sketches and {} photos",
            sketch_embs.len(),
            photo_embs.len()
        )));
    }
    let mut value = 0.0;
    let mut per_side = |embs: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        let mut grads = Vec::with_capacity(embs.len());
        for e in embs {
            if e.len() != reference.dim() {
                return Err(Error::Dimension(format!(
                    "embedding dimension {} does not match reference dimension {}",
                    e.len(),
                    reference.dim()
                )));
            }
            let p = softmax(e)?;
            let kl = kl_divergence(&p, reference.probs())?;
            value += kl;
            // d/de_j of KL(softmax(e) || r) is p_j (ln p_j - ln r_j - KL).
            let grad: Vec<f64> = p
                .as_slice()
                .iter()
                .zip(reference.probs().as_slice())
                .map(|(&pj, &rj)| {
                    if pj <= 0.0 {
                        0.0
                    } else {
                        pj * (pj.ln() - rj.max(DEFAULT_KL_FLOOR).ln() - kl)
                    }
                })
                .collect();
            grads.push(grad);
        }
        Ok(grads)
    };
    let sketch_grads = per_side(sketch_embs)?;
    let photo_grads = per_side(photo_embs)?;
    Ok((value, sketch_grads, photo_grads))
}

/// Soft label `softmax(f_src + lambda_sem * a)`.
pub fn soft_label(f_src: &[f64], prior_row: &[f64], lambda_sem: f64) -> Result<Distribution> {
    if f_src.len() != prior_row.len() {
        return Err(Error::Dimension(format!(
            "source logits ({}) and prior row ({}) dimensions differ",
            f_src.len(),
            prior_row.len()
        )));
    }
    let shifted: Vec<f64> = f_src
        .iter()
        .zip(prior_row)
        .map(|(&f, &a)| f + lambda_sem * a)
        .collect();
    softmax(&shifted)
}

/// Cross-entropy of the receiving model's source-head softmax against the
/// provided soft labels: `-sum_i sum_k g_ik ln softmax(z_i)_k`.
///
/// The soft labels are constants; the returned gradients are wrt the
/// receiver's own logits only: `softmax(z_i) - g_i`.
pub fn knowledge_alignment_loss(
    soft_labels: &[Distribution],
    own_logits: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if soft_labels.len() != own_logits.len() {
        return Err(Error::Dimension(format!(
            "{} soft labels but {} logit vectors",
            soft_labels.len(),
            own_logits.len()
        )));
    }
    if soft_labels.is_empty() {
        return Err(Error::Data(
            "knowledge alignment over an empty batch".into(),
        ));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(own_logits.len());
    for (g, z) in soft_labels.iter().zip(own_logits) {
        if g.len() != z.len() {
            return Err(Error::Dimension(format!(
                "soft label dimension {} does not match logits dimension {}",
                g.len(),
                z.len()
            )));
        }
        let log_probs = log_softmax(z)?;
        value -= g
            .as_slice()
            .iter()
            .zip(&log_probs)
            .map(|(&gi, &l)| gi * l)
            .sum::<f64>();
        let grad: Vec<f64> = log_probs
            .iter()
            .zip(g.as_slice())
            .map(|(&l, &gi)| l.exp() - gi)
            .collect();
        grads.push(grad);
    }
    Ok((value, grads))
}

/// Loss breakdown plus per-sample upstream gradients for one student step.
///
/// Feeding `d_embedding[i]`, `d_task_logits[i]`, `d_src_logits[i]` into the
/// model backward pass and summing over the batch yields the gradient of
/// `breakdown.total`.
#[derive(Debug, Clone)]
pub struct StudentEval {
    pub breakdown: LossBreakdown,
    pub d_embedding: Vec<Vec<f64>>,
    pub d_task_logits: Vec<Vec<f64>>,
    pub d_src_logits: Vec<Vec<f64>>,
}

/// Combines the three student loss terms over one batch of forward caches.
pub fn student_objective(
    caches: &[ForwardCache],
    teacher_soft: &[Distribution],
    batch: &Batch,
    reference: &ReferenceDistribution,
    lambda_ma: f64,
) -> Result<StudentEval> {
    if caches.len() != batch.len() || teacher_soft.len() != batch.len() {
        return Err(Error::Dimension(format!(
            "{} caches and {} soft labels for a batch of {}",
            caches.len(),
            teacher_soft.len(),
            batch.len()
        )));
    }

    let task_logits: Vec<Vec<f64>> = caches.iter().map(|c| c.task_logits.clone()).collect();
    let (l_cls, d_task_logits) = classification_loss(&task_logits, &batch.labels)?;

    let src_logits: Vec<Vec<f64>> = caches.iter().map(|c| c.src_logits.clone()).collect();
    let (l_ka, d_src_logits) = knowledge_alignment_loss(teacher_soft, &src_logits)?;

    let mut sketch_idx = Vec::new();
    let mut photo_idx = Vec::new();
    for (i, m) in batch.modalities.iter().enumerate() {
        match m {
            Modality::Sketch => sketch_idx.push(i),
            Modality::Photo => photo_idx.push(i),
        }
    }
    let sketch_embs: Vec<Vec<f64>> = sketch_idx
        .iter()
        .map(|&i| caches[i].embedding.clone())
        .collect();
    let photo_embs: Vec<Vec<f64>> = photo_idx
        .iter()
        .map(|&i| caches[i].embedding.clone())
        .collect();
    let (l_ma, sketch_grads, photo_grads) =
        modality_alignment_loss(&sketch_embs, &photo_embs, reference)?;

    let d_emb_dim = caches[0].embedding.len();
    let mut d_embedding = vec![vec![0.0; d_emb_dim]; batch.len()];
    for (&i, g) in sketch_idx.iter().zip(&sketch_grads) {
        for (dst, &gv) in d_embedding[i].iter_mut().zip(g) {
            *dst = lambda_ma * gv;
        }
    }
    for (&i, g) in photo_idx.iter().zip(&photo_grads) {
        for (dst, &gv) in d_embedding[i].iter_mut().zip(g) {
            *dst = lambda_ma * gv;
        }
    }

    Ok(StudentEval {
        breakdown: LossBreakdown::new(l_cls, l_ma, l_ka, lambda_ma),
        d_embedding,
        d_task_logits,
        d_src_logits,
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params, ModelDims, ModelParams};
    use crate::numerics::{finite_diff_grad, relative_error, seeded_gaussian_vector};

    fn randv(seed: u64, dim: usize) -> Vec<f64> {
        seeded_gaussian_vector(RngSeed(seed), dim).unwrap()
    }

    #[test]
    fn classification_examples() {
        let (near_perfect, _) = classification_loss(&[vec![10.0, -10.0]], &[0]).unwrap();
        assert!(near_perfect <= 1e-4);
        let (uniform, _) = classification_loss(&[vec![0.0; 4]], &[2]).unwrap();
        assert!((uniform - 4.0f64.ln()).abs() < 1e-12);
        assert!(matches!(
            classification_loss(&[vec![0.0; 4]], &[4]),
            Err(Error::Label { .. })
        ));
    }

    #[test]
    fn classification_gradient_matches_finite_differences() {
        let logits = vec![randv(1, 5), randv(2, 5), randv(3, 5)];
        let labels = vec![0, 3, 2];
        let (_, grads) = classification_loss(&logits, &labels).unwrap();
        for i in 0..logits.len() {
            let numeric = finite_diff_grad(
                |z| {
                    let mut all = logits.clone();
                    all[i] = z.to_vec();
                    classification_loss(&all, &labels).unwrap().0
                },
                &logits[i],
                1e-5,
            )
            .unwrap();
            for (a, n) in grads[i].iter().zip(&numeric) {
                assert!(relative_error(*a, *n) < 1e-4, "analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn reference_is_seeded_softmax_of_gaussian() {
        let r = build_reference(RngSeed(7), 4).unwrap();
        assert!((r.probs().as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(r, build_reference(RngSeed(7), 4).unwrap());
        let recomputed = softmax(&seeded_gaussian_vector(RngSeed(7), 4).unwrap()).unwrap();
        assert_eq!(r.probs(), &recomputed);
    }

    #[test]
    fn alignment_loss_zero_at_reference_and_nonnegative() {
        let dim = 5;
        let g = seeded_gaussian_vector(RngSeed(11), dim).unwrap();
        let reference = build_reference(RngSeed(11), dim).unwrap();
        let (value, _, _) = modality_alignment_loss(
            &[g.clone(), g.clone()],
            std::slice::from_ref(&g),
            &reference,
        )
        .unwrap();
        assert!(value.abs() < 1e-9, "value {value}");

        let (v2, _, _) =
            modality_alignment_loss(&[randv(1, dim)], &[randv(2, dim)], &reference).unwrap();
        assert!(v2 >= 0.0);
        assert!(matches!(
            modality_alignment_loss(&[], &[randv(2, dim)], &reference),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            modality_alignment_loss(&[randv(1, 3)], &[randv(2, dim)], &reference),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        assert!(matches!(
            soft_label(&[1.0, 2.0], &[0.0], 0.1),
            Err(Error::Dimension(_))
        ));
        let g = softmax(&[0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            knowledge_alignment_loss(&[g], &[vec![0.0; 4]]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            classification_loss(&[vec![0.0; 3]], &[0, 1]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn alignment_gradients_match_finite_differences() {
        let dim = 5;
        let reference = build_reference(RngSeed(13), dim).unwrap();
        let sketches: Vec<Vec<f64>> = (0..3).map(|i| randv(20 + i, dim)).collect();
        let photos: Vec<Vec<f64>> = (0..2).map(|i| randv(30 + i, dim)).collect();
        let (_, sketch_grads, photo_grads) =
            modality_alignment_loss(&sketches, &photos, &reference).unwrap();

        for (i, grad) in sketch_grads.iter().enumerate() {
            let numeric = finite_diff_grad(
                |e| {
                    let mut s = sketches.clone();
                    s[i] = e.to_vec();
                    modality_alignment_loss(&s, &photos, &reference).unwrap().0
                },
                &sketches[i],
                1e-5,
            )
            .unwrap();
            for (a, n) in grad.iter().zip(&numeric) {
                assert!(relative_error(*a, *n) < 1e-4, "sketch {i}: {a} vs {n}");
            }
        }
        for (i, grad) in photo_grads.iter().enumerate() {
            let numeric = finite_diff_grad(
                |e| {
                    let mut p = photos.clone();
                    p[i] = e.to_vec();
                    modality_alignment_loss(&sketches, &p, &reference)
                        .unwrap()
                        .0
                },
                &photos[i],
                1e-5,
            )
            .unwrap();
            for (a, n) in grad.iter().zip(&numeric) {
                assert!(relative_error(*a, *n) < 1e-4, "photo {i}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn soft_label_examples() {
        let f = randv(40, 6);
        let a = randv(41, 6);
        let plain = softmax(&f).unwrap();
        assert_eq!(soft_label(&f, &a, 0.0).unwrap(), plain);
        assert_eq!(soft_label(&f, &[0.0; 6], 0.7).unwrap(), plain);
        let g = soft_label(&[1.0, 0.0], &[0.0, 10.0], 0.1).unwrap();
        assert!((g.as_slice()[0] - 0.5).abs() < 1e-12);
        assert!((g.as_slice()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn knowledge_alignment_self_consistency_and_agreement() {
        let z = randv(50, 7);
        let g = softmax(&z).unwrap();
        let (value, grads) =
            knowledge_alignment_loss(std::slice::from_ref(&g), std::slice::from_ref(&z)).unwrap();
        let entropy: f64 = -g
            .as_slice()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>();
        assert!((value - entropy).abs() < 1e-12);
        assert!(grads[0].iter().all(|&x| x.abs() < 1e-12));

        let mut one_hot = vec![0.0; 4];
        one_hot[2] = 1.0;
        let peaked = vec![-10.0, -10.0, 10.0, -10.0];
        let (v, _) =
            knowledge_alignment_loss(&[Distribution::new(one_hot).unwrap()], &[peaked]).unwrap();
        assert!(v <= 1e-4);
    }

    #[test]
    fn knowledge_alignment_gradient_matches_finite_differences() {
        let soft: Vec<Distribution> = (0..3)
            .map(|i| softmax(&randv(60 + i, 6)).unwrap())
            .collect();
        let logits: Vec<Vec<f64>> = (0..3).map(|i| randv(70 + i, 6)).collect();
        let (_, grads) = knowledge_alignment_loss(&soft, &logits).unwrap();
        for i in 0..3 {
            let numeric = finite_diff_grad(
                |z| {
                    let mut all = logits.clone();
                    all[i] = z.to_vec();
                    knowledge_alignment_loss(&soft, &all).unwrap().0
                },
                &logits[i],
                1e-5,
            )
            .unwrap();
            for (a, n) in grads[i].iter().zip(&numeric) {
                assert!(relative_error(*a, *n) < 1e-4);
            }
        }
    }

    #[test]
    fn cross_entropy_dominates_entropy() {
        for i in 0..20u64 {
            let g = softmax(&randv(80 + i, 5)).unwrap();
            let z = randv(120 + i, 5);
            let (value, _) = knowledge_alignment_loss(std::slice::from_ref(&g), &[z]).unwrap();
            let entropy: f64 = -g
                .as_slice()
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>();
            assert!(
                value >= entropy - 1e-9,
                "cross-entropy {value} < entropy {entropy}"
            );
        }
    }

    #[test]
    fn soft_labels_are_detached_constants() {
        let z = randv(90, 5);
        let g = softmax(&randv(91, 5)).unwrap();
        let (_, grads_a) =
            knowledge_alignment_loss(std::slice::from_ref(&g), std::slice::from_ref(&z)).unwrap();
        // Same label values again: the receiver's gradients depend only on
        // the label values, never on how the provider produced them.
        let g_detached = Distribution::new(g.as_slice().to_vec()).unwrap();
        let (_, grads_b) = knowledge_alignment_loss(&[g_detached], &[z]).unwrap();
        assert_eq!(grads_a, grads_b);
    }

    fn toy_setup(
        seed: u64,
    ) -> (
        ModelParams,
        Batch,
        Vec<Distribution>,
        ReferenceDistribution,
        f64,
    ) {
        let dims = ModelDims {
            d_in: 4,
            hidden: 3,
            d_emb: 3,
            k_train: 2,
            k_src: 4,
        };
        let params = init_params(dims, RngSeed(seed)).unwrap();
        let batch = Batch::new(
            vec![randv(seed + 1, 4), randv(seed + 2, 4), randv(seed + 3, 4)],
            vec![0, 1, 1],
            vec![Modality::Sketch, Modality::Photo, Modality::Sketch],
        )
        .unwrap();
        let soft: Vec<Distribution> = (0..3)
            .map(|i| softmax(&randv(seed + 10 + i, 4)).unwrap())
            .collect();
        let reference = build_reference(RngSeed(seed + 20), 3).unwrap();
        (params, batch, soft, reference, 0.37)
    }

    #[test]
    fn student_objective_is_additive() {
        let (params, batch, soft, reference, lambda_ma) = toy_setup(700);
        let caches: Vec<ForwardCache> = batch
            .inputs
            .iter()
            .map(|x| forward(&params, x).unwrap())
            .collect();
        let eval = student_objective(&caches, &soft, &batch, &reference, lambda_ma).unwrap();

        let b = eval.breakdown;
        assert!((b.total - (b.l_cls + b.l_ka + lambda_ma * b.l_ma)).abs() < 1e-12);

        // Recompute each term in isolation.
        let task: Vec<Vec<f64>> = caches.iter().map(|c| c.task_logits.clone()).collect();
        let (l_cls, _) = classification_loss(&task, &batch.labels).unwrap();
        assert!((l_cls - b.l_cls).abs() < 1e-12);
        let src: Vec<Vec<f64>> = caches.iter().map(|c| c.src_logits.clone()).collect();
        let (l_ka, _) = knowledge_alignment_loss(&soft, &src).unwrap();
        assert!((l_ka - b.l_ka).abs() < 1e-12);

        let zero = student_objective(&caches, &soft, &batch, &reference, 0.0).unwrap();
        assert!((zero.breakdown.total - (b.l_cls + b.l_ka)).abs() < 1e-12);
    }

    #[test]
    fn student_objective_gradient_matches_finite_differences() {
        let (params, batch, soft, reference, lambda_ma) = toy_setup(800);
        let caches: Vec<ForwardCache> = batch
            .inputs
            .iter()
            .map(|x| forward(&params, x).unwrap())
            .collect();
        let eval = student_objective(&caches, &soft, &batch, &reference, lambda_ma).unwrap();

        let mut analytic = ModelParams::zeros(params.dims).unwrap();
        for i in 0..batch.len() {
            let g = crate::model::backward(
                &params,
                &caches[i],
                &eval.d_embedding[i],
                &eval.d_task_logits[i],
                &eval.d_src_logits[i],
            )
            .unwrap();
            analytic.add_assign(&g);
        }

        let flat: Vec<f64> = params
            .blocks()
            .iter()
            .flat_map(|b| b.iter().copied())
            .collect();
        let total = |theta: &[f64]| {
            let mut p = ModelParams::zeros(params.dims).unwrap();
            let mut off = 0;
            for block in p.blocks_mut() {
                block.copy_from_slice(&theta[off..off + block.len()]);
                off += block.len();
            }
            let caches: Vec<ForwardCache> = batch
                .inputs
                .iter()
                .map(|x| forward(&p, x).unwrap())
                .collect();
            student_objective(&caches, &soft, &batch, &reference, lambda_ma)
                .unwrap()
                .breakdown
                .total
        };
        let numeric = finite_diff_grad(total, &flat, 1e-5).unwrap();
        let analytic_flat: Vec<f64> = analytic
            .blocks()
            .iter()
            .flat_map(|b| b.iter().copied())
            .collect();
        for (i, (&a, &n)) in analytic_flat.iter().zip(&numeric).enumerate() {
            assert!(
                relative_error(a, n) < 1e-4,
                "entry {i}: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn prior_text_round_trip() {
        let prior =
            SemanticPrior::new(vec![vec![0.5, -1.25, 3.0], vec![0.0, 2.0, -0.125]]).unwrap();
        let text = prior.to_text();
        let back = SemanticPrior::from_text(&text).unwrap();
        assert_eq!(back, prior);
        assert_eq!(back.to_text(), text);
        assert!(SemanticPrior::from_text("1 2\n3\n").is_err());
        assert!(SemanticPrior::from_text("1 x\n").is_err());
    }
}
