//! The alternating teacher/student training loop: teacher pretraining on
//! photo samples, a warm-up window during which only the student updates,
//! then mutual updates driven by each other's soft labels.
//!
//! Within a step every quantity is computed from the parameter values at the
//! start of that step; both models are updated only afterwards, so neither
//! update sees the other's in-step change.

use crate::data::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::losses::{
    build_reference, classification_loss, knowledge_alignment_loss, soft_label, student_objective,
    Batch, SemanticPrior,
};
use crate::model::{
    adam_step, backward, cosine_lr, forward, init_params, AdamState, ForwardCache, ModelDims,
    ModelParams,
};
use crate::numerics::{Distribution, RngSeed};

use rand::seq::SliceRandom;

/// Tags for deriving sub-streams from the configured seeds.
mod seed_tags {
    pub const PRETRAIN_SHUFFLE: u64 = 0x70;
    pub const TRAIN_SHUFFLE: u64 = 0x71;
}

/// Seeds controlling a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSeeds {
    /// Parameter initialization.
    pub init: RngSeed,
    /// Dataset generation and batch shuffling.
    pub data: RngSeed,
    /// The fixed reference distribution for modality alignment.
    pub reference: RngSeed,
}

impl TrainSeeds {
    pub fn new(init: u64, data: u64, reference: u64) -> Self {
        Self {
            init: RngSeed(init),
            data: RngSeed(data),
            reference: RngSeed(reference),
        }
    }

    /// Re-derives every seed for repetition `rep`; used by the ablation and
    /// sweep harnesses.
    pub fn for_repetition(&self, rep: u64) -> Self {
        Self {
            init: self.init.derive(rep.wrapping_add(1)),
            data: self.data.derive(rep.wrapping_add(1)),
            reference: self.reference.derive(rep.wrapping_add(1)),
        }
    }
}

/// Hyperparameters of the alternating training procedure.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Weight of the modality-alignment term in the student objective.
    pub lambda_ma: f64,
    /// Weight of the semantic prior inside soft labels.
    pub lambda_sem: f64,
    pub lr_student_initial: f64,
    pub lr_student_final: f64,
    pub lr_teacher_initial: f64,
    pub lr_teacher_final: f64,
    /// Epochs during which the teacher stays frozen.
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    /// Epochs of photo-only source-head pretraining for the teacher.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub seeds: TrainSeeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ma: 0.1,
            lambda_sem: 0.1,
            lr_student_initial: 1e-4,
            lr_student_final: 1e-7,
            lr_teacher_initial: 1e-4,
            lr_teacher_final: 1e-7,
            warmup_epochs: 10,
            total_epochs: 20,
            batch_size: 32,
            pretrain_epochs: 40,
            pretrain_lr: 1e-2,
            seeds: TrainSeeds::new(1, 2, 3),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) cannot exceed total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        for (name, lr) in [
            ("lambda_ma", self.lambda_ma),
            ("lambda_sem", self.lambda_sem),
            ("lr_student_initial", self.lr_student_initial),
            ("lr_student_final", self.lr_student_final),
            ("lr_teacher_initial", self.lr_teacher_initial),
            ("lr_teacher_final", self.lr_teacher_final),
            ("pretrain_lr", self.pretrain_lr),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {lr}"
                )));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// One epoch's accumulated loss values (sums over all batch steps), the
/// learning rates in effect, and whether the teacher was frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_ma: f64,
    pub l_ka_s: f64,
    pub l_ka_t: f64,
    pub lr_student: f64,
    pub lr_teacher: f64,
    pub teacher_frozen: bool,
}

/// Per-epoch records plus a checksum witness of the teacher parameters at
/// the end of each epoch (in-memory diagnostic, not serialized).
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub teacher_checksums: Vec<u64>,
}

impl TrainHistory {
    /// Tab-separated report, one record per epoch.
    pub fn to_report(&self) -> String {
        let mut out = String::from(
            "epoch\tl_cls\tl_ma\tl_ka_s\tl_ka_t\tlr_student\tlr_teacher\tteacher_frozen\n",
        );
        for r in &self.epochs {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.epoch,
                r.l_cls,
                r.l_ma,
                r.l_ka_s,
                r.l_ka_t,
                r.lr_student,
                r.lr_teacher,
                r.teacher_frozen
            ));
        }
        out
    }

    pub fn from_report(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty history report".into()))?;
        if header != "epoch\tl_cls\tl_ma\tl_ka_s\tl_ka_t\tlr_student\tlr_teacher\tteacher_frozen" {
            return Err(Error::Data(format!(
                "unexpected history header: {header:?}"
            )));
        }
        let mut epochs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 8 {
                return Err(Error::Data(format!(
                    "history line {}: expected 8 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse_f = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::Data(format!("history line {}: bad number {s:?}", lineno + 2))
                })
            };
            epochs.push(EpochRecord {
                epoch: fields[0].parse().map_err(|_| {
                    Error::Data(format!(
                        "history line {}: bad epoch {:?}",
                        lineno + 2,
                        fields[0]
                    ))
                })?,
                l_cls: parse_f(fields[1])?,
                l_ma: parse_f(fields[2])?,
                l_ka_s: parse_f(fields[3])?,
                l_ka_t: parse_f(fields[4])?,
                lr_student: parse_f(fields[5])?,
                lr_teacher: parse_f(fields[6])?,
                teacher_frozen: match fields[7] {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::Data(format!(
                            "history line {}: bad flag {other:?}",
                            lineno + 2
                        )))
                    }
                },
            });
        }
        Ok(Self {
            epochs,
            teacher_checksums: Vec::new(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_report())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_report(&std::fs::read_to_string(path)?)
    }
}

/// Deals shuffled per-modality index lists round-robin into batches so every
/// batch holds both modalities (possible whenever both lists have at least
/// `ceil(total / batch_size)` entries; otherwise the batch count shrinks to
/// the smaller modality count).
fn stratified_batches(
    sketch_idx: &mut [usize],
    photo_idx: &mut [usize],
    batch_size: usize,
    shuffle_seed: RngSeed,
) -> Vec<Vec<usize>> {
    let mut rng = shuffle_seed.rng();
    sketch_idx.shuffle(&mut rng);
    photo_idx.shuffle(&mut rng);
    let total = sketch_idx.len() + photo_idx.len();
    let wanted = total.div_ceil(batch_size).max(1);
    let n_batches = wanted.min(sketch_idx.len()).min(photo_idx.len()).max(1);
    let mut batches = vec![Vec::new(); n_batches];
    for (i, &s) in sketch_idx.iter().enumerate() {
        batches[i % n_batches].push(s);
    }
    for (i, &p) in photo_idx.iter().enumerate() {
        batches[i % n_batches].push(p);
    }
    batches
}

fn batch_from_indices(samples: &[&crate::data::LabeledSample], indices: &[usize]) -> Result<Batch> {
    Batch::new(
        indices.iter().map(|&i| samples[i].input.clone()).collect(),
        indices.iter().map(|&i| samples[i].label).collect(),
        indices.iter().map(|&i| samples[i].modality).collect(),
    )
}

/// Fraction of samples whose source-head argmax equals their label.
pub fn source_head_accuracy(
    params: &ModelParams,
    samples: &[&crate::data::LabeledSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("accuracy over an empty sample set".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        let cache = forward(params, &s.input)?;
        let mut best = 0;
        for (i, &l) in cache.src_logits.iter().enumerate() {
            if l > cache.src_logits[best] {
                best = i;
            }
        }
        if best == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Pretrains a fresh teacher on photo-modality seen-class samples, training
/// the source head (and the encoder under it) with hard-label cross-entropy.
/// Class label `c` is mapped to source label `c`, which requires
/// `k_src >=` the number of seen classes.
pub fn pretrain_teacher(
    dataset: &Dataset,
    dims: ModelDims,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    cfg.validate()?;
    dims.validate()?;
    if dims.d_in != dataset.d_in {
        return Err(Error::Config(format!(
            "model d_in {} does not match dataset dimension {}",
            dims.d_in, dataset.d_in
        )));
    }
    let seen = dataset.seen_samples();
    let photos: Vec<&crate::data::LabeledSample> = seen
        .iter()
        .filter(|s| s.modality == Modality::Photo)
        .copied()
        .collect();
    if photos.is_empty() {
        return Err(Error::Data(
            "teacher pretraining needs photo samples of seen classes".into(),
        ));
    }
    for s in &photos {
        if s.label >= dims.k_src {
            return Err(Error::Config(format!(
                "seen class {} cannot map into a source space of {} labels",
                s.label, dims.k_src
            )));
        }
    }

    let mut params = init_params(dims, cfg.seeds.init)?;
    let mut state = AdamState::new(dims)?;
    for epoch in 0..cfg.pretrain_epochs {
        let mut order: Vec<usize> = (0..photos.len()).collect();
        let mut rng = cfg
            .seeds
            .data
            .derive(seed_tags::PRETRAIN_SHUFFLE)
            .derive(epoch as u64)
            .rng();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = ModelParams::zeros(dims)?;
            let mut logits = Vec::with_capacity(chunk.len());
            let mut caches = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let cache = forward(&params, &photos[i].input)?;
                logits.push(cache.src_logits.clone());
                caches.push(cache);
                labels.push(photos[i].label);
            }
            let (_, d_src) = classification_loss(&logits, &labels)?;
            let zero_emb = vec![0.0; dims.d_emb];
            let zero_task = vec![0.0; dims.k_train];
            for (cache, d) in caches.iter().zip(&d_src) {
                grads.add_assign(&backward(&params, cache, &zero_emb, &zero_task, d)?);
            }
            adam_step(&mut params, &grads, &mut state, cfg.pretrain_lr)?;
        }
    }
    Ok(params)
}

/// Soft labels for a batch from one model's cached source logits.
fn batch_soft_labels(
    caches: &[ForwardCache],
    labels: &[usize],
    prior: &SemanticPrior,
    lambda_sem: f64,
) -> Result<Vec<Distribution>> {
    caches
        .iter()
        .zip(labels)
        .map(|(c, &y)| soft_label(&c.src_logits, prior.row(y)?, lambda_sem))
        .collect()
}

fn check_finite(value: f64, term: &str, epoch: usize, batch: usize) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "training aborted: {term} is {value} at epoch {epoch}, batch {batch}"
        )));
    }
    Ok(())
}

/// Runs the alternating alignment procedure over the seen classes.
///
/// Per epoch, over stratified shuffled batches: the student objective
/// (classification + knowledge alignment against teacher soft labels +
/// weighted modality alignment) is computed and applied with Adam. From
/// `warmup_epochs` on, the teacher is additionally updated towards the
/// student's soft labels. Both gradients are taken at the step's starting
/// parameters.
pub fn train_sbka(
    student: ModelParams,
    teacher: ModelParams,
    dataset: &Dataset,
    prior: &SemanticPrior,
    cfg: &TrainConfig,
) -> Result<(ModelParams, ModelParams, TrainHistory)> {
    cfg.validate()?;
    let dims = student.dims;
    if teacher.dims != dims {
        return Err(Error::Config(
            "student and teacher dimensions differ".into(),
        ));
    }
    if dims.d_in != dataset.d_in {
        return Err(Error::Config(format!(
            "model d_in {} does not match dataset dimension {}",
            dims.d_in, dataset.d_in
        )));
    }
    if prior.k_src() != dims.k_src {
        return Err(Error::Config(format!(
            "prior width {} does not match k_src {}",
            prior.k_src(),
            dims.k_src
        )));
    }

    let seen = dataset.seen_samples();
    let mut sketch_idx = Vec::new();
    let mut photo_idx = Vec::new();
    for (i, s) in seen.iter().enumerate() {
        if s.label >= dims.k_train {
            return Err(Error::Config(format!(
                "seen label {} out of range for k_train {}; labels must be 0-based and contiguous",
                s.label, dims.k_train
            )));
        }
        if s.label >= prior.k_train() {
            return Err(Error::Config(format!(
                "seen label {} has no semantic prior row (prior has {})",
                s.label,
                prior.k_train()
            )));
        }
        match s.modality {
            Modality::Sketch => sketch_idx.push(i),
            Modality::Photo => photo_idx.push(i),
        }
    }
    if sketch_idx.is_empty() || photo_idx.is_empty() {
        return Err(Error::Data(format!(
            "training needs both modalities among seen classes, got {} sketches and {} photos",
            sketch_idx.len(),
            photo_idx.len()
        )));
    }

    let reference = build_reference(cfg.seeds.reference, dims.d_emb)?;
    let mut student = student;
    let mut teacher = teacher;
    let mut student_state = AdamState::new(dims)?;
    let mut teacher_state = AdamState::new(dims)?;
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.total_epochs {
        let lr_s = cosine_lr(
            cfg.lr_student_initial,
            cfg.lr_student_final,
            epoch,
            cfg.total_epochs,
        );
        let lr_t = cosine_lr(
            cfg.lr_teacher_initial,
            cfg.lr_teacher_final,
            epoch,
            cfg.total_epochs,
        );
        let teacher_frozen = epoch < cfg.warmup_epochs;
        let batches = stratified_batches(
            &mut sketch_idx,
            &mut photo_idx,
            cfg.batch_size,
            cfg.seeds
                .data
                .derive(seed_tags::TRAIN_SHUFFLE)
                .derive(epoch as u64),
        );

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for (batch_no, indices) in batches.iter().enumerate() {
            let batch = batch_from_indices(&seen, indices)?;

            // Everything below reads the parameters as they are at the start
            // of the step.
            let teacher_caches: Vec<ForwardCache> = batch
                .inputs
                .iter()
                .map(|x| forward(&teacher, x))
                .collect::<Result<_>>()?;
            let student_caches: Vec<ForwardCache> = batch
                .inputs
                .iter()
                .map(|x| forward(&student, x))
                .collect::<Result<_>>()?;

            let teacher_soft =
                batch_soft_labels(&teacher_caches, &batch.labels, prior, cfg.lambda_sem)?;
            let eval = student_objective(
                &student_caches,
                &teacher_soft,
                &batch,
                &reference,
                cfg.lambda_ma,
            )?;
            check_finite(eval.breakdown.l_cls, "classification loss", epoch, batch_no)?;
            check_finite(
                eval.breakdown.l_ma,
                "modality alignment loss",
                epoch,
                batch_no,
            )?;
            check_finite(
                eval.breakdown.l_ka,
                "student knowledge alignment loss",
                epoch,
                batch_no,
            )?;

            let student_soft =
                batch_soft_labels(&student_caches, &batch.labels, prior, cfg.lambda_sem)?;
            let teacher_src: Vec<Vec<f64>> = teacher_caches
                .iter()
                .map(|c| c.src_logits.clone())
                .collect();
            let (l_ka_t, d_src_teacher) = knowledge_alignment_loss(&student_soft, &teacher_src)?;
            check_finite(l_ka_t, "teacher knowledge alignment loss", epoch, batch_no)?;

            let mut student_grads = ModelParams::zeros(dims)?;
            for (i, cache) in student_caches.iter().enumerate() {
                student_grads.add_assign(&backward(
                    &student,
                    cache,
                    &eval.d_embedding[i],
                    &eval.d_task_logits[i],
                    &eval.d_src_logits[i],
                )?);
            }

            let teacher_grads = if teacher_frozen {
                None
            } else {
                let zero_emb = vec![0.0; dims.d_emb];
                let zero_task = vec![0.0; dims.k_train];
                let mut grads = ModelParams::zeros(dims)?;
                for (cache, d) in teacher_caches.iter().zip(&d_src_teacher) {
                    grads.add_assign(&backward(&teacher, cache, &zero_emb, &zero_task, d)?);
                }
                Some(grads)
            };

            adam_step(&mut student, &student_grads, &mut student_state, lr_s)?;
            if let Some(grads) = teacher_grads {
                adam_step(&mut teacher, &grads, &mut teacher_state, lr_t)?;
            }

            sums.0 += eval.breakdown.l_cls;
            sums.1 += eval.breakdown.l_ma;
            sums.2 += eval.breakdown.l_ka;
            sums.3 += l_ka_t;
        }

        history.epochs.push(EpochRecord {
            epoch,
            l_cls: sums.0,
            l_ma: sums.1,
            l_ka_s: sums.2,
            l_ka_t: sums.3,
            lr_student: lr_s,
            lr_teacher: lr_t,
            teacher_frozen,
        });
        history.teacher_checksums.push(teacher.checksum());
    }

    Ok((student, teacher, history))
}
