//! End-to-end pipeline helpers (embed, rank, evaluate) and the harnesses
//! built on them: the three-row ablation table and the parameter sweeps.

use rayon::prelude::*;

use crate::codebook::{fit_subspace_codebook, rank_gallery, MatchMode, SubspaceCodebook};
use crate::data::{generate_synthetic_dataset, Dataset, DatasetConfig, LabeledSample, Modality};
use crate::error::{Error, Result};
use crate::gmm::EmConfig;
use crate::losses::SemanticPrior;
use crate::metrics::{evaluate, MetricsReport, RankedResult};
use crate::model::{forward, ModelDims, ModelParams};
use crate::trainer::{pretrain_teacher, train_sbka, TrainConfig, TrainSeeds};

/// Embeds inputs with the encoder (the embedding layer, not the heads).
pub fn embed_all(params: &ModelParams, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    inputs
        .par_iter()
        .map(|x| forward(params, x).map(|c| c.embedding))
        .collect()
}

/// Sketch queries and photo gallery split out of a sample set.
#[derive(Debug, Clone)]
pub struct RetrievalSplit {
    pub query_inputs: Vec<Vec<f64>>,
    pub query_labels: Vec<usize>,
    pub gallery_inputs: Vec<Vec<f64>>,
    pub gallery_labels: Vec<usize>,
}

impl RetrievalSplit {
    /// Queries are the sketches, the gallery the photos.
    pub fn from_samples(samples: &[&LabeledSample]) -> Result<Self> {
        let mut split = RetrievalSplit {
            query_inputs: Vec::new(),
            query_labels: Vec::new(),
            gallery_inputs: Vec::new(),
            gallery_labels: Vec::new(),
        };
        for s in samples {
            match s.modality {
                Modality::Sketch => {
                    split.query_inputs.push(s.input.clone());
                    split.query_labels.push(s.label);
                }
                Modality::Photo => {
                    split.gallery_inputs.push(s.input.clone());
                    split.gallery_labels.push(s.label);
                }
            }
        }
        if split.query_inputs.is_empty() {
            return Err(Error::Data(
                "retrieval needs at least one sketch query".into(),
            ));
        }
        if split.gallery_inputs.is_empty() {
            return Err(Error::Data(
                "retrieval needs at least one gallery photo".into(),
            ));
        }
        Ok(split)
    }

    pub fn distinct_gallery_classes(&self) -> usize {
        let mut labels = self.gallery_labels.clone();
        labels.sort_unstable();
        labels.dedup();
        labels.len()
    }
}

/// Ranks every query embedding against the gallery.
pub fn rank_queries(
    query_embs: &[Vec<f64>],
    query_labels: &[usize],
    gallery_embs: &[Vec<f64>],
    gallery_labels: &[usize],
    codebook: Option<&SubspaceCodebook>,
    mode: MatchMode,
) -> Result<Vec<RankedResult>> {
    if query_embs.len() != query_labels.len() {
        return Err(Error::Dimension(format!(
            "{} query embeddings but {} labels",
            query_embs.len(),
            query_labels.len()
        )));
    }
    query_embs
        .par_iter()
        .zip(query_labels.par_iter())
        .map(|(q, &label)| {
            rank_gallery(q, gallery_embs, codebook, mode).map(|ranking| RankedResult {
                query_label: label,
                ranking,
                gallery_labels: gallery_labels.to_vec(),
            })
        })
        .collect()
}

/// Ranks every query embedding against the gallery and evaluates.
pub fn rank_and_evaluate(
    query_embs: &[Vec<f64>],
    query_labels: &[usize],
    gallery_embs: &[Vec<f64>],
    gallery_labels: &[usize],
    codebook: Option<&SubspaceCodebook>,
    mode: MatchMode,
    k: usize,
) -> Result<MetricsReport> {
    let results = rank_queries(
        query_embs,
        query_labels,
        gallery_embs,
        gallery_labels,
        codebook,
        mode,
    )?;
    evaluate(&results, k)
}

/// Everything needed to run the synthetic pipeline end to end.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub dataset: DatasetConfig,
    pub dims: ModelDims,
    pub train: TrainConfig,
    pub em: EmConfig,
    pub subspaces: usize,
    /// Cluster count per subspace; `None` means "number of gallery classes".
    pub clusters: Option<usize>,
    pub metric_k: usize,
}

impl BenchmarkConfig {
    /// The default synthetic benchmark used by the ablation and the sweeps:
    /// wide enough intra-class spread that one-to-many matching has noise to
    /// remove, and a visible modality gap for the alignment to close.
    pub fn synthetic_default() -> Self {
        let dataset = DatasetConfig {
            n_classes: 16,
            n_seen: 10,
            per_class_per_modality: 25,
            d_in: 16,
            modality_gap: 1.2,
            intra_class_spread: 0.7,
        };
        let dims = ModelDims {
            d_in: dataset.d_in,
            hidden: 32,
            d_emb: 32,
            k_train: dataset.n_seen,
            k_src: dataset.n_seen,
        };
        let train = TrainConfig {
            lr_student_initial: 5e-3,
            lr_student_final: 5e-5,
            lr_teacher_initial: 5e-3,
            lr_teacher_final: 5e-5,
            warmup_epochs: 5,
            total_epochs: 30,
            batch_size: 32,
            pretrain_epochs: 40,
            pretrain_lr: 1e-2,
            ..TrainConfig::default()
        };
        Self {
            dataset,
            dims,
            train,
            em: EmConfig::default(),
            subspaces: 4,
            clusters: None,
            metric_k: 25,
        }
    }

    fn resolved_clusters(&self, split: &RetrievalSplit) -> usize {
        self.clusters
            .unwrap_or_else(|| split.distinct_gallery_classes())
    }
}

/// A trained student plus the evaluation split, ready for matching.
pub struct TrainedPipeline {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub query_embs: Vec<Vec<f64>>,
    pub query_labels: Vec<usize>,
    pub gallery_embs: Vec<Vec<f64>>,
    pub gallery_labels: Vec<usize>,
}

/// Sub-stream tag separating the student's initialization from the
/// teacher's within one configured init seed.
pub const STUDENT_INIT_TAG: u64 = 0x57;

/// Generates data, pretrains the teacher, trains with the given warm-up
/// length, and embeds the unseen split with the student encoder.
///
/// The teacher starts from photo pretraining; the student starts from a
/// fresh initialization (its own derived seed), so the two models bring
/// different trajectories into the mutual updates.
pub fn train_pipeline(
    bench: &BenchmarkConfig,
    seeds: TrainSeeds,
    warmup_epochs: usize,
    lambda_ma: f64,
) -> Result<TrainedPipeline> {
    let train_cfg = TrainConfig {
        seeds,
        warmup_epochs,
        lambda_ma,
        ..bench.train.clone()
    };
    let dataset: Dataset = generate_synthetic_dataset(&bench.dataset, seeds.data)?;
    let prior = SemanticPrior::zero(bench.dims.k_train, bench.dims.k_src)?;
    let teacher = pretrain_teacher(&dataset, bench.dims, &train_cfg)?;
    let student = crate::model::init_params(bench.dims, seeds.init.derive(STUDENT_INIT_TAG))?;
    let (student, teacher, _history) = train_sbka(student, teacher, &dataset, &prior, &train_cfg)?;

    let split = RetrievalSplit::from_samples(&dataset.unseen_samples())?;
    let query_embs = embed_all(&student, &split.query_inputs)?;
    let gallery_embs = embed_all(&student, &split.gallery_inputs)?;
    Ok(TrainedPipeline {
        student,
        teacher,
        query_embs,
        query_labels: split.query_labels,
        gallery_embs,
        gallery_labels: split.gallery_labels,
    })
}

/// Scores an already-trained pipeline under the requested matching mode,
/// fitting a fresh codebook when one-to-many matching is requested.
pub fn evaluate_pipeline(
    bench: &BenchmarkConfig,
    pipeline: &TrainedPipeline,
    mode: MatchMode,
    em_seed_tag: u64,
    clusters_override: Option<usize>,
) -> Result<MetricsReport> {
    let codebook = match mode {
        MatchMode::OneToOne => None,
        MatchMode::OneToMany => {
            let split = RetrievalSplit {
                query_inputs: Vec::new(),
                query_labels: pipeline.query_labels.clone(),
                gallery_inputs: Vec::new(),
                gallery_labels: pipeline.gallery_labels.clone(),
            };
            let k = clusters_override.unwrap_or_else(|| bench.resolved_clusters(&split));
            let em = EmConfig {
                seed: bench.em.seed.derive(em_seed_tag),
                ..bench.em.clone()
            };
            Some(fit_subspace_codebook(
                &pipeline.gallery_embs,
                bench.subspaces,
                k,
                &em,
            )?)
        }
    };
    rank_and_evaluate(
        &pipeline.query_embs,
        &pipeline.query_labels,
        &pipeline.gallery_embs,
        &pipeline.gallery_labels,
        codebook.as_ref(),
        mode,
        bench.metric_k,
    )
}

/// Mean and sample standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One configuration row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub bidirectional: bool,
    pub one_to_many: bool,
    pub map_all_mean: f64,
    pub map_all_std: f64,
    pub prec_at_k_mean: f64,
    pub prec_at_k_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub repetitions: usize,
    pub metric_k: usize,
}

impl AblationTable {
    /// Tab-separated rows: toggles, then mean/std per metric.
    pub fn to_report(&self) -> String {
        let mut out = String::from(
            "bidirectional\tone_to_many\tmap_all_mean\tmap_all_std\tprec_at_k_mean\tprec_at_k_std\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.bidirectional,
                r.one_to_many,
                r.map_all_mean,
                r.map_all_std,
                r.prec_at_k_mean,
                r.prec_at_k_std
            ));
        }
        out
    }

    pub fn from_report(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty ablation report".into()))?;
        if header != "bidirectional\tone_to_many\tmap_all_mean\tmap_all_std\tprec_at_k_mean\tprec_at_k_std" {
            return Err(Error::Data(format!("unexpected ablation header: {header:?}")));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(Error::Data(format!(
                    "ablation line {}: expected 6 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse_bool = |s: &str| match s {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(Error::Data(format!(
                    "ablation line {}: bad flag {other:?}",
                    lineno + 2
                ))),
            };
            let parse_f = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::Data(format!("ablation line {}: bad number {s:?}", lineno + 2))
                })
            };
            rows.push(AblationRow {
                bidirectional: parse_bool(fields[0])?,
                one_to_many: parse_bool(fields[1])?,
                map_all_mean: parse_f(fields[2])?,
                map_all_std: parse_f(fields[3])?,
                prec_at_k_mean: parse_f(fields[4])?,
                prec_at_k_std: parse_f(fields[5])?,
            });
        }
        Ok(Self {
            rows,
            repetitions: 0,
            metric_k: 0,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_report())?;
        Ok(())
    }
}

/// Runs the three ablation rows over `repetitions` derived seed sets:
/// frozen teacher + one-to-one, bidirectional + one-to-one, and
/// bidirectional + one-to-many. The two bidirectional rows share the same
/// trained student; only the matching rule changes.
pub fn run_ablation(bench: &BenchmarkConfig, repetitions: usize) -> Result<AblationTable> {
    if repetitions == 0 {
        return Err(Error::Config(
            "ablation needs at least one repetition".into(),
        ));
    }
    let mut metrics: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 3];
    for rep in 0..repetitions as u64 {
        let seeds = bench.train.seeds.for_repetition(rep);

        let frozen = train_pipeline(
            bench,
            seeds,
            bench.train.total_epochs,
            bench.train.lambda_ma,
        )?;
        let report = evaluate_pipeline(bench, &frozen, MatchMode::OneToOne, rep, None)?;
        metrics[0].push((report.map_all, report.prec_at_k));

        let aligned = train_pipeline(
            bench,
            seeds,
            bench.train.warmup_epochs,
            bench.train.lambda_ma,
        )?;
        let report = evaluate_pipeline(bench, &aligned, MatchMode::OneToOne, rep, None)?;
        metrics[1].push((report.map_all, report.prec_at_k));
        let report = evaluate_pipeline(bench, &aligned, MatchMode::OneToMany, rep, None)?;
        metrics[2].push((report.map_all, report.prec_at_k));
    }

    let toggles = [(false, false), (true, false), (true, true)];
    let rows = toggles
        .iter()
        .zip(&metrics)
        .map(|(&(bidirectional, one_to_many), values)| {
            let maps: Vec<f64> = values.iter().map(|v| v.0).collect();
            let precs: Vec<f64> = values.iter().map(|v| v.1).collect();
            let (map_all_mean, map_all_std) = mean_std(&maps);
            let (prec_at_k_mean, prec_at_k_std) = mean_std(&precs);
            AblationRow {
                bidirectional,
                one_to_many,
                map_all_mean,
                map_all_std,
                prec_at_k_mean,
                prec_at_k_std,
            }
        })
        .collect();
    Ok(AblationTable {
        rows,
        repetitions,
        metric_k: bench.metric_k,
    })
}

/// One sweep setting: the swept value and the per-repetition reports.
#[derive(Debug, Clone)]
pub struct SweepPoint<T> {
    pub value: T,
    pub reports: Vec<MetricsReport>,
    pub map_all_mean: f64,
}

/// Trains once per (lambda, repetition) and scores with one-to-many matching.
pub fn run_lambda_sweep(
    bench: &BenchmarkConfig,
    lambdas: &[f64],
    repetitions: usize,
) -> Result<Vec<SweepPoint<f64>>> {
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut reports = Vec::with_capacity(repetitions);
        for rep in 0..repetitions as u64 {
            let seeds = bench.train.seeds.for_repetition(rep);
            let pipeline = train_pipeline(bench, seeds, bench.train.warmup_epochs, lambda)?;
            reports.push(evaluate_pipeline(
                bench,
                &pipeline,
                MatchMode::OneToMany,
                rep,
                None,
            )?);
        }
        let (map_all_mean, _) = mean_std(&reports.iter().map(|r| r.map_all).collect::<Vec<_>>());
        points.push(SweepPoint {
            value: lambda,
            reports,
            map_all_mean,
        });
    }
    Ok(points)
}

/// Trains once per repetition, then re-fits the codebook for every cluster
/// count; the trained models are shared across settings.
pub fn run_cluster_sweep(
    bench: &BenchmarkConfig,
    cluster_counts: &[usize],
    repetitions: usize,
) -> Result<Vec<SweepPoint<usize>>> {
    let mut pipelines = Vec::with_capacity(repetitions);
    for rep in 0..repetitions as u64 {
        let seeds = bench.train.seeds.for_repetition(rep);
        pipelines.push(train_pipeline(
            bench,
            seeds,
            bench.train.warmup_epochs,
            bench.train.lambda_ma,
        )?);
    }
    let mut points = Vec::with_capacity(cluster_counts.len());
    for &k in cluster_counts {
        let mut reports = Vec::with_capacity(repetitions);
        for (rep, pipeline) in pipelines.iter().enumerate() {
            reports.push(evaluate_pipeline(
                bench,
                pipeline,
                MatchMode::OneToMany,
                rep as u64,
                Some(k),
            )?);
        }
        let (map_all_mean, _) = mean_std(&reports.iter().map(|r| r.map_all).collect::<Vec<_>>());
        points.push(SweepPoint {
            value: k,
            reports,
            map_all_mean,
        });
    }
    Ok(points)
}
