//! Implementations behind the CLI subcommands. Each function validates its
//! inputs, runs the corresponding pipeline stage, writes its artifacts, and
//! prints a short summary to stdout.

use std::path::Path;

use sbka_core::ablation::{embed_all, rank_queries, run_ablation, STUDENT_INIT_TAG};
use sbka_core::codebook::{fit_subspace_codebook, load_codebook, save_codebook, MatchMode};
use sbka_core::data::{
    generate_synthetic_dataset, read_embedding_file, write_embedding_file, Dataset, LabeledSample,
    Modality,
};
use sbka_core::error::{Error, Result};
use sbka_core::gradcheck::run_gradcheck;
use sbka_core::losses::SemanticPrior;
use sbka_core::metrics::evaluate;
use sbka_core::model::{init_params, load_checkpoint, save_checkpoint, ModelParams};
use sbka_core::numerics::RngSeed;
use sbka_core::trainer::{pretrain_teacher, train_sbka};

use crate::config::RunConfig;

/// Labels must be contiguous `0..k` to index the task head and prior rows.
fn contiguous_class_count(samples: &[LabeledSample]) -> Result<usize> {
    let mut labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let count = labels.len();
    for (expected, &got) in labels.iter().enumerate() {
        if got != expected {
            return Err(Error::Data(format!(
                "training labels must be contiguous from 0; expected {expected}, found {got}"
            )));
        }
    }
    Ok(count)
}

fn check_data_dim(cfg: &RunConfig, samples: &[LabeledSample], what: &str) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.input.len());
    if dim != cfg.d_in {
        return Err(Error::Config(format!(
            "{what} dimension {dim} does not match configured d_in {}",
            cfg.d_in
        )));
    }
    Ok(())
}

pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let dataset = generate_synthetic_dataset(&cfg.dataset_config(), RngSeed(cfg.seed_data))?;
    std::fs::create_dir_all(out_dir)?;
    let train: Vec<LabeledSample> = dataset.seen_samples().into_iter().cloned().collect();
    let test: Vec<LabeledSample> = dataset.unseen_samples().into_iter().cloned().collect();
    let train_path = out_dir.join("train.emb");
    let test_path = out_dir.join("test.emb");
    write_embedding_file(&train_path, &train)?;
    write_embedding_file(&test_path, &test)?;
    println!(
        "generated {} classes (seen {:?}, unseen {:?}), dim {}",
        cfg.n_classes, dataset.seen_classes, dataset.unseen_classes, cfg.d_in
    );
    println!("  {} seen samples -> {}", train.len(), train_path.display());
    println!("  {} unseen samples -> {}", test.len(), test_path.display());
    Ok(())
}

pub fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    prior_path: Option<&Path>,
    out_dir: &Path,
    log_mean: bool,
) -> Result<()> {
    let samples = read_embedding_file(data)?;
    check_data_dim(cfg, &samples, "training data")?;
    let k_train = contiguous_class_count(&samples)?;
    if k_train < 2 {
        return Err(Error::Data(format!(
            "training needs at least 2 classes, got {k_train}"
        )));
    }
    let dims = cfg.model_dims(k_train);
    if dims.k_src < k_train {
        return Err(Error::Config(format!(
            "k_src ({}) must be at least the number of training classes ({k_train})",
            dims.k_src
        )));
    }
    let prior = match prior_path {
        Some(p) => {
            let prior = SemanticPrior::load(p)?;
            if prior.k_train() != k_train || prior.k_src() != dims.k_src {
                return Err(Error::Config(format!(
                    "prior shape {}x{} does not match {k_train} classes x {} source labels",
                    prior.k_train(),
                    prior.k_src(),
                    dims.k_src
                )));
            }
            prior
        }
        None => SemanticPrior::zero(k_train, dims.k_src)?,
    };

    let sample_count = samples.len() as f64;
    let dataset = Dataset {
        samples,
        seen_classes: (0..k_train).collect(),
        unseen_classes: Vec::new(),
        d_in: cfg.d_in,
    };
    let train_cfg = cfg.train_config();
    let teacher = pretrain_teacher(&dataset, dims, &train_cfg)?;
    let student = init_params(dims, train_cfg.seeds.init.derive(STUDENT_INIT_TAG))?;
    let (student, teacher, history) = train_sbka(student, teacher, &dataset, &prior, &train_cfg)?;

    std::fs::create_dir_all(out_dir)?;
    let student_path = out_dir.join("student.ckpt");
    let teacher_path = out_dir.join("teacher.ckpt");
    let history_path = out_dir.join("history.tsv");
    save_checkpoint(&student, &student_path)?;
    save_checkpoint(&teacher, &teacher_path)?;
    history.save(&history_path)?;

    let scale = if log_mean { 1.0 / sample_count } else { 1.0 };
    let unit = if log_mean { " (mean per sample)" } else { "" };
    for r in &history.epochs {
        println!(
            "epoch {}{}: l_cls={:.6} l_ma={:.6} l_ka_s={:.6} l_ka_t={:.6} frozen={}",
            r.epoch,
            unit,
            r.l_cls * scale,
            r.l_ma * scale,
            r.l_ka_s * scale,
            r.l_ka_t * scale,
            r.teacher_frozen
        );
    }
    println!("student -> {}", student_path.display());
    println!("teacher -> {}", teacher_path.display());
    println!("history -> {}", history_path.display());
    Ok(())
}

fn photos_of(samples: &[LabeledSample], what: &str) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let photos: Vec<&LabeledSample> = samples
        .iter()
        .filter(|s| s.modality == Modality::Photo)
        .collect();
    if photos.is_empty() {
        return Err(Error::Data(format!("{what} contains no photo samples")));
    }
    Ok((
        photos.iter().map(|s| s.input.clone()).collect(),
        photos.iter().map(|s| s.label).collect(),
    ))
}

fn sketches_of(samples: &[LabeledSample], what: &str) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let sketches: Vec<&LabeledSample> = samples
        .iter()
        .filter(|s| s.modality == Modality::Sketch)
        .collect();
    if sketches.is_empty() {
        return Err(Error::Data(format!("{what} contains no sketch samples")));
    }
    Ok((
        sketches.iter().map(|s| s.input.clone()).collect(),
        sketches.iter().map(|s| s.label).collect(),
    ))
}

fn distinct_count(labels: &[usize]) -> usize {
    let mut l = labels.to_vec();
    l.sort_unstable();
    l.dedup();
    l.len()
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<ModelParams> {
    let params = load_checkpoint(path)?;
    if params.dims.d_in != cfg.d_in || params.dims.d_emb != cfg.d_emb {
        return Err(Error::Config(format!(
            "checkpoint dims (d_in={}, d_emb={}) do not match config (d_in={}, d_emb={})",
            params.dims.d_in, params.dims.d_emb, cfg.d_in, cfg.d_emb
        )));
    }
    Ok(params)
}

pub fn cmd_fit_clusters(
    cfg: &RunConfig,
    checkpoint: &Path,
    gallery: &Path,
    out: &Path,
    subspaces_override: Option<usize>,
    clusters_override: Option<usize>,
) -> Result<()> {
    let params = load_model(cfg, checkpoint)?;
    let samples = read_embedding_file(gallery)?;
    check_data_dim(cfg, &samples, "gallery data")?;
    let (photo_inputs, photo_labels) = photos_of(&samples, "gallery")?;
    let embeddings = embed_all(&params, &photo_inputs)?;

    let m = subspaces_override.unwrap_or(cfg.subspaces);
    let k = clusters_override
        .or(cfg.clusters)
        .unwrap_or_else(|| distinct_count(&photo_labels));
    let codebook = fit_subspace_codebook(&embeddings, m, k, &cfg.em_config())?;
    save_codebook(&codebook, out)?;
    println!(
        "fitted codebook: subspaces={} clusters={} subdim={} gallery={}",
        codebook.m(),
        codebook.k(),
        codebook.sub_dim(),
        codebook.gallery_count()
    );
    println!("codebook -> {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_retrieve_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    codebook_path: Option<&Path>,
    queries: &Path,
    gallery: &Path,
    k_override: Option<usize>,
    baseline: bool,
    out: &Path,
    rankings_out: Option<&Path>,
) -> Result<()> {
    let params = load_model(cfg, checkpoint)?;
    let query_samples = read_embedding_file(queries)?;
    check_data_dim(cfg, &query_samples, "query data")?;
    let gallery_samples = read_embedding_file(gallery)?;
    check_data_dim(cfg, &gallery_samples, "gallery data")?;
    let (query_inputs, query_labels) = sketches_of(&query_samples, "query data")?;
    let (gallery_inputs, gallery_labels) = photos_of(&gallery_samples, "gallery data")?;

    let query_embs = embed_all(&params, &query_inputs)?;
    let gallery_embs = embed_all(&params, &gallery_inputs)?;

    let codebook = match codebook_path {
        Some(p) => {
            let cb = load_codebook(p)?;
            if cb.gallery_count() != gallery_embs.len() || cb.dim() != params.dims.d_emb {
                return Err(Error::Data(format!(
                    "codebook/gallery mismatch: codebook covers {} items of dim {}, gallery has {} of dim {}",
                    cb.gallery_count(),
                    cb.dim(),
                    gallery_embs.len(),
                    params.dims.d_emb
                )));
            }
            Some(cb)
        }
        None => None,
    };
    let mode = if baseline {
        MatchMode::OneToOne
    } else {
        MatchMode::OneToMany
    };
    if mode == MatchMode::OneToMany && codebook.is_none() {
        return Err(Error::Config(
            "one-to-many matching needs --codebook; pass --baseline for one-to-one".into(),
        ));
    }

    let results = rank_queries(
        &query_embs,
        &query_labels,
        &gallery_embs,
        &gallery_labels,
        codebook.as_ref(),
        mode,
    )?;
    let k = k_override.unwrap_or(cfg.metric_k);
    let report = evaluate(&results, k)?;
    report.save(out)?;

    if let Some(path) = rankings_out {
        let mut text = String::new();
        for (qi, r) in results.iter().enumerate() {
            let indices: Vec<String> = r.ranking.iter().map(|i| i.to_string()).collect();
            text.push_str(&format!("{qi}\t{}\t{}\n", r.query_label, indices.join(" ")));
        }
        std::fs::write(path, text)?;
        println!("rankings -> {}", path.display());
    }

    println!(
        "mode={} map_all={:.6} map@{k}={:.6} prec@{k}={:.6} evaluated={} skipped={}",
        if baseline {
            "one-to-one"
        } else {
            "one-to-many"
        },
        report.map_all,
        report.map_at_k,
        report.prec_at_k,
        report.evaluated_queries,
        report.skipped_queries
    );
    println!("report -> {}", out.display());
    Ok(())
}

pub fn cmd_ablation(cfg: &RunConfig, repetitions: usize, out: &Path) -> Result<()> {
    let table = run_ablation(&cfg.benchmark_config(), repetitions)?;
    table.save(out)?;
    println!(
        "ablation over {} repetitions (prec cutoff {}):",
        table.repetitions, table.metric_k
    );
    for row in &table.rows {
        println!(
            "  bidirectional={:5} one_to_many={:5} map_all={:.4}+-{:.4} prec@k={:.4}+-{:.4}",
            row.bidirectional,
            row.one_to_many,
            row.map_all_mean,
            row.map_all_std,
            row.prec_at_k_mean,
            row.prec_at_k_std
        );
    }
    println!("table -> {}", out.display());
    Ok(())
}

/// Runs the finite-difference suite; returns whether every component passed.
pub fn cmd_gradcheck(seed: u64, cases: usize) -> Result<bool> {
    let report = run_gradcheck(RngSeed(seed), cases)?;
    print!("{}", report.render());
    Ok(report.all_pass())
}
