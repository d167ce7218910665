//! Finite-difference verification of every analytic gradient in the crate:
//! the encoder backward pass, each loss term, the soft-label softmax chain,
//! and the full composite student objective.

use crate::data::Modality;
use crate::error::Result;
use crate::losses::{
    build_reference, classification_loss, knowledge_alignment_loss, modality_alignment_loss,
    soft_label, student_objective, Batch,
};
use crate::model::{backward, forward, init_params, ForwardCache, ModelDims, ModelParams};
use crate::numerics::{
    finite_diff_grad, relative_error, seeded_gaussian_vector, softmax, Distribution, RngSeed,
    DEFAULT_FD_STEP,
};

/// Relative-error threshold every component must stay under.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Dimensions used by the whole suite; small enough that exhaustive
/// finite differences over all parameters stay cheap.
pub const GRADCHECK_DIMS: ModelDims = ModelDims {
    d_in: 6,
    hidden: 5,
    d_emb: 4,
    k_train: 3,
    k_src: 7,
};

#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub name: &'static str,
    pub cases: usize,
    pub worst_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub components: Vec<ComponentReport>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn all_pass(&self) -> bool {
        self.components.iter().all(|c| c.pass)
    }

    /// One line per component, then a verdict line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.components {
            out.push_str(&format!(
                "component={} cases={} worst_rel_err={:.3e} {}\n",
                c.name,
                c.cases,
                c.worst_rel_err,
                if c.pass { "pass" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "gradcheck {} at tolerance {:.1e}\n",
            if self.all_pass() { "passed" } else { "FAILED" },
            self.tolerance
        ));
        out
    }
}

fn randv(seed: RngSeed, dim: usize) -> Vec<f64> {
    seeded_gaussian_vector(seed, dim).expect("gradcheck draw")
}

fn flatten(params: &ModelParams) -> Vec<f64> {
    params
        .blocks()
        .iter()
        .flat_map(|b| b.iter().copied())
        .collect()
}

fn unflatten(dims: ModelDims, theta: &[f64]) -> ModelParams {
    let mut p = ModelParams::zeros(dims).expect("gradcheck dims");
    let mut off = 0;
    for block in p.blocks_mut() {
        block.copy_from_slice(&theta[off..off + block.len()]);
        off += block.len();
    }
    p
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn encoder_case(seed: RngSeed) -> Result<f64> {
    let dims = GRADCHECK_DIMS;
    let params = init_params(dims, seed)?;
    let x = randv(seed.derive(1), dims.d_in);
    let u = randv(seed.derive(2), dims.d_emb);
    let v = randv(seed.derive(3), dims.k_train);
    let w = randv(seed.derive(4), dims.k_src);

    let cache = forward(&params, &x)?;
    let analytic = backward(&params, &cache, &u, &v, &w)?;

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let numeric = finite_diff_grad(
        |theta| {
            let c = forward(&unflatten(dims, theta), &x).expect("forward");
            dot(&c.embedding, &u) + dot(&c.task_logits, &v) + dot(&c.src_logits, &w)
        },
        &flatten(&params),
        DEFAULT_FD_STEP,
    )?;
    Ok(worst(&flatten(&analytic), &numeric))
}

fn classification_case(seed: RngSeed) -> Result<f64> {
    let k = GRADCHECK_DIMS.k_train;
    let batch = 4;
    let logits: Vec<Vec<f64>> = (0..batch)
        .map(|i| randv(seed.derive(i as u64), k))
        .collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % k).collect();
    let (_, grads) = classification_loss(&logits, &labels)?;
    let mut worst_err = 0.0f64;
    for i in 0..batch {
        let numeric = finite_diff_grad(
            |z| {
                let mut all = logits.clone();
                all[i] = z.to_vec();
                classification_loss(&all, &labels).expect("loss").0
            },
            &logits[i],
            DEFAULT_FD_STEP,
        )?;
        worst_err = worst_err.max(worst(&grads[i], &numeric));
    }
    Ok(worst_err)
}

fn modality_alignment_case(seed: RngSeed) -> Result<f64> {
    let dim = GRADCHECK_DIMS.d_emb;
    let reference = build_reference(seed.derive(100), dim)?;
    let sketches: Vec<Vec<f64>> = (0..3).map(|i| randv(seed.derive(i), dim)).collect();
    let photos: Vec<Vec<f64>> = (0..2).map(|i| randv(seed.derive(10 + i), dim)).collect();
    let (_, sketch_grads, photo_grads) = modality_alignment_loss(&sketches, &photos, &reference)?;
    let mut worst_err = 0.0f64;
    for (i, grad) in sketch_grads.iter().enumerate() {
        let numeric = finite_diff_grad(
            |e| {
                let mut s = sketches.clone();
                s[i] = e.to_vec();
                modality_alignment_loss(&s, &photos, &reference)
                    .expect("loss")
                    .0
            },
            &sketches[i],
            DEFAULT_FD_STEP,
        )?;
        worst_err = worst_err.max(worst(grad, &numeric));
    }
    for (i, grad) in photo_grads.iter().enumerate() {
        let numeric = finite_diff_grad(
            |e| {
                let mut p = photos.clone();
                p[i] = e.to_vec();
                modality_alignment_loss(&sketches, &p, &reference)
                    .expect("loss")
                    .0
            },
            &photos[i],
            DEFAULT_FD_STEP,
        )?;
        worst_err = worst_err.max(worst(grad, &numeric));
    }
    Ok(worst_err)
}

/// Jacobian-vector product through `softmax(f + lambda a)`: for
/// `s(f) = u . g(f)` the analytic gradient is `g (u - u . g)` elementwise.
fn soft_label_chain_case(seed: RngSeed) -> Result<f64> {
    let k = GRADCHECK_DIMS.k_src;
    let f = randv(seed, k);
    let a = randv(seed.derive(1), k);
    let u = randv(seed.derive(2), k);
    let lambda_sem = 0.1;

    let g = soft_label(&f, &a, lambda_sem)?;
    let ug: f64 = u.iter().zip(g.as_slice()).map(|(x, y)| x * y).sum();
    let analytic: Vec<f64> = g
        .as_slice()
        .iter()
        .zip(&u)
        .map(|(&gi, &ui)| gi * (ui - ug))
        .collect();

    let numeric = finite_diff_grad(
        |ff| {
            let gg = soft_label(ff, &a, lambda_sem).expect("soft label");
            u.iter().zip(gg.as_slice()).map(|(x, y)| x * y).sum()
        },
        &f,
        DEFAULT_FD_STEP,
    )?;
    Ok(worst(&analytic, &numeric))
}

fn knowledge_alignment_case(seed: RngSeed) -> Result<f64> {
    let k = GRADCHECK_DIMS.k_src;
    let batch = 3;
    let soft: Vec<Distribution> = (0..batch)
        .map(|i| softmax(&randv(seed.derive(i as u64), k)).expect("soft"))
        .collect();
    let logits: Vec<Vec<f64>> = (0..batch)
        .map(|i| randv(seed.derive(50 + i as u64), k))
        .collect();
    let (_, grads) = knowledge_alignment_loss(&soft, &logits)?;
    let mut worst_err = 0.0f64;
    for i in 0..batch {
        let numeric = finite_diff_grad(
            |z| {
                let mut all = logits.clone();
                all[i] = z.to_vec();
                knowledge_alignment_loss(&soft, &all).expect("loss").0
            },
            &logits[i],
            DEFAULT_FD_STEP,
        )?;
        worst_err = worst_err.max(worst(&grads[i], &numeric));
    }
    Ok(worst_err)
}

fn composite_case(seed: RngSeed) -> Result<f64> {
    let dims = GRADCHECK_DIMS;
    let lambda_ma = 0.3;
    let params = init_params(dims, seed)?;
    let teacher = init_params(dims, seed.derive(1))?;
    let reference = build_reference(seed.derive(2), dims.d_emb)?;
    let batch = Batch::new(
        (0..4)
            .map(|i| randv(seed.derive(10 + i), dims.d_in))
            .collect(),
        vec![0, 1, 2, 0],
        vec![
            Modality::Sketch,
            Modality::Photo,
            Modality::Sketch,
            Modality::Photo,
        ],
    )?;
    // Soft labels are constants built once from the fixed teacher.
    let soft: Vec<Distribution> = batch
        .inputs
        .iter()
        .map(|x| {
            let c = forward(&teacher, x).expect("teacher forward");
            softmax(&c.src_logits).expect("softmax")
        })
        .collect();

    let caches: Vec<ForwardCache> = batch
        .inputs
        .iter()
        .map(|x| forward(&params, x))
        .collect::<Result<_>>()?;
    let eval = student_objective(&caches, &soft, &batch, &reference, lambda_ma)?;
    let mut analytic = ModelParams::zeros(dims)?;
    for (i, cache) in caches.iter().enumerate() {
        analytic.add_assign(&backward(
            &params,
            cache,
            &eval.d_embedding[i],
            &eval.d_task_logits[i],
            &eval.d_src_logits[i],
        )?);
    }

    let numeric = finite_diff_grad(
        |theta| {
            let p = unflatten(dims, theta);
            let caches: Vec<ForwardCache> = batch
                .inputs
                .iter()
                .map(|x| forward(&p, x).expect("forward"))
                .collect();
            student_objective(&caches, &soft, &batch, &reference, lambda_ma)
                .expect("objective")
                .breakdown
                .total
        },
        &flatten(&params),
        DEFAULT_FD_STEP,
    )?;
    Ok(worst(&flatten(&analytic), &numeric))
}

/// Runs all six components with `cases` random instances each.
pub fn run_gradcheck(seed: RngSeed, cases: usize) -> Result<GradcheckReport> {
    type CaseFn = fn(RngSeed) -> Result<f64>;
    let components: [(&'static str, CaseFn); 6] = [
        ("encoder", encoder_case),
        ("classification_loss", classification_case),
        ("modality_alignment_loss", modality_alignment_case),
        ("soft_label_chain", soft_label_chain_case),
        ("knowledge_alignment_loss", knowledge_alignment_case),
        ("composite_objective", composite_case),
    ];
    let mut report = GradcheckReport {
        components: Vec::new(),
        tolerance: GRADCHECK_TOLERANCE,
    };
    for (index, (name, case)) in components.iter().enumerate() {
        let mut worst_err = 0.0f64;
        for c in 0..cases {
            let case_seed = seed.derive(index as u64 * 10_000 + c as u64);
            worst_err = worst_err.max(case(case_seed)?);
        }
        report.components.push(ComponentReport {
            name,
            cases,
            worst_rel_err: worst_err,
            pass: worst_err < GRADCHECK_TOLERANCE,
        });
    }
    Ok(report)
}
