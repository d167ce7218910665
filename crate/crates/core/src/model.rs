//! The trainable representation network: a two-layer ReLU MLP producing an
//! embedding, with a task classifier head and an auxiliary source-label head.
//! Forward and backward passes are written out explicitly and parameters are
//! updated with Adam.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as SampleDistribution, StandardNormal};

use crate::error::{Error, Result};
use crate::format::{put_f32_slice, put_u32, ByteReader};
use crate::numerics::{ensure_finite, RngSeed};

/// Magic for model checkpoint files.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SBKAMDL1";

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Dense row-major matrix of `rows x cols` f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out[c] = sum_r self[r, c] * x[r]` (transposed product).
    pub fn t_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &xv) in x.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * xv;
            }
        }
        out
    }

    /// `out[r] = sum_c self[r, c] * y[c]`.
    pub fn mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(y).map(|(&w, &yv)| w * yv).sum())
            .collect()
    }

    /// Rank-one update `self[r, c] += x[r] * y[c]`.
    pub fn add_outer(&mut self, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &yv) in row.iter_mut().zip(y) {
                *w += xv * yv;
            }
        }
    }
}

/// Layer sizes for the whole network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d_in: usize,
    pub hidden: usize,
    pub d_emb: usize,
    pub k_train: usize,
    pub k_src: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.hidden == 0 || self.d_emb == 0 {
            return Err(Error::Dimension(format!(
                "model dimensions must be at least 1: d_in={}, hidden={}, d_emb={}",
                self.d_in, self.hidden, self.d_emb
            )));
        }
        if self.k_train < 2 || self.k_src < 2 {
            return Err(Error::Dimension(format!(
                "classifier heads need at least 2 classes: k_train={}, k_src={}",
                self.k_train, self.k_src
            )));
        }
        Ok(())
    }
}

/// Encoder weights plus the two classifier heads.
///
/// Also reused as the container for gradients and Adam moments, which share
/// the same block structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w_task: Matrix,
    pub b_task: Vec<f64>,
    pub w_src: Matrix,
    pub b_src: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            w1: Matrix::zeros(dims.d_in, dims.hidden),
            b1: vec![0.0; dims.hidden],
            w2: Matrix::zeros(dims.hidden, dims.d_emb),
            b2: vec![0.0; dims.d_emb],
            w_task: Matrix::zeros(dims.d_emb, dims.k_train),
            b_task: vec![0.0; dims.k_train],
            w_src: Matrix::zeros(dims.d_emb, dims.k_src),
            b_src: vec![0.0; dims.k_src],
        })
    }

    /// Parameter blocks in declaration order; this order is also the
    /// checkpoint layout.
    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            self.w_task.as_slice(),
            &self.b_task,
            self.w_src.as_slice(),
            &self.b_src,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            self.w_task.as_mut_slice(),
            &mut self.b_task,
            self.w_src.as_mut_slice(),
            &mut self.b_src,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Accumulates `other` into `self` blockwise.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// FNV-1a over the raw little-endian bytes of every block; used by tests
    /// and the trainer to witness bit-identical parameters cheaply.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for block in self.blocks() {
            for &v in block {
                for byte in v.to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        hash
    }
}

/// He-scaled initialization: weights from `N(0, 2/fan_in)`, biases zero.
///
/// Tensors are drawn in declaration order from a single ChaCha8 stream, so a
/// seed pins every parameter.
pub fn init_params(dims: ModelDims, seed: RngSeed) -> Result<ModelParams> {
    dims.validate()?;
    let mut params = ModelParams::zeros(dims)?;
    let mut rng = seed.rng();
    let fill = |m: &mut Matrix, fan_in: usize, rng: &mut ChaCha8Rng| {
        let std = (2.0 / fan_in as f64).sqrt();
        for w in m.as_mut_slice() {
            let z: f64 = StandardNormal.sample(rng);
            *w = std * z;
        }
    };
    fill(&mut params.w1, dims.d_in, &mut rng);
    fill(&mut params.w2, dims.hidden, &mut rng);
    fill(&mut params.w_task, dims.d_emb, &mut rng);
    fill(&mut params.w_src, dims.d_emb, &mut rng);
    Ok(params)
}

/// Intermediates retained by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub pre1: Vec<f64>,
    pub act1: Vec<f64>,
    pub embedding: Vec<f64>,
    pub task_logits: Vec<f64>,
    pub src_logits: Vec<f64>,
}

/// `act1 = relu(W1^T x + b1)`, `e = W2^T act1 + b2`, heads on top of `e`.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<ForwardCache> {
    if x.len() != params.dims.d_in {
        return Err(Error::Dimension(format!(
            "input dimension {} does not match d_in {}",
            x.len(),
            params.dims.d_in
        )));
    }
    ensure_finite(x, "forward input")?;
    let mut pre1 = params.w1.t_mul_vec(x);
    for (p, &b) in pre1.iter_mut().zip(&params.b1) {
        *p += b;
    }
    let act1: Vec<f64> = pre1.iter().map(|&v| v.max(0.0)).collect();
    let mut embedding = params.w2.t_mul_vec(&act1);
    for (e, &b) in embedding.iter_mut().zip(&params.b2) {
        *e += b;
    }
    let mut task_logits = params.w_task.t_mul_vec(&embedding);
    for (f, &b) in task_logits.iter_mut().zip(&params.b_task) {
        *f += b;
    }
    let mut src_logits = params.w_src.t_mul_vec(&embedding);
    for (f, &b) in src_logits.iter_mut().zip(&params.b_src) {
        *f += b;
    }
    Ok(ForwardCache {
        input: x.to_vec(),
        pre1,
        act1,
        embedding,
        task_logits,
        src_logits,
    })
}

/// Exact reverse-mode gradients for [`forward`].
///
/// `d_e`, `d_f_task`, `d_f_src` are the upstream gradients on the embedding
/// and the two heads. The ReLU subgradient at 0 is taken as 0.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    d_e: &[f64],
    d_f_task: &[f64],
    d_f_src: &[f64],
) -> Result<ModelParams> {
    let dims = params.dims;
    if d_e.len() != dims.d_emb || d_f_task.len() != dims.k_train || d_f_src.len() != dims.k_src {
        return Err(Error::Dimension(format!(
            "upstream gradient dimensions ({}, {}, {}) do not match (d_emb={}, k_train={}, k_src={})",
            d_e.len(),
            d_f_task.len(),
            d_f_src.len(),
            dims.d_emb,
            dims.k_train,
            dims.k_src
        )));
    }
    let mut grads = ModelParams::zeros(dims)?;

    grads.w_task.add_outer(&cache.embedding, d_f_task);
    grads.b_task.copy_from_slice(d_f_task);
    grads.w_src.add_outer(&cache.embedding, d_f_src);
    grads.b_src.copy_from_slice(d_f_src);

    let mut d_emb_total = d_e.to_vec();
    let via_task = params.w_task.mul_vec(d_f_task);
    let via_src = params.w_src.mul_vec(d_f_src);
    for i in 0..dims.d_emb {
        d_emb_total[i] += via_task[i] + via_src[i];
    }

    grads.w2.add_outer(&cache.act1, &d_emb_total);
    grads.b2.copy_from_slice(&d_emb_total);

    let d_act1 = params.w2.mul_vec(&d_emb_total);
    let d_pre1: Vec<f64> = d_act1
        .iter()
        .zip(&cache.pre1)
        .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
        .collect();

    grads.w1.add_outer(&cache.input, &d_pre1);
    grads.b1.copy_from_slice(&d_pre1);
    Ok(grads)
}

/// First/second moment accumulators for Adam, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(dims: ModelDims) -> Result<Self> {
        Ok(Self {
            m: ModelParams::zeros(dims)?,
            v: ModelParams::zeros(dims)?,
            step: 0,
        })
    }
}

/// One bias-corrected Adam update.
///
/// Non-finite gradients refuse the step: params and state are left untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    if !grads.all_finite() {
        return Err(Error::Numeric(
            "adam step refused: gradient contains a non-finite value".into(),
        ));
    }
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    let m_blocks = state.m.blocks_mut();
    let v_blocks = state.v.blocks_mut();
    for (((p_block, g_block), m_block), v_block) in params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(m_blocks)
        .zip(v_blocks)
    {
        for i in 0..p_block.len() {
            let g = g_block[i];
            m_block[i] = ADAM_BETA1 * m_block[i] + (1.0 - ADAM_BETA1) * g;
            v_block[i] = ADAM_BETA2 * v_block[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m_block[i] / bc1;
            let v_hat = v_block[i] / bc2;
            p_block[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Cosine decay from `initial` (epoch 0) to `final_` (last epoch).
pub fn cosine_lr(initial: f64, final_: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs <= 1 {
        return initial;
    }
    let progress = epoch as f64 / (total_epochs - 1) as f64;
    final_ + 0.5 * (initial - final_) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Serializes to the checkpoint layout: magic, five u32 dimensions, then all
/// parameter blocks in declaration order as f32 little-endian.
pub fn checkpoint_to_bytes(params: &ModelParams) -> Vec<u8> {
    let d = params.dims;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for dim in [d.d_in, d.hidden, d.d_emb, d.k_train, d.k_src] {
        put_u32(&mut out, dim as u32);
    }
    for block in params.blocks() {
        put_f32_slice(&mut out, block);
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let d_in = r.read_u32("d_in")? as usize;
    let hidden = r.read_u32("hidden")? as usize;
    let d_emb = r.read_u32("d_emb")? as usize;
    let k_train = r.read_u32("k_train")? as usize;
    let k_src = r.read_u32("k_src")? as usize;
    let dims = ModelDims {
        d_in,
        hidden,
        d_emb,
        k_train,
        k_src,
    };
    dims.validate()?;
    let mut params = ModelParams::zeros(dims)?;
    for block in params.blocks_mut() {
        let values = r.read_f32_vec(block.len(), "parameter block")?;
        block.copy_from_slice(&values);
    }
    r.finish()?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<ModelParams> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error, seeded_gaussian_vector};

    fn tiny_dims() -> ModelDims {
        ModelDims {
            d_in: 6,
            hidden: 5,
            d_emb: 4,
            k_train: 3,
            k_src: 7,
        }
    }

    fn random_vec(seed: u64, dim: usize) -> Vec<f64> {
        seeded_gaussian_vector(RngSeed(seed), dim).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(tiny_dims(), RngSeed(9)).unwrap();
        let b = init_params(tiny_dims(), RngSeed(9)).unwrap();
        assert_eq!(a, b);
        assert!(a
            .b1
            .iter()
            .chain(&a.b2)
            .chain(&a.b_task)
            .chain(&a.b_src)
            .all(|&x| x == 0.0));
        let c = init_params(tiny_dims(), RngSeed(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_matches_he_variance() {
        // fan_in 64 and > 10^4 weight entries in w1.
        let dims = ModelDims {
            d_in: 64,
            hidden: 160,
            d_emb: 4,
            k_train: 2,
            k_src: 2,
        };
        let params = init_params(dims, RngSeed(5)).unwrap();
        let w = params.w1.as_slice();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(
            (0.029..=0.034).contains(&var),
            "variance {var} vs target {}",
            2.0 / 64.0
        );
    }

    #[test]
    fn init_rejects_zero_dimension() {
        let dims = ModelDims {
            d_in: 0,
            hidden: 5,
            d_emb: 4,
            k_train: 3,
            k_src: 7,
        };
        assert!(matches!(
            init_params(dims, RngSeed(1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn forward_zero_params_and_identity_passthrough() {
        let zero = ModelParams::zeros(tiny_dims()).unwrap();
        let cache = forward(&zero, &random_vec(1, 6)).unwrap();
        assert!(cache.embedding.iter().all(|&x| x == 0.0));
        assert!(cache.task_logits.iter().all(|&x| x == 0.0));
        assert!(cache.src_logits.iter().all(|&x| x == 0.0));

        let dims = ModelDims {
            d_in: 3,
            hidden: 3,
            d_emb: 3,
            k_train: 2,
            k_src: 2,
        };
        let mut id = ModelParams::zeros(dims).unwrap();
        for i in 0..3 {
            id.w1.set(i, i, 1.0);
            id.w2.set(i, i, 1.0);
        }
        let x = [0.5, 0.0, 2.0];
        let cache = forward(&id, &x).unwrap();
        assert_eq!(cache.embedding, x.to_vec());
    }

    #[test]
    fn forward_matches_matmul_oracle() {
        let params = init_params(tiny_dims(), RngSeed(21)).unwrap();
        let x = random_vec(22, 6);
        let cache = forward(&params, &x).unwrap();

        let mut pre1 = [0.0; 5];
        for h in 0..5 {
            for i in 0..6 {
                pre1[h] += params.w1.at(i, h) * x[i];
            }
            pre1[h] += params.b1[h];
        }
        let act1: Vec<f64> = pre1
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let mut emb = vec![0.0; 4];
        for e in 0..4 {
            for h in 0..5 {
                emb[e] += params.w2.at(h, e) * act1[h];
            }
            emb[e] += params.b2[e];
        }
        let mut task = vec![0.0; 3];
        for k in 0..3 {
            for e in 0..4 {
                task[k] += params.w_task.at(e, k) * emb[e];
            }
            task[k] += params.b_task[k];
        }
        for (got, want) in cache.embedding.iter().zip(&emb) {
            assert!((got - want).abs() < 1e-10);
        }
        for (got, want) in cache.task_logits.iter().zip(&task) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let params = ModelParams::zeros(tiny_dims()).unwrap();
        assert!(matches!(
            forward(&params, &[0.0; 5]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let params = init_params(tiny_dims(), RngSeed(2)).unwrap();
        let cache = forward(&params, &random_vec(3, 6)).unwrap();
        let grads = backward(&params, &cache, &[0.0; 4], &[0.0; 3], &[0.0; 7]).unwrap();
        assert!(grads.blocks().iter().all(|b| b.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn backward_bias_gradient_is_upstream_one_hot() {
        let params = init_params(tiny_dims(), RngSeed(2)).unwrap();
        let cache = forward(&params, &random_vec(3, 6)).unwrap();
        let mut one_hot = vec![0.0; 3];
        one_hot[1] = 1.0;
        let grads = backward(&params, &cache, &[0.0; 4], &one_hot, &[0.0; 7]).unwrap();
        assert_eq!(grads.b_task, one_hot);
    }

    /// Flattens params, applies `f` to the scalarized network output, and
    /// compares analytic gradients against central differences.
    #[test]
    fn backward_matches_finite_differences() {
        let dims = tiny_dims();
        for case in 0..5u64 {
            let params = init_params(dims, RngSeed(100 + case)).unwrap();
            let x = random_vec(200 + case, dims.d_in);
            let u = random_vec(300 + case, dims.d_emb);
            let v = random_vec(400 + case, dims.k_train);
            let w = random_vec(500 + case, dims.k_src);

            let cache = forward(&params, &x).unwrap();
            let analytic = backward(&params, &cache, &u, &v, &w).unwrap();

            let flat: Vec<f64> = params
                .blocks()
                .iter()
                .flat_map(|b| b.iter().copied())
                .collect();
            let scalar = |theta: &[f64]| {
                let mut p = ModelParams::zeros(dims).unwrap();
                let mut off = 0;
                for block in p.blocks_mut() {
                    block.copy_from_slice(&theta[off..off + block.len()]);
                    off += block.len();
                }
                let c = forward(&p, &x).unwrap();
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                dot(&c.embedding, &u) + dot(&c.task_logits, &v) + dot(&c.src_logits, &w)
            };
            let numeric = finite_diff_grad(scalar, &flat, 1e-5).unwrap();
            let analytic_flat: Vec<f64> = analytic
                .blocks()
                .iter()
                .flat_map(|b| b.iter().copied())
                .collect();
            for (i, (&a, &n)) in analytic_flat.iter().zip(&numeric).enumerate() {
                assert!(
                    relative_error(a, n) < 1e-4,
                    "case {case} entry {i}: analytic {a} vs numeric {n}"
                );
            }
        }
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr_keep_params() {
        let dims = tiny_dims();
        let mut params = init_params(dims, RngSeed(4)).unwrap();
        let reference = params.clone();
        let mut state = AdamState::new(dims).unwrap();
        adam_step(
            &mut params,
            &ModelParams::zeros(dims).unwrap(),
            &mut state,
            0.01,
        )
        .unwrap();
        assert_eq!(params, reference);
        assert_eq!(state.step, 1);

        let mut grads = ModelParams::zeros(dims).unwrap();
        for block in grads.blocks_mut() {
            block.fill(1.0);
        }
        adam_step(&mut params, &grads, &mut state, 0.0).unwrap();
        assert_eq!(params, reference);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let dims = tiny_dims();
        let mut params = ModelParams::zeros(dims).unwrap();
        for block in params.blocks_mut() {
            block.fill(1.0);
        }
        let mut grads = ModelParams::zeros(dims).unwrap();
        for block in grads.blocks_mut() {
            block.fill(1.0);
        }
        let mut state = AdamState::new(dims).unwrap();
        let lr = 0.05;
        adam_step(&mut params, &grads, &mut state, lr).unwrap();
        // Bias correction makes m_hat = v_hat = 1 on the first step.
        for block in params.blocks() {
            for &p in block {
                assert!((p - (1.0 - lr)).abs() < 1e-8 * lr + 1e-12, "param {p}");
            }
        }
    }

    #[test]
    fn adam_refuses_non_finite_gradients() {
        let dims = tiny_dims();
        let mut params = init_params(dims, RngSeed(4)).unwrap();
        let reference = params.clone();
        let mut grads = ModelParams::zeros(dims).unwrap();
        grads.b1[0] = f64::NAN;
        let mut state = AdamState::new(dims).unwrap();
        let err = adam_step(&mut params, &grads, &mut state, 0.01).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(params, reference);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn adam_is_deterministic() {
        let dims = tiny_dims();
        let grads = init_params(dims, RngSeed(6)).unwrap();
        let run = || {
            let mut p = init_params(dims, RngSeed(5)).unwrap();
            let mut s = AdamState::new(dims).unwrap();
            for _ in 0..3 {
                adam_step(&mut p, &grads, &mut s, 1e-3).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cosine_schedule_hits_endpoints() {
        assert_eq!(cosine_lr(1e-4, 1e-7, 0, 20), 1e-4);
        let last = cosine_lr(1e-4, 1e-7, 19, 20);
        assert!((last - 1e-7).abs() < 1e-18);
        let mid = cosine_lr(1.0, 0.0, 5, 11);
        assert!((mid - 0.5).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trips_and_rejects_corruption() {
        let params = init_params(tiny_dims(), RngSeed(77)).unwrap();
        let bytes = checkpoint_to_bytes(&params);
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(checkpoint_to_bytes(&back), bytes);

        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        let err = checkpoint_from_bytes(&corrupt).unwrap_err();
        assert!(err.to_string().contains("SBKAMDL1"), "{err}");

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            checkpoint_from_bytes(truncated),
            Err(Error::Format { .. })
        ));
    }
}
