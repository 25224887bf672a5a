//! h-parameterized network surgery: dense layers `x ↦ ρ(Wx + b)` rebuilt out
//! of DLoR layers whose output converges to the dense one as `h → 0`.
//!
//! Every construction rests on the identity block
//! `Ψ_h(ρ(Φ_h(x)))` with `Φ_h(x) = hx + c` and `Ψ_h(y) = (y − ρ(c))/(hρ′(c))`:
//! inputs are squeezed into the near-linear regime of `ρ` around `c`,
//! transformed there, and scaled back out by the last layer.
//!
//! * [`build_deep_block`] chains the factors `M_L···M_1` of a multiplicative
//!   factorization, one activated layer each.
//! * [`build_wide_block`] runs the summands of an additive split in parallel
//!   and mixes them with zero-sum weights that cancel the `ρ(c)/h` drift.
//! * [`build_augmented_block`] accumulates rank-1 terms in a `2N` state.
//! * [`transfer_network`] converts a whole dense network.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{ActivationError, ActivationSpec};
use crate::decompose::{
    self, additive_split, embed_rectangular_with, multiplicative_factorize,
    perturb_to_invertible, DecomposeError, PadSpec, PadStrategy, DEFAULT_PAD_EPSILON, RANK_TOL,
};
use crate::linalg::{latin_hypercube, svd, LinalgError, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructError {
    #[error("h must be positive and finite, got {0}")]
    InvalidH(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ConstructError>;

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(ConstructError::InvalidH(h))
    }
}

/// `x ↦ ρ(Wx + b)` or, without activation, `x ↦ Wx + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub w: Matrix,
    pub b: Vector,
    pub apply_activation: bool,
}

impl AffineLayer {
    pub fn new(w: Matrix, b: Vector, apply_activation: bool) -> Result<Self> {
        if w.rows() != b.len() {
            return Err(ConstructError::DimensionMismatch(format!(
                "weight has {} rows, bias has {} entries",
                w.rows(),
                b.len()
            )));
        }
        Ok(AffineLayer {
            w,
            b,
            apply_activation,
        })
    }

    pub fn forward(&self, activation: &ActivationSpec, x: &[f64]) -> Vector {
        let a = self.w.matvec(x).add(&self.b);
        if self.apply_activation {
            activation.eval_vec(&a)
        } else {
            a
        }
    }
}

/// Sequential forward pass through `layers`.
pub fn run_layers(layers: &[AffineLayer], activation: &ActivationSpec, x: &[f64]) -> Result<Vector> {
    let mut state = Vector::new(x.to_vec());
    for (i, layer) in layers.iter().enumerate() {
        if layer.w.cols() != state.len() {
            return Err(ConstructError::DimensionMismatch(format!(
                "layer {i} expects {} inputs, got {}",
                layer.w.cols(),
                state.len()
            )));
        }
        state = layer.forward(activation, &state);
    }
    Ok(state)
}

/// Forward pass of a plain dense network.
pub fn dense_forward(layers: &[AffineLayer], activation: &ActivationSpec, x: &[f64]) -> Result<Vector> {
    run_layers(layers, activation, x)
}

/// `Ψ_h(ρ(Φ_h(x)))` element-wise; tends to `x` as `h → 0`.
pub fn identity_block(x: &[f64], h: f64, activation: &ActivationSpec) -> Result<Vector> {
    check_h(h)?;
    activation.require_expansion()?;
    let (c, rc, dc) = (activation.c, activation.rho_c, activation.drho_c);
    Ok(x
        .iter()
        .map(|&xi| (activation.eval(h * xi + c) - rc) / (h * dc))
        .collect())
}

/// The dense layer a plan simulates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceLayer {
    pub w: Matrix,
    pub b: Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepMeta {
    pub alpha: f64,
    pub rank: usize,
    pub residual: f64,
    /// Diagonal scalar of every layer weight (`scalar·I + low rank`).
    pub scalars: Vec<f64>,
    /// Rank bound of the low-rank part of every layer weight.
    pub ranks: Vec<usize>,
}

/// Deep DLoR simulation of one dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepBlockPlan {
    pub layers: Vec<AffineLayer>,
    pub h: f64,
    pub activation: ActivationSpec,
    pub source: SourceLayer,
    pub pad: PadSpec,
    pub meta: DeepMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeepConfig {
    pub rank_cap: usize,
    pub alpha: f64,
    pub h: f64,
    pub seed: u64,
    /// `false` drops ρ from the last layer, giving `≈ Wx + b`.
    pub final_activation: bool,
    pub pad: PadStrategy,
}

impl DeepConfig {
    pub fn new(rank_cap: usize, alpha: f64, h: f64, seed: u64) -> Self {
        DeepConfig {
            rank_cap,
            alpha,
            h,
            seed,
            final_activation: true,
            pad: PadStrategy::default(),
        }
    }
}

/// Deep block for `ρ(Wx + b)`: layer 1 is `h·M_1` with bias `c𝟙`, middle
/// layers `M_l/ρ′(c)` with bias `c𝟙 − (ρ(c)/ρ′(c))·M_l𝟙`, and the last
/// `M_L/(hρ′(c))` with bias `b − (ρ(c)/(hρ′(c)))·M_L𝟙`. With a single factor
/// the block is `h·W` followed by the unscaling layer `(1/(hρ′(c)))·I`.
///
/// Rectangular `w` is embedded in a square matrix first; singular `w` is
/// nudged to an invertible one.
pub fn build_deep_block(
    w: &Matrix,
    b: &Vector,
    rank_cap: usize,
    alpha: f64,
    h: f64,
    activation: &ActivationSpec,
    seed: u64,
) -> Result<DeepBlockPlan> {
    build_deep_block_with(w, b, activation, &DeepConfig::new(rank_cap, alpha, h, seed))
}

pub fn build_deep_block_with(
    w: &Matrix,
    b: &Vector,
    activation: &ActivationSpec,
    cfg: &DeepConfig,
) -> Result<DeepBlockPlan> {
    check_h(cfg.h)?;
    activation.require_expansion()?;
    if w.rows() != b.len() {
        return Err(ConstructError::DimensionMismatch(format!(
            "weight has {} rows, bias has {} entries",
            w.rows(),
            b.len()
        )));
    }
    let emb = embed_rectangular_with(w, cfg.pad);
    let d = emb.pad.dim;
    let square = perturb_to_invertible(&emb.w_square, DEFAULT_PAD_EPSILON)?;
    let b_pad = emb.pad.pad_input(b);
    let rank_cap = cfg.rank_cap.clamp(1, d);
    let fact = multiplicative_factorize(&square, rank_cap, cfg.alpha, cfg.seed)?;

    let (h, c, rc, dc) = (cfg.h, activation.c, activation.rho_c, activation.drho_c);
    let ones = vec![1.0; d];
    let comps = &fact.components;
    let l = comps.len();
    let mut layers = Vec::with_capacity(l.max(2));
    let mut scalars = Vec::new();
    let mut ranks = Vec::new();

    layers.push(AffineLayer {
        w: comps[0].dense().scale(h),
        b: Vector::filled(d, c),
        apply_activation: true,
    });
    scalars.push(h * cfg.alpha);
    ranks.push(comps[0].rank());
    for m in comps.iter().skip(1).take(l.saturating_sub(2)) {
        let m1 = m.apply(&ones);
        layers.push(AffineLayer {
            w: m.dense().scale(1.0 / dc),
            b: m1.iter().map(|v| c - rc / dc * v).collect(),
            apply_activation: true,
        });
        scalars.push(cfg.alpha / dc);
        ranks.push(m.rank());
    }
    let out_scale = 1.0 / (h * dc);
    let last_bias = |m1: &[f64]| -> Vector {
        b_pad.iter().zip(m1).map(|(bi, v)| bi - rc * out_scale * v).collect()
    };
    if l == 1 {
        layers.push(AffineLayer {
            w: Matrix::scaled_identity(d, out_scale),
            b: last_bias(&ones),
            apply_activation: cfg.final_activation,
        });
        scalars.push(out_scale);
        ranks.push(0);
    } else {
        let m = &comps[l - 1];
        layers.push(AffineLayer {
            w: m.dense().scale(out_scale),
            b: last_bias(&m.apply(&ones)),
            apply_activation: cfg.final_activation,
        });
        scalars.push(cfg.alpha * out_scale);
        ranks.push(m.rank());
    }

    Ok(DeepBlockPlan {
        layers,
        h,
        activation: *activation,
        source: SourceLayer {
            w: w.clone(),
            b: b.clone(),
        },
        pad: emb.pad,
        meta: DeepMeta {
            alpha: cfg.alpha,
            rank: rank_cap,
            residual: fact.residual,
            scalars,
            ranks,
        },
    })
}

impl DeepBlockPlan {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Largest DLoR shape residual over all layers (see
    /// [`decompose::dlor_shape_residual`]).
    pub fn shape_residual(&self) -> Result<f64> {
        let mut worst = 0.0_f64;
        for ((layer, &s), &r) in self.layers.iter().zip(&self.meta.scalars).zip(&self.meta.ranks) {
            worst = worst.max(decompose::dlor_shape_residual(&layer.w, s, r)?);
        }
        Ok(worst)
    }

    pub fn passes_shape_check(&self) -> Result<bool> {
        Ok(self.shape_residual()? <= RANK_TOL)
    }
}

/// Wide DLoR simulation of one dense layer: `L` parallel branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WideBlockPlan {
    /// `L·m × n`, block `l` is `(h/β_l)·M_l`.
    pub stacked_w: Matrix,
    /// `L·m`, all `c`.
    pub stacked_b: Vector,
    pub betas: Vector,
    pub target_bias: Vector,
    pub h: f64,
    pub activation: ActivationSpec,
    pub source: SourceLayer,
    pub apply_output_activation: bool,
}

/// Wide block for `ρ(Wx + b)`: `ρ(Σ_l (β_l/(hρ′(c)))·ρ((h/β_l)·M_l x + c𝟙) + b)`
/// with `Σ_l M_l = W` and `Σ_l β_l = 0`, so the constant `ρ(c)` terms cancel.
pub fn build_wide_block(
    w: &Matrix,
    b: &Vector,
    num_parts: usize,
    h: f64,
    activation: &ActivationSpec,
) -> Result<WideBlockPlan> {
    check_h(h)?;
    activation.require_expansion()?;
    if w.rows() != b.len() {
        return Err(ConstructError::DimensionMismatch(format!(
            "weight has {} rows, bias has {} entries",
            w.rows(),
            b.len()
        )));
    }
    let split = additive_split(w, num_parts)?;
    let betas = split.betas()?.clone();
    let (m, n) = w.shape();
    let mut stacked_w = Matrix::zeros(num_parts * m, n);
    for (l, summand) in split.summands.iter().enumerate() {
        stacked_w.set_block(l * m, 0, &summand.scale(h / betas[l]));
    }
    Ok(WideBlockPlan {
        stacked_w,
        stacked_b: Vector::filled(num_parts * m, activation.c),
        betas,
        target_bias: b.clone(),
        h,
        activation: *activation,
        source: SourceLayer {
            w: w.clone(),
            b: b.clone(),
        },
        apply_output_activation: true,
    })
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `Σ β_i x_i` in double-double, rounded once.
fn compensated_dot(betas: &[f64], xs: impl Iterator<Item = f64>) -> f64 {
    let (mut hi, mut lo) = (0.0, 0.0);
    for (beta, x) in betas.iter().zip(xs) {
        let (p, pe) = two_prod(*beta, x);
        let (s, se) = two_sum(hi, p);
        hi = s;
        lo += pe + se;
    }
    let (s, e) = two_sum(hi, lo);
    s + e
}

impl WideBlockPlan {
    pub fn parts(&self) -> usize {
        self.betas.len()
    }

    pub fn out_dim(&self) -> usize {
        self.target_bias.len()
    }

    pub fn readout_scale(&self) -> f64 {
        1.0 / (self.h * self.activation.drho_c)
    }

    /// `m × L·m` readout of blocks `(β_l/(hρ′(c)))·I`.
    pub fn readout(&self) -> Matrix {
        let m = self.out_dim();
        let s = self.readout_scale();
        let mut r = Matrix::zeros(m, m * self.parts());
        for (l, beta) in self.betas.iter().enumerate() {
            for i in 0..m {
                r.set(i, l * m + i, beta * s);
            }
        }
        r
    }

    pub fn hidden(&self, x: &[f64]) -> Vector {
        self.activation
            .eval_vec(&self.stacked_w.matvec(x).add(&self.stacked_b))
    }

    /// Pre-activation of the output layer. The β-weighted branch sum is
    /// accumulated exactly, so identical branches cancel to zero.
    pub fn pre_activation(&self, x: &[f64]) -> Vector {
        let hidden = self.hidden(x);
        let m = self.out_dim();
        let s = self.readout_scale();
        (0..m)
            .map(|i| {
                let mixed = compensated_dot(&self.betas, (0..self.parts()).map(|l| hidden[l * m + i]));
                s * mixed + self.target_bias[i]
            })
            .collect()
    }

    /// The plan as two plain layers (drift cancellation then relies on
    /// ordinary floating-point sums).
    pub fn to_layers(&self) -> Vec<AffineLayer> {
        vec![
            AffineLayer {
                w: self.stacked_w.clone(),
                b: self.stacked_b.clone(),
                apply_activation: true,
            },
            AffineLayer {
                w: self.readout(),
                b: self.target_bias.clone(),
                apply_activation: self.apply_output_activation,
            },
        ]
    }
}

/// Width-`2N` construction accumulating the rank-1 terms of `W` in the
/// bottom half of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedBlockPlan {
    pub layers: Vec<AffineLayer>,
    /// `(u_i, v_i)` with `W = Σ u_i v_iᵀ`.
    pub rank1_terms: Vec<(Vector, Vector)>,
    pub h: f64,
    pub activation: ActivationSpec,
    pub source: SourceLayer,
}

/// Augmented block for `ρ(Wx + b)` on the padded input `[x; 0]`; the output
/// tends to `[ρ(x); ρ(Wx + b)]`. Uses `k = rank(W)` rank-1 updates
/// `I + ũ_i ṽ_iᵀ` (`ũ = [0; u]`, `ṽ = [v; 0]`) and `k + 1` layers.
pub fn build_augmented_block(
    w: &Matrix,
    b: &Vector,
    h: f64,
    activation: &ActivationSpec,
) -> Result<AugmentedBlockPlan> {
    check_h(h)?;
    activation.require_expansion()?;
    let n = w.rows();
    if !w.is_square() || b.len() != n {
        return Err(ConstructError::DimensionMismatch(format!(
            "augmented block needs square W and matching bias, got {:?} and {}",
            w.shape(),
            b.len()
        )));
    }
    let s = svd(w)?;
    let k = s.rank(RANK_TOL);
    let terms: Vec<(Vector, Vector)> = (0..k)
        .map(|i| {
            (
                s.u.column(i).scale(s.sigma[i]),
                Vector::new(s.vt.row(i).to_vec()),
            )
        })
        .collect();
    let d = 2 * n;
    let (c, rc, dc) = (activation.c, activation.rho_c, activation.drho_c);
    let b_tilde = Vector::zeros(n).stack(b);

    let update = |(u, v): &(Vector, Vector)| -> Matrix {
        let mut m = Matrix::identity(d);
        for i in 0..n {
            for j in 0..n {
                m.set(n + i, j, m.get(n + i, j) + u[i] * v[j]);
            }
        }
        m
    };

    let mut layers = Vec::with_capacity(k + 1);
    if k == 0 {
        layers.push(AffineLayer {
            w: Matrix::identity(d),
            b: b_tilde,
            apply_activation: true,
        });
    } else {
        layers.push(AffineLayer {
            w: update(&terms[0]).scale(h),
            b: Vector::filled(d, c),
            apply_activation: true,
        });
        for term in &terms[1..] {
            let s_l: f64 = term.1.iter().sum();
            let mut bias = Vector::filled(d, c - rc / dc);
            for i in 0..n {
                bias[n + i] -= rc * s_l / dc * term.0[i];
            }
            layers.push(AffineLayer {
                w: update(term).scale(1.0 / dc),
                b: bias,
                apply_activation: true,
            });
        }
        let out_scale = 1.0 / (h * dc);
        layers.push(AffineLayer {
            w: Matrix::scaled_identity(d, out_scale),
            b: b_tilde.iter().map(|bi| bi - rc * out_scale).collect(),
            apply_activation: true,
        });
    }
    Ok(AugmentedBlockPlan {
        layers,
        rank1_terms: terms,
        h,
        activation: *activation,
        source: SourceLayer {
            w: w.clone(),
            b: b.clone(),
        },
    })
}

impl AugmentedBlockPlan {
    pub fn n(&self) -> usize {
        self.source.w.rows()
    }

    /// Runs the `2N` state directly (no padding).
    pub fn simulate_state(&self, state: &[f64]) -> Result<Vector> {
        run_layers(&self.layers, &self.activation, state)
    }

    /// `(top, bottom)` halves of the output for input `[x; 0]`.
    pub fn simulate_split(&self, x: &[f64]) -> Result<(Vector, Vector)> {
        let out = self.simulate(x)?;
        let n = self.n();
        Ok((
            Vector::new(out.as_slice()[..n].to_vec()),
            Vector::new(out.as_slice()[n..].to_vec()),
        ))
    }
}

/// `S_ε = [[εI, I], [0, εI]]`, the invertible proxy of the reset-and-swap map.
pub fn reset_swap_matrix(n: usize, epsilon: f64) -> Matrix {
    let mut s = Matrix::scaled_identity(2 * n, epsilon);
    for i in 0..n {
        s.set(i, n + i, 1.0);
    }
    s
}

/// Deep block (linear output) for `S_ε`, mapping `[a; y] ↦ [y + εa; εy]`.
pub fn build_reset_swap(
    n: usize,
    epsilon: f64,
    rank_cap: usize,
    alpha: f64,
    h: f64,
    activation: &ActivationSpec,
    seed: u64,
) -> Result<DeepBlockPlan> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(ConstructError::DimensionMismatch(format!(
            "reset-swap needs epsilon > 0, got {epsilon}"
        )));
    }
    let s = reset_swap_matrix(n, epsilon);
    let mut cfg = DeepConfig::new(rank_cap, alpha, h, seed);
    cfg.final_activation = false;
    build_deep_block_with(&s, &Vector::zeros(2 * n), activation, &cfg)
}

/// Anything that maps an input vector to an output vector.
pub trait Simulate {
    fn simulate(&self, x: &[f64]) -> Result<Vector>;
}

impl Simulate for DeepBlockPlan {
    fn simulate(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.pad.in_dim {
            return Err(ConstructError::DimensionMismatch(format!(
                "plan takes {} inputs, got {}",
                self.pad.in_dim,
                x.len()
            )));
        }
        let out = run_layers(&self.layers, &self.activation, &self.pad.pad_input(x))?;
        Ok(self.pad.truncate_output(&out))
    }
}

impl Simulate for WideBlockPlan {
    fn simulate(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.stacked_w.cols() {
            return Err(ConstructError::DimensionMismatch(format!(
                "plan takes {} inputs, got {}",
                self.stacked_w.cols(),
                x.len()
            )));
        }
        let pre = self.pre_activation(x);
        Ok(if self.apply_output_activation {
            self.activation.eval_vec(&pre)
        } else {
            pre
        })
    }
}

impl Simulate for AugmentedBlockPlan {
    fn simulate(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.n() {
            return Err(ConstructError::DimensionMismatch(format!(
                "plan takes {} inputs, got {}",
                self.n(),
                x.len()
            )));
        }
        self.simulate_state(&Vector::new(x.to_vec()).stack(&Vector::zeros(self.n())))
    }
}

/// One stage of a converted network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Stage {
    Deep(DeepBlockPlan),
    Wide(WideBlockPlan),
    /// Carried over unchanged (e.g. the linear readout).
    Plain(AffineLayer),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferredNetwork {
    pub stages: Vec<Stage>,
    pub activation: ActivationSpec,
}

impl TransferredNetwork {
    /// Total number of DLoR layers (plain stages excluded).
    pub fn dlor_depth(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::Deep(p) => p.depth(),
                Stage::Wide(_) => 2,
                Stage::Plain(_) => 0,
            })
            .sum()
    }
}

impl Simulate for TransferredNetwork {
    fn simulate(&self, x: &[f64]) -> Result<Vector> {
        let mut state = Vector::new(x.to_vec());
        for stage in &self.stages {
            state = match stage {
                Stage::Deep(p) => p.simulate(&state)?,
                Stage::Wide(p) => p.simulate(&state)?,
                Stage::Plain(l) => run_layers(std::slice::from_ref(l), &self.activation, &state)?,
            };
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    Deep,
    Wide,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferConfig {
    pub mode: TransferMode,
    /// Rank per factor (deep) or per summand (wide).
    pub rank_cap: usize,
    pub alpha: f64,
    pub h: f64,
    pub seed: u64,
    pub pad: PadStrategy,
}

/// Replaces every activated layer of `dense` with a deep block; layers
/// without activation (the readout) are kept as they are.
pub fn transfer_network(
    dense: &[AffineLayer],
    activation: &ActivationSpec,
    rank_cap: usize,
    alpha: f64,
    h: f64,
    seed: u64,
) -> Result<TransferredNetwork> {
    transfer_network_with(
        dense,
        activation,
        &TransferConfig {
            mode: TransferMode::Deep,
            rank_cap,
            alpha,
            h,
            seed,
            pad: PadStrategy::default(),
        },
    )
}

/// Wide blocks get `L = max(2, ⌈rank(W)/r⌉)` branches.
pub fn transfer_network_with(
    dense: &[AffineLayer],
    activation: &ActivationSpec,
    cfg: &TransferConfig,
) -> Result<TransferredNetwork> {
    let mut stages = Vec::with_capacity(dense.len());
    for (i, layer) in dense.iter().enumerate() {
        if !layer.apply_activation {
            stages.push(Stage::Plain(layer.clone()));
            continue;
        }
        let seed = cfg.seed.wrapping_add(i as u64);
        stages.push(match cfg.mode {
            TransferMode::Deep => {
                let mut dc = DeepConfig::new(cfg.rank_cap, cfg.alpha, cfg.h, seed);
                dc.pad = cfg.pad;
                Stage::Deep(build_deep_block_with(&layer.w, &layer.b, activation, &dc)?)
            }
            TransferMode::Wide => {
                let rank = svd(&layer.w)?.rank(RANK_TOL).max(1);
                let parts = rank.div_ceil(cfg.rank_cap.max(1)).max(2);
                Stage::Wide(build_wide_block(&layer.w, &layer.b, parts, cfg.h, activation)?)
            }
        });
    }
    Ok(TransferredNetwork {
        stages,
        activation: *activation,
    })
}

/// `count` evenly spaced points on `[lo, hi]` as a `1 × count` matrix.
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Matrix {
    let step = if count > 1 {
        (hi - lo) / (count - 1) as f64
    } else {
        0.0
    };
    Matrix::from_fn(1, count, |_, j| lo + step * j as f64)
}

/// Default evaluation grid on `[−2, 2]^n`: 200 uniform points in one
/// dimension, a 512-point Latin hypercube otherwise.
pub fn evaluation_grid(n: usize, seed: u64) -> Matrix {
    if n == 1 {
        uniform_grid(-2.0, 2.0, 200)
    } else {
        latin_hypercube(n, 512, -2.0, 2.0, seed)
    }
}

/// `max_j ‖f(x_j) − g(x_j)‖_∞` over the columns of `grid`.
pub fn sup_error(
    f: impl Fn(&[f64]) -> Result<Vector>,
    g: impl Fn(&[f64]) -> Result<Vector>,
    grid: &Matrix,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for j in 0..grid.cols() {
        let x = grid.column(j);
        let a = f(&x)?;
        let b = g(&x)?;
        if a.len() != b.len() {
            return Err(ConstructError::DimensionMismatch(format!(
                "outputs of length {} and {}",
                a.len(),
                b.len()
            )));
        }
        let e = a.max_abs_diff(&b);
        worst = if e.is_nan() { f64::NAN } else { worst.max(e) };
    }
    Ok(worst)
}

/// Evaluates `error_at(h)` for every `h`, fanned out over workers; results
/// come back in the order of `hs`.
pub fn h_sweep<F>(hs: &[f64], error_at: F) -> Result<Vec<(f64, f64)>>
where
    F: Fn(f64) -> Result<f64> + Sync + Send,
{
    crate::par::map(hs, |&h| error_at(h).map(|e| (h, e)))
        .into_iter()
        .collect()
}

/// `h = 10^{-from}, …, 10^{-to}`.
pub fn decades(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 10f64.powi(-k)).collect()
}

/// Simulated parameter count of one DLoR component: `2nr + 1`.
pub fn dlor_param_count(n: usize, r: usize) -> usize {
    2 * n * r + 1
}

/// Parameters needed to simulate an `n × n` dense layer with `n` rank-1
/// components: `n·(2n + 1)`.
pub fn dense_layer_sim_count(n: usize) -> usize {
    n * dlor_param_count(n, 1)
}

/// Which construction a [`PlanFile`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Deep,
    Wide,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMeta {
    pub alpha: Option<f64>,
    pub rank: usize,
    pub residual: Option<f64>,
    /// Wide plans: number of branches.
    pub parts: Option<usize>,
    pub seed: u64,
}

/// A construction flattened to plain layers, for storage and replay.
///
/// The input is written at the start of a zero state of the first layer's
/// width; the output is read from `out_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub kind: PlanKind,
    pub h: f64,
    pub activation: ActivationSpec,
    pub layers: Vec<AffineLayer>,
    pub meta: PlanMeta,
    pub source: SourceLayer,
    pub out_offset: usize,
}

impl PlanFile {
    /// Builds a plan of `kind` for `ρ(Wx + b)` at step `h`.
    pub fn build(
        kind: PlanKind,
        source: &SourceLayer,
        rank: usize,
        alpha: f64,
        h: f64,
        activation: &ActivationSpec,
        seed: u64,
    ) -> Result<PlanFile> {
        let (w, b) = (&source.w, &source.b);
        let mut meta = PlanMeta {
            alpha: None,
            rank,
            residual: None,
            parts: None,
            seed,
        };
        let (layers, out_offset) = match kind {
            PlanKind::Deep => {
                let plan = build_deep_block(w, b, rank, alpha, h, activation, seed)?;
                meta.alpha = Some(alpha);
                meta.residual = Some(plan.meta.residual);
                meta.rank = plan.meta.rank;
                (plan.layers, 0)
            }
            PlanKind::Wide => {
                let r = svd(w)?.rank(RANK_TOL).max(1);
                let parts = r.div_ceil(rank.max(1)).max(2);
                meta.parts = Some(parts);
                (build_wide_block(w, b, parts, h, activation)?.to_layers(), 0)
            }
            PlanKind::Augmented => {
                let plan = build_augmented_block(w, b, h, activation)?;
                meta.rank = plan.rank1_terms.len();
                (plan.layers, w.rows())
            }
        };
        Ok(PlanFile {
            kind,
            h,
            activation: *activation,
            layers,
            meta,
            source: source.clone(),
            out_offset,
        })
    }

    /// The same construction at another `h`.
    pub fn rebuild(&self, h: f64) -> Result<PlanFile> {
        PlanFile::build(
            self.kind,
            &self.source,
            self.meta.rank,
            self.meta.alpha.unwrap_or(decompose::DEFAULT_ALPHA),
            h,
            &self.activation,
            self.meta.seed,
        )
    }

    pub fn in_dim(&self) -> usize {
        self.source.w.cols()
    }

    /// `ρ(Wx + b)`.
    pub fn target(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.in_dim() {
            return Err(ConstructError::DimensionMismatch(format!(
                "plan takes {} inputs, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        Ok(self
            .activation
            .eval_vec(&self.source.w.matvec(x).add(&self.source.b)))
    }

    /// Sup-norm error against [`PlanFile::target`] over the columns of `grid`.
    pub fn sup_error(&self, grid: &Matrix) -> Result<f64> {
        sup_error(|x| self.simulate(x), |x| self.target(x), grid)
    }
}

impl Simulate for PlanFile {
    fn simulate(&self, x: &[f64]) -> Result<Vector> {
        let first = self.layers.first().ok_or_else(|| {
            ConstructError::DimensionMismatch("plan has no layers".into())
        })?;
        let width = first.w.cols();
        if x.len() != self.in_dim() || x.len() > width {
            return Err(ConstructError::DimensionMismatch(format!(
                "plan takes {} inputs, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let mut state = vec![0.0; width];
        state[..x.len()].copy_from_slice(x);
        let out = run_layers(&self.layers, &self.activation, &state)?;
        let m = self.source.w.rows();
        if out.len() < self.out_offset + m {
            return Err(ConstructError::DimensionMismatch("plan output too short".into()));
        }
        Ok(Vector::new(out.as_slice()[self.out_offset..self.out_offset + m].to_vec()))
    }
}

/// `count` values from `start` to `end`, log-spaced when both are positive
/// and differ by more than a factor of 10, linear otherwise.
pub fn parse_h_grid(spec: &str) -> Option<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    let start: f64 = parts[0].trim().parse().ok()?;
    let end: f64 = parts[1].trim().parse().ok()?;
    let count: usize = parts[2].trim().parse().ok()?;
    if count == 0 || !(start > 0.0 && end > 0.0 && start.is_finite() && end.is_finite()) {
        return None;
    }
    if count == 1 {
        return Some(vec![start]);
    }
    let ratio = (start / end).max(end / start);
    Some(
        (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                let v = if ratio > 10.0 {
                    10f64.powf(start.log10() + t * (end.log10() - start.log10()))
                } else {
                    start + t * (end - start)
                };
                // Drop representation noise so 1e-1:1e-3:3 yields 0.1, 0.01, 0.001.
                format!("{v:.12e}").parse().unwrap_or(v)
            })
            .collect(),
    )
}
