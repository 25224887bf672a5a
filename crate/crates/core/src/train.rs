//! Trainable scalar-to-scalar networks: a dense MLP, a deep chain of
//! `αI + UVᵀ` layers with one shared `α`, and a wide sum of parallel
//! low-rank branches with per-branch `α_l`. Gradients are hand-written
//! reverse mode; optimisation is full-batch Adam with a plateau scheduler.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationSpec;
use crate::construct::AffineLayer;
use crate::linalg::{rng_for, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {0}")]
    DivergedAt(usize),
    #[error("empty dataset")]
    EmptyData,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint is missing or has a malformed tensor `{0}`")]
    BadCheckpoint(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    DenseMlp,
    DeepDlor,
    WideDlor,
}

impl NetKind {
    pub fn name(self) -> &'static str {
        match self {
            NetKind::DenseMlp => "dense_mlp",
            NetKind::DeepDlor => "deep_dlor",
            NetKind::WideDlor => "wide_dlor",
        }
    }
}

/// `r_k = ⌈width/k⌉`.
pub fn rank_for(width: usize, k: usize) -> usize {
    width.div_ceil(k.max(1))
}

/// Offsets of every named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    in_w: Range<usize>,
    in_b: Range<usize>,
    /// Dense: `width × width` weights, row-major.
    hidden_w: Vec<Range<usize>>,
    hidden_b: Vec<Range<usize>>,
    /// Low-rank factors, `width × r` row-major.
    u: Vec<Range<usize>>,
    v: Vec<Range<usize>>,
    /// One entry for deep (shared), `k` for wide.
    alpha: Vec<usize>,
    outer_b: Option<Range<usize>>,
    out_w: Range<usize>,
    out_b: usize,
    total: usize,
}

impl Layout {
    fn new(kind: NetKind, width: usize, k: usize, rank: usize) -> Layout {
        let mut next = 0;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let in_w = take(width);
        let in_b = take(width);
        let (mut hidden_w, mut hidden_b, mut u, mut v, mut alpha) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut outer_b = None;
        match kind {
            NetKind::DenseMlp => {
                for _ in 0..k {
                    hidden_w.push(take(width * width));
                    hidden_b.push(take(width));
                }
            }
            NetKind::DeepDlor => {
                alpha.push(take(1).start);
                for _ in 0..k {
                    u.push(take(width * rank));
                    v.push(take(width * rank));
                    hidden_b.push(take(width));
                }
            }
            NetKind::WideDlor => {
                for _ in 0..k {
                    u.push(take(width * rank));
                    v.push(take(width * rank));
                    hidden_b.push(take(width));
                    alpha.push(take(1).start);
                }
                outer_b = Some(take(width));
            }
        }
        let out_w = take(width);
        let out_b = take(1).start;
        Layout {
            in_w,
            in_b,
            hidden_w,
            hidden_b,
            u,
            v,
            alpha,
            outer_b,
            out_w,
            out_b,
            total: next,
        }
    }
}

/// A scalar-input, scalar-output network.
///
/// For `DenseMlp`, `k` counts the `width × width` hidden layers (1 gives the
/// two-hidden-layer baseline). For the DLoR kinds it is the number of
/// substructures, each of rank `rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableNet {
    pub kind: NetKind,
    pub width: usize,
    pub k: usize,
    pub rank: usize,
    pub activation: ActivationSpec,
    params: Vec<f64>,
    layout: Layout,
}

/// Intermediate values of a batched forward pass, kept for the reverse
/// pass. Every array is feature-major: entry `(i, b)` lives at `i·B + b`.
struct Tape {
    /// `ρ′` at the input projection.
    d0: Vec<f64>,
    /// Hidden states entering each substructure, then the final one.
    xs: Vec<Vec<f64>>,
    /// `ρ′` at each substructure's pre-activation.
    ds: Vec<Vec<f64>>,
    /// `Vᵀx` per low-rank substructure.
    ts: Vec<Vec<f64>>,
    /// Wide: activated branch outputs and `ρ′` at the outer pre-activation.
    branch: Vec<Vec<f64>>,
    outer_d: Vec<f64>,
}

impl TrainableNet {
    /// All parameters zero except `α` (1 for deep, `1/k` for wide).
    pub fn zeros(kind: NetKind, width: usize, k: usize, activation: ActivationSpec) -> Result<Self> {
        if width == 0 || k == 0 {
            return Err(TrainError::InvalidConfig("width and k must be positive".into()));
        }
        let rank = match kind {
            NetKind::DenseMlp => width,
            _ => rank_for(width, k),
        };
        Self::zeros_with_rank(kind, width, k, rank, activation)
    }

    /// Like [`TrainableNet::zeros`] with an explicit rank.
    pub fn zeros_with_rank(
        kind: NetKind,
        width: usize,
        k: usize,
        rank: usize,
        activation: ActivationSpec,
    ) -> Result<Self> {
        if width == 0 || k == 0 || rank == 0 {
            return Err(TrainError::InvalidConfig("width, k and rank must be positive".into()));
        }
        let layout = Layout::new(kind, width, k, rank);
        let mut net = TrainableNet {
            kind,
            width,
            k,
            rank,
            activation,
            params: vec![0.0; layout.total],
            layout,
        };
        net.reset_alpha();
        Ok(net)
    }

    /// Freshly initialised net: weights uniform in `±1/√fan_in`, biases 0.
    pub fn new(kind: NetKind, width: usize, k: usize, activation: ActivationSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(kind, width, k, activation)?;
        net.init_params(seed);
        Ok(net)
    }

    /// Initialised net with an explicit substructure rank.
    pub fn with_rank(
        kind: NetKind,
        width: usize,
        k: usize,
        rank: usize,
        activation: ActivationSpec,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::zeros_with_rank(kind, width, k, rank, activation)?;
        net.init_params(seed);
        Ok(net)
    }

    fn reset_alpha(&mut self) {
        let a = match self.kind {
            NetKind::DeepDlor => 1.0,
            _ => 1.0 / self.k as f64,
        };
        for &i in &self.layout.alpha {
            self.params[i] = a;
        }
    }

    pub fn init_params(&mut self, seed: u64) {
        let mut rng = rng_for(seed, 500);
        let l = self.layout.clone();
        self.params.iter_mut().for_each(|p| *p = 0.0);
        let mut fill = |params: &mut [f64], r: &Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[r.clone()] {
                *p = rng.gen_range(-bound..=bound);
            }
        };
        fill(&mut self.params, &l.in_w, 1);
        for r in &l.hidden_w {
            fill(&mut self.params, r, self.width);
        }
        for (u, v) in l.u.iter().zip(&l.v) {
            // x ↦ U(Vᵀx): V sees `width` inputs, U sees `rank`.
            fill(&mut self.params, v, self.width);
            fill(&mut self.params, u, self.rank);
        }
        fill(&mut self.params, &l.out_w, self.width);
        self.reset_alpha();
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(TrainError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    /// Named tensors, in layout order.
    pub fn named_tensors(&self) -> Vec<(String, Range<usize>)> {
        let l = &self.layout;
        let mut out = vec![("input.w".to_string(), l.in_w.clone()), ("input.b".to_string(), l.in_b.clone())];
        for (i, r) in l.hidden_w.iter().enumerate() {
            out.push((format!("hidden{i}.w"), r.clone()));
        }
        for (i, r) in l.u.iter().enumerate() {
            out.push((format!("sub{i}.u"), r.clone()));
            out.push((format!("sub{i}.v"), l.v[i].clone()));
        }
        for (i, r) in l.hidden_b.iter().enumerate() {
            let prefix = if l.hidden_w.is_empty() { "sub" } else { "hidden" };
            out.push((format!("{prefix}{i}.b"), r.clone()));
        }
        match self.kind {
            NetKind::DeepDlor => out.push(("alpha".to_string(), l.alpha[0]..l.alpha[0] + 1)),
            NetKind::WideDlor => {
                for (i, &a) in l.alpha.iter().enumerate() {
                    out.push((format!("sub{i}.alpha"), a..a + 1));
                }
            }
            NetKind::DenseMlp => {}
        }
        if let Some(r) = &l.outer_b {
            out.push(("outer.b".to_string(), r.clone()));
        }
        out.push(("output.w".to_string(), l.out_w.clone()));
        out.push(("output.b".to_string(), l.out_b..l.out_b + 1));
        out
    }

    pub fn alpha(&self) -> &[usize] {
        &self.layout.alpha
    }

    pub fn alpha_values(&self) -> Vec<f64> {
        self.layout.alpha.iter().map(|&i| self.params[i]).collect()
    }

    fn mat(&self, r: &Range<usize>, cols: usize) -> Matrix {
        Matrix::from_vec(r.len() / cols, cols, self.params[r.clone()].to_vec())
            .expect("layout ranges have matching sizes")
    }

    /// `(U_l, V_l)` of substructure `l`.
    pub fn factors(&self, l: usize) -> (Matrix, Matrix) {
        (self.mat(&self.layout.u[l], self.rank), self.mat(&self.layout.v[l], self.rank))
    }

    /// Effective linear map of substructure `l`: `αI + UVᵀ` (deep), `UVᵀ`
    /// (wide) or the dense weight.
    pub fn substructure_weight(&self, l: usize) -> Matrix {
        match self.kind {
            NetKind::DenseMlp => self.mat(&self.layout.hidden_w[l], self.width),
            NetKind::DeepDlor => {
                let (u, v) = self.factors(l);
                u.matmul(&v.transpose()).add_scaled_identity(self.params[self.layout.alpha[0]])
            }
            NetKind::WideDlor => {
                let (u, v) = self.factors(l);
                u.matmul(&v.transpose())
            }
        }
    }

    /// Plain layers of a dense MLP, readout last (without activation).
    pub fn to_affine_layers(&self) -> Result<Vec<AffineLayer>> {
        if self.kind != NetKind::DenseMlp {
            return Err(TrainError::InvalidConfig("only dense nets are plain layer stacks".into()));
        }
        let l = &self.layout;
        let vec_of = |r: &Range<usize>| Vector::new(self.params[r.clone()].to_vec());
        let mut layers = vec![AffineLayer {
            w: self.mat(&l.in_w, 1),
            b: vec_of(&l.in_b),
            apply_activation: true,
        }];
        for (w, b) in l.hidden_w.iter().zip(&l.hidden_b) {
            layers.push(AffineLayer {
                w: self.mat(w, self.width),
                b: vec_of(b),
                apply_activation: true,
            });
        }
        layers.push(AffineLayer {
            w: self.mat(&l.out_w, self.width),
            b: Vector::new(vec![self.params[l.out_b]]),
            apply_activation: false,
        });
        Ok(layers)
    }

    /// `ρ(z)`, plus `ρ′(z)` when `keep` is set.
    fn act(&self, z: &[f64], keep: bool) -> (Vec<f64>, Vec<f64>) {
        if !keep {
            return (z.iter().map(|&v| self.activation.eval(v)).collect(), Vec::new());
        }
        let kind = self.activation.name;
        z.iter().map(|&v| kind.eval_with_deriv(v)).unzip()
    }

    /// Batched forward pass over `xs`.
    fn run(&self, xs: &[f64], keep: bool) -> (Vec<f64>, Option<Tape>) {
        let p = &self.params;
        let l = &self.layout;
        let (w, r, nb) = (self.width, self.rank, xs.len());
        let mut z0 = vec![0.0; w * nb];
        for i in 0..w {
            let (a, c) = (p[l.in_w.start + i], p[l.in_b.start + i]);
            for (z, &x) in z0[i * nb..(i + 1) * nb].iter_mut().zip(xs) {
                *z = a * x + c;
            }
        }
        let (mut state, d0) = self.act(&z0, keep);
        let mut tape = Tape {
            d0,
            xs: Vec::new(),
            ds: Vec::new(),
            ts: Vec::new(),
            branch: Vec::new(),
            outer_d: Vec::new(),
        };
        match self.kind {
            NetKind::DenseMlp => {
                for (wr, br) in l.hidden_w.iter().zip(&l.hidden_b) {
                    let mut z = vec![0.0; w * nb];
                    for i in 0..w {
                        let zi = &mut z[i * nb..(i + 1) * nb];
                        zi.fill(p[br.start + i]);
                        for j in 0..w {
                            axpy(p[wr.start + i * w + j], &state[j * nb..(j + 1) * nb], zi);
                        }
                    }
                    let (next, d) = self.act(&z, keep);
                    if keep {
                        tape.xs.push(std::mem::replace(&mut state, next));
                        tape.ds.push(d);
                    } else {
                        state = next;
                    }
                }
            }
            NetKind::DeepDlor => {
                let alpha = p[l.alpha[0]];
                for s in 0..self.k {
                    let t = lowrank_t(&p[l.v[s].clone()], r, &state, nb);
                    let u = &p[l.u[s].clone()];
                    let b = &p[l.hidden_b[s].clone()];
                    let mut z = vec![0.0; w * nb];
                    for i in 0..w {
                        let zi = &mut z[i * nb..(i + 1) * nb];
                        for (zv, &xv) in zi.iter_mut().zip(&state[i * nb..(i + 1) * nb]) {
                            *zv = alpha * xv + b[i];
                        }
                        for j in 0..r {
                            axpy(u[i * r + j], &t[j * nb..(j + 1) * nb], zi);
                        }
                    }
                    let (next, d) = self.act(&z, keep);
                    if keep {
                        tape.xs.push(std::mem::replace(&mut state, next));
                        tape.ds.push(d);
                        tape.ts.push(t);
                    } else {
                        state = next;
                    }
                }
            }
            NetKind::WideDlor => {
                let ob = l.outer_b.clone().expect("wide nets carry an outer bias");
                let mut outer_z = vec![0.0; w * nb];
                for i in 0..w {
                    outer_z[i * nb..(i + 1) * nb].fill(p[ob.start + i]);
                }
                for s in 0..self.k {
                    let t = lowrank_t(&p[l.v[s].clone()], r, &state, nb);
                    let u = &p[l.u[s].clone()];
                    let b = &p[l.hidden_b[s].clone()];
                    let mut z = vec![0.0; w * nb];
                    for i in 0..w {
                        let zi = &mut z[i * nb..(i + 1) * nb];
                        zi.fill(b[i]);
                        for j in 0..r {
                            axpy(u[i * r + j], &t[j * nb..(j + 1) * nb], zi);
                        }
                    }
                    let (a, d) = self.act(&z, keep);
                    axpy(p[l.alpha[s]], &a, &mut outer_z);
                    if keep {
                        tape.ds.push(d);
                        tape.ts.push(t);
                        tape.branch.push(a);
                    }
                }
                let (next, outer_d) = self.act(&outer_z, keep);
                if keep {
                    tape.xs.push(std::mem::replace(&mut state, next));
                    tape.outer_d = outer_d;
                } else {
                    state = next;
                }
            }
        }
        let mut y = vec![p[l.out_b]; nb];
        for i in 0..w {
            axpy(p[l.out_w.start + i], &state[i * nb..(i + 1) * nb], &mut y);
        }
        if keep {
            tape.xs.push(state);
            (y, Some(tape))
        } else {
            (y, None)
        }
    }

    pub fn forward(&self, x: f64) -> f64 {
        self.run(&[x], false).0[0]
    }

    pub fn forward_batch(&self, xs: &[f64]) -> Vec<f64> {
        self.run(xs, false).0
    }

    pub fn mse(&self, xs: &[f64], ys: &[f64]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let out = self.forward_batch(xs);
        let s: f64 = out.iter().zip(ys).map(|(o, y)| (o - y).powi(2)).sum();
        s / xs.len() as f64
    }

    /// Accumulates `Σ_b g_y[b] · ∂y_b/∂θ` into `grad`.
    fn backprop(&self, xs: &[f64], g_y: &[f64], tape: &Tape, grad: &mut [f64]) {
        let p = &self.params;
        let l = &self.layout;
        let (w, nb) = (self.width, xs.len());
        let last = tape.xs.last().expect("tape holds the final state");
        let mut g = vec![0.0; w * nb];
        for i in 0..w {
            grad[l.out_w.start + i] += dot(g_y, &last[i * nb..(i + 1) * nb]);
            let wi = p[l.out_w.start + i];
            for (gv, &gy) in g[i * nb..(i + 1) * nb].iter_mut().zip(g_y) {
                *gv = wi * gy;
            }
        }
        grad[l.out_b] += g_y.iter().sum::<f64>();

        match self.kind {
            NetKind::DenseMlp => {
                for s in (0..self.k).rev() {
                    mul_assign(&mut g, &tape.ds[s]);
                    let (wr, br, input) = (&l.hidden_w[s], &l.hidden_b[s], &tape.xs[s]);
                    let mut g_in = vec![0.0; w * nb];
                    for i in 0..w {
                        let gi = &g[i * nb..(i + 1) * nb];
                        grad[br.start + i] += gi.iter().sum::<f64>();
                        for j in 0..w {
                            let k = wr.start + i * w + j;
                            grad[k] += dot(gi, &input[j * nb..(j + 1) * nb]);
                            axpy(p[k], gi, &mut g_in[j * nb..(j + 1) * nb]);
                        }
                    }
                    g = g_in;
                }
            }
            NetKind::DeepDlor => {
                let ai = l.alpha[0];
                let alpha = p[ai];
                for s in (0..self.k).rev() {
                    mul_assign(&mut g, &tape.ds[s]);
                    let (input, t) = (&tape.xs[s], &tape.ts[s]);
                    grad[ai] += dot(&g, input);
                    let mut g_in: Vec<f64> = g.iter().map(|gv| alpha * gv).collect();
                    self.lowrank_backward(s, &g, input, t, &mut g_in, grad);
                    g = g_in;
                }
            }
            NetKind::WideDlor => {
                mul_assign(&mut g, &tape.outer_d);
                let ob = l.outer_b.clone().expect("wide nets carry an outer bias");
                for i in 0..w {
                    grad[ob.start + i] += g[i * nb..(i + 1) * nb].iter().sum::<f64>();
                }
                let input = &tape.xs[0];
                let mut g_in = vec![0.0; w * nb];
                for s in 0..self.k {
                    let ai = l.alpha[s];
                    grad[ai] += dot(&g, &tape.branch[s]);
                    let mut g_z: Vec<f64> = g.iter().map(|gv| p[ai] * gv).collect();
                    mul_assign(&mut g_z, &tape.ds[s]);
                    self.lowrank_backward(s, &g_z, input, &tape.ts[s], &mut g_in, grad);
                }
                g = g_in;
            }
        }
        mul_assign(&mut g, &tape.d0);
        for i in 0..w {
            let gi = &g[i * nb..(i + 1) * nb];
            grad[l.in_w.start + i] += dot(gi, xs);
            grad[l.in_b.start + i] += gi.iter().sum::<f64>();
        }
    }

    /// Gradients of `z = U(Vᵀx) + b` for substructure `s` given `g = ∂L/∂z`;
    /// adds `V·(Uᵀg)` into `g_in`.
    fn lowrank_backward(&self, s: usize, g: &[f64], input: &[f64], t: &[f64], g_in: &mut [f64], grad: &mut [f64]) {
        let p = &self.params;
        let l = &self.layout;
        let (w, r) = (self.width, self.rank);
        let nb = g.len() / w;
        let (ur, vr, br) = (&l.u[s], &l.v[s], &l.hidden_b[s]);
        let mut g_t = vec![0.0; r * nb];
        for i in 0..w {
            let gi = &g[i * nb..(i + 1) * nb];
            grad[br.start + i] += gi.iter().sum::<f64>();
            for j in 0..r {
                let k = ur.start + i * r + j;
                grad[k] += dot(gi, &t[j * nb..(j + 1) * nb]);
                axpy(p[k], gi, &mut g_t[j * nb..(j + 1) * nb]);
            }
        }
        for i in 0..w {
            let xi = &input[i * nb..(i + 1) * nb];
            for j in 0..r {
                let k = vr.start + i * r + j;
                let gt = &g_t[j * nb..(j + 1) * nb];
                grad[k] += dot(xi, gt);
                axpy(p[k], gt, &mut g_in[i * nb..(i + 1) * nb]);
            }
        }
    }

    /// Mean-squared error on `(xs, ys)` and its gradient.
    pub fn loss_and_grad(&self, xs: &[f64], ys: &[f64]) -> Result<(f64, Vec<f64>)> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(TrainError::EmptyData);
        }
        let n = xs.len() as f64;
        let (out, tape) = self.run(xs, true);
        let mut loss = 0.0;
        let g_y: Vec<f64> = out
            .iter()
            .zip(ys)
            .map(|(o, y)| {
                let e = o - y;
                loss += e * e;
                2.0 * e / n
            })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        self.backprop(xs, &g_y, &tape.expect("tape requested"), &mut grad);
        Ok((loss / n, grad))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: self.kind,
            width: self.width,
            k: self.k,
            rank: self.rank,
            activation: self.activation,
            params: self
                .named_tensors()
                .into_iter()
                .map(|(name, r)| (name, self.params[r].to_vec()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut net = Self::zeros_with_rank(ck.kind, ck.width, ck.k, ck.rank, ck.activation)?;
        for (name, r) in net.named_tensors() {
            let values = ck.params.get(&name).ok_or_else(|| TrainError::BadCheckpoint(name.clone()))?;
            if values.len() != r.len() {
                return Err(TrainError::BadCheckpoint(name));
            }
            net.params[r].copy_from_slice(values);
        }
        Ok(net)
    }
}

/// `T = VᵀX` for row-major `V` (`width × r`) and feature-major `X`.
fn lowrank_t(v: &[f64], r: usize, x: &[f64], nb: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * nb];
    for i in 0..v.len() / r {
        let xi = &x[i * nb..(i + 1) * nb];
        for j in 0..r {
            axpy(v[i * r + j], xi, &mut t[j * nb..(j + 1) * nb]);
        }
    }
    t
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn mul_assign(g: &mut [f64], d: &[f64]) {
    for (gv, dv) in g.iter_mut().zip(d) {
        *gv *= dv;
    }
}

/// Serialized network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: NetKind,
    pub width: usize,
    pub k: usize,
    pub rank: usize,
    pub activation: ActivationSpec,
    pub params: BTreeMap<String, Vec<f64>>,
}

/// Trainable scalars of a width-`width` net with `k` substructures.
///
/// Input projection and readout contribute `3·width + 1`; a deep net adds
/// `k·(2·width·r_k + width)` plus one shared `α`; a wide net adds
/// `k·(2·width·r_k + width + 1)` plus a `width` outer bias. A dense net
/// has `k` full hidden layers.
pub fn param_count(kind: NetKind, width: usize, k: usize) -> usize {
    let io = 3 * width + 1;
    let r = rank_for(width, k);
    match kind {
        NetKind::DenseMlp => io + k * (width * width + width),
        NetKind::DeepDlor => io + k * (2 * width * r + width) + 1,
        NetKind::WideDlor => io + width + k * (2 * width * r + width + 1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            patience: 200,
            factor: 0.5,
            min_lr: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub scheduler: SchedulerConfig,
    pub seed: u64,
    /// Stop once the training MSE drops below this.
    pub stop_threshold: Option<f64>,
    pub record_every: usize,
}

impl TrainConfig {
    pub fn new(lr: f64, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            lr,
            epochs,
            scheduler: SchedulerConfig::default(),
            seed,
            stop_threshold: None,
            record_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scheduler;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(s.factor > 0.0 && s.factor < 1.0) {
            return Err(TrainError::InvalidConfig(format!("factor must lie in (0, 1), got {}", s.factor)));
        }
        if s.min_lr < 0.0 || self.record_every == 0 {
            return Err(TrainError::InvalidConfig("min_lr must be ≥ 0 and record_every ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub final_train_mse: f64,
    pub final_test_mse: f64,
    pub epochs_run: usize,
    pub reached_threshold: bool,
    pub loss_curve: Vec<CurvePoint>,
}

/// Train/test split of a scalar regression problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x_train: Vec<f64>,
    pub y_train: Vec<f64>,
    pub x_test: Vec<f64>,
    pub y_test: Vec<f64>,
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Reduce-on-plateau: after `patience` consecutive epochs without a
/// relative improvement of `1e-8` over the best loss, multiply the rate by
/// `factor` (floored at `min_lr`) and start counting again.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    cfg: SchedulerConfig,
    best: f64,
    bad_epochs: usize,
    lr: f64,
}

pub const PLATEAU_THRESHOLD: f64 = 1e-8;

impl PlateauScheduler {
    pub fn new(lr: f64, cfg: SchedulerConfig) -> Self {
        PlateauScheduler {
            cfg,
            best: f64::INFINITY,
            bad_epochs: 0,
            lr,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best * (1.0 - PLATEAU_THRESHOLD) {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Full-batch training. Each epoch evaluates the training loss at the
/// current parameters, stops if it is below the threshold, and otherwise
/// takes one Adam step and updates the scheduler.
pub fn train(net: &mut TrainableNet, data: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if data.x_train.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut adam = Adam::new(net.param_count());
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.scheduler);
    let mut curve = Vec::new();
    let mut reached = false;
    let mut epochs_run = cfg.epochs;
    let mut train_mse = f64::NAN;

    for epoch in 0..=cfg.epochs {
        let (loss, grad) = net.loss_and_grad(&data.x_train, &data.y_train)?;
        if !loss.is_finite() {
            return Err(TrainError::DivergedAt(epoch));
        }
        train_mse = loss;
        let stop = cfg.stop_threshold.is_some_and(|t| loss < t);
        if epoch % cfg.record_every == 0 || stop || epoch == cfg.epochs {
            curve.push(CurvePoint {
                epoch,
                train_mse: loss,
                test_mse: net.mse(&data.x_test, &data.y_test),
                lr: sched.lr(),
            });
        }
        if stop {
            reached = true;
            epochs_run = epoch;
            break;
        }
        if epoch == cfg.epochs {
            break;
        }
        adam.step(&mut net.params, &grad, sched.lr());
        sched.step(loss);
    }

    Ok(TrainResult {
        final_train_mse: train_mse,
        final_test_mse: net.mse(&data.x_test, &data.y_test),
        epochs_run,
        reached_threshold: reached,
        loss_curve: curve,
    })
}

/// Central-difference gradient of the MSE with step `step`. The loss
/// difference is accumulated per sample as `(f₊ − f₋)(f₊ + f₋ − 2y)` so it
/// does not cancel against the size of the loss itself.
pub fn numerical_gradient(net: &TrainableNet, xs: &[f64], ys: &[f64], index: usize, step: f64) -> f64 {
    let mut plus = net.clone();
    plus.params[index] = net.params[index] + step;
    let mut minus = net.clone();
    minus.params[index] = net.params[index] - step;
    let diff: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let (fp, fm) = (plus.forward(x), minus.forward(x));
            (fp - fm) * (fp + fm - 2.0 * y)
        })
        .sum();
    diff / (xs.len() as f64 * 2.0 * step)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
