//! Finite classical channels with a tangent, the two metrics bracketing any
//! monotone channel metric (a sup over input letters and an inf over
//! simulating programs), the Gaussian simulation of a channel family, lattice
//! coarsening of continuous inputs, and two counterexamples: a parallelogram
//! defect for the lower metric and a discontinuity of Fisher information.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fisher::{fisher_info, fisher_info_raw, score_reduction, FisherError};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::measures::{
    iid_extend, tensor_local, FinitePmf, LinearKernelMap, LocalData, MarkovKernel, MeasureError, TangentVec,
};
use crate::tangent_sim::{
    binary_count_laws, finite_overhead, finite_plan, Certificate, CountLaws, EvalMode, Resource, SimError,
    CERT_SLACK, MAX_CELLS,
};

/// Largest `out^n` for which an extension column is materialized.
pub const MAX_EXTENSION: usize = 100_000;
/// Residual a simulating program must meet to be reported.
pub const SIM_RESIDUAL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("channel needs at least one input")]
    NoInputs,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no feasible simulating kernel at program support {0}")]
    NoFeasible(usize),
    #[error("overhead {overhead} of input letter {letter} exceeds c = {c}")]
    Overhead { letter: usize, overhead: f64, c: f64 },
    #[error("{0} is out of range: {1}")]
    BadParameter(&'static str, f64),
    #[error("{0} cells are too many")]
    TooLarge(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Fisher(#[from] FisherError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A stochastic map from `in_size` letters to `out_size` letters, stored as
/// one output law per input letter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelJson", into = "ChannelJson")]
pub struct Channel {
    columns: Vec<FinitePmf>,
}

#[derive(Serialize, Deserialize)]
struct ChannelJson {
    #[serde(rename = "in")]
    in_size: usize,
    #[serde(rename = "out")]
    out_size: usize,
    cols: Vec<Vec<f64>>,
}

impl TryFrom<ChannelJson> for Channel {
    type Error = ChannelError;
    fn try_from(j: ChannelJson) -> Result<Self, ChannelError> {
        check_shape(j.in_size, j.out_size, &j.cols, "cols")?;
        Channel::new(j.cols.into_iter().map(FinitePmf::new).collect::<Result<_, _>>()?)
    }
}

impl From<Channel> for ChannelJson {
    fn from(c: Channel) -> Self {
        ChannelJson { in_size: c.in_size(), out_size: c.out_size(), cols: c.columns.into_iter().map(|p| p.into_vec()).collect() }
    }
}

fn check_shape(k: usize, o: usize, cols: &[Vec<f64>], what: &str) -> Result<(), ChannelError> {
    if cols.len() != k {
        return Err(ChannelError::Shape(format!("{what}: {} columns for {k} inputs", cols.len())));
    }
    if let Some(c) = cols.iter().find(|c| c.len() != o) {
        return Err(ChannelError::Shape(format!("{what}: column of length {} for {o} outputs", c.len())));
    }
    Ok(())
}

impl Channel {
    pub fn new(columns: Vec<FinitePmf>) -> Result<Self, ChannelError> {
        let Some(first) = columns.first() else { return Err(ChannelError::NoInputs) };
        let o = first.k();
        if let Some(c) = columns.iter().find(|c| c.k() != o) {
            return Err(ChannelError::Shape(format!("column of length {} for {o} outputs", c.k())));
        }
        Ok(Channel { columns })
    }

    pub fn in_size(&self) -> usize {
        self.columns.len()
    }

    pub fn out_size(&self) -> usize {
        self.columns[0].k()
    }

    pub fn column(&self, x: usize) -> &FinitePmf {
        &self.columns[x]
    }

    pub fn columns(&self) -> &[FinitePmf] {
        &self.columns
    }

    /// Output law for an input distribution.
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>, ChannelError> {
        Ok(self.as_map().apply(input)?)
    }

    pub fn as_map(&self) -> LinearKernelMap {
        let cols: Vec<Vec<f64>> = self.columns.iter().map(|c| c.probs().to_vec()).collect();
        LinearKernelMap::from_columns(self.out_size(), &cols).expect("columns share a length")
    }
}

/// One signed, zero-sum column per input letter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTangent {
    columns: Vec<TangentVec>,
}

impl ChannelTangent {
    pub fn new(columns: Vec<TangentVec>) -> Result<Self, ChannelError> {
        let Some(first) = columns.first() else { return Err(ChannelError::NoInputs) };
        let o = first.k();
        if let Some(c) = columns.iter().find(|c| c.k() != o) {
            return Err(ChannelError::Shape(format!("tangent column of length {} for {o} outputs", c.k())));
        }
        Ok(ChannelTangent { columns })
    }

    pub fn column(&self, x: usize) -> &TangentVec {
        &self.columns[x]
    }

    pub fn columns(&self) -> &[TangentVec] {
        &self.columns
    }

    pub fn as_map(&self) -> LinearKernelMap {
        let o = self.columns[0].k();
        let cols: Vec<Vec<f64>> = self.columns.iter().map(|c| c.weights().to_vec()).collect();
        LinearKernelMap::from_columns(o, &cols).expect("columns share a length")
    }

    pub fn scaled(&self, c: f64) -> Result<Self, ChannelError> {
        self.combine(self, c, 0.0)
    }

    /// `a·self + b·other`.
    pub fn combine(&self, other: &ChannelTangent, a: f64, b: f64) -> Result<Self, ChannelError> {
        if self.columns.len() != other.columns.len() {
            return Err(ChannelError::Shape("tangents have different input sizes".into()));
        }
        let cols = self
            .columns
            .iter()
            .zip(&other.columns)
            .map(|(u, v)| TangentVec::new(u.weights().iter().zip(v.weights()).map(|(x, y)| a * x + b * y).collect()))
            .collect::<Result<Vec<_>, _>>()?;
        ChannelTangent::new(cols)
    }
}

/// A channel with a tangent of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelLocalJson", into = "ChannelLocalJson")]
pub struct ChannelLocal {
    channel: Channel,
    tangent: ChannelTangent,
}

#[derive(Serialize, Deserialize)]
struct ChannelLocalJson {
    #[serde(rename = "in")]
    in_size: usize,
    #[serde(rename = "out")]
    out_size: usize,
    cols: Vec<Vec<f64>>,
    tcols: Vec<Vec<f64>>,
}

impl TryFrom<ChannelLocalJson> for ChannelLocal {
    type Error = ChannelError;
    fn try_from(j: ChannelLocalJson) -> Result<Self, ChannelError> {
        check_shape(j.in_size, j.out_size, &j.cols, "cols")?;
        check_shape(j.in_size, j.out_size, &j.tcols, "tcols")?;
        ChannelLocal::from_columns(j.cols, j.tcols)
    }
}

impl From<ChannelLocal> for ChannelLocalJson {
    fn from(c: ChannelLocal) -> Self {
        ChannelLocalJson {
            in_size: c.in_size(),
            out_size: c.out_size(),
            cols: c.channel.columns.into_iter().map(|p| p.into_vec()).collect(),
            tcols: c.tangent.columns.into_iter().map(|t| t.into_vec()).collect(),
        }
    }
}

impl ChannelLocal {
    pub fn new(channel: Channel, tangent: ChannelTangent) -> Result<Self, ChannelError> {
        if channel.in_size() != tangent.columns.len() || channel.out_size() != tangent.columns[0].k() {
            return Err(ChannelError::Shape("channel and tangent shapes differ".into()));
        }
        Ok(ChannelLocal { channel, tangent })
    }

    pub fn from_columns(cols: Vec<Vec<f64>>, tcols: Vec<Vec<f64>>) -> Result<Self, ChannelError> {
        let channel = Channel::new(cols.into_iter().map(FinitePmf::new).collect::<Result<_, _>>()?)?;
        let tangent = ChannelTangent::new(tcols.into_iter().map(TangentVec::new).collect::<Result<_, _>>()?)?;
        ChannelLocal::new(channel, tangent)
    }

    /// Every column equal to `a`.
    pub fn constant(a: &LocalData, inputs: usize) -> Result<Self, ChannelError> {
        let cols = vec![a.probs().to_vec(); inputs];
        let tcols = vec![a.weights().to_vec(); inputs];
        ChannelLocal::from_columns(cols, tcols)
    }

    pub fn from_locals(cols: &[LocalData]) -> Result<Self, ChannelError> {
        ChannelLocal::from_columns(
            cols.iter().map(|a| a.probs().to_vec()).collect(),
            cols.iter().map(|a| a.weights().to_vec()).collect(),
        )
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn tangent(&self) -> &ChannelTangent {
        &self.tangent
    }

    pub fn in_size(&self) -> usize {
        self.channel.in_size()
    }

    pub fn out_size(&self) -> usize {
        self.channel.out_size()
    }

    /// Local data of the output for input letter `x`.
    pub fn column(&self, x: usize) -> LocalData {
        LocalData::new(self.channel.columns[x].clone(), self.tangent.columns[x].clone())
            .expect("shapes checked at construction")
    }

    pub fn columns(&self) -> Vec<LocalData> {
        (0..self.in_size()).map(|x| self.column(x)).collect()
    }

    /// Local data of the output for an input distribution.
    pub fn at_input(&self, input: &[f64]) -> Result<LocalData, ChannelError> {
        if input.len() != self.in_size() {
            return Err(ChannelError::Shape(format!("input of length {} for {} letters", input.len(), self.in_size())));
        }
        let p = self.channel.as_map().apply(input)?;
        let d = self.tangent.as_map().apply(input)?;
        Ok(LocalData::from_vecs(p, d)?)
    }

    pub fn with_tangent(&self, tangent: ChannelTangent) -> Result<Self, ChannelError> {
        ChannelLocal::new(self.channel.clone(), tangent)
    }

    /// `Φ∘Ψ` with `Δ∘Ψ`: each column becomes a mixture of the original columns.
    pub fn precompose(&self, psi: &MarkovKernel) -> Result<Self, ChannelError> {
        if psi.out_size() != self.in_size() {
            return Err(ChannelError::Shape("pre-processing output does not match the channel input".into()));
        }
        let cols = (0..psi.in_size()).map(|x| self.at_input(&psi.map().column(x))).collect::<Result<Vec<_>, _>>()?;
        ChannelLocal::from_locals(&cols)
    }

    /// `Ψ∘Φ` with `Ψ∘Δ`.
    pub fn postcompose(&self, psi: &MarkovKernel) -> Result<Self, ChannelError> {
        let cols = self.columns().iter().map(|a| crate::measures::pushforward(psi, a)).collect::<Result<Vec<_>, _>>()?;
        ChannelLocal::from_locals(&cols)
    }

    /// Output local data of the `n`-fold extension on the input sequence
    /// `seq`, with the tangent summed over the placements.
    pub fn extension_column(&self, seq: &[usize]) -> Result<LocalData, ChannelError> {
        let size = (self.out_size() as f64).powi(seq.len() as i32);
        if seq.is_empty() {
            return Err(ChannelError::BadParameter("sequence length", 0.0));
        }
        if size > MAX_EXTENSION as f64 {
            return Err(ChannelError::TooLarge(size));
        }
        if let Some(&x) = seq.iter().find(|&&x| x >= self.in_size()) {
            return Err(ChannelError::BadParameter("input letter", x as f64));
        }
        let mut out = self.column(seq[0]);
        for &x in &seq[1..] {
            out = tensor_local(&out, &self.column(x))?;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Lower metric

/// Largest column information and the first letter attaining it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GMin {
    pub value: f64,
    pub argmax: usize,
    pub per_letter: Vec<f64>,
}

/// `max_x J(Φ(·|x), Δ(·|x))`. Fisher information is convex in the local data,
/// so the sup over input distributions is attained at a letter.
pub fn g_min(cl: &ChannelLocal) -> GMin {
    let per_letter: Vec<f64> = cl.columns().iter().map(fisher_info).collect();
    let mut argmax = 0;
    for (x, &j) in per_letter.iter().enumerate() {
        if j > per_letter[argmax] {
            argmax = x;
        }
    }
    GMin { value: per_letter[argmax], argmax, per_letter }
}

// ---------------------------------------------------------------------------
// Upper metric

/// A program `(q, δ)` and a kernel from (input, program letter) to output
/// that reproduce the channel and its tangent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GMaxResult {
    /// `J_q(δ)`, an upper value for the inf over programs.
    pub value: f64,
    pub program: LocalData,
    /// Column `x·m + z` is the output law for input `x` and program letter `z`.
    pub kernel: Vec<Vec<f64>>,
    pub state_residual: f64,
    pub tangent_residual: f64,
    pub program_support: usize,
    /// Starting points tried and how many led to a feasible program.
    pub starts: usize,
    pub feasible_starts: usize,
}

/// Per input letter, the output law for each program letter.
type Kernels = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone)]
struct Program {
    q: Vec<f64>,
    d: Vec<f64>,
}

impl Program {
    fn value(&self) -> f64 {
        fisher_info_raw(&self.q, &self.d)
    }

    fn padded(mut self, m: usize) -> Program {
        self.q.resize(m, 0.0);
        self.d.resize(m, 0.0);
        self
    }
}

/// Finds `Λ ≥ 0`, column-stochastic per `(x, z)`, with `Σ_z Λ(·|x,z) q_z =
/// Φ(·|x)` and `Σ_z Λ(·|x,z) δ_z = Δ(·|x)`. Returns `Λ[x][z][y]`.
fn kernel_step(cl: &ChannelLocal, prog: &Program) -> Option<Vec<Vec<Vec<f64>>>> {
    let (k, o, m) = (cl.in_size(), cl.out_size(), prog.q.len());
    let var = |x: usize, z: usize, y: usize| (x * m + z) * o + y;
    let mut lp = LinearProgram::new(k * m * o);
    for x in 0..k {
        for z in 0..m {
            lp.add_row((0..o).map(|y| (var(x, z, y), 1.0)).collect(), Relation::Eq, 1.0);
        }
        let col = cl.column(x);
        for y in 0..o {
            let qs: Vec<(usize, f64)> =
                (0..m).filter(|&z| prog.q[z] != 0.0).map(|z| (var(x, z, y), prog.q[z])).collect();
            lp.add_row(qs, Relation::Eq, col.probs()[y]);
            let ds: Vec<(usize, f64)> =
                (0..m).filter(|&z| prog.d[z] != 0.0).map(|z| (var(x, z, y), prog.d[z])).collect();
            lp.add_row(ds, Relation::Eq, col.weights()[y]);
        }
    }
    let LpOutcome::Optimal { x: sol, .. } = lp.solve() else { return None };
    Some(
        (0..k)
            .map(|x| (0..m).map(|z| (0..o).map(|y| sol[var(x, z, y)].max(0.0)).collect()).collect())
            .collect(),
    )
}

/// Rows `(x, y)` of the linear map `q ↦ Σ_z Λ(y|x,z) q_z`.
fn kernel_rows(lam: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let (k, m, o) = (lam.len(), lam[0].len(), lam[0][0].len());
    let mut rows = Vec::with_capacity(k * o);
    for lx in lam {
        for y in 0..o {
            rows.push((0..m).map(|z| lx[z][y]).collect());
        }
    }
    rows
}

fn mat_vec(rows: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn mat_t_vec(rows: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for (r, &c) in rows.iter().zip(v) {
        for (o, &a) in out.iter_mut().zip(r) {
            *o += a * c;
        }
    }
    out
}

/// Conjugate gradients for a consistent positive semidefinite system.
fn cg<F: Fn(&[f64]) -> Vec<f64>>(apply: F, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let stop = 1e-30 * (1.0 + rr);
    for _ in 0..10 * n + 10 {
        if rr <= stop {
            break;
        }
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    x
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Least-information tangent on the support of `q` with `A δ = b`.
fn min_tangent(rows: &[Vec<f64>], q: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let qa = |v: &[f64]| -> Vec<f64> { mat_t_vec(rows, v).iter().zip(q).map(|(a, q)| a * q).collect() };
    let lambda = cg(|v| mat_vec(rows, &qa(v)), b);
    let d = qa(&lambda);
    (max_abs_diff(&mat_vec(rows, &d), b) <= 1e-11).then_some(d)
}

/// Projected descent of `min_δ J_q(δ)` over `q` with `A q` fixed. Letters
/// outside the support of `q` stay fixed at zero.
fn program_step(rows: &[Vec<f64>], prog: Program, b: &[f64], iters: usize) -> Program {
    let support: Vec<usize> = (0..prog.q.len()).filter(|&z| prog.q[z] > 0.0).collect();
    let sub_rows: Vec<Vec<f64>> = rows.iter().map(|r| support.iter().map(|&z| r[z]).collect()).collect();
    let restrict = |v: &[f64]| -> Vec<f64> { support.iter().map(|&z| v[z]).collect() };
    let mut q = restrict(&prog.q);
    let Some(mut d) = min_tangent(&sub_rows, &q, b) else { return prog };
    let mut val = fisher_info_raw(&q, &d);
    if val > prog.value() {
        d = restrict(&prog.d);
        val = fisher_info_raw(&q, &d);
    }
    for _ in 0..iters {
        let g: Vec<f64> = q.iter().zip(&d).map(|(q, d)| -(d * d) / (q * q)).collect();
        let mu = cg(|v| mat_vec(&sub_rows, &mat_t_vec(&sub_rows, v)), &mat_vec(&sub_rows, &g));
        let corr = mat_t_vec(&sub_rows, &mu);
        let dir: Vec<f64> = g.iter().zip(&corr).map(|(g, c)| -(g - c)).collect();
        let scale = dir.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scale == 0.0 || !scale.is_finite() {
            break;
        }
        let dir: Vec<f64> = dir.iter().map(|v| v / scale).collect();
        let s_max = q
            .iter()
            .zip(&dir)
            .filter(|(_, &v)| v < 0.0)
            .map(|(q, v)| q / -v)
            .fold(f64::INFINITY, f64::min);
        let mut s = (0.5 * s_max).min(1.0);
        let mut moved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = q.iter().zip(&dir).map(|(q, v)| q + s * v).collect();
            if let Some(td) = min_tangent(&sub_rows, &trial, b) {
                let tv = fisher_info_raw(&trial, &td);
                if tv < val * (1.0 - 1e-12) {
                    q = trial;
                    d = td;
                    val = tv;
                    moved = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let mut out = Program { q: vec![0.0; prog.q.len()], d: vec![0.0; prog.q.len()] };
    for (i, &z) in support.iter().enumerate() {
        out.q[z] = q[i];
        out.d[z] = d[i];
    }
    out
}

fn residuals(cl: &ChannelLocal, lam: &[Vec<Vec<f64>>], prog: &Program) -> (f64, f64) {
    let rows = kernel_rows(lam);
    let (phi, delta) = stacked(cl);
    (max_abs_diff(&mat_vec(&rows, &prog.q), &phi), max_abs_diff(&mat_vec(&rows, &prog.d), &delta))
}

fn stacked(cl: &ChannelLocal) -> (Vec<f64>, Vec<f64>) {
    let mut phi = Vec::new();
    let mut delta = Vec::new();
    for a in cl.columns() {
        phi.extend_from_slice(a.probs());
        delta.extend_from_slice(a.weights());
    }
    (phi, delta)
}

/// Alternates the kernel LP with descent on the program, a few rounds.
fn refine(cl: &ChannelLocal, start: Program) -> Option<(Program, Vec<Vec<Vec<f64>>>)> {
    let (phi, delta) = stacked(cl);
    let mut prog = start;
    let mut lam = kernel_step(cl, &prog)?;
    for _ in 0..3 {
        let rows = kernel_rows(&lam);
        let next = program_step(&rows, prog.clone(), &delta, 200);
        let rs = max_abs_diff(&mat_vec(&rows, &next.q), &phi);
        if rs > 1e-10 || next.value() >= prog.value() * (1.0 - 1e-9) {
            break;
        }
        prog = next;
        match kernel_step(cl, &prog) {
            Some(l) => lam = l,
            None => break,
        }
    }
    Some((prog, lam))
}

/// Starting programs: each column's score law, the union of all score laws
/// with weights `∝ √J_x`, and randomized variants of these.
fn starting_programs(cl: &ChannelLocal, m: usize, restarts: usize, seed: u64) -> Result<Vec<Program>, ChannelError> {
    let reduced: Vec<LocalData> =
        cl.columns().iter().map(|a| score_reduction(a).map(|r| r.reduced)).collect::<Result<_, _>>()?;
    let mut starts = Vec::new();
    for r in &reduced {
        if r.k() <= m {
            starts.push(Program { q: r.probs().to_vec(), d: r.weights().to_vec() }.padded(m));
        }
    }
    let total: usize = reduced.iter().map(|r| r.k()).sum();
    let js: Vec<f64> = reduced.iter().map(fisher_info).collect();
    let union = |w: &[f64]| -> Program {
        let mut q = Vec::with_capacity(total);
        let mut d = Vec::with_capacity(total);
        for (r, &wx) in reduced.iter().zip(w) {
            q.extend(r.probs().iter().map(|p| wx * p));
            d.extend_from_slice(r.weights());
        }
        Program { q, d }.padded(m)
    };
    let fits = total <= m;
    if fits {
        let roots: Vec<f64> = js.iter().map(|j| j.sqrt()).collect();
        let s: f64 = roots.iter().sum();
        let w: Vec<f64> = if s > 0.0 { roots.iter().map(|r| r / s).collect() } else { vec![1.0 / js.len() as f64; js.len()] };
        starts.push(union(&w));
    }
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        if fits {
            let raw: Vec<f64> = js.iter().map(|_| rng.random::<f64>() + 0.05).collect();
            let s: f64 = raw.iter().sum();
            starts.push(union(&raw.iter().map(|v| v / s).collect::<Vec<_>>()));
        } else if !starts.is_empty() {
            // Split a random atom of a column start; same information, new path.
            let mut p = starts[rng.random_range(0..starts.len().min(reduced.len()))].clone();
            let used = p.q.iter().rposition(|&v| v > 0.0).map_or(0, |i| i + 1);
            if used < m {
                let z = rng.random_range(0..used);
                let f = rng.random_range(0.2..0.8);
                p.q[used] = p.q[z] * (1.0 - f);
                p.d[used] = p.d[z] * (1.0 - f);
                p.q[z] *= f;
                p.d[z] *= f;
            }
            starts.push(p);
        }
    }
    Ok(starts)
}

/// Upper value for the inf over programs `(q, δ)` on `program_support`
/// letters and kernels `Λ` simulating `{Φ, Δ}` of `J_q(δ)`.
pub fn g_max_search(
    cl: &ChannelLocal,
    program_support: usize,
    restarts: usize,
    seed: u64,
) -> Result<GMaxResult, ChannelError> {
    if program_support == 0 {
        return Err(ChannelError::BadParameter("program support", 0.0));
    }
    if g_min(cl).value.is_infinite() {
        return Err(ChannelError::Fisher(FisherError::InfiniteFisher));
    }
    let starts = starting_programs(cl, program_support, restarts, seed)?;
    let found: Vec<Option<(Program, Kernels)>> = starts.par_iter().map(|s| refine(cl, s.clone())).collect();
    let feasible_starts = found.iter().filter(|f| f.is_some()).count();
    let mut best: Option<(f64, Program, Kernels, (f64, f64))> = None;
    for (prog, lam) in found.into_iter().flatten() {
        let res = residuals(cl, &lam, &prog);
        if res.0 > SIM_RESIDUAL || res.1 > SIM_RESIDUAL {
            continue;
        }
        let v = prog.value();
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, prog, lam, res));
        }
    }
    let Some((value, prog, lam, (rs, rt))) = best else { return Err(ChannelError::NoFeasible(program_support)) };
    let kernel = lam.into_iter().flatten().collect();
    Ok(GMaxResult {
        value,
        program: LocalData::from_vecs(prog.q, prog.d)?,
        kernel,
        state_residual: rs,
        tangent_residual: rt,
        program_support,
        starts: starts.len(),
        feasible_starts,
    })
}

// ---------------------------------------------------------------------------
// Channel simulation

/// Per-letter block of a channel plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LetterPlan {
    pub letter: usize,
    pub fisher: f64,
    pub overhead: f64,
    /// Worst certified state error over the block sizes the letter can get.
    pub state_bound: f64,
    /// Worst certified unscaled tangent error over the same sizes.
    pub tangent_bound: f64,
}

/// Gaussian simulation of `{Φ^⊗n, Δ^(n)}` for all input sequences: the
/// Gaussian program is split by letter counts, each letter runs its own
/// finite plan on at least `⌈eps·n⌉` samples, and padded samples are
/// discarded.
#[derive(Debug, Clone, Serialize)]
pub struct ChannelSimPlan {
    pub n: usize,
    pub eps: f64,
    pub c: f64,
    pub g_min: f64,
    pub program: Resource,
    pub min_block: usize,
    pub letters: Vec<LetterPlan>,
    pub certified: Certificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured: Option<ChannelErrors>,
    #[serde(skip)]
    local: ChannelLocal,
}

/// Errors of a channel plan on one input sequence, given by its letter counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceError {
    pub counts: Vec<usize>,
    pub state: f64,
    pub tangent: f64,
    /// True when combined from per-letter values by the product rule.
    pub aggregated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelErrors {
    pub constant: Vec<SequenceError>,
    pub mixed: Vec<SequenceError>,
    /// Max over all evaluated sequences.
    pub cb_state: f64,
    pub cb_tangent: f64,
}

/// Folds `(state, unscaled tangent, tangent norm)` of independent blocks
/// with the product rule `U ≤ U_b + S_b E + E_b (S + U) + U`.
fn product_rule(blocks: &[(f64, f64, f64)]) -> (f64, f64) {
    let (mut e, mut u, mut s) = (0.0, 0.0, 0.0);
    for &(eb, ub, sb) in blocks {
        u = ub + sb * e + eb * (s + u) + u;
        e += eb;
        s += sb;
    }
    (e, u)
}

pub fn channel_sim_plan(cl: &ChannelLocal, n: usize, eps: f64, c: f64) -> Result<ChannelSimPlan, ChannelError> {
    if n == 0 {
        return Err(ChannelError::Sim(SimError::ZeroN));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ChannelError::BadParameter("eps", eps));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(ChannelError::BadParameter("c", c));
    }
    if n > MAX_CELLS {
        return Err(ChannelError::TooLarge(n as f64));
    }
    let gm = g_min(cl);
    if gm.value.is_infinite() {
        return Err(ChannelError::Sim(SimError::InfiniteFisher));
    }
    let k = cl.in_size();
    let min_block = ((eps * n as f64).ceil() as usize).clamp(1, n);
    let mut letters = Vec::with_capacity(k);
    let mut blocks = Vec::with_capacity(k);
    for (x, a) in cl.columns().iter().enumerate() {
        let j = fisher_info(a);
        let (overhead, state_bound, tangent_bound) = if j == 0.0 {
            (0.0, 0.0, 0.0)
        } else {
            let f = if a.k() > 2 { finite_overhead(a, eps)? } else { 0.0 };
            if f > c {
                return Err(ChannelError::Overhead { letter: x, overhead: f, c });
            }
            // With one input letter its block always has all n samples.
            let smallest = if k == 1 { n } else { min_block };
            let worst = (smallest..=n)
                .into_par_iter()
                .map(|m| {
                    let cert = finite_plan(a, m, eps)?.certified().cloned().expect("finite plans are certified");
                    Ok((cert.state, cert.tangent * (m as f64).sqrt()))
                })
                .collect::<Result<Vec<_>, SimError>>()?;
            let s = worst.iter().map(|w| w.0).fold(0.0, f64::max);
            let t = worst.iter().map(|w| w.1).fold(0.0, f64::max);
            (f, s, t)
        };
        blocks.push((state_bound, tangent_bound, (n as f64 * j).sqrt()));
        letters.push(LetterPlan { letter: x, fisher: j, overhead, state_bound, tangent_bound });
    }
    let (e, u) = product_rule(&blocks);
    let units = n as f64 * (1.0 + k as f64 * eps) * (gm.value + c);
    let state = e.min(2.0);
    let mut constants = BTreeMap::new();
    constants.insert("g_min".into(), gm.value);
    constants.insert("units".into(), units);
    constants.insert("min_block".into(), min_block as f64);
    constants.insert("rate_constant".into(), state * (eps * n as f64).powf(0.25));
    Ok(ChannelSimPlan {
        n,
        eps,
        c,
        g_min: gm.value,
        program: Resource::Gaussian { units, local: crate::measures::GaussianLocal::standard_units(units)? },
        min_block,
        letters,
        certified: Certificate { state, tangent: u / (n as f64).sqrt(), empirical: false, constants },
        measured: None,
        local: cl.clone(),
    })
}

/// Count laws of the first `keep` of `laws.len() - 1` exchangeable samples.
fn thin(laws: &CountLaws, keep: usize, eta: f64, alpha: f64) -> CountLaws {
    let mut g = laws.sim.clone();
    let mut t = laws.sim_tangent.clone();
    for m in (keep + 1..laws.sim.len()).rev() {
        let mf = m as f64;
        for j in 0..m {
            g[j] = g[j] * (m - j) as f64 / mf + g[j + 1] * (j + 1) as f64 / mf;
            t[j] = t[j] * (m - j) as f64 / mf + t[j + 1] * (j + 1) as f64 / mf;
        }
    }
    g.truncate(keep + 1);
    t.truncate(keep + 1);
    CountLaws {
        score: (0..=keep).map(|j| alpha * (j as f64 - keep as f64 * eta)).collect(),
        target: crate::numeric::binomial_pmf(keep, eta),
        sim: g,
        sim_tangent: t,
    }
}

fn binary_alpha_of(a: &LocalData) -> f64 {
    let (p, d) = (a.probs(), a.weights());
    if p[0] <= 0.0 || p[1] <= 0.0 {
        0.0
    } else {
        d[1] / p[1] - d[0] / p[0]
    }
}

impl ChannelSimPlan {
    pub fn local(&self) -> &ChannelLocal {
        &self.local
    }

    /// Samples simulated for a letter that occurs `count` times.
    fn block(&self, count: usize) -> usize {
        count.max(self.min_block)
    }

    /// Exact errors on every constant input sequence, plus `mixed` random
    /// count vectors. Mixed sequences are exact for binary outputs and up to
    /// [`MAX_CELLS`] joint cells, otherwise aggregated.
    pub fn evaluate(&self, mixed: usize, seed: u64) -> Result<ChannelErrors, ChannelError> {
        let k = self.local.in_size();
        let constant = (0..k)
            .map(|x| {
                let mut counts = vec![0; k];
                counts[x] = self.n;
                self.sequence_error(&counts)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<Vec<usize>> = (0..mixed)
            .map(|_| {
                let mut counts = vec![0; k];
                for _ in 0..self.n {
                    counts[rng.random_range(0..k)] += 1;
                }
                counts
            })
            .collect();
        let mixed = draws.par_iter().map(|c| self.sequence_error(c)).collect::<Result<Vec<_>, _>>()?;
        let all = constant.iter().chain(&mixed);
        let cb_state = all.clone().map(|e| e.state).fold(0.0, f64::max);
        let cb_tangent = all.map(|e| e.tangent).fold(0.0, f64::max);
        Ok(ChannelErrors { constant, mixed, cb_state, cb_tangent })
    }

    pub fn evaluated(mut self, mixed: usize, seed: u64) -> Result<ChannelSimPlan, ChannelError> {
        self.measured = Some(self.evaluate(mixed, seed)?);
        Ok(self)
    }

    pub fn within_certificate(&self) -> bool {
        self.measured.as_ref().is_none_or(|m| {
            m.cb_state <= self.certified.state + CERT_SLACK && m.cb_tangent <= self.certified.tangent + CERT_SLACK
        })
    }

    /// Errors for the input sequences with the given letter counts.
    pub fn sequence_error(&self, counts: &[usize]) -> Result<SequenceError, ChannelError> {
        let k = self.local.in_size();
        if counts.len() != k || counts.iter().sum::<usize>() != self.n {
            return Err(ChannelError::Shape(format!("counts must have {k} entries summing to {}", self.n)));
        }
        let rn = (self.n as f64).sqrt();
        let active: Vec<usize> = (0..k).filter(|&x| counts[x] > 0).collect();
        if self.local.out_size() == 2 {
            let cells: f64 = active.iter().map(|&x| counts[x] as f64 + 1.0).product();
            if cells <= MAX_CELLS as f64 {
                let laws = active
                    .iter()
                    .map(|&x| {
                        let a = self.local.column(x);
                        let full = binary_count_laws(&a, self.block(counts[x]))?;
                        Ok(if full.target.len() - 1 > counts[x] {
                            thin(&full, counts[x], a.probs()[1], binary_alpha_of(&a))
                        } else {
                            full
                        })
                    })
                    .collect::<Result<Vec<_>, ChannelError>>()?;
                let (s, t) = product_errors(&laws);
                return Ok(SequenceError { counts: counts.to_vec(), state: s, tangent: t / rn, aggregated: false });
            }
        }
        let mut blocks = Vec::with_capacity(active.len());
        for &x in &active {
            let a = self.local.column(x);
            let j = fisher_info(&a);
            if j == 0.0 {
                continue;
            }
            let m = self.block(counts[x]);
            let r = finite_plan(&a, m, self.eps)?.evaluated(EvalMode::Exact)?;
            let r = r.error_state.exact.expect("exact mode stores its report");
            blocks.push((r.tv_state_error, r.tv_tangent_error * (m as f64).sqrt(), (counts[x] as f64 * j).sqrt()));
        }
        let (e, u) = product_rule(&blocks);
        let aggregated = blocks.len() > 1 || active.iter().any(|&x| counts[x] < self.min_block);
        Ok(SequenceError { counts: counts.to_vec(), state: e.min(2.0), tangent: u / rn, aggregated })
    }
}

/// Exact state and unscaled tangent errors of a product of count laws.
fn product_errors(laws: &[CountLaws]) -> (f64, f64) {
    let target_t: Vec<Vec<f64>> = laws.iter().map(|l| l.target_tangent()).collect();
    let sizes: Vec<usize> = laws.iter().map(|l| l.target.len()).collect();
    let mut idx = vec![0usize; laws.len()];
    let (mut state, mut tangent) = (0.0, 0.0);
    loop {
        let (mut b, mut g) = (1.0, 1.0);
        let (mut tb, mut tg) = (0.0, 0.0);
        for (i, l) in laws.iter().enumerate() {
            let c = idx[i];
            tb = tb * l.target[c] + b * target_t[i][c];
            tg = tg * l.sim[c] + g * l.sim_tangent[c];
            b *= l.target[c];
            g *= l.sim[c];
        }
        state += (b - g).abs();
        tangent += (tb - tg).abs();
        let mut i = 0;
        loop {
            if i == idx.len() {
                return (state, tangent);
            }
            idx[i] += 1;
            if idx[i] < sizes[i] {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Continuous inputs

/// A finite channel on the cell midpoints of a cubic lattice in `[0,1]^d`.
#[derive(Debug, Clone, Serialize)]
pub struct CoarsenedChannel {
    pub local: ChannelLocal,
    pub points: Vec<Vec<f64>>,
    pub per_axis: usize,
    pub spacing: f64,
    /// `f(spacing · √d / 2)` for the supplied modulus `f`.
    pub distance_bound: f64,
}

impl CoarsenedChannel {
    /// Index of the lattice point nearest to `x`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        x.iter().fold(0, |acc, &xi| {
            let i = ((xi / self.spacing).floor().max(0.0) as usize).min(self.per_axis - 1);
            acc * self.per_axis + i
        })
    }

    /// Sup over a probe grid of `(‖Φ(x) − Φ_t(x)‖₁, ‖Δ(x) − Δ_t(x)‖₁)`.
    pub fn distance<F>(&self, eval: F, probes_per_axis: usize) -> Result<(f64, f64), ChannelError>
    where
        F: Fn(&[f64]) -> Result<LocalData, MeasureError> + Sync,
    {
        let d = self.points.first().map_or(0, |p| p.len());
        let total = probes_per_axis.pow(d as u32);
        let out = (0..total)
            .into_par_iter()
            .map(|i| {
                let x = grid_point(i, probes_per_axis, d, |j| j as f64 / (probes_per_axis - 1).max(1) as f64);
                let a = eval(&x)?;
                let b = self.local.column(self.nearest(&x));
                Ok((crate::measures::l1_distance(a.probs(), b.probs()), crate::measures::l1_distance(a.weights(), b.weights())))
            })
            .collect::<Result<Vec<_>, MeasureError>>()?;
        Ok(out.iter().fold((0.0, 0.0), |acc, v| (acc.0.max(v.0), acc.1.max(v.1))))
    }
}

fn grid_point(mut i: usize, per_axis: usize, d: usize, coord: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut x = vec![0.0; d];
    for slot in x.iter_mut().rev() {
        *slot = coord(i % per_axis);
        i /= per_axis;
    }
    x
}

/// Replaces the input `x ∈ [0,1]^d` by the nearest midpoint of a lattice with
/// spacing at most `t`.
pub fn lattice_coarsen<F, M>(eval: F, dim: usize, t: f64, modulus: M) -> Result<CoarsenedChannel, ChannelError>
where
    F: Fn(&[f64]) -> Result<LocalData, MeasureError> + Sync,
    M: Fn(f64) -> f64,
{
    if !(t > 0.0 && t.is_finite()) {
        return Err(ChannelError::BadParameter("lattice spacing", t));
    }
    if dim == 0 {
        return Err(ChannelError::BadParameter("dimension", 0.0));
    }
    let per_axis = (1.0 / t).ceil().max(1.0) as usize;
    let total = (per_axis as f64).powi(dim as i32);
    if total > MAX_EXTENSION as f64 {
        return Err(ChannelError::TooLarge(total));
    }
    let h = 1.0 / per_axis as f64;
    let points: Vec<Vec<f64>> =
        (0..total as usize).map(|i| grid_point(i, per_axis, dim, |j| (j as f64 + 0.5) * h)).collect();
    let cols = points.par_iter().map(|x| eval(x)).collect::<Result<Vec<_>, _>>()?;
    Ok(CoarsenedChannel {
        local: ChannelLocal::from_locals(&cols)?,
        points,
        per_axis,
        spacing: h,
        distance_bound: modulus(h * (dim as f64).sqrt() / 2.0),
    })
}

// ---------------------------------------------------------------------------
// Parallelogram defect

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessRecord {
    pub local: ChannelLocal,
    pub delta2: ChannelTangent,
    /// `g_min` of `Δ₁`, `Δ₂`, `Δ₁+Δ₂`, `Δ₁−Δ₂`.
    pub values: [f64; 4],
    pub defect: f64,
    /// `2 g(Δ₁) + 2 g(Δ₂)`.
    pub scale: f64,
    pub found: bool,
    pub tries: usize,
}

/// `|g(Δ₁+Δ₂) + g(Δ₁−Δ₂) − 2g(Δ₁) − 2g(Δ₂)|` with `g = g_min` at `Φ`.
pub fn parallelogram_defect(
    channel: &Channel,
    d1: &ChannelTangent,
    d2: &ChannelTangent,
) -> Result<([f64; 4], f64), ChannelError> {
    let g = |t: ChannelTangent| -> Result<f64, ChannelError> {
        Ok(g_min(&ChannelLocal::new(channel.clone(), t)?).value)
    };
    let values = [g(d1.clone())?, g(d2.clone())?, g(d1.combine(d2, 1.0, 1.0)?)?, g(d1.combine(d2, 1.0, -1.0)?)?];
    let defect = (values[2] + values[3] - 2.0 * values[0] - 2.0 * values[1]).abs();
    Ok((values, defect))
}

/// Budget of random instances tried by [`parallelogram_witness`].
pub const WITNESS_BUDGET: usize = 2000;

/// Random search over 2-input channels with 2 or 3 outputs for a pair of
/// tangents whose parallelogram defect exceeds a tenth of the scale. Returns
/// the best instance seen when none qualifies.
pub fn parallelogram_witness(seed: u64) -> Result<WitnessRecord, ChannelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<WitnessRecord> = None;
    for tries in 1..=WITNESS_BUDGET {
        let o = rng.random_range(2..=3usize);
        let col = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let raw: Vec<f64> = (0..o).map(|_| rng.random::<f64>() + 0.05).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        };
        let tan = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let raw: Vec<f64> = (0..o).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = raw.iter().sum::<f64>() / o as f64;
            raw.iter().map(|v| 0.1 * (v - m)).collect()
        };
        let cols = vec![col(&mut rng), col(&mut rng)];
        let t1 = vec![tan(&mut rng), tan(&mut rng)];
        let t2 = vec![tan(&mut rng), tan(&mut rng)];
        let local = ChannelLocal::from_columns(cols, t1)?;
        let delta2 = ChannelTangent::new(t2.into_iter().map(TangentVec::new).collect::<Result<_, _>>()?)?;
        let (values, defect) = parallelogram_defect(local.channel(), local.tangent(), &delta2)?;
        let scale = 2.0 * values[0] + 2.0 * values[1];
        let found = defect > 0.1 * scale;
        let rec = WitnessRecord { local, delta2, values, defect, scale, found, tries };
        if found {
            return Ok(rec);
        }
        let ratio = |r: &WitnessRecord| if r.scale > 0.0 { r.defect / r.scale } else { 0.0 };
        if best.as_ref().is_none_or(|b| ratio(&rec) > ratio(b)) {
            best = Some(rec);
        }
    }
    let mut rec = best.expect("budget is positive");
    rec.tries = WITNESS_BUDGET;
    Ok(rec)
}

// ---------------------------------------------------------------------------
// Discontinuity of Fisher information

/// Audit record of the perturbation of `{p^⊗n, δ^(n)}` that moves mass from
/// `0ⁿ` to `1ⁿ`. Letter 0 has probability `t`, `δ = (1, −1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleRecord {
    pub t: f64,
    pub n: usize,
    /// `ln ‖qⁿ − p^⊗n‖₁`.
    pub log_l1: f64,
    pub l1: f64,
    /// `2(t/2)ⁿ`, the mass placed at `0ⁿ` doubled.
    pub nominal_l1: f64,
    /// `J_{p^⊗n}(δ^(n)) = n J_p(δ)`.
    pub fisher_iid: f64,
    /// Change of the `0ⁿ` and `1ⁿ` terms of the information, in logs.
    pub log_gain_zero: f64,
    pub log_loss_one: f64,
    /// `ln((1/n)|J_{p^⊗n}(δ^(n)) − J_{qⁿ}(δ^(n))|)`.
    pub log_divergence: f64,
    pub divergence: f64,
    /// True when `l1` or `nominal_l1` underflows, or `divergence` overflows.
    pub out_of_range: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbed: Option<LocalData>,
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// `ln |e^a − e^b|`.
fn log_sub_abs(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (-(lo - hi).exp_m1()).ln()
    }
}

/// `qⁿ` takes `(t/2)ⁿ` at `0ⁿ`, gives the removed mass `tⁿ − (t/2)ⁿ` to `1ⁿ`
/// and equals `p^⊗n` elsewhere; the tangent is unchanged. Only the two
/// moved atoms change the information, so both changes are evaluated in
/// log space.
pub fn continuity_counterexample(t: f64, n: usize) -> Result<CounterexampleRecord, ChannelError> {
    if !(t > 0.0 && t < 1.0) {
        return Err(ChannelError::BadParameter("t", t));
    }
    if n == 0 {
        return Err(ChannelError::BadParameter("n", 0.0));
    }
    let nf = n as f64;
    let (lt, ls) = (t.ln(), (1.0 - t).ln());
    let ln2 = std::f64::consts::LN_2;
    // -expm1(-n ln 2) = 1 - 2^{-n}
    let l_keep = (-(-nf * ln2).exp_m1()).ln();
    let log_p0 = nf * lt;
    let log_q0 = nf * (lt - ln2);
    let log_p1 = nf * ls;
    let log_moved = log_p0 + l_keep;
    let log_q1 = log_add(log_p1, log_moved);
    // δ^(n) at 0ⁿ is n t^{n-1}; at 1ⁿ it is -n (1-t)^{n-1}.
    let log_a0 = 2.0 * (nf.ln() + (nf - 1.0) * lt);
    let log_a1 = 2.0 * (nf.ln() + (nf - 1.0) * ls);
    // A0/q0 − A0/p0 = (A0/q0)(1 − 2^{-n})
    let log_gain_zero = log_a0 - log_q0 + l_keep;
    // A1/p1 − A1/q1 = (A1/p1)(moved/q1)
    let log_loss_one = log_a1 - log_p1 + log_moved - log_q1;
    let log_divergence = log_sub_abs(log_gain_zero, log_loss_one) - nf.ln();
    let log_l1 = ln2 + log_moved;
    let log_nominal = ln2 + log_q0;
    let divergence = log_divergence.exp();
    let l1 = log_l1.exp();
    let nominal_l1 = log_nominal.exp();
    let out_of_range = l1 == 0.0 || nominal_l1 == 0.0 || divergence.is_infinite();
    let perturbed = if (2f64).powi(n as i32) <= MAX_EXTENSION as f64 {
        let base = iid_extend(&LocalData::from_vecs(vec![t, 1.0 - t], vec![1.0, -1.0])?, n)?;
        let mut q = base.probs().to_vec();
        let last = q.len() - 1;
        let moved = q[0] - log_q0.exp();
        q[0] = log_q0.exp();
        q[last] += moved;
        Some(LocalData::from_vecs(q, base.weights().to_vec())?)
    } else {
        None
    };
    Ok(CounterexampleRecord {
        t,
        n,
        log_l1,
        l1,
        nominal_l1,
        fisher_iid: nf * (1.0 / t + 1.0 / (1.0 - t)),
        log_gain_zero,
        log_loss_one,
        log_divergence,
        divergence,
        out_of_range,
        perturbed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> ChannelLocal {
        ChannelLocal::from_columns(vec![vec![0.5, 0.5], vec![0.8, 0.2]], vec![vec![0.5, -0.5], vec![0.2, -0.2]]).unwrap()
    }

    #[test]
    fn g_min_picks_largest_column() {
        let g = g_min(&two_by_two());
        assert!((g.per_letter[0] - 1.0).abs() < 1e-12);
        assert!((g.per_letter[1] - 0.25).abs() < 1e-12);
        assert_eq!(g.argmax, 0);
        assert_eq!(g.value, 1.0);
    }

    #[test]
    fn zero_tangent_has_zero_metric() {
        let cl = ChannelLocal::from_columns(vec![vec![0.3, 0.7]; 3], vec![vec![0.0, 0.0]; 3]).unwrap();
        assert_eq!(g_min(&cl).value, 0.0);
    }

    #[test]
    fn json_round_trip() {
        let cl = two_by_two();
        let s = serde_json::to_string(&cl).unwrap();
        assert!(s.contains("\"in\":2") && s.contains("\"tcols\""));
        let back: ChannelLocal = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cl);
        let bad = r#"{"in":2,"out":2,"cols":[[0.5,0.5]],"tcols":[[0,0],[0,0]]}"#;
        assert!(serde_json::from_str::<ChannelLocal>(bad).is_err());
    }

    #[test]
    fn product_rule_single_block() {
        assert_eq!(product_rule(&[(0.1, 0.2, 3.0)]), (0.1, 0.2));
        let (e, u) = product_rule(&[(0.1, 0.2, 3.0), (0.05, 0.1, 2.0)]);
        assert!((e - 0.15).abs() < 1e-15);
        assert!((u - (0.1 + 2.0 * 0.1 + 0.05 * (3.0 + 0.2) + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn counterexample_small_n_by_hand() {
        let t = 0.5;
        let r = continuity_counterexample(t, 1).unwrap();
        let jp = 1.0 / t + 1.0 / (1.0 - t);
        let jq = 1.0 / (t / 2.0) + 1.0 / (1.0 - t / 2.0);
        assert!((r.divergence - (jp - jq).abs()).abs() < 1e-12, "{r:?}");
        assert!((r.l1 - 2.0 * (t - t / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn log_helpers() {
        assert!((log_add(1f64.ln(), 2f64.ln()) - 3f64.ln()).abs() < 1e-15);
        assert!((log_sub_abs(2f64.ln(), 5f64.ln()) - 3f64.ln()).abs() < 1e-15);
    }
}
