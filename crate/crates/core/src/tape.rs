//! Reverse-mode gradient tape over the library's closed set of primitives.
//!
//! Every primitive computes its value eagerly when recorded and keeps what
//! its adjoint rule needs. [`Tape::backward`] walks the record in reverse
//! and returns gradients keyed by parameter name. Frozen state-space
//! matrices enter only through [`Tape::scan`] and never receive gradients.
//!
//! Two primitives are not differentiable and use substitute rules:
//!
//! * the efficient-variant one-hot mask uses a straight-through estimator,
//!   `∂Mask_i/∂d_i ≈ 1` with respect to the gate logits;
//! * spike thresholds use the triangular surrogate derivative
//!   ([`crate::spiking::surrogate_grad`]).
//!
//! For finite-difference checks of those two rules the tape can run a
//! *relaxed* forward whose exact derivative equals the substitute rule:
//! spikes become a piecewise-quadratic soft step and masks are replaced by
//! `mask₀ + d − d₀` around a recorded reference point.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{axpy_slice, gemm, Matrix};
use crate::spiking::{smooth_step, surrogate_grad, LifConfig};
use crate::ssm::{ScanEngine, ScanPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the activation's output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One-hot mask and the logits it was taken from, used to replay a mask.
#[derive(Debug, Clone)]
pub struct FrozenMask {
    pub mask: Matrix,
    pub logits: Matrix,
}

enum Op {
    Input,
    Param(String),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Activate {
        a: Var,
        act: Activation,
    },
    Scan {
        u: Var,
        engine: Arc<ScanEngine>,
        path: ScanPath,
    },
    ReverseTime(Var),
    SoftmaxRows(Var),
    EfficientMask {
        logits: Var,
        gates: Var,
        mask: Matrix,
    },
    Combine {
        m: Var,
        fwd: Var,
        bwd: Option<Var>,
    },
    Threshold {
        x: Var,
        threshold: f64,
        width: f64,
    },
    Lif {
        input: Var,
        cfg: LifConfig,
        pre: Matrix,
        spikes: Matrix,
    },
    CrossEntropy {
        logits: Var,
        probs: Matrix,
        label: usize,
        pooled: bool,
    },
    Mse {
        pred: Var,
        target: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    relaxed: bool,
    mask_replay: Option<VecDeque<FrozenMask>>,
    recorded_masks: Vec<FrozenMask>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose spike thresholds use the smooth surrogate step and whose
    /// efficient masks, if `masks` is given, are replayed straight-through.
    pub fn relaxed(masks: Option<Vec<FrozenMask>>) -> Self {
        Self {
            relaxed: true,
            mask_replay: masks.map(VecDeque::from),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    /// Masks produced by every efficient-mask op, in recording order.
    pub fn recorded_masks(&self) -> &[FrozenMask] {
        &self.recorded_masks
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Matrix {
        std::mem::replace(&mut self.nodes[v.0].value, Matrix::zeros(0, 0))
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, name: impl Into<String>, value: &Matrix) -> Var {
        self.push(value.clone(), Op::Param(name.into()))
    }

    /// `x W^T + b` for `x: T x in`, `W: out x in`, `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(
            xv.cols(),
            wv.cols(),
            "linear: input width {} vs weight width {}",
            xv.cols(),
            wv.cols()
        );
        let mut y = Matrix::zeros(xv.rows(), wv.rows());
        gemm(1.0, xv, false, wv, true, 0.0, &mut y);
        if let Some(b) = b {
            let bv = self.value(b).as_slice().to_vec();
            assert_eq!(bv.len(), y.cols(), "linear: bias width");
            for r in 0..y.rows() {
                axpy_slice(1.0, &bv, y.row_mut(r));
            }
        }
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        self.push(y, Op::Add(a, b))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let y = self.value(a).map(|v| act.apply(v));
        self.push(y, Op::Activate { a, act })
    }

    pub fn scan(&mut self, u: Var, engine: &Arc<ScanEngine>, path: ScanPath) -> Var {
        let y = engine.forward(self.value(u), path);
        self.push(
            y,
            Op::Scan {
                u,
                engine: engine.clone(),
                path,
            },
        )
    }

    pub fn reverse_time(&mut self, a: Var) -> Var {
        let y = self.value(a).reversed_rows();
        self.push(y, Op::ReverseTime(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let y = softmax_rows(self.value(a));
        self.push(y, Op::SoftmaxRows(a))
    }

    /// `gates ∘ Mask(logits)` with a one-hot argmax mask per row.
    pub fn efficient_mask(&mut self, logits: Var, gates: Var) -> Var {
        let replay = self.mask_replay.as_mut().and_then(VecDeque::pop_front);
        let lv = self.value(logits).clone();
        let gv = self.value(gates);
        let (mask, y) = match replay {
            Some(frozen) => {
                assert_eq!(frozen.mask.shape(), gv.shape(), "replayed mask shape");
                let mut y = gv.clone();
                for i in 0..y.len() {
                    let st =
                        frozen.mask.as_slice()[i] + lv.as_slice()[i] - frozen.logits.as_slice()[i];
                    y.as_mut_slice()[i] *= st;
                }
                (frozen.mask, y)
            }
            None => {
                let mask = argmax_mask(&lv);
                let mut y = gv.clone();
                for (yi, mi) in y.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *yi *= mi;
                }
                (mask, y)
            }
        };
        self.recorded_masks.push(FrozenMask {
            mask: mask.clone(),
            logits: lv,
        });
        self.push(
            y,
            Op::EfficientMask {
                logits,
                gates,
                mask,
            },
        )
    }

    /// Delay-gated combination: `h[k] = m[k] + Σ_j fwd_j[k-j] m[k-j] + Σ_j bwd_j[k+j] m[k+j]`.
    pub fn combine_delayed(&mut self, m: Var, fwd: Var, bwd: Option<Var>) -> Var {
        let h = combine_values(self.value(m), self.value(fwd), bwd.map(|b| self.value(b)));
        self.push(h, Op::Combine { m, fwd, bwd })
    }

    /// Spike emission `Θ(x - threshold)` with `Θ(0) = 1`.
    pub fn threshold(&mut self, x: Var, threshold: f64, width: f64) -> Var {
        let relaxed = self.relaxed;
        let y = self.value(x).map(|v| {
            if relaxed {
                smooth_step(v - threshold, width)
            } else if v >= threshold {
                1.0
            } else {
                0.0
            }
        });
        self.push(
            y,
            Op::Threshold {
                x,
                threshold,
                width,
            },
        )
    }

    /// Leaky integrate-and-fire over time, one neuron per column, hard reset.
    pub fn lif(&mut self, input: Var, cfg: LifConfig) -> Var {
        let iv = self.value(input);
        let (t, c) = iv.shape();
        let mut pre = Matrix::zeros(t, c);
        let mut spikes = Matrix::zeros(t, c);
        let mut potential = vec![0.0; c];
        for k in 0..t {
            for j in 0..c {
                let p = cfg.leak * potential[j] + iv[(k, j)];
                let s = if self.relaxed {
                    smooth_step(p - cfg.threshold, cfg.surrogate_width)
                } else if p >= cfg.threshold {
                    1.0
                } else {
                    0.0
                };
                pre[(k, j)] = p;
                spikes[(k, j)] = s;
                potential[j] = p * (1.0 - s);
            }
        }
        self.push(
            spikes.clone(),
            Op::Lif {
                input,
                cfg,
                pre,
                spikes,
            },
        )
    }

    /// Softmax cross-entropy on the last row of `logits`, or on the time
    /// average of all rows when `pooled`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize, pooled: bool) -> Result<Var> {
        let lv = self.value(logits);
        let classes = lv.cols();
        if classes < 2 {
            return Err(Error::invalid("cross-entropy needs at least two classes"));
        }
        if label >= classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        if lv.rows() == 0 {
            return Err(Error::invalid("cross-entropy on an empty sequence"));
        }
        let z = if pooled {
            let mut z = lv.column_sums();
            z.scale(1.0 / lv.rows() as f64);
            z
        } else {
            Matrix::from_vec(1, classes, lv.row(lv.rows() - 1).to_vec())
        };
        let probs = softmax_rows(&z);
        let loss = -probs[(0, label)].max(f64::MIN_POSITIVE).ln();
        // log-sum-exp form for accuracy when probabilities underflow
        let zmax = z
            .as_slice()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = zmax
            + z.as_slice()
                .iter()
                .map(|v| (v - zmax).exp())
                .sum::<f64>()
                .ln();
        let loss = if loss.is_finite() {
            lse - z[(0, label)]
        } else {
            loss
        };
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                probs,
                label,
                pooled,
            },
        ))
    }

    /// Mean squared error over every entry.
    pub fn mse(&mut self, pred: Var, target: &Matrix) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::invalid(format!(
                "mse: prediction {:?} vs target {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        let n = pv.len().max(1) as f64;
        let loss = pv
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Reverse sweep from a scalar node with adjoint 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::InvalidState(
                "backward called before any forward pass".into(),
            ));
        }
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(Error::InvalidState(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        let mut grads = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(name) => grads.accumulate(name, &g),
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    gemm(1.0, &g, false, wv, false, 0.0, &mut gx);
                    let mut gw = Matrix::zeros(wv.rows(), wv.cols());
                    gemm(1.0, &g, true, xv, false, 0.0, &mut gw);
                    add_adj(&mut adj, *x, gx);
                    add_adj(&mut adj, *w, gw);
                    if let Some(b) = b {
                        add_adj(&mut adj, *b, g.column_sums());
                    }
                }
                Op::Add(a, b) => {
                    add_adj(&mut adj, *b, g.clone());
                    add_adj(&mut adj, *a, g);
                }
                Op::Activate { a, act } => {
                    let mut ga = g;
                    for (gi, yi) in ga.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        *gi *= act.grad_from_output(*yi);
                    }
                    add_adj(&mut adj, *a, ga);
                }
                Op::Scan { u, engine, path } => {
                    add_adj(&mut adj, *u, engine.adjoint(&g, *path));
                }
                Op::ReverseTime(a) => add_adj(&mut adj, *a, g.reversed_rows()),
                Op::SoftmaxRows(a) => {
                    let s = &node.value;
                    let mut ga = Matrix::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let dotp = crate::linalg::dot(g.row(r), s.row(r));
                        for c in 0..s.cols() {
                            ga[(r, c)] = s[(r, c)] * (g[(r, c)] - dotp);
                        }
                    }
                    add_adj(&mut adj, *a, ga);
                }
                Op::EfficientMask {
                    logits,
                    gates,
                    mask,
                } => {
                    // y = g ∘ Mask(d); ∂y/∂g = Mask, ∂y/∂d ≈ g (straight-through).
                    let gv = self.value(*gates);
                    let mut gg = g.clone();
                    let mut gd = g;
                    for i in 0..gg.len() {
                        gg.as_mut_slice()[i] *= mask.as_slice()[i];
                        gd.as_mut_slice()[i] *= gv.as_slice()[i];
                    }
                    add_adj(&mut adj, *gates, gg);
                    add_adj(&mut adj, *logits, gd);
                }
                Op::Combine { m, fwd, bwd } => {
                    let mv = self.value(*m);
                    let fv = self.value(*fwd);
                    let bv = bwd.map(|b| self.value(b));
                    let (gm, gf, gb) = combine_adjoint(mv, fv, bv, &g);
                    add_adj(&mut adj, *m, gm);
                    add_adj(&mut adj, *fwd, gf);
                    if let (Some(b), Some(gb)) = (bwd, gb) {
                        add_adj(&mut adj, *b, gb);
                    }
                }
                Op::Threshold {
                    x,
                    threshold,
                    width,
                } => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (gi, xi) in gx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        *gi *= surrogate_grad(xi - threshold, *width);
                    }
                    add_adj(&mut adj, *x, gx);
                }
                Op::Lif {
                    input,
                    cfg,
                    pre,
                    spikes,
                } => {
                    let (t, c) = pre.shape();
                    let mut gi = Matrix::zeros(t, c);
                    for j in 0..c {
                        // adjoint of the post-reset potential carried to step k+1
                        let mut carry = 0.0;
                        for k in (0..t).rev() {
                            let p = pre[(k, j)];
                            let s = spikes[(k, j)];
                            let sg = surrogate_grad(p - cfg.threshold, cfg.surrogate_width);
                            let dp = g[(k, j)] * sg + carry * ((1.0 - s) - p * sg);
                            gi[(k, j)] = dp;
                            carry = cfg.leak * dp;
                        }
                    }
                    add_adj(&mut adj, *input, gi);
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    label,
                    pooled,
                } => {
                    let lv = self.value(*logits);
                    let scale = g[(0, 0)];
                    let mut dz = probs.clone();
                    dz[(0, *label)] -= 1.0;
                    dz.scale(scale);
                    let mut gl = Matrix::zeros(lv.rows(), lv.cols());
                    if *pooled {
                        let inv = 1.0 / lv.rows() as f64;
                        for r in 0..lv.rows() {
                            axpy_slice(inv, dz.as_slice(), gl.row_mut(r));
                        }
                    } else {
                        gl.row_mut(lv.rows() - 1).copy_from_slice(dz.as_slice());
                    }
                    add_adj(&mut adj, *logits, gl);
                }
                Op::Mse { pred, target } => {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g[(0, 0)] / pv.len().max(1) as f64;
                    let mut gp = pv.sub(target);
                    gp.scale(scale);
                    add_adj(&mut adj, *pred, gp);
                }
            }
        }
        Ok(grads)
    }
}

fn add_adj(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Entries closer than this (relative, floored at 1) count as tied, so
/// round-off from the FFT scan cannot change the pick.
pub const ARGMAX_TIE: f64 = 1e-10;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let scale = row.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let tie = ARGMAX_TIE * scale;
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] + tie {
            best = c;
        }
    }
    best
}

/// One-hot argmax per row.
pub fn argmax_mask(values: &Matrix) -> Matrix {
    let mut mask = Matrix::zeros(values.rows(), values.cols());
    if values.cols() == 0 {
        return mask;
    }
    for r in 0..values.rows() {
        mask[(r, argmax(values.row(r)))] = 1.0;
    }
    mask
}

/// Loop form of the delay-gated combination. Gate row `i` column `j-1`
/// routes `m[i]` to step `i+j` (forward) or `i-j` (backward); out-of-range
/// targets are dropped.
pub(crate) fn combine_values(m: &Matrix, fwd: &Matrix, bwd: Option<&Matrix>) -> Matrix {
    let t = m.rows();
    assert_eq!(fwd.rows(), t, "gate rows must match memory rows");
    let n = fwd.cols();
    let mut h = m.clone();
    for i in 0..t {
        let mi = m.row(i).to_vec();
        for j in 1..=n.min(t - 1 - i) {
            let g = fwd[(i, j - 1)];
            if g != 0.0 {
                axpy_slice(g, &mi, h.row_mut(i + j));
            }
        }
        if let Some(b) = bwd {
            for j in 1..=b.cols().min(i) {
                let g = b[(i, j - 1)];
                if g != 0.0 {
                    axpy_slice(g, &mi, h.row_mut(i - j));
                }
            }
        }
    }
    h
}

fn combine_adjoint(
    m: &Matrix,
    fwd: &Matrix,
    bwd: Option<&Matrix>,
    g: &Matrix,
) -> (Matrix, Matrix, Option<Matrix>) {
    let t = m.rows();
    let n = fwd.cols();
    let mut gm = g.clone();
    let mut gf = Matrix::zeros(t, n);
    let mut gb = bwd.map(|b| Matrix::zeros(t, b.cols()));
    for i in 0..t {
        for j in 1..=n.min(t - 1 - i) {
            let target = g.row(i + j);
            gf[(i, j - 1)] = crate::linalg::dot(m.row(i), target);
            let gate = fwd[(i, j - 1)];
            if gate != 0.0 {
                let target = target.to_vec();
                axpy_slice(gate, &target, gm.row_mut(i));
            }
        }
        if let (Some(b), Some(gb)) = (bwd, gb.as_mut()) {
            for j in 1..=b.cols().min(i) {
                let target = g.row(i - j).to_vec();
                gb[(i, j - 1)] = crate::linalg::dot(m.row(i), &target);
                let gate = b[(i, j - 1)];
                if gate != 0.0 {
                    axpy_slice(gate, &target, gm.row_mut(i));
                }
            }
        }
    }
    (gm, gf, gb)
}

/// Parameter gradients keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.map.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn accumulate(&mut self, name: &str, g: &Matrix) {
        match self.map.get_mut(name) {
            Some(existing) => existing.add_assign(g),
            None => {
                self.map.insert(name.to_string(), g.clone());
            }
        }
    }

    /// `self += scale * other`, name by name.
    pub fn merge_scaled(&mut self, other: &Gradients, scale: f64) {
        for (name, g) in &other.map {
            match self.map.get_mut(name) {
                Some(existing) => existing.axpy(scale, g),
                None => {
                    self.map.insert(name.clone(), g.scaled(scale));
                }
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.map.values_mut().for_each(|g| g.scale(alpha));
    }

    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}
