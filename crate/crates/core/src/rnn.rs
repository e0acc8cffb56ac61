//! Single-layer LSTM with a linear per-step readout, trained by
//! backpropagation through time. Used as a step-loop timing baseline.

use rand::Rng;

use crate::error::Result;
use crate::init::kaiming_uniform;
use crate::layer::{check_shape, Parameters};
use crate::linalg::Matrix;
use crate::tape::Gradients;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Gate weights `4N x (M + N)`, rows ordered input, forget, cell, output.
    pub w: Matrix,
    pub b: Matrix,
    pub head_w: Matrix,
    pub head_b: Matrix,
}

struct StepCache {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl Lstm {
    pub fn new(input_dim: usize, hidden_dim: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let fan_in = input_dim + hidden_dim;
        Self {
            input_dim,
            hidden_dim,
            w: kaiming_uniform(4 * hidden_dim, fan_in, fan_in, rng),
            b: kaiming_uniform(1, 4 * hidden_dim, fan_in, rng),
            head_w: kaiming_uniform(outputs, hidden_dim, hidden_dim, rng),
            head_b: kaiming_uniform(1, outputs, hidden_dim, rng),
        }
    }

    pub fn outputs(&self) -> usize {
        self.head_w.rows()
    }

    fn run(&self, x: &Matrix) -> (Matrix, Vec<StepCache>, Vec<Vec<f64>>) {
        let n = self.hidden_dim;
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut z = vec![0.0; 4 * n];
        let mut out = Matrix::zeros(x.rows(), self.outputs());
        let mut caches = Vec::with_capacity(x.rows());
        let mut hs = Vec::with_capacity(x.rows());
        for t in 0..x.rows() {
            let mut xh = x.row(t).to_vec();
            xh.extend_from_slice(&h);
            self.w.matvec_into(&xh, &mut z);
            let gate = |k: usize, j: usize| z[k * n + j] + self.b.as_slice()[k * n + j];
            let i: Vec<f64> = (0..n).map(|j| sigmoid(gate(0, j))).collect();
            let f: Vec<f64> = (0..n).map(|j| sigmoid(gate(1, j))).collect();
            let g: Vec<f64> = (0..n).map(|j| gate(2, j).tanh()).collect();
            let o: Vec<f64> = (0..n).map(|j| sigmoid(gate(3, j))).collect();
            let c_prev = c.clone();
            for j in 0..n {
                c[j] = f[j] * c[j] + i[j] * g[j];
            }
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            for j in 0..n {
                h[j] = o[j] * tanh_c[j];
            }
            let row = out.row_mut(t);
            self.head_w.matvec_into(&h, row);
            for (r, b) in row.iter_mut().zip(self.head_b.as_slice()) {
                *r += b;
            }
            caches.push(StepCache {
                xh,
                i,
                f,
                g,
                o,
                c_prev,
                tanh_c,
            });
            hs.push(h.clone());
        }
        (out, caches, hs)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        check_shape("lstm input", x, x.rows(), self.input_dim)?;
        Ok(self.run(x).0)
    }

    /// Mean squared error against `target` and its parameter gradients.
    pub fn loss_and_grad(&self, x: &Matrix, target: &Matrix) -> Result<(f64, Gradients)> {
        check_shape("lstm input", x, x.rows(), self.input_dim)?;
        check_shape("lstm target", target, x.rows(), self.outputs())?;
        let n = self.hidden_dim;
        let (out, caches, hs) = self.run(x);
        let count = out.len() as f64;
        let diff = out.sub(target);
        let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / count;
        let dy = diff.scaled(2.0 / count);

        let mut dw = Matrix::zeros(self.w.rows(), self.w.cols());
        let mut db = vec![0.0; 4 * n];
        let mut dhead_w = Matrix::zeros(self.head_w.rows(), self.head_w.cols());
        let mut dhead_b = vec![0.0; self.outputs()];
        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        let mut dz = vec![0.0; 4 * n];
        let mut dxh = vec![0.0; self.w.cols()];
        for t in (0..x.rows()).rev() {
            let s = &caches[t];
            let dyt = dy.row(t);
            for (k, &d) in dyt.iter().enumerate() {
                dhead_b[k] += d;
                crate::linalg::axpy_slice(d, &hs[t], dhead_w.row_mut(k));
            }
            let mut dh = dh_next.clone();
            self.head_w.t_matvec_acc(dyt, &mut dh);
            for j in 0..n {
                let dc = dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]) + dc_next[j];
                let d_o = dh[j] * s.tanh_c[j];
                let di = dc * s.g[j];
                let dg = dc * s.i[j];
                let df = dc * s.c_prev[j];
                dc_next[j] = dc * s.f[j];
                dz[j] = di * s.i[j] * (1.0 - s.i[j]);
                dz[n + j] = df * s.f[j] * (1.0 - s.f[j]);
                dz[2 * n + j] = dg * (1.0 - s.g[j] * s.g[j]);
                dz[3 * n + j] = d_o * s.o[j] * (1.0 - s.o[j]);
            }
            for (r, &d) in dz.iter().enumerate() {
                db[r] += d;
                if d != 0.0 {
                    crate::linalg::axpy_slice(d, &s.xh, dw.row_mut(r));
                }
            }
            dxh.fill(0.0);
            self.w.t_matvec_acc(&dz, &mut dxh);
            dh_next.copy_from_slice(&dxh[self.input_dim..]);
        }
        let mut grads = Gradients::default();
        grads.accumulate("w", &dw);
        grads.accumulate("b", &Matrix::from_vec(1, 4 * n, db));
        grads.accumulate("head.w", &dhead_w);
        grads.accumulate("head.b", &Matrix::from_vec(1, self.outputs(), dhead_b));
        Ok((loss, grads))
    }
}

impl Parameters for Lstm {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("w", &self.w);
        f("b", &self.b);
        f("head.w", &self.head_w);
        f("head.b", &self.head_b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
        f("head.w", &mut self.head_w);
        f("head.b", &mut self.head_b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::relative_error;
    use crate::init::seeded_rng;

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = seeded_rng(2);
        let net = Lstm::new(2, 3, 2, &mut rng);
        let x = kaiming_uniform(6, 2, 1, &mut rng);
        let y = kaiming_uniform(6, 2, 1, &mut rng);
        let (_, grads) = net.loss_and_grad(&x, &y).unwrap();
        let h = 1e-5;
        for name in ["w", "b", "head.w", "head.b"] {
            let mut numeric = Vec::new();
            let len = grads.get(name).unwrap().len();
            for i in 0..len {
                let eval = |delta: f64| {
                    let mut p = net.clone();
                    p.visit_params_mut(&mut |n, m| {
                        if n == name {
                            m.as_mut_slice()[i] += delta;
                        }
                    });
                    p.loss_and_grad(&x, &y).unwrap().0
                };
                numeric.push((eval(h) - eval(-h)) / (2.0 * h));
            }
            let err = relative_error(grads.get(name).unwrap().as_slice(), &numeric);
            assert!(err < 1e-6, "{name}: {err}");
        }
    }

    #[test]
    fn forward_shape() {
        let net = Lstm::new(1, 4, 3, &mut seeded_rng(0));
        assert_eq!(net.forward(&Matrix::zeros(5, 1)).unwrap().shape(), (5, 3));
        assert!(net.forward(&Matrix::zeros(5, 2)).is_err());
    }
}
