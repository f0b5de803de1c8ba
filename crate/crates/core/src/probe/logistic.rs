use ndarray::{Array1, Array2, ArrayView1};

use super::data::Standardizer;
use super::Scorer;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Unscaled fit of `0.5 |w|^2 + C * sum(logloss)` with an unpenalized
/// intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub w: Array1<f64>,
    pub b: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute gradient component at the returned point.
    pub grad_max: f64,
}

/// Objective and gradient (w part, b part).
pub fn objective_and_grad(x: &Array2<f64>, y: &[bool], c: f64, w: &Array1<f64>, b: f64) -> (f64, Array1<f64>, f64) {
    let z = x.dot(w) + b;
    let mut loss = 0.0;
    let mut r = Array1::zeros(y.len());
    for i in 0..y.len() {
        let zi = z[i];
        loss += if y[i] { softplus(-zi) } else { softplus(zi) };
        r[i] = sigmoid(zi) - if y[i] { 1.0 } else { 0.0 };
    }
    let f = 0.5 * w.dot(w) + c * loss;
    let gw = w + &(x.t().dot(&r) * c);
    let gb = c * r.sum();
    (f, gw, gb)
}

fn grad_max(gw: &Array1<f64>, gb: f64) -> f64 {
    gw.iter().fold(gb.abs(), |m, v| m.max(v.abs()))
}

/// Newton-CG with backtracking line search, stopping when every gradient
/// component is at most `tol` in absolute value.
pub fn fit_logistic(x: &Array2<f64>, y: &[bool], c: f64, tol: f64, max_iter: usize) -> LogisticFit {
    let d = x.ncols();
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    let (mut f, mut gw, mut gb) = objective_and_grad(x, y, c, &w, b);
    let mut iterations = 0;
    while iterations < max_iter && grad_max(&gw, gb) > tol {
        iterations += 1;
        let z = x.dot(&w) + b;
        let s = z.mapv(|zi| {
            let p = sigmoid(zi);
            p * (1.0 - p)
        });
        let hess = |vw: &Array1<f64>, vb: f64| {
            let u = (x.dot(vw) + vb) * &s;
            (vw + &(x.t().dot(&u) * c), c * u.sum())
        };

        // conjugate gradients on H p = -g
        let gnorm = (gw.dot(&gw) + gb * gb).sqrt();
        let eta = gnorm.sqrt().min(0.5) * gnorm;
        let (mut pw, mut pb) = (Array1::<f64>::zeros(d), 0.0);
        let (mut rw, mut rb) = (-&gw, -gb);
        let (mut qw, mut qb) = (rw.clone(), rb);
        let mut rr = rw.dot(&rw) + rb * rb;
        for _ in 0..(d + 1).min(250) {
            if rr.sqrt() <= eta {
                break;
            }
            let (hw, hb) = hess(&qw, qb);
            let curv = qw.dot(&hw) + qb * hb;
            if curv <= 0.0 {
                break;
            }
            let alpha = rr / curv;
            pw.scaled_add(alpha, &qw);
            pb += alpha * qb;
            rw.scaled_add(-alpha, &hw);
            rb -= alpha * hb;
            let rr_new = rw.dot(&rw) + rb * rb;
            let beta = rr_new / rr;
            qw = &rw + &(qw * beta);
            qb = rb + beta * qb;
            rr = rr_new;
        }
        if pw.iter().all(|v| *v == 0.0) && pb == 0.0 {
            pw = -&gw;
            pb = -gb;
        }

        let slope = gw.dot(&pw) + gb * pb;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let nw = &w + &(&pw * step);
            let nb = b + step * pb;
            let (nf, ngw, ngb) = objective_and_grad(x, y, c, &nw, nb);
            if nf <= f + 1e-4 * step * slope {
                w = nw;
                b = nb;
                f = nf;
                gw = ngw;
                gb = ngb;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let g = grad_max(&gw, gb);
    LogisticFit {
        w,
        b,
        converged: g <= tol,
        iterations,
        grad_max: g,
    }
}

/// L2 logistic regression on standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub standardizer: Standardizer,
    pub fit: LogisticFit,
}

impl LogisticProbe {
    pub const TOLERANCE: f64 = 1e-6;
    const MAX_ITER: usize = 100;

    pub fn train(x: &Array2<f64>, y: &[bool], c: f64) -> Self {
        let standardizer = Standardizer::fit(x);
        let xs = standardizer.transform(x);
        let fit = fit_logistic(&xs, y, c, Self::TOLERANCE, Self::MAX_ITER);
        if !fit.converged {
            tracing::warn!(grad_max = fit.grad_max, "logistic probe did not converge");
        }
        Self { standardizer, fit }
    }

    pub fn score_matrix(&self, x: &Array2<f64>) -> Array1<f64> {
        self.standardizer.transform(x).dot(&self.fit.w) + self.fit.b
    }

    pub fn score_view(&self, x: ArrayView1<f64>) -> f64 {
        ((&x - &self.standardizer.mean) / &self.standardizer.scale).dot(&self.fit.w) + self.fit.b
    }
}

impl Scorer for LogisticProbe {
    fn score(&self, x: &[f64]) -> f64 {
        self.standardizer.transform_row(x).dot(&self.fit.w) + self.fit.b
    }
}
