use ndarray::{Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::{split_dev_test, Standardizer};
use super::Scorer;

/// Optimizer and early-stopping recipe shared by every MLP fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for MlpTraining {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 20,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Params {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    w3: Array1<f64>,
    b3: f64,
}

impl Params {
    fn he(d: usize, h1: usize, h2: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = |fan_in: usize, fan_out: usize| {
            let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Array2::from_shape_fn((fan_in, fan_out), |_| n.sample(rng))
        };
        let w1 = layer(d, h1);
        let w2 = layer(h1, h2);
        let w3 = layer(h2, 1).into_shape_with_order(h2).expect("column");
        Self {
            w1,
            b1: Array1::zeros(h1),
            w2,
            b2: Array1::zeros(h2),
            w3,
            b3: 0.0,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.len()),
            w3: Array1::zeros(self.w3.len()),
            b3: 0.0,
        }
    }

    fn logits(&self, x: &Array2<f64>) -> Array1<f64> {
        let a1 = (x.dot(&self.w1) + &self.b1).mapv(relu);
        let a2 = (a1.dot(&self.w2) + &self.b2).mapv(relu);
        a2.dot(&self.w3) + self.b3
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce(logits: &Array1<f64>, y: &[f64]) -> f64 {
    let s: f64 = logits
        .iter()
        .zip(y)
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum();
    s / y.len() as f64
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &Params, lr: f64) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, p: &mut Params, g: &Params) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let lr = self.lr;
        let upd = |w: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        Zip::from(&mut p.w1).and(&g.w1).and(&mut self.m.w1).and(&mut self.v.w1).for_each(|a, &b, c, d| upd(a, b, c, d));
        Zip::from(&mut p.b1).and(&g.b1).and(&mut self.m.b1).and(&mut self.v.b1).for_each(|a, &b, c, d| upd(a, b, c, d));
        Zip::from(&mut p.w2).and(&g.w2).and(&mut self.m.w2).and(&mut self.v.w2).for_each(|a, &b, c, d| upd(a, b, c, d));
        Zip::from(&mut p.b2).and(&g.b2).and(&mut self.m.b2).and(&mut self.v.b2).for_each(|a, &b, c, d| upd(a, b, c, d));
        Zip::from(&mut p.w3).and(&g.w3).and(&mut self.m.w3).and(&mut self.v.w3).for_each(|a, &b, c, d| upd(a, b, c, d));
        upd(&mut p.b3, g.b3, &mut self.m.b3, &mut self.v.b3);
    }
}

fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Mean BCE gradient over one batch, with L2 weight decay on the weight
/// matrices (biases are not decayed).
fn gradient(p: &Params, x: &Array2<f64>, y: &[f64], dropout: f64, weight_decay: f64, rng: &mut ChaCha8Rng) -> Params {
    let b = x.nrows();
    let z1 = x.dot(&p.w1) + &p.b1;
    let m1 = dropout_mask(z1.dim(), dropout, rng);
    let a1 = z1.mapv(relu) * &m1;
    let z2 = a1.dot(&p.w2) + &p.b2;
    let m2 = dropout_mask(z2.dim(), dropout, rng);
    let a2 = z2.mapv(relu) * &m2;
    let z3 = a2.dot(&p.w3) + p.b3;

    let dz3: Array1<f64> = z3.iter().zip(y).map(|(&z, &t)| (sigmoid(z) - t) / b as f64).collect();
    let gw3 = a2.t().dot(&dz3) + &(&p.w3 * weight_decay);
    let gb3 = dz3.sum();

    let dz3c = dz3.insert_axis(Axis(1));
    let mut dz2 = dz3c.dot(&p.w3.view().insert_axis(Axis(0)));
    Zip::from(&mut dz2).and(&z2).and(&m2).for_each(|d, &z, &m| *d *= if z > 0.0 { m } else { 0.0 });
    let gw2 = a1.t().dot(&dz2) + &(&p.w2 * weight_decay);
    let gb2 = dz2.sum_axis(Axis(0));

    let mut dz1 = dz2.dot(&p.w2.t());
    Zip::from(&mut dz1).and(&z1).and(&m1).for_each(|d, &z, &m| *d *= if z > 0.0 { m } else { 0.0 });
    let gw1 = x.t().dot(&dz1) + &(&p.w1 * weight_decay);
    let gb1 = dz1.sum_axis(Axis(0));

    Params {
        w1: gw1,
        b1: gb1,
        w2: gw2,
        b2: gb2,
        w3: gw3,
        b3: gb3,
    }
}

fn rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Two ReLU hidden layers with dropout, trained with Adam on standardized
/// inputs. Scores are output logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProbe {
    pub standardizer: Standardizer,
    params: Params,
    pub epochs_run: usize,
    pub early_stopped: bool,
}

impl MlpProbe {
    pub fn train(
        x: &Array2<f64>,
        y: &[bool],
        hidden: (usize, usize),
        dropout: f64,
        weight_decay: f64,
        recipe: &MlpTraining,
        seed: u64,
    ) -> Self {
        let standardizer = Standardizer::fit(x);
        let xs = standardizer.transform(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::he(x.ncols(), hidden.0, hidden.1, &mut rng);
        let mut adam = Adam::new(&params, recipe.learning_rate);

        let (train_idx, val_idx) = match split_dev_test("mlp-inner", y, recipe.validation_fraction, seed ^ 0x5eed) {
            Ok(s) if recipe.patience > 0 => {
                let val = s.test.clone();
                (s.dev, val)
            }
            _ => ((0..y.len()).collect(), Vec::new()),
        };
        let target: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let xv = rows(&xs, &val_idx);
        let yv: Vec<f64> = val_idx.iter().map(|&i| target[i]).collect();

        let mut order = train_idx.clone();
        let mut best = (f64::INFINITY, params.clone());
        let mut since_best = 0;
        let mut epochs_run = 0;
        let mut early_stopped = false;
        for _ in 0..recipe.epochs {
            epochs_run += 1;
            order.shuffle(&mut rng);
            for batch in order.chunks(recipe.batch_size.max(1)) {
                let xb = rows(&xs, batch);
                let yb: Vec<f64> = batch.iter().map(|&i| target[i]).collect();
                let g = gradient(&params, &xb, &yb, dropout, weight_decay, &mut rng);
                adam.step(&mut params, &g);
            }
            if val_idx.is_empty() {
                continue;
            }
            let loss = bce(&params.logits(&xv), &yv);
            if loss < best.0 {
                best = (loss, params.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= recipe.patience {
                    early_stopped = true;
                    break;
                }
            }
        }
        if !val_idx.is_empty() {
            params = best.1;
        }
        Self {
            standardizer,
            params,
            epochs_run,
            early_stopped,
        }
    }

    pub fn score_matrix(&self, x: &Array2<f64>) -> Array1<f64> {
        self.params.logits(&self.standardizer.transform(x))
    }
}

impl Scorer for MlpProbe {
    fn score(&self, x: &[f64]) -> f64 {
        let row = self.standardizer.transform_row(x).insert_axis(Axis(0));
        self.params.logits(&row)[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::roc_auc;

    fn blobs(n: usize, d: usize, seed: u64, shift: f64) -> (Array2<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x = Array2::from_shape_fn((n, d), |(i, _)| rng.random_range(-1.0..1.0) + if y[i] { shift } else { 0.0 });
        (x, y)
    }

    fn quick() -> MlpTraining {
        MlpTraining {
            epochs: 60,
            ..MlpTraining::default()
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let (x, y) = blobs(8, 3, 1, 1.0);
        let t: Vec<f64> = y.iter().map(|&l| l as u8 as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Params::he(3, 5, 4, &mut rng);
        let wd = 0.01;
        let loss = |p: &Params| {
            bce(&p.logits(&x), &t)
                + 0.5 * wd * (p.w1.mapv(|v| v * v).sum() + p.w2.mapv(|v| v * v).sum() + p.w3.dot(&p.w3))
        };
        let g = gradient(&p, &x, &t, 0.0, wd, &mut rng);
        let h = 1e-6;
        for (r, c) in [(0, 0), (2, 3), (1, 4)] {
            let mut a = p.clone();
            let mut b = p.clone();
            a.w1[[r, c]] += h;
            b.w1[[r, c]] -= h;
            let num = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((num - g.w1[[r, c]]).abs() < 1e-6, "w1 {num} {}", g.w1[[r, c]]);
        }
        for j in 0..4 {
            let mut a = p.clone();
            let mut b = p.clone();
            a.w3[j] += h;
            b.w3[j] -= h;
            assert!(((loss(&a) - loss(&b)) / (2.0 * h) - g.w3[j]).abs() < 1e-6);
        }
        let mut a = p.clone();
        let mut b = p.clone();
        a.b3 += h;
        b.b3 -= h;
        assert!(((loss(&a) - loss(&b)) / (2.0 * h) - g.b3).abs() < 1e-6);
    }

    #[test]
    fn learns_shifted_blobs() {
        let (x, y) = blobs(120, 6, 3, 1.5);
        let p = MlpProbe::train(&x, &y, (32, 16), 0.1, 1e-4, &quick(), 7);
        let (xt, yt) = blobs(80, 6, 4, 1.5);
        let s = p.score_matrix(&xt);
        assert!(roc_auc(&yt, s.as_slice().unwrap()).unwrap() > 0.9);
        assert!((p.score(&xt.row(0).to_vec()) - s[0]).abs() < 1e-12);
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let (x, y) = blobs(60, 4, 5, 1.0);
        let a = MlpProbe::train(&x, &y, (8, 4), 0.3, 1e-4, &quick(), 11);
        let b = MlpProbe::train(&x, &y, (8, 4), 0.3, 1e-4, &quick(), 11);
        assert_eq!(a, b);
        let c = MlpProbe::train(&x, &y, (8, 4), 0.3, 1e-4, &quick(), 12);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn early_stopping_restores_best() {
        // pure noise: validation loss stops improving early
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((100, 5), |_| rng.random_range(-1.0..1.0));
        let y: Vec<bool> = (0..100).map(|_| rng.random::<bool>()).collect();
        let recipe = MlpTraining {
            patience: 5,
            ..MlpTraining::default()
        };
        let p = MlpProbe::train(&x, &y, (16, 8), 0.0, 0.0, &recipe, 1);
        assert!(p.early_stopped);
        assert!(p.epochs_run < recipe.epochs);
    }
}
