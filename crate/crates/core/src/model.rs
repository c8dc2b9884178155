//! Desk-scale classifiers over a single flat parameter vector.
//!
//! Layouts (row-major weights, then biases):
//! - logreg: `W[C x f]`, `b[C]`
//! - mlp:    `W1[h x f]`, `b1[h]`, `W2[C x h]`, `b2[C]` with a tanh hidden layer

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::vecmath::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Hidden width; ignored for logreg.
    pub hidden: usize,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn logreg(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Logreg,
            feature_dim,
            num_classes,
            hidden: 0,
            init_seed: 0,
        }
    }

    pub fn mlp(feature_dim: usize, hidden: usize, num_classes: usize, init_seed: u64) -> Self {
        Self {
            kind: ModelKind::Mlp,
            feature_dim,
            num_classes,
            hidden,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes < 2 {
            return Err(Error::invalid("model needs feature_dim >= 1 and num_classes >= 2"));
        }
        if self.kind == ModelKind::Mlp && self.hidden == 0 {
            return Err(Error::invalid("mlp needs hidden >= 1"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (f, c, h) = (self.feature_dim, self.num_classes, self.hidden);
        match self.kind {
            ModelKind::Logreg => c * f + c,
            ModelKind::Mlp => h * f + h + c * h + c,
        }
    }

    pub fn init_params(&self) -> ParamVector {
        let d = self.param_count();
        match self.kind {
            ModelKind::Logreg => ParamVector::zeros(d),
            ModelKind::Mlp => {
                let (f, c, h) = (self.feature_dim, self.num_classes, self.hidden);
                let mut rng = rng::stream(self.init_seed, rng::tag::MODEL_INIT);
                let mut out = Vec::with_capacity(d);
                for (fan_in, fan_out) in [(f, h), (h, c)] {
                    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    out.extend((0..fan_in * fan_out).map(|_| rng.random_range(-s..s)));
                    out.extend(std::iter::repeat_n(0.0, fan_out));
                }
                ParamVector::from_vec_unchecked(out)
            }
        }
    }

    fn check(&self, params: &ParamVector, ds: &Dataset) -> Result<()> {
        if params.dim() != self.param_count() {
            return Err(Error::DimMismatch {
                left: params.dim(),
                right: self.param_count(),
            });
        }
        if ds.feature_dim() != self.feature_dim {
            return Err(Error::DimMismatch {
                left: ds.feature_dim(),
                right: self.feature_dim,
            });
        }
        if ds.num_classes() > self.num_classes {
            return Err(Error::invalid(format!(
                "dataset has {} classes, model only {}",
                ds.num_classes(),
                self.num_classes
            )));
        }
        Ok(())
    }

    fn check_batch(&self, ds: &Dataset, batch: &[usize]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= ds.len()) {
            return Err(Error::invalid(format!("batch index {bad} outside dataset of {}", ds.len())));
        }
        Ok(())
    }

    /// Logits for one sample; `hidden` receives the tanh activations for mlp.
    fn logits(&self, p: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let (f, c, h) = (self.feature_dim, self.num_classes, self.hidden);
        match self.kind {
            ModelKind::Logreg => affine(&p[..c * f], &p[c * f..c * f + c], x, out),
            ModelKind::Mlp => {
                let (w1, rest) = p.split_at(h * f);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                affine(w1, b1, x, hidden);
                for v in hidden.iter_mut() {
                    *v = v.tanh();
                }
                affine(w2, b2, hidden, out);
            }
        }
    }

    /// Mean cross-entropy over `batch`.
    pub fn forward_loss(&self, params: &ParamVector, ds: &Dataset, batch: &[usize]) -> Result<f64> {
        self.check(params, ds)?;
        self.check_batch(ds, batch)?;
        let mut hidden = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.num_classes];
        let mut total = 0.0;
        for &i in batch {
            self.logits(params.as_slice(), ds.row(i), &mut hidden, &mut logits);
            total += cross_entropy(&logits, ds.label(i));
        }
        Ok(total / batch.len() as f64)
    }

    pub fn gradient(&self, params: &ParamVector, ds: &Dataset, batch: &[usize]) -> Result<ParamVector> {
        self.loss_and_gradient(params, ds, batch).map(|(_, g)| g)
    }

    /// Mean cross-entropy and its exact gradient over `batch`.
    pub fn loss_and_gradient(&self, params: &ParamVector, ds: &Dataset, batch: &[usize]) -> Result<(f64, ParamVector)> {
        self.check(params, ds)?;
        self.check_batch(ds, batch)?;
        let (f, c, h) = (self.feature_dim, self.num_classes, self.hidden);
        let p = params.as_slice();
        let mut grad = vec![0.0; params.dim()];
        let mut hidden = vec![0.0; h];
        let mut dhidden = vec![0.0; h];
        let mut probs = vec![0.0; c];
        let mut loss = 0.0;
        for &i in batch {
            let x = ds.row(i);
            let y = ds.label(i);
            self.logits(p, x, &mut hidden, &mut probs);
            loss += cross_entropy(&probs, y);
            softmax_in_place(&mut probs);
            probs[y] -= 1.0;
            let dlogits = &probs;
            match self.kind {
                ModelKind::Logreg => {
                    let (gw, gb) = grad.split_at_mut(c * f);
                    outer_acc(gw, dlogits, x);
                    add_acc(gb, dlogits);
                }
                ModelKind::Mlp => {
                    let w2 = &p[h * f + h..h * f + h + c * h];
                    let (gw1, rest) = grad.split_at_mut(h * f);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(c * h);
                    outer_acc(gw2, dlogits, &hidden);
                    add_acc(gb2, dlogits);
                    for (j, dh) in dhidden.iter_mut().enumerate() {
                        let back: f64 = (0..c).map(|r| w2[r * h + j] * dlogits[r]).sum();
                        *dh = back * (1.0 - hidden[j] * hidden[j]);
                    }
                    outer_acc(gw1, &dhidden, x);
                    add_acc(gb1, &dhidden);
                }
            }
        }
        let n = batch.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        Ok((loss / n, ParamVector::from_vec_unchecked(grad)))
    }

    /// Accuracy (argmax, ties to the lower class) and mean loss over `ds`.
    pub fn evaluate(&self, params: &ParamVector, ds: &Dataset) -> Result<Evaluation> {
        self.check(params, ds)?;
        if ds.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let mut hidden = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.num_classes];
        let (mut correct, mut loss) = (0usize, 0.0);
        for i in 0..ds.len() {
            self.logits(params.as_slice(), ds.row(i), &mut hidden, &mut logits);
            if argmax(&logits) == ds.label(i) {
                correct += 1;
            }
            loss += cross_entropy(&logits, ds.label(i));
        }
        let n = ds.len() as f64;
        Ok(Evaluation {
            accuracy: correct as f64 / n,
            mean_loss: loss / n,
        })
    }

    /// Class probabilities for one feature row.
    pub fn predict_proba(&self, params: &ParamVector, x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden];
        let mut out = vec![0.0; self.num_classes];
        self.logits(params.as_slice(), x, &mut hidden, &mut out);
        softmax_in_place(&mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

fn outer_acc(g: &mut [f64], rows: &[f64], cols: &[f64]) {
    let n = cols.len();
    for (r, &scale) in rows.iter().enumerate() {
        for (gv, &v) in g[r * n..(r + 1) * n].iter_mut().zip(cols) {
            *gv += scale * v;
        }
    }
}

fn add_acc(g: &mut [f64], v: &[f64]) {
    for (a, b) in g.iter_mut().zip(v) {
        *a += b;
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    log_sum_exp(logits) - logits[y]
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use proptest::prelude::*;

    fn tiny() -> Dataset {
        Dataset::new(vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5], 2, vec![0, 1, 1], 2).unwrap()
    }

    #[test]
    fn logreg_init_is_zero_with_bias() {
        let spec = ModelSpec::logreg(4, 3);
        assert_eq!(spec.init_params(), ParamVector::zeros(15));
    }

    #[test]
    fn mlp_init_is_seeded_and_bounded() {
        let spec = ModelSpec::mlp(5, 7, 3, 42);
        let a = spec.init_params();
        assert_eq!(a, spec.init_params());
        assert_eq!(a.dim(), 5 * 7 + 7 + 3 * 7 + 3);
        let s1 = (6.0f64 / 12.0).sqrt();
        let s2 = (6.0f64 / 10.0).sqrt();
        let v = a.as_slice();
        assert!(v[..35].iter().all(|w| w.abs() < s1));
        assert!(v[42..63].iter().all(|w| w.abs() < s2));
        assert_ne!(a, ModelSpec::mlp(5, 7, 3, 43).init_params());
    }

    #[test]
    fn zero_logreg_loss_is_log_c() {
        let ds = tiny();
        let spec = ModelSpec::logreg(2, 2);
        let loss = spec.forward_loss(&spec.init_params(), &ds, &[0, 2]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);

        let ds10 = generate_blobs(10, 2, 10, 0.3, 1).unwrap();
        let spec10 = ModelSpec::logreg(10, 10);
        let loss = spec10.forward_loss(&spec10.init_params(), &ds10, &[0, 5, 19]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn analytic_logreg_gradient() {
        let ds = tiny();
        let spec = ModelSpec::logreg(2, 2);
        let g = spec.gradient(&spec.init_params(), &ds, &[0]).unwrap();
        assert_eq!(g.as_slice(), &[-0.5, 0.0, 0.5, 0.0, -0.5, 0.5]);
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let ds = tiny();
        let spec = ModelSpec::mlp(2, 3, 2, 9);
        let p = spec.init_params();
        let g1 = spec.gradient(&p, &ds, &[2]).unwrap();
        let g2 = spec.gradient(&p, &ds, &[2, 2]).unwrap();
        for j in 0..g1.dim() {
            assert!((g1[j] - g2[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn one_step_descends() {
        let ds = generate_blobs(3, 10, 4, 0.5, 2).unwrap();
        for spec in [ModelSpec::logreg(4, 3), ModelSpec::mlp(4, 6, 3, 1)] {
            let batch: Vec<usize> = (0..30).collect();
            let p = spec.init_params();
            let (loss, g) = spec.loss_and_gradient(&p, &ds, &batch).unwrap();
            let stepped = p.combine(1.0, &g, -1e-2);
            assert!(spec.forward_loss(&stepped, &ds, &batch).unwrap() < loss);
        }
    }

    #[test]
    fn memorised_set_scores_perfectly() {
        let ds = tiny();
        let spec = ModelSpec::logreg(2, 2);
        // class 1 wins whenever x1 >= x0
        let p = ParamVector::new(vec![1.0, -1.0, -1.0, 1.0, 0.0, 0.1]).unwrap();
        let eval = spec.evaluate(&p, &ds).unwrap();
        assert_eq!(eval.accuracy, 1.0);
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let ds = generate_blobs(4, 25, 4, 0.2, 5).unwrap();
        let spec = ModelSpec::logreg(4, 4);
        let eval = spec.evaluate(&spec.init_params(), &ds).unwrap();
        assert_eq!(eval.accuracy, 0.25);
        assert!((eval.mean_loss - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn rejects_mismatched_params() {
        let ds = tiny();
        let spec = ModelSpec::logreg(2, 2);
        let err = spec.forward_loss(&ParamVector::zeros(5), &ds, &[0]).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { .. }));
        assert!(spec.gradient(&spec.init_params(), &ds, &[]).is_err());
        assert!(spec.gradient(&spec.init_params(), &ds, &[3]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(z in prop::collection::vec(-500.0..500.0f64, 2..12)) {
            let mut p = z.clone();
            softmax_in_place(&mut p);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn loss_is_batch_permutation_invariant(seed in any::<u64>(), rot in 0usize..8) {
            let ds = generate_blobs(3, 4, 5, 0.7, seed).unwrap();
            let spec = ModelSpec::mlp(5, 4, 3, seed);
            let p = spec.init_params();
            let batch: Vec<usize> = vec![0, 3, 5, 7, 8, 11, 2, 9];
            let mut rotated = batch.clone();
            rotated.rotate_left(rot);
            let a = spec.forward_loss(&p, &ds, &batch).unwrap();
            let b = spec.forward_loss(&p, &ds, &rotated).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
