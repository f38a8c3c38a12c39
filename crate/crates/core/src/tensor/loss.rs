use super::{linalg::matmul, BackwardOp, Element, Tensor};
use crate::error::{config, data, Result};

struct LinearOp {
    n: usize,
    din: usize,
    dout: usize,
}

impl<T: Element> BackwardOp<T> for LinearOp {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (n, din, dout) = (self.n, self.din, self.dout);
        let gx = inputs[0].requires_grad().then(|| {
            let mut gx = vec![T::zero(); n * din];
            matmul(
                grad,
                false,
                inputs[1].data(),
                false,
                &mut gx,
                n,
                dout,
                din,
                T::zero(),
            );
            gx
        });
        let gw = inputs[1].requires_grad().then(|| {
            let mut gw = vec![T::zero(); dout * din];
            matmul(
                grad,
                true,
                inputs[0].data(),
                false,
                &mut gw,
                dout,
                n,
                din,
                T::zero(),
            );
            gw
        });
        let gb = inputs[2].requires_grad().then(|| {
            (0..dout)
                .map(|j| T::from_f64((0..n).map(|i| grad[i * dout + j].as_f64()).sum()))
                .collect()
        });
        vec![gx, gw, gb]
    }
}

/// `y = x · wᵀ + b` for `x: [N, Din]`, `w: [Dout, Din]`, `b: [Dout]`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.shape() != [ws[0]] {
        return Err(config(format!(
            "linear: incompatible shapes x {xs:?}, w {ws:?}, b {:?}",
            b.shape()
        )));
    }
    let (n, din, dout) = (xs[0], xs[1], ws[0]);
    let mut out: Vec<T> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
    matmul(
        x.data(),
        false,
        w.data(),
        true,
        &mut out,
        n,
        din,
        dout,
        T::one(),
    );
    Tensor::from_op(
        vec![n, dout],
        out,
        vec![x.clone(), w.clone(), b.clone()],
        LinearOp { n, din, dout },
    )
}

struct CrossEntropyOp {
    probs: Vec<f64>,
    labels: Vec<usize>,
    k: usize,
}

impl<T: Element> BackwardOp<T> for CrossEntropyOp {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }
    fn backward(&self, _: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let n = self.labels.len();
        let scale = grad[0].as_f64() / n as f64;
        let mut g: Vec<T> = Vec::with_capacity(self.probs.len());
        for (i, row) in self.probs.chunks(self.k).enumerate() {
            for (j, &p) in row.iter().enumerate() {
                let target = if j == self.labels[i] { 1.0 } else { 0.0 };
                g.push(T::from_f64((p - target) * scale));
            }
        }
        vec![Some(g)]
    }
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(config(format!(
            "softmax_cross_entropy: logits {s:?} with {} labels",
            labels.len()
        )));
    }
    let (n, k) = (s[0], s[1]);
    if n == 0 {
        return Err(data("softmax_cross_entropy on an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(data(format!("label {bad} out of range for {k} outputs")));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let row: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += lse - row[label];
        probs.extend(row.iter().map(|v| (v - lse).exp()));
    }
    Tensor::from_op(
        Vec::new(),
        vec![T::from_f64(total / n as f64)],
        vec![logits.clone()],
        CrossEntropyOp {
            probs,
            labels: labels.to_vec(),
            k,
        },
    )
}
