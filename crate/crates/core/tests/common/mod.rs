//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use deadline_rank::autodiff::{Graph, Tensor, Var};

pub mod composite;
pub mod ops;
pub mod slates;

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a `max(|a|, |n|, 1e-6)` denominator.
///
/// At `h = 1e-5` a central difference of an O(1) loss carries rounding noise
/// near `1e-16 / 1e-5 = 1e-11`, so gradients below `1e-6` (many of which are
/// exactly zero by shift invariance) are effectively compared on an absolute
/// `1e-10` scale instead.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central finite differences of a scalar function of several tensors,
/// with every tensor treated as a free input.
///
/// `f` rebuilds the computation from scratch on perturbed copies, so the
/// result is independent of the tape's backward pass.
pub fn numeric_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Vec<Vec<f64>>
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let plus = f(&work);
            work[t].data_mut()[i] = orig - h;
            let minus = f(&work);
            work[t].data_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Builds `f` on a fresh graph with every input as a differentiable leaf and
/// returns the tape's gradients.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: F) -> Vec<Vec<f64>>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
    let root = f(&mut g, &vars);
    let grads = g.backward(root).expect("scalar root");
    vars.iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .map(|x| x.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect()
}

pub fn evaluate<F>(inputs: &[Tensor], f: &F) -> f64
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let root = f(&mut g, &vars);
    g.value(root).item().expect("scalar")
}

/// Worst componentwise relative error between tape and finite differences.
pub fn gradcheck<F>(inputs: &[Tensor], h: f64, f: F) -> f64
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Var,
{
    let analytic = analytic_gradients(inputs, &f);
    let numeric = numeric_gradients(inputs, h, |xs| evaluate(xs, &f));
    analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Small deterministic generator so the oracles do not share the crate's RNG path.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut x = self.0;
        x ^= x >> 33;
        x = x.wrapping_mul(0xff51afd7ed558ccd);
        x ^= x >> 33;
        x
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| self.range(lo, hi)).collect()).unwrap()
    }
}

/// Exact nDCG@k of the descending-score order, ties broken by index.
/// Brute force: each item's rank is found by counting the items ahead of it,
/// and discounted gains are accumulated from rank 0 upwards.
pub fn brute_ndcg(scores: &[f64], labels: &[f64], k: usize) -> f64 {
    let m = scores.len();
    let gain = |y: f64| 2f64.powf(y) - 1.0;
    let by_rank = |key: &[f64]| {
        let mut terms = vec![0.0; m];
        for i in 0..m {
            let r = (0..m)
                .filter(|&j| key[j] > key[i] || (key[j] == key[i] && j < i))
                .count();
            terms[r] = gain(labels[i]) / ((r + 2) as f64).log2();
        }
        terms.iter().take(k).sum::<f64>()
    };
    by_rank(scores) / by_rank(labels)
}

pub fn brute_recall(scores: &[f64], labels: &[f64], k: usize) -> f64 {
    let m = scores.len();
    let positives = labels.iter().filter(|&&y| y > 0.0).count();
    let hits = (0..m)
        .filter(|&i| labels[i] > 0.0)
        .filter(|&i| {
            (0..m)
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count()
                < k
        })
        .count();
    hits as f64 / positives as f64
}
