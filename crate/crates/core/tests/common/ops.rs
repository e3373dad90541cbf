//! One gradient-check case per differentiable graph operation.

use deadline_rank::autodiff::{Graph, Tensor, Var};

use super::Lcg;

pub type CaseFn = Box<dyn for<'g> Fn(&mut Graph<'g>, &[Var]) -> Var>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: CaseFn,
}

/// Contracts `x` against fixed, uneven weights so every output element
/// reaches the scalar with a different coefficient.
pub fn reduce(g: &mut Graph<'_>, x: Var) -> Var {
    let t = g.value(x);
    let shape = t.shape().to_vec();
    let w: Vec<f64> = (0..t.len()).map(|i| 0.3 + 0.17 * ((i * 7 + 3) % 11) as f64).collect();
    let w = g.constant(Tensor::new(shape, w).unwrap());
    let y = g.mul(x, w).unwrap();
    g.sum(y)
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl for<'g> Fn(&mut Graph<'g>, &[Var]) -> Var + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

/// Entries in `±[0.3, 2]`, away from the kinks of `abs` and `prelu`.
fn signed(rng: &mut Lcg, shape: &[usize]) -> Tensor {
    let mut t = rng.tensor(shape, 0.3, 2.0);
    for v in t.data_mut() {
        if rng.uniform() < 0.5 {
            *v = -*v;
        }
    }
    t
}

pub fn op_cases() -> Vec<OpCase> {
    let mut rng = Lcg::new(11);
    let r = &mut rng;
    vec![
        case("matmul", vec![r.tensor(&[3, 4], -1.0, 1.0), r.tensor(&[4, 2], -1.0, 1.0)], |g, v| {
            let y = g.matmul(v[0], v[1]).unwrap();
            reduce(g, y)
        }),
        case("add", vec![r.tensor(&[2, 3], -1.0, 1.0), r.tensor(&[2, 3], -1.0, 1.0)], |g, v| {
            let y = g.add(v[0], v[1]).unwrap();
            reduce(g, y)
        }),
        case("sub", vec![r.tensor(&[2, 3], -1.0, 1.0), r.tensor(&[2, 3], -1.0, 1.0)], |g, v| {
            let y = g.sub(v[0], v[1]).unwrap();
            reduce(g, y)
        }),
        case("mul", vec![r.tensor(&[2, 3], -1.0, 1.0), r.tensor(&[2, 3], -1.0, 1.0)], |g, v| {
            let y = g.mul(v[0], v[1]).unwrap();
            reduce(g, y)
        }),
        case("add_bias", vec![r.tensor(&[3, 4], -1.0, 1.0), r.tensor(&[4], -1.0, 1.0)], |g, v| {
            let y = g.add_bias(v[0], v[1]).unwrap();
            reduce(g, y)
        }),
        case("scale", vec![r.tensor(&[5], -1.0, 1.0)], |g, v| {
            let y = g.scale(v[0], -1.7);
            reduce(g, y)
        }),
        case("neg", vec![r.tensor(&[5], -1.0, 1.0)], |g, v| {
            let y = g.neg(v[0]);
            reduce(g, y)
        }),
        case("add_scalar", vec![r.tensor(&[5], -1.0, 1.0)], |g, v| {
            let y = g.add_scalar(v[0], 0.4);
            let y = g.mul(y, y).unwrap();
            reduce(g, y)
        }),
        case("prelu", vec![signed(r, &[3, 4]), r.tensor(&[4], 0.1, 0.4)], |g, v| {
            let y = g.prelu(v[0], v[1]).unwrap();
            reduce(g, y)
        }),
        case("prelu_shared_slope", vec![signed(r, &[2, 3]), r.tensor(&[1], 0.1, 0.4)], |g, v| {
            let y = g.prelu(v[0], v[1]).unwrap();
            reduce(g, y)
        }),
        case("masked_softmax", vec![r.tensor(&[3, 5], -2.0, 2.0)], |g, v| {
            let y = g.masked_softmax(v[0], &[true, false, true, true, false]).unwrap();
            reduce(g, y)
        }),
        case("softmax", vec![r.tensor(&[2, 4], -2.0, 2.0)], |g, v| {
            let y = g.softmax(v[0]).unwrap();
            reduce(g, y)
        }),
        case("concat", vec![r.tensor(&[3, 2], -1.0, 1.0), r.tensor(&[3, 4], -1.0, 1.0)], |g, v| {
            let y = g.concat(v[0], v[1]).unwrap();
            reduce(g, y)
        }),
        case("concat_rows", vec![r.tensor(&[2, 3], -1.0, 1.0), r.tensor(&[4, 3], -1.0, 1.0)], |g, v| {
            let y = g.concat_rows(v[0], v[1]).unwrap();
            reduce(g, y)
        }),
        case("sum", vec![r.tensor(&[3, 3], -1.0, 1.0)], |g, v| {
            let y = g.mul(v[0], v[0]).unwrap();
            g.sum(y)
        }),
        case("mean", vec![r.tensor(&[3, 3], -1.0, 1.0)], |g, v| {
            let y = g.mul(v[0], v[0]).unwrap();
            g.mean(y)
        }),
        case("sum_axis_0", vec![r.tensor(&[3, 4], -1.0, 1.0)], |g, v| {
            let y = g.sum_axis(v[0], 0).unwrap();
            reduce(g, y)
        }),
        case("sum_axis_1", vec![r.tensor(&[3, 4], -1.0, 1.0)], |g, v| {
            let y = g.sum_axis(v[0], 1).unwrap();
            reduce(g, y)
        }),
        case("log", vec![r.tensor(&[6], 0.5, 2.0)], |g, v| {
            let y = g.log(v[0]);
            reduce(g, y)
        }),
        case("exp", vec![r.tensor(&[6], -1.0, 1.0)], |g, v| {
            let y = g.exp(v[0]);
            reduce(g, y)
        }),
        case("abs", vec![signed(r, &[6])], |g, v| {
            let y = g.abs(v[0]);
            reduce(g, y)
        }),
        case("sigmoid", vec![r.tensor(&[6], -3.0, 3.0)], |g, v| {
            let y = g.sigmoid(v[0]);
            reduce(g, y)
        }),
        case("log_sigmoid", vec![r.tensor(&[6], -8.0, 8.0)], |g, v| {
            let y = g.log_sigmoid(v[0]);
            reduce(g, y)
        }),
        case("gather", vec![r.tensor(&[4, 3], -1.0, 1.0)], |g, v| {
            let y = g.gather(v[0], &[2, 0, 2, 3, 2]).unwrap();
            reduce(g, y)
        }),
        case("outer_diff", vec![r.tensor(&[3], -1.0, 1.0), r.tensor(&[4], -1.0, 1.0)], |g, v| {
            let y = g.outer_diff(v[0], v[1]).unwrap();
            let y = g.mul(y, y).unwrap();
            reduce(g, y)
        }),
        case("pairwise_add", vec![r.tensor(&[2, 3], -1.0, 1.0), r.tensor(&[3, 3], -1.0, 1.0)], |g, v| {
            let y = g.pairwise_add(v[0], v[1]).unwrap();
            let y = g.mul(y, y).unwrap();
            reduce(g, y)
        }),
        case("transpose", vec![r.tensor(&[2, 5], -1.0, 1.0)], |g, v| {
            let y = g.transpose(v[0]).unwrap();
            reduce(g, y)
        }),
        case("normalize_rows", vec![r.tensor(&[3, 4], 0.2, 2.0)], |g, v| {
            let y = g.normalize_rows(v[0]);
            reduce(g, y)
        }),
        case("reshape", vec![r.tensor(&[2, 6], -1.0, 1.0)], |g, v| {
            let y = g.reshape(v[0], vec![3, 4]).unwrap();
            reduce(g, y)
        }),
        case("slice_rows", vec![r.tensor(&[5, 2], -1.0, 1.0)], |g, v| {
            let y = g.slice_rows(v[0], 1, 4).unwrap();
            reduce(g, y)
        }),
    ]
}
