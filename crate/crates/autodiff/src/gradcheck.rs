//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates forward values, so it stays independent
//! of the backward rules it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Builds a scalar root from the graph inputs.
pub type Expr = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + Send + Sync>;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients from
/// turning rounding noise into large relative errors.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn eval_scalar(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    Ok(g.value(root).item())
}

/// Compares backward gradients against central differences with step `h`.
pub fn check_gradients(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
    h: f64,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let up = eval_scalar(&probe, f)?;
            probe[i].data_mut()[j] = x0 - h;
            let down = eval_scalar(&probe, f)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic.data()[j], numeric, 1e-3);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_input = i;
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub expr: Expr,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Values with magnitude in `[min_abs, max_abs]` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], min_abs: f64, max_abs: f64) -> Tensor {
    let mut t = uniform(rng, shape, min_abs, max_abs);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Distinct values spaced at least `gap` apart, in random order.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n)
        .map(|i| i as f64 * gap + rng.random_range(0.0..gap * 0.3))
        .collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::new(shape.to_vec(), vals).expect("shape")
}

/// Reduces `y` to a scalar with fixed random weights so every output
/// element contributes a distinct coefficient.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = uniform(&mut rng, g.shape(y), -1.5, 1.5);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

macro_rules! case {
    ($name:expr, $inputs:expr, $seed:expr, |$g:ident, $v:ident| $body:expr) => {{
        let seed = $seed;
        OpCase {
            name: $name,
            inputs: $inputs,
            expr: Box::new(move |$g: &mut Graph, $v: &[Var]| {
                let y = $body?;
                project($g, y, seed)
            }),
        }
    }};
}

/// One randomized check per differentiable op. Inputs avoid the kinks of
/// `relu`, `clamp_min` and `max` and keep `log`/`div`/`inverse2x2` well
/// conditioned.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let s = seed;
    let mut cases = vec![
        case!(
            "add",
            vec![uniform(r, &[2, 3], -2., 2.), uniform(r, &[2, 3], -2., 2.)],
            s,
            |g, v| g.add(v[0], v[1])
        ),
        case!(
            "sub",
            vec![uniform(r, &[4], -2., 2.), uniform(r, &[4], -2., 2.)],
            s,
            |g, v| g.sub(v[0], v[1])
        ),
        case!(
            "mul",
            vec![uniform(r, &[5], -2., 2.), uniform(r, &[5], -2., 2.)],
            s,
            |g, v| g.mul(v[0], v[1])
        ),
        case!(
            "div",
            vec![uniform(r, &[5], -2., 2.), away_from_zero(r, &[5], 0.5, 2.0)],
            s,
            |g, v| g.div(v[0], v[1])
        ),
        case!(
            "add_scalar",
            vec![uniform(r, &[3], -2., 2.)],
            s,
            |g, v| Ok::<_, crate::AutodiffError>(g.add_scalar(v[0], 0.7))
        ),
        case!("scale", vec![uniform(r, &[3], -2., 2.)], s, |g, v| Ok::<
            _,
            crate::AutodiffError,
        >(
            g.scale(v[0], -1.3)
        )),
        case!(
            "relu",
            vec![away_from_zero(r, &[6], 0.05, 2.0)],
            s,
            |g, v| Ok::<_, crate::AutodiffError>(g.relu(v[0]))
        ),
        case!("tanh", vec![uniform(r, &[6], -2., 2.)], s, |g, v| Ok::<
            _,
            crate::AutodiffError,
        >(
            g.tanh(v[0])
        )),
        case!("softplus", vec![uniform(r, &[6], -4., 4.)], s, |g, v| Ok::<
            _,
            crate::AutodiffError,
        >(
            g.softplus(v[0])
        )),
        case!("exp", vec![uniform(r, &[4], -2., 2.)], s, |g, v| Ok::<
            _,
            crate::AutodiffError,
        >(
            g.exp(v[0])
        )),
        case!("log", vec![uniform(r, &[4], 0.3, 3.)], s, |g, v| Ok::<
            _,
            crate::AutodiffError,
        >(
            g.log(v[0])
        )),
        case!("sin", vec![uniform(r, &[4], -3., 3.)], s, |g, v| Ok::<
            _,
            crate::AutodiffError,
        >(
            g.sin(v[0])
        )),
        case!("cos", vec![uniform(r, &[4], -3., 3.)], s, |g, v| Ok::<
            _,
            crate::AutodiffError,
        >(
            g.cos(v[0])
        )),
        case!("square", vec![uniform(r, &[4], -2., 2.)], s, |g, v| Ok::<
            _,
            crate::AutodiffError,
        >(
            g.square(v[0])
        )),
        case!(
            "clamp_min",
            vec![away_from_zero(r, &[6], 0.05, 2.0)],
            s,
            |g, v| Ok::<_, crate::AutodiffError>(g.clamp_min(v[0], 0.0))
        ),
        case!("softmax", vec![uniform(r, &[3, 4], -2., 2.)], s, |g, v| g
            .softmax(v[0], 1)),
        case!(
            "softmax_axis0",
            vec![uniform(r, &[3, 4], -2., 2.)],
            s,
            |g, v| g.softmax(v[0], 0)
        ),
        case!(
            "log_softmax",
            vec![uniform(r, &[2, 5], -2., 2.)],
            s,
            |g, v| g.log_softmax(v[0], 1)
        ),
        case!(
            "logsumexp",
            vec![uniform(r, &[4, 3], -3., 3.)],
            s,
            |g, v| g.logsumexp(v[0], 0)
        ),
        case!(
            "logsumexp_weighted",
            vec![uniform(r, &[3, 4], -3., 3.)],
            s,
            |g, v| {
                let w = Tensor::new(
                    vec![3, 4],
                    vec![0.2, 0.0, 1.0, 0.5, 0.3, 0.6, 0.0, 0.5, 0.5, 0.4, 0.0, 0.0],
                )
                .expect("shape");
                g.logsumexp_weighted(v[0], 0, &w)
            }
        ),
        case!("sum", vec![uniform(r, &[2, 3, 2], -2., 2.)], s, |g, v| g
            .sum(v[0], 1)),
        case!("mean", vec![uniform(r, &[2, 3, 2], -2., 2.)], s, |g, v| g
            .mean(v[0], 2)),
        case!(
            "sum_all",
            vec![uniform(r, &[3, 2], -2., 2.)],
            s,
            |g, v| Ok::<_, crate::AutodiffError>(g.sum_all(v[0]))
        ),
        case!(
            "masked_max",
            vec![distinct(r, &[3, 4, 2], 0.05)],
            s,
            |g, v| {
                g.masked_max(
                    v[0],
                    1,
                    &[
                        true, false, true, true, true, true, false, true, false, false, true, false,
                    ],
                )
            }
        ),
        case!(
            "concat",
            vec![uniform(r, &[2, 3], -2., 2.), uniform(r, &[2, 1], -2., 2.)],
            s,
            |g, v| g.concat(&[v[0], v[1]], 1)
        ),
        case!(
            "broadcast",
            vec![uniform(r, &[3, 1], -2., 2.)],
            s,
            |g, v| g.broadcast_to(v[0], &[2, 3, 4])
        ),
        case!("reshape", vec![uniform(r, &[2, 6], -2., 2.)], s, |g, v| g
            .reshape(v[0], &[3, 4])),
        case!("slice", vec![uniform(r, &[4, 3], -2., 2.)], s, |g, v| g
            .slice(v[0], 0, 1, 2)),
        case!(
            "matmul",
            vec![uniform(r, &[3, 4], -1., 1.), uniform(r, &[4, 2], -1., 1.)],
            s,
            |g, v| g.matmul(v[0], v[1])
        ),
        case!(
            "linear",
            vec![
                uniform(r, &[3, 4], -1., 1.),
                uniform(r, &[4, 5], -1., 1.),
                uniform(r, &[5], -1., 1.)
            ],
            s,
            |g, v| g.linear(v[0], v[1], v[2])
        ),
        case!(
            "linear_vector",
            vec![
                uniform(r, &[4], -1., 1.),
                uniform(r, &[4, 3], -1., 1.),
                uniform(r, &[3], -1., 1.)
            ],
            s,
            |g, v| g.linear(v[0], v[1], v[2])
        ),
        case!(
            "conv1d",
            vec![
                uniform(r, &[6, 3], -1., 1.),
                uniform(r, &[3, 3, 4], -1., 1.),
                uniform(r, &[4], -1., 1.)
            ],
            s,
            |g, v| g.conv1d(v[0], v[1], v[2])
        ),
        case!(
            "matmul2x2",
            vec![
                uniform(r, &[3, 2, 2], -1., 1.),
                uniform(r, &[3, 2, 2], -1., 1.)
            ],
            s,
            |g, v| g.matmul2x2(v[0], v[1])
        ),
        case!(
            "det2x2",
            vec![uniform(r, &[3, 2, 2], -1., 1.)],
            s,
            |g, v| g.det2x2(v[0])
        ),
    ];
    // Diagonally dominant so the inverse stays well conditioned.
    let mut m = uniform(r, &[3, 2, 2], -0.3, 0.3);
    for b in 0..3 {
        m.data_mut()[b * 4] += 1.5;
        m.data_mut()[b * 4 + 3] += 1.5;
    }
    cases.push(case!("inverse2x2", vec![m], s, |g, v| g.inverse2x2(v[0])));
    cases
}
