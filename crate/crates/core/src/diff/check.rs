use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Result, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Lower bound on the denominator of the relative error, so that
    /// coordinates with vanishing gradients are compared absolutely.
    pub floor: f64,
    /// Coordinates checked per parameter tensor; `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok((g, vars, out))
}

/// Largest relative disagreement between reverse-mode and central-difference
/// gradients of the scalar `f` over the sampled coordinates of `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: GradCheckOptions) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = evaluate(&f, params)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < p.len() => sample(&mut rng, p.len(), k).into_vec(),
            _ => (0..p.len()).collect(),
        };
        for j in coords {
            let x = p.data()[j];
            probe[pi].data_mut()[j] = x + opts.eps;
            let (gp, _, op) = evaluate(&f, &probe)?;
            probe[pi].data_mut()[j] = x - opts.eps;
            let (gm, _, om) = evaluate(&f, &probe)?;
            probe[pi].data_mut()[j] = x;
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * opts.eps);
            let a = analytic[pi].data()[j];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::diff::Axis;
    use crate::linalg::CsrMatrix;

    fn random(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn sum_of_squares() {
        let x = random(3, 4, 1, -2.0, 2.0);
        let err = grad_check(
            |g, v| {
                let s = g.square(v[0])?;
                g.sum(s)
            },
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn small_elu_network() {
        let x = random(5, 3, 2, -1.0, 1.0);
        let w1 = random(3, 4, 3, -1.0, 1.0);
        let b1 = random(1, 4, 4, -0.5, 0.5);
        let w2 = random(4, 2, 5, -1.0, 1.0);
        let err = grad_check(
            |g, v| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.add_row(h, v[2])?;
                let h = g.elu(h)?;
                let o = g.matmul(h, v[3])?;
                let o = g.elu(o)?;
                let o = g.square(o)?;
                g.mean(o)
            },
            &[x, w1, b1, w2],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let x = random(2, 2, 6, -1.0, 1.0);
        let err = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(4.0))),
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    type Unary = fn(&mut Graph, Var) -> Result<Var>;

    fn unary_ops() -> Vec<(&'static str, Unary, f64, f64)> {
        vec![
            ("elu", |g, x| g.elu(x), -2.0, 2.0),
            ("relu", |g, x| g.relu(x), -2.0, 2.0),
            ("exp", |g, x| g.exp(x), -2.0, 2.0),
            ("log", |g, x| g.log(x), 0.2, 3.0),
            ("square", |g, x| g.square(x), -2.0, 2.0),
            ("sqrt", |g, x| g.sqrt(x), 0.2, 3.0),
            ("scale", |g, x| g.scale(x, -1.7), -2.0, 2.0),
            ("add_scalar", |g, x| g.add_scalar(x, 0.3), -2.0, 2.0),
            ("reshape", |g, x| g.reshape(x, 1, 6), -2.0, 2.0),
            ("mean_rows", |g, x| g.mean_rows(x), -2.0, 2.0),
            ("sum", |g, x| g.sum(x), -2.0, 2.0),
            ("mean", |g, x| g.mean(x), -2.0, 2.0),
            ("gather", |g, x| g.gather_rows(x, Arc::from(vec![1, 0, 1, 2])), -2.0, 2.0),
            ("gather_blocks", |g, x| g.gather_blocks(x, Arc::from(vec![1, 0, 1, 2]), 2), -2.0, 2.0),
        ]
    }

    /// Weights the op's output by fixed random values so every output element
    /// contributes a distinct amount to the scalar.
    fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
        let (r, c) = g.value(y).shape();
        let w = g.constant(random(r, c, seed, -1.0, 1.0));
        let p = g.mul(y, w)?;
        g.sum(p)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn unary_primitives_match_finite_differences(seed in 0u64..1_000_000) {
            for (name, op, lo, hi) in unary_ops() {
                let x = random(3, 2, seed, lo, hi);
                let err = grad_check(
                    |g, v| {
                        let y = op(g, v[0])?;
                        weighted_sum(g, y, seed ^ 0xabc)
                    },
                    &[x],
                    GradCheckOptions::default(),
                )
                .unwrap();
                prop_assert!(err < 1e-5, "{} {}", name, err);
            }
        }

        #[test]
        fn binary_primitives_match_finite_differences(seed in 0u64..1_000_000) {
            let a = random(3, 4, seed, -2.0, 2.0);
            let b = random(3, 4, seed + 1, -2.0, 2.0);
            let m = random(4, 2, seed + 2, -2.0, 2.0);
            let row = random(1, 4, seed + 3, -2.0, 2.0);
            type Binary = fn(&mut Graph, &[Var]) -> Result<Var>;
            let ops: Vec<(&str, Binary)> = vec![
                ("add", |g, v| g.add(v[0], v[1])),
                ("sub", |g, v| g.sub(v[0], v[1])),
                ("mul", |g, v| g.mul(v[0], v[1])),
                ("matmul", |g, v| g.matmul(v[0], v[2])),
                ("add_row", |g, v| g.add_row(v[0], v[3])),
                ("concat_rows", |g, v| g.concat(&[v[0], v[1]], Axis::Rows)),
                ("concat_cols", |g, v| g.concat(&[v[0], v[1], v[0]], Axis::Cols)),
                ("sparse_rows", |g, v| {
                    let s = Arc::new(CsrMatrix::from_triplets(2, 3, vec![(0, 0, 0.5), (0, 2, -1.5), (1, 1, 2.0), (1, 2, 0.25)]));
                    let stacked = g.concat(&[v[0], v[1]], Axis::Rows)?;
                    g.sparse_rows(stacked, s)
                }),
            ];
            for (name, op) in ops {
                let err = grad_check(
                    |g, v| {
                        let y = op(g, v)?;
                        weighted_sum(g, y, seed ^ 0x5eed)
                    },
                    &[a.clone(), b.clone(), m.clone(), row.clone()],
                    GradCheckOptions::default(),
                )
                .unwrap();
                prop_assert!(err < 1e-5, "{} {}", name, err);
            }
        }
    }
}
