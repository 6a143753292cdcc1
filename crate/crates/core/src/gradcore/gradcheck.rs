//! Finite-difference gradient checking.
//!
//! Analytic gradients come from [`Graph::backward`]; the oracle recomputes
//! the forward pass in `f64` under central differences (`h = 1e-3`). The
//! builder closure must be deterministic — any sampling noise it needs has
//! to be captured as constants before the check.

use rand::Rng;

use super::{lstm_cell, Graph, LstmParamIds, NodeId, Tensor};
use crate::rngutil::stream;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-3).
///
/// The 1e-3 floor keeps near-zero coordinates compared absolutely instead of
/// amplifying round-off into spurious relative error.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Checks one scalar-valued graph: rebuilds it per probe with perturbed
/// leaf values and returns the max relative error over every coordinate of
/// every leaf.
///
/// `build` receives the graph plus the leaf ids (in `inputs` order) and
/// returns the scalar loss node.
pub fn check_scalar_graph<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    let eval = |values: &[Tensor<f64>]| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::<f64>::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &ids);
        let out = g.value(loss).item();
        let grads = g.backward(loss);
        let gs = ids
            .iter()
            .map(|&id| {
                grads
                    .get(id)
                    .map(|t| t.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; g.value(id).len()])
            })
            .collect();
        (out, gs)
    };

    let (_, analytic) = eval(inputs);

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ci in 0..input.len() {
            let x0 = input.data()[ci];
            probe[ti].data_mut()[ci] = x0 + DEFAULT_STEP;
            let (f_plus, _) = eval(&probe);
            probe[ti].data_mut()[ci] = x0 - DEFAULT_STEP;
            let (f_minus, _) = eval(&probe);
            probe[ti].data_mut()[ci] = x0;
            let numeric = (f_plus - f_minus) / (2.0 * DEFAULT_STEP);
            let err = max_relative_error(&[analytic[ti][ci]], &[numeric]);
            worst = worst.max(err);
        }
    }
    worst
}

fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    Tensor::new(shape, data)
}

/// Finite-difference sweep over every differentiable core op, each on
/// `shapes_per_op` random shapes. Returns `(op name, max relative error)`
/// per op; all values must stay below [`DEFAULT_TOLERANCE`].
pub fn core_op_suite(seed: u64, shapes_per_op: usize) -> Vec<(&'static str, f64)> {
    let mut rng = stream(seed, "gradcheck-op-suite", &[]);
    let mut results: Vec<(&'static str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match results.iter_mut().find(|(n, _)| *n == name) {
        Some((_, worst)) => *worst = worst.max(err),
        None => results.push((name, err)),
    };

    for _ in 0..shapes_per_op {
        let b = rng.random_range(1..5usize);
        let n = rng.random_range(2..6usize);
        let k = rng.random_range(2..6usize);
        let m = rng.random_range(2..5usize);

        let a2 = random_tensor(&[b, k], &mut rng);
        let w = random_tensor(&[k, m], &mut rng);
        record(
            "matmul",
            check_scalar_graph(&[a2.clone(), w.clone()], |g, ids| {
                let y = g.matmul(ids[0], ids[1]);
                g.sum(y)
            }),
        );

        let x = random_tensor(&[b, n], &mut rng);
        let y = random_tensor(&[b, n], &mut rng);
        let bias = random_tensor(&[n], &mut rng);
        record(
            "add",
            check_scalar_graph(&[x.clone(), y.clone()], |g, ids| {
                let s = g.add(ids[0], ids[1]);
                let sq = g.mul(s, s);
                g.sum(sq)
            }),
        );
        record(
            "add_bias",
            check_scalar_graph(&[x.clone(), bias], |g, ids| {
                let s = g.add(ids[0], ids[1]);
                let t = g.tanh(s);
                g.sum(t)
            }),
        );
        record(
            "mul",
            check_scalar_graph(&[x.clone(), y.clone()], |g, ids| {
                let p = g.mul(ids[0], ids[1]);
                g.sum(p)
            }),
        );
        record(
            "scale",
            check_scalar_graph(&[x.clone()], |g, ids| {
                let s = g.scale(ids[0], -1.7);
                let t = g.tanh(s);
                g.sum(t)
            }),
        );
        record(
            "tanh",
            check_scalar_graph(&[x.clone()], |g, ids| {
                let t = g.tanh(ids[0]);
                g.sum(t)
            }),
        );
        // Keep relu probes away from the kink at 0, where the two-sided
        // difference quotient is not the derivative.
        let x_off = x.map(|v| if v.abs() < 0.1 { v + 0.25 } else { v });
        record(
            "relu",
            check_scalar_graph(&[x_off], |g, ids| {
                let t = g.relu(ids[0]);
                let sq = g.mul(t, t);
                g.sum(sq)
            }),
        );
        record(
            "sigmoid",
            check_scalar_graph(&[x.clone()], |g, ids| {
                let t = g.sigmoid(ids[0]);
                g.sum(t)
            }),
        );
        record(
            "softmax",
            check_scalar_graph(&[x.clone(), y.clone()], |g, ids| {
                let p = g.softmax(ids[0]);
                let weighted = g.mul(p, ids[1]);
                g.sum(weighted)
            }),
        );
        record(
            "log_softmax",
            check_scalar_graph(&[x.clone(), y.clone()], |g, ids| {
                let p = g.log_softmax(ids[0]);
                let weighted = g.mul(p, ids[1]);
                g.sum(weighted)
            }),
        );

        let table = random_tensor(&[4, n], &mut rng);
        let ids_vec: Vec<u32> = (0..b).map(|_| rng.random_range(0..4u32)).collect();
        record(
            "embedding_lookup",
            check_scalar_graph(&[table], |g, nids| {
                let rows = g.embedding_lookup(nids[0], &ids_vec);
                let t = g.tanh(rows);
                g.sum(t)
            }),
        );

        record(
            "concat",
            check_scalar_graph(&[x.clone(), y.clone()], |g, ids| {
                let cat = g.concat(&[ids[0], ids[1]]);
                let t = g.tanh(cat);
                g.sum(t)
            }),
        );
        record(
            "dot",
            check_scalar_graph(&[x.clone(), y.clone()], |g, ids| {
                let d = g.dot(ids[0], ids[1]);
                g.sum(d)
            }),
        );
        let v1 = random_tensor(&[k], &mut rng);
        let v2 = random_tensor(&[k], &mut rng);
        record(
            "dot",
            check_scalar_graph(&[v1, v2], |g, ids| {
                let d = g.dot(ids[0], ids[1]);
                g.sum(d)
            }),
        );
        record(
            "sum",
            check_scalar_graph(&[x.clone()], |g, ids| {
                let t = g.tanh(ids[0]);
                g.sum(t)
            }),
        );
        record(
            "mean",
            check_scalar_graph(&[x.clone()], |g, ids| {
                let t = g.tanh(ids[0]);
                g.mean(t)
            }),
        );
        record(
            "sum_rows",
            check_scalar_graph(&[x.clone()], |g, ids| {
                let sr = g.sum_rows(ids[0]);
                let t = g.tanh(sr);
                g.sum(t)
            }),
        );
        let pick: Vec<u32> = (0..b).map(|_| rng.random_range(0..n as u32)).collect();
        record(
            "gather_rows",
            check_scalar_graph(&[x.clone()], |g, ids| {
                let picked = g.gather_rows(ids[0], &pick);
                g.sum(picked)
            }),
        );
        if n >= 3 {
            record(
                "slice_cols",
                check_scalar_graph(&[x.clone()], |g, ids| {
                    let sl = g.slice_cols(ids[0], 1, n - 1);
                    let t = g.tanh(sl);
                    g.sum(t)
                }),
            );
        }
        // Probe clamp_min away from its kink, like relu.
        let x_clamp = x.map(|v| if (v - 0.1).abs() < 0.05 { v + 0.2 } else { v });
        record(
            "clamp_min",
            check_scalar_graph(&[x_clamp], |g, ids| {
                let c = g.clamp_min(ids[0], 0.1);
                let sq = g.mul(c, c);
                g.sum(sq)
            }),
        );

        // Full LSTM cell: loss on h' (and through c' via the next state).
        let e = rng.random_range(2..5usize);
        let h = rng.random_range(2..5usize);
        let xs = random_tensor(&[b, e], &mut rng);
        let hs = random_tensor(&[b, h], &mut rng);
        let cs = random_tensor(&[b, h], &mut rng);
        let wx = random_tensor(&[e, 4 * h], &mut rng);
        let wh = random_tensor(&[h, 4 * h], &mut rng);
        let bb = random_tensor(&[4 * h], &mut rng);
        record(
            "lstm_cell",
            check_scalar_graph(&[xs, hs, cs, wx, wh, bb], |g, ids| {
                let params = LstmParamIds { wx: ids[3], wh: ids[4], b: ids[5] };
                let (h2, c2) = lstm_cell(g, ids[0], ids[1], ids[2], params);
                let hsum = g.sum(h2);
                let ct = g.tanh(c2);
                let csum = g.sum(ct);
                g.add(hsum, csum)
            }),
        );

        // Gumbel-softmax with frozen noise: differentiable w.r.t. logits.
        let logits = random_tensor(&[b, n], &mut rng);
        let noise = super::sample::gumbel_noise::<f64, _>(&[b, n], &mut rng);
        let target = random_tensor(&[b, n], &mut rng);
        record(
            "gumbel_softmax",
            check_scalar_graph(&[logits, target], |g, ids| {
                let noise_node = g.constant(noise.clone());
                let shifted = g.add(ids[0], noise_node);
                let scaled = g.scale(shifted, 1.0 / 0.7);
                let soft = g.softmax(scaled);
                let weighted = g.mul(soft, ids[1]);
                g.sum(weighted)
            }),
        );
    }
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        // Random 4x3 . 3x2 per the gradcheck contract.
        let mut rng = stream(11, "gc-matmul", &[]);
        let a = random_tensor(&[4, 3], &mut rng);
        let b = random_tensor(&[3, 2], &mut rng);
        let err = check_scalar_graph(&[a, b], |g, ids| {
            let y = g.matmul(ids[0], ids[1]);
            let t = g.tanh(y);
            g.sum(t)
        });
        assert!(err < DEFAULT_TOLERANCE, "max relative error {}", err);
    }

    #[test]
    fn op_suite_passes_on_ten_random_shapes() {
        for (name, err) in core_op_suite(42, 10) {
            assert!(err < DEFAULT_TOLERANCE, "{} max relative error {}", name, err);
        }
    }

    #[test]
    fn lstm_param_gradients_match_finite_differences() {
        let mut rng = stream(13, "gc-lstm", &[]);
        let xs = random_tensor(&[2, 3], &mut rng);
        let hs = random_tensor(&[2, 4], &mut rng);
        let cs = random_tensor(&[2, 4], &mut rng);
        let wx = random_tensor(&[3, 16], &mut rng);
        let wh = random_tensor(&[4, 16], &mut rng);
        let b = random_tensor(&[16], &mut rng);
        let err = check_scalar_graph(&[xs, hs, cs, wx, wh, b], |g, ids| {
            let params = LstmParamIds { wx: ids[3], wh: ids[4], b: ids[5] };
            let (h2, _c2) = lstm_cell(g, ids[0], ids[1], ids[2], params);
            let sq = g.mul(h2, h2);
            g.sum(sq)
        });
        assert!(err < DEFAULT_TOLERANCE, "max relative error {}", err);
    }
}
