//! Central finite-difference gradient checks.
//!
//! The numeric side only ever calls the forward evaluation closure, so it is
//! independent of the backward rules it validates. Used both by the test
//! suites and by the `selftest` subcommand.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::sparse::Csr;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Central finite differences of `f` at `inputs`, one tensor per input.
pub fn central_diff<F>(f: &mut F, inputs: &[Tensor<f64>], eps: f64) -> Vec<Tensor<f64>>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].rows(), inputs[i].cols());
        for e in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= eps;
            grad.data_mut()[e] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        out.push(grad);
    }
    out
}

/// Max relative error between analytic and numeric gradients. Entries where
/// both magnitudes are below 1e-6 compare by absolute difference instead.
pub fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let denom = a.abs().max(n.abs());
        let err = if denom < 1e-6 {
            (a - n).abs()
        } else {
            (a - n).abs() / denom
        };
        worst = worst.max(err);
    }
    worst
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_err < self.tolerance
    }
}

/// Checks one differentiable graph: `build` maps leaf vars to an output var;
/// the loss is a fixed random linear readout of that output so every entry
/// contributes asymmetrically.
pub fn check_graph<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    seed: u64,
    mut build: F,
) -> Result<CheckReport>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    // Fixed readout weights, independent of the inputs being perturbed.
    let probe_shape = {
        let mut tape = Tape::new();
        let vars = leaf_all(&mut tape, inputs)?;
        let out = build(&mut tape, &vars)?;
        (tape.value(out).rows(), tape.value(out).cols())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut probe = Tensor::zeros(probe_shape.0, probe_shape.1);
    for v in probe.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let probe = Rc::new(probe);

    // Analytic gradients from one tape.
    let mut tape = Tape::new();
    let vars = leaf_all(&mut tape, inputs)?;
    let out = build(&mut tape, &vars)?;
    let weighted = tape.mul_const(out, Rc::clone(&probe))?;
    let loss = tape.sum(weighted);
    let grads = tape.backward(loss)?;

    let mut eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars = leaf_all(&mut tape, xs).expect("leaf");
        let out = build(&mut tape, &vars).expect("forward");
        let weighted = tape.mul_const(out, Rc::clone(&probe)).expect("probe");
        let loss = tape.sum(weighted);
        tape.value(loss).data()[0]
    };
    let numeric = central_diff(&mut eval, inputs, DEFAULT_EPS);
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[i].rows(), inputs[i].cols());
        let analytic = grads.wrt(*v).unwrap_or(&zero);
        worst = worst.max(max_rel_err(analytic, &numeric[i]));
    }
    Ok(CheckReport {
        name: name.to_string(),
        max_err: worst,
        tolerance: DEFAULT_TOL,
    })
}

fn leaf_all(tape: &mut Tape<f64>, inputs: &[Tensor<f64>]) -> Result<Vec<Var>> {
    inputs.iter().map(|t| tape.leaf(t.clone())).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(rows, cols);
    for v in t.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    t
}

/// Like `random_tensor` but keeps entries away from the ReLU kink.
fn random_tensor_off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut t = random_tensor(rng, rows, cols);
    for v in t.data_mut() {
        if v.abs() < 1e-2 {
            *v += if *v >= 0.0 { 0.05 } else { -0.05 };
        }
    }
    t
}

/// Gradient-checks every differentiable op in the tape's operation set.
pub fn check_all_ops(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let a34 = random_tensor(&mut rng, 3, 4);
    let b45 = random_tensor(&mut rng, 4, 5);
    reports.push(check_graph("matmul", &[a34.clone(), b45.clone()], seed, |t, v| {
        t.matmul(v[0], v[1])
    })?);

    let b54 = random_tensor(&mut rng, 5, 4);
    reports.push(check_graph("matmul_nt", &[a34.clone(), b54], seed, |t, v| {
        t.matmul_nt(v[0], v[1])
    })?);

    let p = Rc::new(Csr::from_triplets(
        3,
        3,
        vec![(0, 0, 0.5), (0, 1, 0.5), (1, 1, 1.0), (2, 0, 0.25), (2, 2, 0.75)],
    ));
    let pt = Rc::new(p.transpose());
    let h = random_tensor(&mut rng, 3, 4);
    reports.push(check_graph("spmm", &[h], seed, move |t, v| {
        t.spmm(&p, &pt, v[0])
    })?);

    let x = random_tensor(&mut rng, 3, 4);
    let y = random_tensor(&mut rng, 3, 4);
    reports.push(check_graph("add", &[x.clone(), y.clone()], seed, |t, v| {
        t.add(v[0], v[1])
    })?);
    reports.push(check_graph("sub", &[x.clone(), y.clone()], seed, |t, v| {
        t.sub(v[0], v[1])
    })?);
    reports.push(check_graph("mul", &[x.clone(), y.clone()], seed, |t, v| {
        t.mul(v[0], v[1])
    })?);

    let bias = random_tensor(&mut rng, 1, 4);
    reports.push(check_graph("add_row", &[x.clone(), bias], seed, |t, v| {
        t.add_row(v[0], v[1])
    })?);

    reports.push(check_graph("scale", &[x.clone()], seed, |t, v| {
        Ok(t.scale(v[0], -2.5))
    })?);

    let xr = random_tensor_off_kink(&mut rng, 3, 4);
    reports.push(check_graph("relu", &[xr], seed, |t, v| Ok(t.relu(v[0])))?);

    reports.push(check_graph("row_softmax", &[x.clone()], seed, |t, v| {
        Ok(t.row_softmax(v[0]))
    })?);

    let keep = Rc::new(vec![
        true, true, false, true, //
        true, false, true, true, //
        true, true, true, false,
    ]);
    reports.push(check_graph("masked_fill_softmax", &[x.clone()], seed, move |t, v| {
        let m = t.masked_fill(v[0], Rc::clone(&keep))?;
        Ok(t.row_softmax(m))
    })?);

    let mask = Rc::new(random_tensor(&mut rng, 3, 4));
    reports.push(check_graph("mul_const", &[x.clone()], seed, move |t, v| {
        t.mul_const(v[0], Rc::clone(&mask))
    })?);

    let table = random_tensor(&mut rng, 5, 3);
    let idx = Rc::new(vec![0usize, 2, 2, 4]);
    reports.push(check_graph("gather_rows", &[table], seed, move |t, v| {
        t.gather_rows(v[0], Rc::clone(&idx))
    })?);

    let p1 = random_tensor(&mut rng, 2, 3);
    let p2 = random_tensor(&mut rng, 3, 3);
    reports.push(check_graph("concat_rows", &[p1, p2], seed, |t, v| {
        t.concat_rows(&[v[0], v[1]])
    })?);

    reports.push(check_graph("reshape", &[x.clone()], seed, |t, v| {
        t.reshape(v[0], 4, 3)
    })?);

    let wide = random_tensor(&mut rng, 3, 6);
    reports.push(check_graph("slice_cols", &[wide.clone()], seed, |t, v| {
        t.slice_cols(v[0], 2, 3)
    })?);

    let c1 = random_tensor(&mut rng, 3, 2);
    let c2 = random_tensor(&mut rng, 3, 4);
    reports.push(check_graph("concat_cols", &[c1, c2], seed, |t, v| {
        t.concat_cols(&[v[0], v[1]])
    })?);

    // Log ops need inputs inside (0, 1).
    let mut probs = random_tensor(&mut rng, 3, 4);
    for v in probs.data_mut() {
        *v = 0.05 + 0.9 * (v.abs());
    }
    reports.push(check_graph("ln_clamped", &[probs.clone()], seed, |t, v| {
        Ok(t.ln_clamped(v[0]))
    })?);
    reports.push(check_graph("ln_one_minus_clamped", &[probs], seed, |t, v| {
        Ok(t.ln_one_minus_clamped(v[0]))
    })?);

    reports.push(check_graph("sum", &[x.clone()], seed, |t, v| Ok(t.sum(v[0])))?);

    // A dropout graph with a fixed mask: replay the same RNG seed per call so
    // the mask is identical across perturbed evaluations.
    reports.push(check_graph("dropout_fixed_mask", &[x], seed, move |t, v| {
        let mut drng = ChaCha8Rng::seed_from_u64(123);
        t.dropout(v[0], 0.4, true, &mut drng)
    })?);

    // A 5-op random composite: gather -> matmul -> add_row -> relu -> softmax.
    let table = random_tensor(&mut rng, 6, 4);
    let w = random_tensor(&mut rng, 4, 4);
    let b = random_tensor(&mut rng, 1, 4);
    let idx = Rc::new(vec![1usize, 3, 5]);
    reports.push(check_graph(
        "composite_gather_matmul_relu_softmax",
        &[table, w, b],
        seed,
        move |t, v| {
            let g = t.gather_rows(v[0], Rc::clone(&idx))?;
            let m = t.matmul(g, v[1])?;
            let a = t.add_row(m, v[2])?;
            let r = t.relu(a);
            Ok(t.row_softmax(r))
        },
    )?);

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_gradient_check() {
        for report in check_all_ops(42).unwrap() {
            assert!(
                report.passed(),
                "{}: max rel err {:.3e} >= {:.1e}",
                report.name,
                report.max_err,
                report.tolerance
            );
        }
    }

    #[test]
    fn central_diff_matches_quadratic() {
        let x = Tensor::from_rows(&[vec![2.0, -1.0]]);
        let mut f = |xs: &[Tensor<f64>]| xs[0].data().iter().map(|v| v * v).sum::<f64>();
        let g = central_diff(&mut f, &[x], 1e-5);
        assert!((g[0].data()[0] - 4.0).abs() < 1e-8);
        assert!((g[0].data()[1] + 2.0).abs() < 1e-8);
    }
}
