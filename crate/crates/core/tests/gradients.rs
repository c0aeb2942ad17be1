use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selssm::autodiff::{finite_diff_grad, relative_error, Tape, Var};
use selssm::error::Result;
use selssm::model::gradcheck::{gradcheck, toy_config, DEFAULT_TOLERANCE};
use selssm::tensor::Tensor;

const H: f64 = 1e-5;

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Reduces the op output to a scalar through fixed random weights so that
/// every output element contributes a distinct amount to the loss.
fn projected(build: &Build<'_>, probe: Tensor<f64>, tape: &mut Tape<f64>, vars: &[Var]) -> Result<Var> {
    let out = build(tape, vars)?;
    if tape.value(out).numel() == 1 {
        return Ok(out);
    }
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(probe.reshape(&shape)?);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Analytic vs central-difference gradient for every input of `build`.
fn check_op(inputs: &[Tensor<f64>], build: &Build<'_>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).shape().to_vec()
    };
    let probe = randn(&[out_shape.iter().product()], rng);
    let loss_at = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let loss = projected(build, probe.clone(), &mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = projected(build, probe.clone(), &mut tape, &vars).unwrap();
    let mut grads = tape.backward(loss).unwrap();

    (0..inputs.len())
        .map(|i| {
            let analytic = grads.take(vars[i]).unwrap();
            let numeric = finite_diff_grad(
                |x| {
                    let mut vals = inputs.to_vec();
                    vals[i] = x.clone();
                    loss_at(&vals)
                },
                &inputs[i],
                H,
            )
            .unwrap();
            relative_error(&analytic, &numeric)
        })
        .collect()
}

fn assert_close(errs: &[f64]) -> std::result::Result<(), TestCaseError> {
    for (i, e) in errs.iter().enumerate() {
        prop_assert!(*e < DEFAULT_TOLERANCE, "input {i}: rel error {e}");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_gradient(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [randn(&[m, k], &mut rng), randn(&[k, n], &mut rng)];
        assert_close(&check_op(&inputs, &|t, v| t.matmul(v[0], v[1]), &mut rng))?;
    }

    #[test]
    fn add_and_mul_gradients(seed in any::<u64>(), r in 1usize..4, c in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [randn(&[r, c], &mut rng), randn(&[r, c], &mut rng)];
        assert_close(&check_op(&inputs, &|t, v| t.add(v[0], v[1]), &mut rng))?;
        assert_close(&check_op(&inputs, &|t, v| t.mul(v[0], v[1]), &mut rng))?;
    }

    #[test]
    fn add_row_and_scale_gradients(seed in any::<u64>(), r in 1usize..4, c in 1usize..5, k in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [randn(&[r, c], &mut rng), randn(&[c], &mut rng)];
        assert_close(&check_op(&inputs, &|t, v| t.add_row(v[0], v[1]), &mut rng))?;
        assert_close(&check_op(&inputs[..1], &|t, v| t.scale(v[0], k), &mut rng))?;
    }

    #[test]
    fn silu_and_softplus_gradients(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [Tensor::randn(&[n], 3.0, &mut rng)];
        assert_close(&check_op(&inputs, &|t, v| t.silu(v[0]), &mut rng))?;
        assert_close(&check_op(&inputs, &|t, v| t.softplus(v[0]), &mut rng))?;
    }

    #[test]
    fn conv_gradient(seed in any::<u64>(), len in 1usize..9, dim in 1usize..4, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [randn(&[len, dim], &mut rng), randn(&[dim, k], &mut rng), randn(&[dim], &mut rng)];
        assert_close(&check_op(&inputs, &|t, v| t.conv1d_depthwise_causal(v[0], v[1], v[2]), &mut rng))?;
    }

    #[test]
    fn rmsnorm_gradient(seed in any::<u64>(), rows in 1usize..4, dim in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [randn(&[rows, dim], &mut rng), randn(&[dim], &mut rng)];
        assert_close(&check_op(&inputs, &|t, v| t.rmsnorm(v[0], v[1], 1e-5), &mut rng))?;
    }

    #[test]
    fn narrow_embedding_pool_gradients(seed in any::<u64>(), rows in 1usize..5, cols in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = [randn(&[rows, cols], &mut rng)];
        let start = rng.random_range(0..cols);
        let len = rng.random_range(1..=cols - start);
        assert_close(&check_op(&x, &|t, v| t.narrow_cols(v[0], start, len), &mut rng))?;

        let ids: Vec<usize> = (0..6).map(|_| rng.random_range(0..rows)).collect();
        assert_close(&check_op(&x, &|t, v| t.embedding(v[0], &ids), &mut rng))?;

        let weights: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_close(&check_op(&x, &|t, v| t.weighted_row_sum(v[0], weights.clone()), &mut rng))?;
    }

    #[test]
    fn cross_entropy_gradient(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let label = rng.random_range(0..k);
        let inputs = [Tensor::randn(&[1, k], 2.0, &mut rng)];
        assert_close(&check_op(&inputs, &|t, v| t.softmax_cross_entropy(v[0], label), &mut rng))?;
    }

    #[test]
    fn selective_scan_gradient(
        seed in any::<u64>(),
        len in 1usize..7,
        d_inner in 1usize..3,
        d_state in 1usize..4,
        exact in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            randn(&[len, d_inner], &mut rng),
            Tensor::uniform(&[len, d_inner], 1.0, &mut rng),
            randn(&[d_inner, d_state], &mut rng),
            randn(&[len, d_state], &mut rng),
            randn(&[len, d_state], &mut rng),
            randn(&[d_inner], &mut rng),
        ];
        // delta enters through softplus so it stays positive under probing
        let build = move |t: &mut Tape<f64>, v: &[Var]| {
            let delta = t.softplus(v[1])?;
            t.selective_scan(v[0], delta, v[2], v[3], v[4], v[5], exact)
        };
        assert_close(&check_op(&inputs, &build, &mut rng))?;
    }
}

#[test]
fn scan_gradient_one_channel_two_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = [
        randn(&[6, 1], &mut rng),
        Tensor::from_f64(&[6, 1], &[0.3, 0.05, 0.9, 0.2, 0.6, 0.1]).unwrap(),
        Tensor::from_f64(&[1, 2], &[0.0, 2f64.ln()]).unwrap(),
        randn(&[6, 2], &mut rng),
        randn(&[6, 2], &mut rng),
        Tensor::from_f64(&[1], &[0.7]).unwrap(),
    ];
    let errs = check_op(&inputs, &|t, v| t.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], false), &mut rng);
    for (i, e) in errs.iter().enumerate() {
        assert!(*e < DEFAULT_TOLERANCE, "input {i}: {e}");
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for seed in [0, 1] {
        let checks = gradcheck(&toy_config(), 12, seed, |_, _| {}).unwrap();
        assert_eq!(checks.len(), 14);
        for c in &checks {
            assert!(c.passed(DEFAULT_TOLERANCE), "{}: {}", c.name, c.rel_error);
        }
    }
}

#[test]
fn parallel_tape_gives_same_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vals = [
        randn(&[9, 2], &mut rng),
        Tensor::uniform(&[9, 2], 1.0, &mut rng).map(|v: f64| v.abs() + 0.01),
        randn(&[2, 3], &mut rng),
        randn(&[9, 3], &mut rng),
        randn(&[9, 3], &mut rng),
        randn(&[2], &mut rng),
    ];
    let grads = |mode| {
        let mut tape = Tape::new().with_scan_mode(mode);
        let v: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let y = tape.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], false).unwrap();
        let loss = tape.sum(y).unwrap();
        let mut g = tape.backward(loss).unwrap();
        v.iter().map(|&x| g.take(x).unwrap()).collect::<Vec<_>>()
    };
    let seq = grads(selssm::scan::ScanMode::Sequential);
    let par = grads(selssm::scan::ScanMode::Parallel);
    for (a, b) in seq.iter().zip(&par) {
        assert!(relative_error(a, b) < 1e-10);
    }
}
