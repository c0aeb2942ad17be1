use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selssm::ops::matmul;
use selssm::scan::{
    parallel_scan, scan_combine, selective_scan_parallel, selective_scan_sequential, sequential_scan,
    ScanElement, SelectiveSsmParams,
};
use selssm::ssm::{
    conv_apply, conv_kernel, discretize_bilinear, discretize_zoh_diag, hippo_legs, recurrent_apply,
    ContinuousSsm, DiscreteSsm,
};
use selssm::tensor::Tensor;

/// Lower-triangular `Ā` with diagonal in (−1, 1) and small couplings below it.
fn random_stable(n: usize, rng: &mut ChaCha8Rng) -> DiscreteSsm<f64> {
    let coupling = 0.2 / n as f64;
    let a = Tensor::from_fn(&[n, n], |i| match (i / n).cmp(&(i % n)) {
        std::cmp::Ordering::Equal => rng.random_range(-0.99..0.99),
        std::cmp::Ordering::Greater => rng.random_range(-coupling..coupling),
        std::cmp::Ordering::Less => 0.0,
    });
    let b = Tensor::randn(&[n, 1], 1.0, rng);
    let c = Tensor::randn(&[1, n], 1.0, rng);
    DiscreteSsm::new(a, b, c, rng.random_range(-1.0..1.0), 0.1).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().map(|v| v.abs()).fold(1e-12, f64::max);
    max_abs_diff(a, b) / scale
}

fn random_selective(d_inner: usize, d_state: usize, rng: &mut ChaCha8Rng) -> SelectiveSsmParams<f64> {
    let mut p = SelectiveSsmParams::init(d_inner, d_state, 2, 0.5, rng);
    p.d_skip = Tensor::randn(&[d_inner], 1.0, rng);
    p
}

#[test]
fn recurrence_equals_convolution_on_random_stable_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for trial in 0..100 {
        let n = 1 + trial % 8;
        let len = rng.random_range(1..=256);
        let sys = random_stable(n, &mut rng);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rec = recurrent_apply(&sys, &x).unwrap();
        let conv = conv_apply(&conv_kernel(&sys, len).unwrap(), &x, sys.d).unwrap();
        let diff = max_abs_diff(&rec, &conv);
        assert!(diff < 1e-10, "trial {trial} (N={n}, L={len}): {diff}");
    }
}

#[test]
fn recurrence_equals_convolution_in_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..20 {
        let sys = random_stable(4, &mut rng);
        let sys32 = DiscreteSsm::new(sys.a_bar.cast(), sys.b_bar.cast(), sys.c.cast(), sys.d as f32, 0.1).unwrap();
        let x: Vec<f32> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rec = recurrent_apply(&sys32, &x).unwrap();
        let conv = conv_apply(&conv_kernel(&sys32, 128).unwrap(), &x, sys32.d).unwrap();
        for (a, b) in rec.iter().zip(&conv) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}

#[test]
fn bilinear_and_zoh_agree_for_small_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 1..=8 {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..-0.1)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a_mat = Tensor::from_fn(&[n, n], |i| if i / n == i % n { a[i / n] } else { 0.0 });
        let cont = ContinuousSsm::new(a_mat, Tensor::new(&[n, 1], b.clone()).unwrap(), Tensor::ones(&[1, n]), 0.0)
            .unwrap();
        let bil = discretize_bilinear(&cont, 1e-3).unwrap();
        let (za, zb) = discretize_zoh_diag(&a, &b, 1e-3).unwrap();
        for i in 0..n {
            assert!((bil.a_bar.at(&[i, i]) - za[i]).abs() < 1e-5);
            assert!((bil.b_bar.data()[i] - zb[i]).abs() < 1e-5);
            for j in 0..n {
                if i != j {
                    assert_eq!(bil.a_bar.at(&[i, j]), 0.0);
                }
            }
        }
    }
}

#[test]
fn hippo_impulse_response_decays() {
    let n = 16;
    let b = Tensor::from_fn(&[n, 1], |i| ((2 * i + 1) as f64).sqrt());
    let cont = ContinuousSsm::new(hippo_legs(n).unwrap(), b, Tensor::ones(&[1, n]), 0.0).unwrap();
    let sys = discretize_bilinear(&cont, 0.01).unwrap();
    let mut h = vec![0.0; n];
    let norm = |h: &[f64]| h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut at_100 = 0.0;
    for step in 1..=10_000 {
        sys.step_state(&mut h, if step == 1 { 1.0 } else { 0.0 });
        if step == 100 {
            at_100 = norm(&h);
        }
    }
    let at_10000 = norm(&h);
    assert!(at_10000.is_finite());
    assert!(at_10000 < at_100, "{at_10000} vs {at_100}");
}

#[test]
fn matmul_is_associative() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let dims: Vec<usize> = (0..4).map(|_| rng.random_range(1..8)).collect();
        let a = Tensor::<f64>::randn(&[dims[0], dims[1]], 1.0, &mut rng);
        let b = Tensor::randn(&[dims[1], dims[2]], 1.0, &mut rng);
        let c = Tensor::randn(&[dims[2], dims[3]], 1.0, &mut rng);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        assert!(max_abs_diff(left.data(), right.data()) < 1e-10);
    }
}

#[test]
fn scan_combine_is_associative() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let mut el = || ScanElement::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (x, y, z) = (el(), el(), el());
        let l = scan_combine(scan_combine(x, y), z);
        let r = scan_combine(x, scan_combine(y, z));
        let tol = |u: f64, v: f64| (u - v).abs() <= 1e-9 * u.abs().max(v.abs()).max(1.0);
        assert!(tol(l.a, r.a) && tol(l.b, r.b), "{x:?} {y:?} {z:?}");
    }
}

#[test]
fn parallel_scan_matches_sequential_for_required_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for len in [1, 2, 7, 64, 1023, 5000] {
        let els: Vec<ScanElement<f64>> = (0..len)
            .map(|_| ScanElement::new(rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let par = parallel_scan(&els);
        let seq = sequential_scan(&els);
        let a: Vec<f64> = par.iter().map(|e| e.b).collect();
        let b: Vec<f64> = seq.iter().map(|e| e.b).collect();
        assert!(rel_diff(&b, &a) < 1e-6, "L={len}");
    }
}

#[test]
fn selective_scan_parallel_matches_sequential() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for len in [1, 2, 7, 64, 1023] {
        let p = random_selective(3, 4, &mut rng);
        let x = Tensor::randn(&[len, 3], 1.0, &mut rng);
        let seq = selective_scan_sequential(&p, &x).unwrap();
        let par = selective_scan_parallel(&p, &x).unwrap();
        if len == 1 {
            assert_eq!(seq, par);
        }
        assert!(rel_diff(seq.data(), par.data()) < 1e-6, "L={len}");
    }
}

#[test]
fn reset_token_forgets_the_prefix() {
    // Channel 0 feeds the step size: Δ = softplus(x₀ − 2) in both channels.
    let (d_inner, d_state, len, reset) = (2, 3, 24, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut p = SelectiveSsmParams::<f64>::init(d_inner, d_state, 1, 0.5, &mut rng);
    for r in 0..d_inner {
        p.w_xproj.data_mut()[r * (1 + 2 * d_state)] = if r == 0 { 1.0 } else { 0.0 };
    }
    p.w_dtproj = Tensor::ones(&[1, d_inner]);
    p.b_dt = Tensor::full(&[d_inner], -2.0);

    let suffix = Tensor::<f64>::randn(&[len, d_inner], 0.5, &mut rng);
    let run = |rng: &mut ChaCha8Rng| {
        let mut x = suffix.clone();
        for t in 0..reset {
            for d in 0..d_inner {
                x.data_mut()[t * d_inner + d] = rng.random_range(-1.0..1.0);
            }
        }
        x.data_mut()[reset * d_inner] = 30.0;
        selective_scan_sequential(&p, &x).unwrap()
    };
    let base = run(&mut rng);
    for _ in 0..10 {
        let other = run(&mut rng);
        let tail = reset * d_inner..len * d_inner;
        let diff = max_abs_diff(&base.data()[tail.clone()], &other.data()[tail]);
        assert!(diff < 1e-4, "{diff}");
    }
}

#[test]
fn scans_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let p = random_selective(4, 2, &mut rng);
    let x = Tensor::randn(&[300, 4], 1.0, &mut rng);
    assert_eq!(selective_scan_parallel(&p, &x).unwrap(), selective_scan_parallel(&p, &x).unwrap());
    assert_eq!(selective_scan_sequential(&p, &x).unwrap(), selective_scan_sequential(&p, &x).unwrap());
}

proptest! {
    #[test]
    fn zero_input_gives_zero_output(seed in any::<u64>(), len in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_selective(2, 3, &mut rng);
        let x = Tensor::zeros(&[len, 2]);
        prop_assert!(selective_scan_parallel(&p, &x).unwrap().data().iter().all(|&v| v == 0.0));
        prop_assert!(selective_scan_sequential(&p, &x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parallel_prefixes_match_fold(els in prop::collection::vec((-1.5f64..1.5, -3.0f64..3.0), 1..300)) {
        let els: Vec<_> = els.into_iter().map(|(a, b)| ScanElement::new(a, b)).collect();
        let par = parallel_scan(&els);
        let seq = sequential_scan(&els);
        for (p, s) in par.iter().zip(&seq) {
            let tol = 1e-9 * s.b.abs().max(1.0);
            prop_assert!((p.b - s.b).abs() < tol);
            prop_assert!((p.a - s.a).abs() < 1e-9 * s.a.abs().max(1.0));
        }
    }

    #[test]
    fn delta_is_positive(seed in any::<u64>(), len in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_selective(3, 2, &mut rng);
        let x = Tensor::randn(&[len, 3], 3.0, &mut rng);
        let sel = selssm::scan::selective_params(&x, &p).unwrap();
        prop_assert!(sel.delta.data().iter().all(|&d| d > 0.0));
        prop_assert!(p.a().data().iter().all(|&a| a < 0.0));
    }
}
