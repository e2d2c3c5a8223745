//! Properties of the one-dimensional envelopes and the Bernstein comparison.

use homesh::basis::{gll_nodes, to_bernstein};
use homesh::bounds::{bernstein_lower_bound_1d, bound_function_1d, build_bound_table};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(p: usize, u: &[f64], n: usize) -> Vec<f64> {
    let ns = gll_nodes(p).unwrap();
    (0..=n).map(|k| ns.interpolate(u, -1.0 + 2.0 * k as f64 / n as f64)).collect()
}

#[test]
fn gap_does_not_grow_when_control_nodes_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut trials = 0;
    let mut worse = 0;
    for p in 2..=6 {
        let (coarse, fine) = (build_bound_table(p, p + 2).unwrap(), build_bound_table(p, 2 * (p + 2)).unwrap());
        for _ in 0..100 {
            let u: Vec<f64> = (0..=p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g0 = bound_function_1d(&coarse, &u).unwrap().mean_gap();
            let g1 = bound_function_1d(&fine, &u).unwrap().mean_gap();
            trials += 1;
            worse += usize::from(g1 > g0);
        }
    }
    // placement of the Chebyshev nodes may occasionally favour the coarse set
    assert!(worse * 50 <= trials, "{worse} of {trials} got looser");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// u = c + (1 + x) (1/2 + s(x)^2) has its minimum c only at x = -1; the
    /// lower envelope passes through it there.
    #[test]
    fn vertex_minimum_is_exact(p in 2usize..=8, c in -2.0f64..2.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = (p - 1) / 2;
        let s: Vec<f64> = (0..=k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ns = gll_nodes(p).unwrap();
        let u: Vec<f64> = ns.nodes().iter().map(|&x| {
            let sx: f64 = s.iter().enumerate().map(|(i, a)| a * x.powi(i as i32)).sum();
            c + (1.0 + x) * (0.5 + sx * sx)
        }).collect();
        let table = build_bound_table(p, 2 * (p + 1)).unwrap();
        let b = bound_function_1d(&table, &u).unwrap();
        prop_assert!((b.lower_at(-1.0) - c).abs() <= 1e-12 * (1.0 + c.abs()));
        prop_assert!(b.min_lower() <= c);
    }

    #[test]
    fn bernstein_brackets_the_range(p in 2usize..=8, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..=p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vals = dense(p, &u, 4000);
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let lower = bernstein_lower_bound_1d(&u, p).unwrap();
        let upper = to_bernstein(&gll_nodes(p).unwrap(), &u).unwrap().into_iter().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lower <= lo + 1e-12 && upper >= hi - 1e-12);
    }

    #[test]
    fn linear_bounds_contain_dense_samples(p in 2usize..=8, m_extra in 1usize..12, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..=p).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let table = build_bound_table(p, p + 1 + m_extra).unwrap();
        let b = bound_function_1d(&table, &u).unwrap();
        let ns = gll_nodes(p).unwrap();
        for k in 0..=2000 {
            let x = -1.0 + k as f64 / 1000.0;
            let v = ns.interpolate(&u, x);
            prop_assert!(b.lower_at(x) <= v && v <= b.upper_at(x));
        }
    }
}
