use blobflow::measures::ParticleMeasure;
use blobflow::rng::SeededRng;
use blobflow::transport::{displacement_interpolation, w2_brute, w2_exact};
use proptest::prelude::*;

fn cloud(d: usize, n: usize, seed: u64, weighted: bool) -> ParticleMeasure {
    let mut rng = SeededRng::new(seed);
    let pos: Vec<f64> = (0..d * n).map(|_| rng.normal()).collect();
    if weighted {
        let w: Vec<f64> = (0..n).map(|_| 0.05 + rng.uniform()).collect();
        ParticleMeasure::normalized(d, pos, w).unwrap()
    } else {
        ParticleMeasure::uniform(d, pos).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_dimensional_cost_is_sorted_matching(seed in any::<u64>(), n in 1usize..30) {
        let mu = cloud(1, n, seed, false);
        let nu = cloud(1, n, seed ^ 0xabcdef, false);
        let mut a = mu.positions().to_vec();
        let mut b = nu.positions().to_vec();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let sorted: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
        let exact = w2_exact(&mu, &nu).unwrap().cost;
        prop_assert!((exact - sorted).abs() <= 1e-12 * sorted.max(1.0));
    }

    #[test]
    fn metric_axioms(seed in any::<u64>(), n in 1usize..12, m in 1usize..12, k in 1usize..12) {
        let a = cloud(2, n, seed, true);
        let b = cloud(2, m, seed.wrapping_add(1), true);
        let c = cloud(2, k, seed.wrapping_add(2), true);
        let ab = w2_exact(&a, &b).unwrap().distance;
        let ba = w2_exact(&b, &a).unwrap().distance;
        let bc = w2_exact(&b, &c).unwrap().distance;
        let ac = w2_exact(&a, &c).unwrap().distance;
        prop_assert!((ab - ba).abs() <= 1e-10);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!(w2_exact(&a, &a).unwrap().distance <= 1e-10);
    }

    #[test]
    fn translation_invariance(seed in any::<u64>(), n in 1usize..15, v in proptest::collection::vec(-3.0f64..3.0, 3)) {
        let a = cloud(3, n, seed, true);
        let b = cloud(3, n + 2, seed ^ 7, true);
        let d0 = w2_exact(&a, &b).unwrap().distance;
        let d1 = w2_exact(&a.translated(&v), &b.translated(&v)).unwrap().distance;
        prop_assert!((d0 - d1).abs() <= 1e-10);
    }

    #[test]
    fn plans_are_feasible(seed in any::<u64>(), n in 1usize..25, m in 1usize..25) {
        let a = cloud(3, n, seed, true);
        let b = cloud(3, m, seed ^ 99, true);
        let plan = w2_exact(&a, &b).unwrap();
        prop_assert!(plan.marginal_error(&a, &b) <= 1e-10);
        prop_assert!(plan.pairs.len() <= n + m - 1);
    }

    #[test]
    fn relabeling_leaves_cost_unchanged(seed in any::<u64>(), n in 2usize..7) {
        let a = cloud(2, n, seed, false);
        let b = cloud(2, n, seed ^ 5, false);
        let mut rev = b.positions().to_vec();
        let d = 2;
        let pts: Vec<Vec<f64>> = rev.chunks(d).rev().map(|c| c.to_vec()).collect();
        rev = pts.concat();
        let b_rev = ParticleMeasure::uniform(d, rev).unwrap();
        let c0 = w2_brute(&a, &b).unwrap().cost;
        let c1 = w2_brute(&a, &b_rev).unwrap().cost;
        prop_assert!((c0 - c1).abs() <= 1e-12);
    }
}

#[test]
fn single_point_brute_force() {
    let a = ParticleMeasure::dirac(&[1.0, 2.0]);
    let b = ParticleMeasure::dirac(&[4.0, 6.0]);
    let plan = w2_brute(&a, &b).unwrap();
    assert_eq!(plan.pairs, vec![(0, 0, 1.0)]);
    assert!((plan.distance - 5.0).abs() < 1e-15);
}

#[test]
fn interpolation_is_a_geodesic() {
    let alphas = [0.0, 0.25, 0.5, 1.0];
    for seed in 0..10u64 {
        let mu = cloud(2, 12, seed, false);
        let nu = cloud(2, 12, seed + 50, false);
        let plan = w2_exact(&mu, &nu).unwrap();
        let total = plan.distance;
        let path: Vec<ParticleMeasure> = alphas.iter().map(|&a| displacement_interpolation(&plan, &mu, &nu, a).unwrap()).collect();
        for i in 0..alphas.len() {
            for j in i + 1..alphas.len() {
                let d = w2_exact(&path[i], &path[j]).unwrap().distance;
                let expected = (alphas[j] - alphas[i]) * total;
                assert!((d - expected).abs() <= 1e-8 * total, "seed {seed}, {} -> {}: {d} vs {expected}", alphas[i], alphas[j]);
            }
        }
    }
}

#[test]
fn interpolating_two_diracs_lands_on_the_midpoint() {
    let a = ParticleMeasure::dirac(&[0.0, 0.0, 0.0]);
    let b = ParticleMeasure::dirac(&[2.0, -4.0, 1.0]);
    let plan = w2_exact(&a, &b).unwrap();
    let mid = displacement_interpolation(&plan, &a, &b, 0.5).unwrap();
    assert_eq!(mid, ParticleMeasure::dirac(&[1.0, -2.0, 0.5]));
}
