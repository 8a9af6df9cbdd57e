use chainscope::ellipsoid::{argmax_samples, esup_check, EllipsoidSpec};
use chainscope::gaussian::{estimate_modulus_grid, estimate_sup, simulate_supremum, subset_supremum, GaussianModel};
use chainscope::measure::{
    functional_m, sigma, sigma_profile, IntegrandMode, NeighborIndex, ProbabilityMeasure, YoungFunction,
};
use chainscope::metric::{exact_cover_size, greedy_packing, FiniteMetricSpace, Separation};
use chainscope::partition::{
    audit_all, build_partition, chained_functional, grouping_constant, telescoping_violations, verify_lemma2,
    McSupremum, PartitionConfig,
};
use chainscope::search::{balanced_measure, maximize_inf_m, maximize_m_self, minimize_sup_m, BalanceConfig, SearchConfig};
use proptest::prelude::*;

const G: IntegrandMode = IntegrandMode::GaussianLog;

fn points(max_n: usize, max_dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_n, 1..=max_dim).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-1.0..1.0f64, d), n))
}

fn weights(n: usize) -> impl Strategy<Value = ProbabilityMeasure> {
    prop::collection::vec(0.05..1.0f64, n).prop_map(|w| ProbabilityMeasure::from_unnormalized(w).unwrap())
}

fn space_and_measure(max_n: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, ProbabilityMeasure)> {
    points(max_n, 3).prop_flat_map(|p| {
        let n = p.len();
        (Just(p), weights(n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn greedy_cover_is_monotone_and_sandwiched(p in points(10, 3), a in 0.01..2.0f64, b in 0.01..2.0f64) {
        let s = FiniteMetricSpace::from_points(&p).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let c_lo = s.covering_number(lo).unwrap();
        let c_hi = s.covering_number(hi).unwrap();
        prop_assert!(c_hi.greedy_cover_size <= c_lo.greedy_cover_size);
        let exact = exact_cover_size(&s, lo);
        prop_assert_eq!(c_lo.exact, Some(exact));
        prop_assert!(c_lo.certified_bounds.0 <= exact && exact <= c_lo.certified_bounds.1);
        prop_assert!(greedy_packing(&s, Separation::Exceeds(2.0 * lo)).len() <= exact);
    }

    #[test]
    fn entropy_integral_is_monotone_and_saturates(p in points(12, 3), f in 0.05..1.0f64) {
        let s = FiniteMetricSpace::from_points(&p).unwrap();
        prop_assume!(s.diam() > 0.0);
        let d = s.diam();
        let a = s.entropy_integral(f * d).unwrap().value;
        let b = s.entropy_integral(d).unwrap().value;
        let c = s.entropy_integral(3.0 * d).unwrap().value;
        prop_assert!(a <= b + 1e-12);
        prop_assert_eq!(b, c);
    }

    #[test]
    fn covariance_round_trip(p in points(10, 4)) {
        let gram: Vec<Vec<f64>> = p.iter().map(|x| p.iter().map(|y| x.iter().zip(y).map(|(a, b)| a * b).sum()).collect()).collect();
        let s = FiniteMetricSpace::from_covariance(&gram).unwrap();
        let again = FiniteMetricSpace::from_distance_matrix(&s.to_matrix()).unwrap();
        prop_assert_eq!(again.to_matrix(), s.to_matrix());
    }

    #[test]
    fn sigma_decreases_when_mass_moves_closer((p, mu) in space_and_measure(10), t_raw in 0usize..10, a in 0usize..10, b in 0usize..10, frac in 0.0..1.0f64) {
        let s = FiniteMetricSpace::from_points(&p).unwrap();
        let n = s.n();
        let t = t_raw % n;
        let (mut i, mut j) = (a % n, b % n);
        if s.dist(t, i) > s.dist(t, j) {
            std::mem::swap(&mut i, &mut j);
        }
        // moving mass from j to i, no farther from t, grows every ball around t
        let mut w = mu.weights().to_vec();
        let moved = frac * w[j];
        w[j] -= moved;
        w[i] += moved;
        let closer = ProbabilityMeasure::from_unnormalized(w).unwrap();
        for mode in [G, IntegrandMode::YoungInverse(YoungFunction::new(1.5).unwrap())] {
            let before = sigma(&s, &mu, t, f64::INFINITY, &mode).unwrap();
            let after = sigma(&s, &closer, t, f64::INFINITY, &mode).unwrap();
            prop_assert!(after <= before + 1e-12, "{after} > {before}");
        }
    }

    #[test]
    fn sigma_is_monotone_in_delta((p, mu) in space_and_measure(10), t_raw in 0usize..10, a in 0.0..3.0f64, b in 0.0..3.0f64) {
        let s = FiniteMetricSpace::from_points(&p).unwrap();
        let t = t_raw % s.n();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        for mode in [G, IntegrandMode::YoungInverse(YoungFunction::gaussian())] {
            let x = sigma(&s, &mu, t, lo, &mode).unwrap();
            let y = sigma(&s, &mu, t, hi, &mode).unwrap();
            prop_assert!(x <= y + 1e-12);
        }
    }

    #[test]
    fn functional_is_an_average((p, mu) in space_and_measure(12)) {
        let s = FiniteMetricSpace::from_points(&p).unwrap();
        let prof = sigma_profile(&s, &mu, f64::INFINITY, &G).unwrap();
        let m = functional_m(&s, &mu, &mu, f64::INFINITY, &G).unwrap();
        let lo = prof.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = prof.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-12 <= m && m <= hi + 1e-12);
    }

    #[test]
    fn half_mass_balls_force_sigma_at_least_diam((p, mu) in space_and_measure(10)) {
        let s = FiniteMetricSpace::from_points(&p).unwrap();
        let d = s.diam();
        for t in 0..s.n() {
            // the largest ball strictly below the diameter
            let below: f64 = s.row(t).iter().copied().filter(|&x| x < d).fold(0.0, f64::max);
            if mu.ball_mass(&s, t, below) <= 0.5 {
                prop_assert!(sigma(&s, &mu, t, f64::INFINITY, &G).unwrap() >= d - 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn esup_dominates_subsets(p in points(10, 3), mask in prop::collection::vec(any::<bool>(), 10), seed in 0u64..1000) {
        let m = GaussianModel::from_points(&p).unwrap();
        let subset: Vec<usize> = (0..p.len()).filter(|&i| mask[i]).collect();
        prop_assume!(!subset.is_empty());
        let whole = estimate_sup(&m, 2000, seed).unwrap().mean;
        let (part, _) = subset_supremum(&m, &subset, 2000, seed).unwrap();
        prop_assert!(whole >= part.mean - 1e-12);
        prop_assert!(whole >= 0.0);
    }

    #[test]
    fn modulus_is_monotone(p in points(10, 3), seed in 0u64..1000) {
        let m = GaussianModel::from_points(&p).unwrap();
        let d = m.space().diam();
        prop_assume!(d > 0.0);
        let grid: Vec<f64> = (1..=6).map(|k| d * k as f64 / 5.0).collect();
        let (rows, _) = estimate_modulus_grid(&m, &grid, 1000, seed).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].value >= w[0].value);
        }
        prop_assert!(rows.iter().all(|r| r.value >= 0.0));
    }

    #[test]
    fn estimates_ignore_thread_count(p in points(12, 4), seed in 0u64..1000) {
        let m = GaussianModel::from_points(&p).unwrap();
        let run = |k: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap()
                .install(|| simulate_supremum(&m, 3000, seed).unwrap())
        };
        let (a, b) = (run(1), run(5));
        prop_assert_eq!(a.0.mean.to_bits(), b.0.mean.to_bits());
        prop_assert_eq!(a.1.measure.weights(), b.1.measure.weights());
    }

    #[test]
    fn partition_inequalities((p, mu) in space_and_measure(12), nu_seed in prop::collection::vec(0.05..1.0f64, 12), seed in 0u64..1000, delta_f in 0.05..1.5f64) {
        let model = GaussianModel::from_points(&p).unwrap();
        let s = model.space().clone();
        prop_assume!(s.diam() > 0.0);
        let oracle = McSupremum::new(&model, 500, seed).unwrap();
        let tree = build_partition(&s, &oracle, &PartitionConfig::default()).unwrap();
        prop_assert!(tree.is_nested_partition());
        prop_assert!(tree.containment_violations(&s).is_empty());
        for t in 0..s.n() {
            let c = verify_lemma2(&tree, &s, &mu, t, delta_f * s.diam()).unwrap();
            prop_assert!(c.lhs <= c.rhs + 1e-9, "t={t}: {} > {}", c.lhs, c.rhs);
        }
        let nu = ProbabilityMeasure::from_unnormalized(nu_seed[..s.n()].to_vec()).unwrap();
        let m = functional_m(&s, &mu, &nu, f64::INFINITY, &G).unwrap();
        prop_assert!(m <= chained_functional(&tree, &mu, &nu).unwrap() + 1e-9);
        prop_assert!(telescoping_violations(&tree, &mu).unwrap().is_empty());
        for cell in &tree.cells {
            let scores: Vec<(f64, f64)> = cell.children.iter().filter_map(|&c| tree.cells[c].selection_score).collect();
            for w in scores.windows(2) {
                prop_assert!(w[1].0 <= w[0].0 + 3.0 * w[0].1.max(w[1].1) + 1e-12);
            }
        }
        prop_assert!(audit_all(&tree, &mu).unwrap().iter().all(|a| a.carve_order_ok));
    }

    #[test]
    fn search_objectives_are_fresh((p, _mu) in space_and_measure(8), seed in 0u64..1000) {
        let s = FiniteMetricSpace::from_points(&p).unwrap();
        prop_assume!(s.min_positive_distance().is_some());
        let cfg = SearchConfig { restarts: 2, max_iter: 200, seed, ..SearchConfig::default() };
        let idx = NeighborIndex::new(&s);
        let best = maximize_m_self(&s, &G, &[], &cfg).unwrap();
        let w = best.measure.weights();
        prop_assert!((idx.functional(w, w, f64::INFINITY, &G) - best.objective).abs() <= 1e-9);
        let inf = maximize_inf_m(&s, &G, &cfg).unwrap();
        let w = inf.measure.weights();
        let prof = idx.sigmas(w, f64::INFINITY, &G);
        prop_assert!((prof.iter().copied().fold(f64::INFINITY, f64::min) - inf.objective).abs() <= 1e-9);
        // averaging: the maximin candidate's self functional is at least its objective
        prop_assert!(idx.functional(w, w, f64::INFINITY, &G) >= inf.objective - 1e-9);
        let sup = minimize_sup_m(&s, &G, &cfg).unwrap();
        let w = sup.measure.weights();
        let prof = idx.sigmas(w, f64::INFINITY, &G);
        prop_assert!((prof.iter().copied().fold(f64::NEG_INFINITY, f64::max) - sup.objective).abs() <= 1e-9);
    }

    #[test]
    fn balanced_spread_only_decreases(p in points(10, 3)) {
        let s = FiniteMetricSpace::from_points(&p).unwrap();
        prop_assume!((0..s.n()).all(|i| (i + 1..s.n()).all(|j| s.dist(i, j) > 1e-3)));
        let b = balanced_measure(&s, &YoungFunction::gaussian(), None, &BalanceConfig::default()).unwrap();
        for w in b.spread_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(b.phi_values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ellipsoid_samples_are_optimal(axes in prop::collection::vec(0.05..1.0f64, 1..8), seed in 0u64..1000, ys in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 8), 20)) {
        let mut axes = axes;
        axes.sort_by(|a, b| b.total_cmp(a));
        let spec = EllipsoidSpec::new(axes.clone()).unwrap();
        for s in argmax_samples(&spec, 50, seed) {
            prop_assert!(s.boundary_residual(&spec) <= 1e-9);
            for w in s.tail_profile[1..].windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-15);
            }
            prop_assert!(s.a(1) <= spec.axis(1) + 1e-12);
            prop_assert!((s.a(spec.n()) - s.x[spec.n() - 1].abs()).abs() <= 1e-15);
            let gx: f64 = s.x.iter().zip(&s.g).map(|(a, b)| a * b).sum();
            for y in &ys {
                // scale a random direction onto the boundary
                let y = &y[..spec.n()];
                let q: f64 = y.iter().zip(&axes).map(|(v, t)| (v / t).powi(2)).sum::<f64>().sqrt();
                if q == 0.0 { continue; }
                let gy: f64 = y.iter().zip(&s.g).map(|(a, b)| a * b).sum::<f64>() / q;
                prop_assert!(gy <= gx + 1e-12);
            }
        }
    }
}

#[test]
fn grouping_constant_is_at_most_four() {
    for l0 in 0..=6 {
        assert!(grouping_constant(l0) <= 4.0, "l0 = {l0}");
    }
}

#[test]
fn parseval_on_harmonic_axes() {
    let spec = EllipsoidSpec::new((1..=16).map(|i| 1.0 / i as f64).collect()).unwrap();
    let c = esup_check(&spec, 20_000, 3).unwrap();
    assert!(c.parseval_ok, "{c:?}");
}

#[test]
fn iid_argmax_law_is_uniform() {
    let n = 8;
    let cov: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    let m = GaussianModel::new(cov).unwrap();
    let samples = 40_000;
    let (_, arg) = simulate_supremum(&m, samples, 11).unwrap();
    let p = 1.0 / n as f64;
    let se = (p * (1.0 - p) / samples as f64).sqrt();
    for &w in arg.measure.weights() {
        assert!((w - p).abs() <= 4.0 * se, "{w}");
    }
}

/// Block model: `m` clusters whose centers sit at mutual distance `a`, each with
/// points spread within `radius` of the center along private coordinates.
fn cluster_model(m: usize, per: usize, a: f64, radius: f64) -> (GaussianModel, Vec<Vec<usize>>) {
    let dim = m + m * per;
    let mut pts = Vec::new();
    let mut clusters = Vec::new();
    for c in 0..m {
        let mut members = Vec::new();
        for k in 0..per {
            let mut x = vec![0.0; dim];
            x[c] = a / 2f64.sqrt();
            if k > 0 {
                x[m + c * per + k] = radius;
            }
            members.push(pts.len());
            pts.push(x);
        }
        clusters.push(members);
    }
    (GaussianModel::from_points(&pts).unwrap(), clusters)
}

#[test]
fn separated_clusters_add_a_log_term() {
    for m in [2usize, 4, 8, 16] {
        let radius = 0.1;
        let a = 8.0 * radius;
        let (model, clusters) = cluster_model(m, 4, a, radius);
        let whole = estimate_sup(&model, 20_000, 5).unwrap().mean;
        let worst_cluster = clusters
            .iter()
            .map(|c| subset_supremum(&model, c, 20_000, 5).unwrap().0.mean)
            .fold(f64::INFINITY, f64::min);
        let floor = 0.2 * a * (m as f64).log2().sqrt();
        assert!(whole - worst_cluster >= floor, "m={m}: {whole} - {worst_cluster} < {floor}");
    }
}
