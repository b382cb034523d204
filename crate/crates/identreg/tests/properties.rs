//! Property-based checks of the algebraic invariants the library relies on.

use std::f64::consts::FRAC_PI_2;

use identreg::bounds::{least_squares_bound_check, random_instance, sample_perturbation};
use identreg::io::{parse_matrix, write_matrix};
use identreg::population::{identifiable_parameter, relevant_subspace, truncation_ladder, PopulationPair};
use identreg::reduction::{run, AlgorithmKind};
use identreg::spectral::{orthonormality_deviation, pseudoinverse, SymPsd};
use identreg::subspace::{embedding_angle, krylov_basis, principal_angle, Subspace};
use identreg::{rng, ToleranceConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn tol() -> ToleranceConfig {
    ToleranceConfig::default()
}

/// `(seed, p, rank, log10 condition number)` for a random PSD pair.
fn instance_params() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 2usize..=9).prop_flat_map(|(seed, p)| (Just(seed), Just(p), 1..=p, 0.0f64..3.0))
}

fn instance(seed: u64, p: usize, rank: usize, log10_cond: f64) -> (SymPsd, DVector<f64>) {
    let mut stream = rng::stream(seed, 0);
    random_instance(p, rank, log10_cond, &tol(), &mut stream).unwrap()
}

fn random_subspace(seed: u64, p: usize, d: usize) -> Subspace {
    let mut stream = rng::stream(seed, 1);
    Subspace::span(&rng::normal_matrix(p, d, &mut stream), &tol())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pseudoinverse_satisfies_penrose_identities((seed, p, rank, cond) in instance_params()) {
        let (a, _) = instance(seed, p, rank, cond);
        let m = a.matrix();
        let pinv = pseudoinverse(&a, &tol());
        let x = pinv.matrix();
        let scale = m.norm() * x.norm();
        prop_assert!((m * x * m - m).norm() <= 1e-9 * m.norm() * scale);
        prop_assert!((x * m * x - x).norm() <= 1e-9 * x.norm() * scale);
        prop_assert!(((m * x) - (m * x).transpose()).norm() <= 1e-9 * scale);
        prop_assert!(((x * m) - (x * m).transpose()).norm() <= 1e-9 * scale);
        prop_assert_eq!(pinv.rank(), rank);
    }

    #[test]
    fn principal_angle_is_symmetric_and_bounded(seed in any::<u64>(), p in 2usize..=8, d_frac in 0.0f64..1.0) {
        let d = 1 + ((p - 1) as f64 * d_frac) as usize;
        let s1 = random_subspace(seed, p, d);
        let s2 = random_subspace(seed.wrapping_add(1), p, d);
        let forward = principal_angle(&s1, &s2).unwrap();
        let backward = principal_angle(&s2, &s1).unwrap();
        prop_assert!((0.0..=FRAC_PI_2).contains(&forward));
        prop_assert!((forward - backward).abs() <= 1e-7);
        prop_assert!(principal_angle(&s1, &s1).unwrap() <= 1e-7);
    }

    #[test]
    fn krylov_bases_are_orthonormal_and_nested((seed, p, rank, cond) in instance_params()) {
        let (a, b) = instance(seed, p, rank, cond);
        let mut previous = Subspace::zero(p);
        for t in 1..=p {
            let k = krylov_basis(&a, &b, t, &tol()).unwrap();
            prop_assert!(orthonormality_deviation(k.basis()) <= 1e-10);
            prop_assert!(k.dim() <= t.min(rank));
            prop_assert!(embedding_angle(&previous, &k).unwrap() <= 1e-8);
            previous = k;
        }
        let env = relevant_subspace(&PopulationPair::new(a, b).unwrap(), &tol()).unwrap().relevant;
        prop_assert_eq!(previous.dim(), env.dim());
        prop_assert!(principal_angle(&previous, &env).unwrap() <= 1e-8);
    }

    #[test]
    fn reduction_paths_are_nested_and_end_at_least_squares((seed, p, rank, cond) in instance_params()) {
        let (a, b) = instance(seed, p, rank, cond);
        for kind in AlgorithmKind::ALL {
            let path = run(kind, &a, &b, &tol()).unwrap();
            prop_assert_eq!(path.steps.len(), p + 1);
            prop_assert_eq!(path.steps[0].dof, 0);
            for pair in path.steps.windows(2) {
                prop_assert!(pair[0].dof <= pair[1].dof);
                prop_assert!(pair[1].dof <= pair[1].step);
            }
            for s in 1..=p {
                let inner = path.subspace(s - 1);
                let outer = path.subspace(s);
                prop_assert!(embedding_angle(&inner, &outer).unwrap() <= 1e-10);
            }
            let terminal = &path.steps[p].solution;
            let scale = path.ls_solution.norm();
            prop_assert!((terminal - &path.ls_solution).norm() <= 1e-8 * scale, "{kind}");
        }
    }

    #[test]
    fn identifiable_level_respects_tau_and_risk_bound((seed, p, rank, cond) in instance_params(), tau in 1.0f64..50.0) {
        let (a, b) = instance(seed, p, rank, cond);
        let pair = PopulationPair::new(a, b).unwrap();
        let ladder = truncation_ladder(&relevant_subspace(&pair, &tol()).unwrap()).unwrap();
        for level in &ladder.levels {
            prop_assert!(level.exact_risk <= level.risk_bound * (1.0 + 1e-9) + 1e-12);
        }
        let chosen = identifiable_parameter(&ladder, tau).unwrap();
        prop_assert!(chosen.sqrt_condition_number <= tau);
        if chosen.level < ladder.levels.len() {
            prop_assert!(chosen.next_sqrt_condition_number > tau);
        }
    }

    #[test]
    fn least_squares_perturbation_bound_holds((seed, p, rank, cond) in instance_params(), u in 0.02f64..1.0) {
        let (a, b) = instance(seed, p, rank, cond);
        let kappa = 10f64.powf(cond);
        let mut stream = rng::stream(seed, 2);
        let pert = sample_perturbation(&a, &b, u / (2.0 * kappa), &mut stream).unwrap();
        let report = least_squares_bound_check(&a, &b, &pert.matrix, &pert.vector).unwrap();
        if report.precondition_met {
            prop_assert!(report.holds, "observed {} bound {}", report.observed_error, report.bound_value);
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact(rows in 1usize..6, cols in 1usize..6, values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 36)) {
        let m = DMatrix::from_fn(rows, cols, |i, j| values[i * cols + j]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let back = parse_matrix(buf.as_slice(), "prop").unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (x, y) in back.iter().zip(m.iter()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
