use ldpkit::determlimit::vector_field;
use ldpkit::ldp::{hamiltonian, lagrangian, legendre_momentum, momentum_gradient};
use ldpkit::master_cit::{
    entropy_balance, evolve_master, free_energy_balance, relative_entropy,
    stationary_distribution, MasterEquationSpec, ProbabilityVector,
};
use ldpkit::quasipotential::RateFunctionCandidate;
use ldpkit::simulate::{simulate_paths, SimConfig};
use ldpkit::thermo::cit_sigma;
use ldpkit::{GeneratorSpec, ModelConfig};
use proptest::prelude::*;

fn models() -> Vec<GeneratorSpec> {
    [
        ModelConfig::ornstein_uhlenbeck(1.0, 1.0),
        ModelConfig::birth_death(2.0, 1.0),
        ModelConfig::hybrid_ou_birth_death(0.7, 0.4, 1.5, 0.8),
    ]
    .into_iter()
    .map(|c| GeneratorSpec::new(c).unwrap())
    .collect()
}

/// Coordinates usable by every example model: first may be negative only in
/// the hybrid.
fn state_for(spec: &GeneratorSpec, a: f64, b: f64) -> Vec<f64> {
    match (spec.dimension(), spec.channels().is_empty()) {
        (1, true) => vec![a],
        (1, false) => vec![b],
        _ => vec![a, b],
    }
}

fn positive_probability(raw: &[f64]) -> ProbabilityVector {
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let n = p.len();
    let head: f64 = p[..n - 1].iter().sum();
    p[n - 1] = 1.0 - head;
    ProbabilityVector::new(p).unwrap()
}

proptest! {
    #[test]
    fn hamiltonian_vanishes_at_zero_momentum(a in -3.0f64..3.0, b in 0.05f64..6.0) {
        for spec in models() {
            let z = state_for(&spec, a, b);
            let zero = vec![0.0; z.len()];
            prop_assert_eq!(hamiltonian(&spec, &z, &zero).unwrap(), 0.0);
            let slice = momentum_gradient(&spec, &z, &zero).unwrap();
            prop_assert_eq!(slice, vector_field(&spec, &z).unwrap());
        }
    }

    #[test]
    fn lagrangian_nonnegative_and_zero_on_field(
        a in -3.0f64..3.0,
        b in 0.05f64..6.0,
        v1 in -3.0f64..3.0,
        v2 in -3.0f64..3.0,
    ) {
        for spec in models() {
            let z = state_for(&spec, a, b);
            let v: Vec<f64> = [v1, v2][..z.len()].to_vec();
            prop_assert!(lagrangian(&spec, &z, &v).unwrap() >= 0.0);
            let f = vector_field(&spec, &z).unwrap();
            prop_assert!(lagrangian(&spec, &z, &f).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn legendre_round_trip(a in -3.0f64..3.0, b in 0.05f64..6.0, y1 in -2.0f64..2.0, y2 in -2.0f64..2.0) {
        // the hybrid's OU block is non-degenerate in z1 and jumps span z2
        for spec in models() {
            let z = state_for(&spec, a, b);
            let y: Vec<f64> = [y1, y2][..z.len()].to_vec();
            let v = momentum_gradient(&spec, &z, &y).unwrap();
            let back = legendre_momentum(&spec, &z, &v).unwrap();
            for (p, q) in back.iter().zip(&y) {
                prop_assert!((p - q).abs() <= 1e-8, "{:?} vs {:?}", back, y);
            }
        }
    }

    #[test]
    fn sigma1_is_nonnegative(
        z in 0.05f64..6.0,
        z_ss in 0.05f64..6.0,
        zdot in -5.0f64..5.0,
    ) {
        let spec = GeneratorSpec::new(ModelConfig::birth_death(2.0, 1.0)).unwrap();
        let phi = RateFunctionCandidate::relative_entropy(vec![z_ss]).unwrap();
        prop_assert!(cit_sigma(&spec, &phi, &[z], &[zdot]).unwrap().sigma1 >= 0.0);
    }

    #[test]
    fn json_round_trip_is_exact(a in 0.01f64..10.0, d in 0.01f64..10.0, kb in 0.0f64..10.0, kd in 0.0f64..10.0) {
        let spec = GeneratorSpec::new(ModelConfig::hybrid_ou_birth_death(a, d, kb, kd)).unwrap();
        let text = spec.to_config().to_json();
        let again = GeneratorSpec::from_json(&text).unwrap();
        prop_assert_eq!(again, spec);
    }

    #[test]
    fn master_conserves_probability_and_free_energy_decreases(
        rates in prop::collection::vec(0.05f64..3.0, 9),
        raw in prop::collection::vec(0.05f64..1.0, 3),
    ) {
        let rows: Vec<Vec<f64>> = rates.chunks(3).map(|r| r.to_vec()).collect();
        let spec = MasterEquationSpec::from_rows(&rows).unwrap();
        let pi = stationary_distribution(&spec).unwrap();
        let p0 = positive_probability(&raw);
        let tr = evolve_master(&spec, &p0, 2.0, 0.01).unwrap();
        prop_assert!(tr.max_normalization_drift <= 1e-12);
        let kl: Vec<f64> = tr.probabilities.iter().map(|p| relative_entropy(p, pi.as_slice())).collect();
        for w in kl.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10);
        }
        let ledger = free_energy_balance(&spec, &p0).unwrap();
        prop_assert!(ledger.split_residual().abs() <= 1e-12);
        prop_assert!(ledger.total_production() >= -1e-15);
    }

    #[test]
    fn symmetric_rates_give_nonnegative_production(
        upper in prop::collection::vec(0.0f64..3.0, 3),
        raw in prop::collection::vec(0.05f64..1.0, 3),
    ) {
        let q = vec![
            vec![0.0, upper[0], upper[1]],
            vec![upper[0], 0.0, upper[2]],
            vec![upper[1], upper[2], 0.0],
        ];
        let spec = MasterEquationSpec::from_rows(&q).unwrap();
        let ledger = entropy_balance(&spec, &positive_probability(&raw)).unwrap();
        prop_assert!(ledger.production.iter().all(|&v| v >= -1e-15));
        prop_assert!(ledger.split_residual().abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn jump_sampling_stays_nonnegative(seed in any::<u64>(), kb in 0.0f64..1.0, kd in 0.5f64..4.0) {
        let spec = GeneratorSpec::new(ModelConfig::birth_death(kb, kd)).unwrap();
        let paths = simulate_paths(&spec, &[0.3], &SimConfig::new(0.1, 3.0, 0.1, 20, seed)).unwrap();
        prop_assert!(paths.iter().flat_map(|p| &p.states).all(|s| s[0] >= 0.0));
    }
}
