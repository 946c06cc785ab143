use lsbnav::cbf::{relaxed_constraints_hold, relaxed_psi_chain, verify_invariance};
use proptest::prelude::*;

/// ψ₀ at `x_t..x_{t+m}` whose relaxed chain at `x_t` equals `targets`.
///
/// `ψ_i(x_t)` is affine in `ψ₀(x_{t+i})` with unit slope, so each entry is fixed
/// by the level it completes.
fn rollout_with_chain(psi_t: f64, targets: &[f64], gammas: &[f64], omegas: &[f64]) -> Vec<f64> {
    let m = gammas.len();
    let mut psi = vec![0.0; m + 1];
    psi[0] = psi_t;
    for i in 1..=m {
        psi[i] = 0.0;
        let v = relaxed_psi_chain(&psi, gammas, omegas)[i - 1];
        psi[i] = targets[i - 1] - v;
    }
    psi
}

fn chain_target() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), 0.0..1.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn relaxed_chain_keeps_rollout_safe(
        m in 1usize..5,
        psi_t in prop_oneof![Just(0.0), 0.0..2.0f64],
        raw in prop::collection::vec((0.01..=1.0f64, prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64], chain_target()), 4),
    ) {
        let gammas: Vec<f64> = raw[..m].iter().map(|r| r.0).collect();
        let omegas: Vec<f64> = raw[..m].iter().map(|r| r.1).collect();
        let targets: Vec<f64> = raw[..m].iter().map(|r| r.2).collect();
        let psi = rollout_with_chain(psi_t, &targets, &gammas, &omegas);
        prop_assert!(relaxed_constraints_hold(&psi, &gammas, &omegas, 1e-12));
        prop_assert!(verify_invariance(&psi, 1e-9), "{psi:?}");
    }

    #[test]
    fn admissible_random_rollouts_are_safe(
        m in 1usize..4,
        psi in prop::collection::vec(-0.2..1.0f64, 4),
        gw in prop::collection::vec((0.01..=1.0f64, 0.0..=1.0f64), 3),
    ) {
        let psi = &psi[..=m];
        let gammas: Vec<f64> = gw[..m].iter().map(|v| v.0).collect();
        let omegas: Vec<f64> = gw[..m].iter().map(|v| v.1).collect();
        if relaxed_constraints_hold(psi, &gammas, &omegas, 0.0) {
            prop_assert!(verify_invariance(psi, 0.0));
        }
    }
}

#[test]
fn additive_relaxation_admits_unsafe_step() {
    // ψ₀(x_{t+1}) ≥ (1 − γ) ψ₀(x_t) + ω with ω < 0.
    let (gamma, omega) = (0.1, -1.0);
    let psi = [0.5, -0.2];
    assert!(psi[1] >= (1.0 - gamma) * psi[0] + omega);
    assert!(!verify_invariance(&psi, 0.0));
    // The multiplicative form rejects the same step for every ω ∈ [0, 1].
    for k in 0..=10 {
        let w = k as f64 / 10.0;
        assert!(!relaxed_constraints_hold(&psi, &[gamma], &[w], 0.0));
    }
}
