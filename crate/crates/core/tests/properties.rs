use heatsink_pinn::network::{NetworkEnsemble, NetworkParams};
use heatsink_pinn::oracle::ToyPlateProblem;
use heatsink_pinn::physics::{Active, Problem, N_TERMS};
use heatsink_pinn::postprocess::{CaseConfig, Stat};
use heatsink_pinn::validation::{ToyProblem, ToySpec};
use heatsink_pinn::Error;
use proptest::prelude::*;

/// Linear network reproducing the exact toy profile θ = 1 − x*·Bi/(1+Bi).
fn exact_toy(problem: &ToyProblem, h: f64) -> NetworkEnsemble {
    let mut ens = problem.init_ensemble(&[2, 1], 0, h).unwrap();
    let bi = h * 0.1 / ToyPlateProblem::standard(h).k;
    let w = -bi / (1.0 + bi);
    let net: &mut NetworkParams = &mut ens.nets[0];
    // ξ = 2x* − 1 and u = 0.5 + 0.5·(w ξ + b)
    net.params_mut().copy_from_slice(&[w, 0.0, 1.0 + w]);
    ens
}

#[test]
fn exact_toy_field_has_negligible_loss() {
    for h in [10.0, 100.0, 1000.0, 10000.0] {
        let plate = ToyPlateProblem::standard(h);
        assert_eq!(plate.w, 0.1);
        let problem = ToyProblem::new(plate, true, &ToySpec::default()).unwrap();
        let ens = exact_toy(&problem, h);
        let (loss, _) = problem.evaluate(&ens, &[1.0; N_TERMS], Active::All).unwrap();
        assert!(loss.total < 1e-8, "h = {h}: total {:e}, terms {:?}", loss.total, loss.terms);
        assert!(problem.field_error(&ens, 21) < 1e-9);
    }
}

#[test]
fn reversed_outlet_temperature_is_rejected() {
    let text = include_str!("../data/cases/A13_4.json").replace("12.5535", "9.5");
    assert!(matches!(CaseConfig::from_json_str(&text), Err(Error::Validation(_))));
}

#[test]
fn single_trial_has_zero_std() {
    let s = Stat::of(&[3170.89]).unwrap();
    assert_eq!((s.mean, s.std, s.n), (3170.89, 0.0, 1));
}

proptest! {
    #[test]
    fn total_loss_is_linear_in_lambdas(
        lambdas in prop::array::uniform7(0.0f64..100.0),
        c in 0.1f64..10.0,
        seed in 0u64..50,
    ) {
        let h = 300.0;
        let problem = ToyProblem::new(ToyPlateProblem::standard(h), true, &ToySpec::default()).unwrap();
        let ens = problem.init_ensemble(&[2, 6, 1], seed, h).unwrap();
        let (a, _) = problem.evaluate(&ens, &lambdas, Active::All).unwrap();
        let scaled = lambdas.map(|l| l * c);
        let (b, _) = problem.evaluate(&ens, &scaled, Active::All).unwrap();
        let direct: f64 = a.terms.iter().zip(&lambdas).map(|(t, l)| t * l).sum();
        prop_assert!((a.total - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        prop_assert!((b.total - c * a.total).abs() <= 1e-10 * b.total.abs().max(1.0));
        prop_assert_eq!(a.terms, b.terms);
    }

    #[test]
    fn stat_mean_is_bounded_and_std_shift_invariant(
        values in prop::collection::vec(-1e4f64..1e4, 1..20),
        shift in -1e3f64..1e3,
    ) {
        let s = Stat::of(&values).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mean >= lo - 1e-9 && s.mean <= hi + 1e-9);
        prop_assert!(s.std >= 0.0);
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let t = Stat::of(&shifted).unwrap();
        prop_assert!((t.std - s.std).abs() <= 1e-6 * s.std.max(1.0));
    }
}

#[test]
fn h_moves_only_inside_its_training_window() {
    use heatsink_pinn::training::{train, TrainConfig};
    let h = 300.0;
    let problem = ToyProblem::new(ToyPlateProblem::standard(h), true, &ToySpec::default()).unwrap();
    let ens = problem.init_ensemble(&[2, 6, 1], 1, 1000.0).unwrap();
    let config = TrainConfig {
        max_epochs: 30,
        h_warmup_epochs: 10,
        h_freeze_epoch: Some(20),
        epsilon_stop: 1e-30,
        ..TrainConfig::default()
    };
    let run = train(&problem, ens, &config, true).unwrap();
    let hs: Vec<f64> = run.history.iter().map(|r| r.loss.h_star).collect();
    assert!(hs[..=10].iter().all(|&v| v == hs[0]));
    assert_ne!(hs[11], hs[10]);
    assert!(hs[21..].iter().all(|&v| v == hs[21]));
    assert_eq!(run.ensemble.h_star(), hs[21]);
}
