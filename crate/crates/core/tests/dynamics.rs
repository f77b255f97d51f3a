use cavity_chaos_core::dynamics::{jc_inversion_exact, resonant_inversion_exact, RhsKind};
use cavity_chaos_core::integrator::{conservation_report, integrate, IntegratorConfig, Output, Tolerances};
use cavity_chaos_core::model::population_inversion;
use cavity_chaos_core::{AtomPreparation, FieldPreparation, Scenario};

fn scenario(field: FieldPreparation, atom: AtomPreparation, delta: f64, p0: f64) -> Scenario {
    Scenario {
        delta,
        alpha: 1e-3,
        n_max: None,
        field,
        atom,
        x0: 0.0,
        p0,
    }
}

fn inversions(s: &Scenario, kind: RhsKind, cfg: &IntegratorConfig) -> Vec<(f64, f64)> {
    let (params, init) = s.prepare().unwrap();
    integrate(kind, &params, &init, cfg, &[])
        .unwrap()
        .samples
        .iter()
        .map(|x| (x.t, population_inversion(&x.state)))
        .collect()
}

#[test]
fn motionless_bose_einstein_matches_thermal_sum() {
    let mean: f64 = 10.0;
    let s = scenario(
        FieldPreparation::BoseEinstein { mean },
        AtomPreparation::Excited,
        0.0,
        0.0,
    );
    let n_max = s.params().unwrap().n_max;
    let cfg = IntegratorConfig::new(50.0).with_output(Output::Uniform { dt: 0.25 });
    let ratio = mean / (1.0 + mean);
    for (t, z) in inversions(&s, RhsKind::JaynesCummings { f: 1.0 }, &cfg) {
        let mut p = 1.0 / (1.0 + mean);
        let mut exact = 0.0;
        for n in 0..=n_max {
            exact += p * (2.0 * ((n + 1) as f64).sqrt() * t).cos();
            p *= ratio;
        }
        assert!((z - exact).abs() < 1e-6, "t = {t}: {z} vs {exact}");
    }
}

#[test]
fn detuned_motionless_superposition_matches_closed_form() {
    let s = scenario(
        FieldPreparation::Fock { n: 6 },
        AtomPreparation::Superposition { z_in: 0.3 },
        0.7,
        0.0,
    );
    let (params, init) = s.prepare().unwrap();
    let cfg = IntegratorConfig::new(100.0).with_output(Output::Uniform { dt: 0.5 });
    let f = 0.8;
    let traj = integrate(RhsKind::JaynesCummings { f }, &params, &init, &cfg, &[]).unwrap();
    for sample in &traj.samples {
        let exact = jc_inversion_exact(&init.ladder, 0.7, f, sample.t);
        assert!((population_inversion(&sample.state) - exact).abs() < 1e-8);
    }
}

#[test]
fn resonant_flight_matches_closed_form_and_keeps_momentum() {
    let s = scenario(
        FieldPreparation::Fock { n: 10 },
        AtomPreparation::Superposition { z_in: 0.4 },
        0.0,
        -30.0,
    );
    let (params, init) = s.prepare().unwrap();
    let cfg = IntegratorConfig::new(150.0).with_output(Output::Uniform { dt: 1.0 });
    for kind in [RhsKind::HybridLadder, RhsKind::FockReduced { n: 10 }] {
        let traj = integrate(kind, &params, &init, &cfg, &[]).unwrap();
        for sample in &traj.samples {
            let exact = resonant_inversion_exact(&init.ladder, 1e-3, -30.0, sample.t);
            assert!((population_inversion(&sample.state) - exact).abs() < 1e-8);
            assert!((sample.state.p + 30.0).abs() < 1e-12);
            assert!((sample.state.x - 1e-3 * -30.0 * sample.t).abs() < 1e-10);
            assert!(sample.state.ladder.iter().all(|t| t.u.abs() < 1e-12));
        }
    }
}

#[test]
fn coherent_moving_atom_conserves_integrals() {
    let s = scenario(
        FieldPreparation::Coherent { mean: 10.0 },
        AtomPreparation::Excited,
        0.4,
        25.0,
    );
    let (params, init) = s.prepare().unwrap();
    let cfg = IntegratorConfig::new(300.0).with_output(Output::Uniform { dt: 5.0 });
    let traj = integrate(RhsKind::HybridLadder, &params, &init, &cfg, &[]).unwrap();
    let report = conservation_report(&traj, &params);
    assert!(report.max() < 1e-8, "{report:?}");
    assert!(!traj.drift_flagged);
}

#[test]
fn tighter_tolerances_do_not_lose_accuracy() {
    let s = scenario(
        FieldPreparation::Coherent { mean: 10.0 },
        AtomPreparation::Excited,
        0.0,
        50.0,
    );
    let (params, init) = s.prepare().unwrap();
    let times: Vec<f64> = (0..=40).map(|k| 5.0 * k as f64).collect();
    let mut errors = Vec::new();
    for rel_tol in [1e-6, 1e-8, 1e-10] {
        let tol = Tolerances {
            rel_tol,
            abs_tol: rel_tol * 1e-2,
            max_step: Some(1e3),
        };
        let cfg = IntegratorConfig::new(200.0)
            .with_tolerances(tol)
            .with_output(Output::Times(times.clone()));
        let traj = integrate(RhsKind::HybridLadder, &params, &init, &cfg, &[]).unwrap();
        let err = traj
            .samples
            .iter()
            .map(|x| (population_inversion(&x.state) - resonant_inversion_exact(&init.ladder, 1e-3, 50.0, x.t)).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    assert!(errors[0] >= errors[1] && errors[1] >= errors[2], "{errors:?}");
    assert!(errors[2] < 1e-7, "{errors:?}");
}
