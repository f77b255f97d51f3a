use cavity_chaos_core::dynamics::{resonant_exit_time, RhsKind};
use cavity_chaos_core::integrator::{integrate, Direction, EventFunction, EventSpec, IntegratorConfig, Output};
use cavity_chaos_core::scattering::{
    classify_trajectory, exit_scan, exit_time_histogram, exponential_tail, tail_exponent, BinSpec, Classification,
    Detector, ExitRecord, ScanConfig, ZoomNode,
};
use cavity_chaos_core::sweep::{Sequential, Spacing};
use cavity_chaos_core::{AtomPreparation, FieldPreparation, Scenario};
use proptest::prelude::*;

fn resonant(p0: f64) -> Scenario {
    Scenario {
        delta: 0.0,
        alpha: 1e-3,
        n_max: None,
        field: FieldPreparation::Fock { n: 10 },
        atom: AtomPreparation::Superposition { z_in: 0.0 },
        x0: 0.0,
        p0,
    }
}

fn detected(t: f64) -> ExitRecord {
    ExitRecord {
        p0: 0.0,
        exit_time: t,
        detector: Detector::Right,
        m: 1,
        drift_flagged: false,
        failure: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn resonant_exit_times_follow_free_flight(p0 in prop_oneof![-80.0..-5.0f64, 5.0..80.0f64]) {
        let r = &exit_scan(&[p0], &resonant(0.0), &ScanConfig::default(), &Sequential).unwrap()[0];
        let expected = resonant_exit_time(p0, 1e-3).unwrap();
        prop_assert!((r.exit_time - expected).abs() < 1e-6);
        let want = if p0 > 0.0 {
            Classification::Trajectory { m: 1 }
        } else {
            Classification::Trajectory { m: 0 }
        };
        prop_assert_eq!(classify_trajectory(r), want);
    }

    #[test]
    fn histogram_accounts_for_every_record(
        times in proptest::collection::vec(1.0..1e4f64, 1..300),
        trapped in 0usize..20,
        count in 1usize..60,
    ) {
        let mut records: Vec<ExitRecord> = times.iter().map(|&t| detected(t)).collect();
        for _ in 0..trapped {
            records.push(ExitRecord { detector: Detector::None, exit_time: 2e4, ..detected(0.0) });
        }
        for spacing in [Spacing::Linear, Spacing::Log] {
            let pdf = exit_time_histogram(&records, &BinSpec { count, spacing, range: None }).unwrap();
            let counted: u64 = pdf.counts.iter().sum();
            prop_assert_eq!(counted + pdf.underflow + pdf.overflow, times.len() as u64);
            prop_assert_eq!(pdf.trapped, trapped as u64);
            let mass: f64 = pdf.mass.iter().sum::<f64>() + pdf.trapped_fraction();
            prop_assert!((mass - 1.0).abs() < 1e-12);
            let widths = pdf.edges.windows(2).map(|w| w[1] - w[0]);
            let integral: f64 = pdf.density.iter().zip(widths).map(|(d, w)| d * w).sum();
            prop_assert!((integral - pdf.mass.iter().sum::<f64>()).abs() < 1e-12);
        }
    }
}

#[test]
fn position_events_match_brute_force_crossings() {
    let (params, init) = resonant(40.0).prepare().unwrap();
    let targets = [0.5, 1.7, 3.1];
    let events: Vec<EventSpec> = targets
        .iter()
        .map(|&target| EventSpec::new(EventFunction::Position { target }, Direction::Rising, false))
        .collect();
    let dt = 0.5;
    let cfg = IntegratorConfig::new(100.0).with_output(Output::Uniform { dt });
    let traj = integrate(RhsKind::FockReduced { n: 10 }, &params, &init, &cfg, &events).unwrap();
    assert_eq!(traj.events.len(), targets.len());
    for hit in &traj.events {
        let target = targets[hit.event];
        let bracket = traj
            .samples
            .windows(2)
            .find(|w| w[0].state.x < target && w[1].state.x >= target)
            .unwrap();
        assert!(bracket[0].t < hit.t && hit.t <= bracket[1].t);
        assert!((hit.state.x - target).abs() < 1e-10);
        assert!((hit.t - target / (1e-3 * 40.0)).abs() < 1e-8);
    }
}

#[test]
fn synthetic_power_law_tail_is_recovered() {
    // exit times at the quantiles of a density proportional to T^-3.5 above T = 100
    let n = 200_000;
    let records: Vec<ExitRecord> = (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            detected(100.0 * u.powf(-1.0 / 2.5))
        })
        .collect();
    let bins = BinSpec {
        count: 40,
        spacing: Spacing::Log,
        range: Some((100.0, 2e4)),
    };
    let pdf = exit_time_histogram(&records, &bins).unwrap();
    let power = tail_exponent(&pdf, Spacing::Log, (300.0, 4000.0)).unwrap();
    let expo = exponential_tail(&pdf, Spacing::Log, (300.0, 4000.0)).unwrap();
    assert!((power.slope + 3.5).abs() < 0.05, "{power:?}");
    assert!(power.residual < expo.residual);
}

#[test]
fn synthetic_exponential_tail_prefers_exponential_fit() {
    let n = 200_000;
    let rate = 2e-3;
    let records: Vec<ExitRecord> = (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            detected(100.0 - u.ln() / rate)
        })
        .collect();
    let bins = BinSpec {
        count: 40,
        spacing: Spacing::Log,
        range: Some((100.0, 2e4)),
    };
    let pdf = exit_time_histogram(&records, &bins).unwrap();
    let power = tail_exponent(&pdf, Spacing::Log, (300.0, 4000.0)).unwrap();
    let expo = exponential_tail(&pdf, Spacing::Log, (300.0, 4000.0)).unwrap();
    assert!((expo.slope + rate).abs() < 1e-4, "{expo:?}");
    assert!(expo.residual < power.residual);
}

#[test]
fn resonant_scan_is_smooth() {
    let mut node = ZoomNode::new(20.0, 60.0, 81, 0);
    let records = exit_scan(&node.grid(), &resonant(0.0), &ScanConfig::default(), &Sequential).unwrap();
    node.analyse(records, &ScanConfig::default().singularity);
    assert!(node.unresolved.is_empty());
    assert_eq!(node.singular_count(), 0);
    assert_eq!(node.smooth, vec![(20.0, 60.0)]);
}
