use super::*;
use crate::model::{angular, CavityMode, QubitParams, SystemModel};
use crate::photon::{thermal_distribution, PhotonDistribution};
use crate::rng::stream_rng;
use nalgebra::DMatrix;
use num_complex::Complex64;

const CHI: f64 = 7.0e6 * std::f64::consts::TAU;

fn system(n_bar: f64, kappa: f64, chi: f64, t1: f64, gamma_res: f64) -> SystemModel {
    let omega_n = angular(8.01e9);
    SystemModel {
        qubit: QubitParams {
            omega_q: angular(7.4e9),
            alpha: angular(-200e6),
            gamma_line: 0.0,
            t1,
            gamma_res,
        },
        modes: vec![CavityMode {
            index_n: 1,
            omega_n,
            g_n: angular(100e6),
            chi_n: chi,
            q_couplers: vec![if kappa > 0.0 {
                omega_n / kappa
            } else {
                f64::INFINITY
            }],
            q_int: f64::INFINITY,
            n_bar,
        }],
        drives: vec![],
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Column-stacked superoperator assembled from Kronecker products, independent
/// of the band-wise propagator.
fn superoperator(l: &Liouvillian) -> DMatrix<Complex64> {
    let lv = l.n_max() + 1;
    let d = 2 * lv;
    let mut a_cav = DMatrix::<Complex64>::zeros(lv, lv);
    for n in 1..lv {
        a_cav[(n - 1, n)] = c((n as f64).sqrt());
    }
    let i_cav = DMatrix::<Complex64>::identity(lv, lv);
    let i2 = DMatrix::<Complex64>::identity(2, 2);
    let a = i2.kronecker(&a_cav);
    let mut sm = DMatrix::<Complex64>::zeros(2, 2);
    sm[(0, 1)] = c(1.0);
    let sigma_minus = sm.kronecker(&i_cav);
    let mut sz = DMatrix::<Complex64>::zeros(2, 2);
    sz[(0, 0)] = c(1.0);
    sz[(1, 1)] = c(-1.0);
    let sigma_z = sz.kronecker(&i_cav);
    let mut h = DMatrix::<Complex64>::zeros(d, d);
    for n in 0..lv {
        h[(lv + n, lv + n)] = c(l.sector_detuning(n));
    }
    let id = DMatrix::<Complex64>::identity(d, d);
    let i = Complex64::new(0.0, 1.0);
    let mut sup = (id.kronecker(&h) - h.transpose().kronecker(&id)) * (-i);
    let channels = [
        (a.clone(), l.kappa() * (l.n_bar() + 1.0)),
        (a.adjoint(), l.kappa() * l.n_bar()),
        (sigma_minus, l.gamma1()),
        (sigma_z, 0.5 * l.gamma_res()),
    ];
    for (op, rate) in channels {
        let op = op * c(rate.sqrt());
        let ndag_n = op.adjoint() * &op;
        sup += op.conjugate().kronecker(&op)
            - id.kronecker(&ndag_n) * c(0.5)
            - ndag_n.transpose().kronecker(&id) * c(0.5);
    }
    sup
}

fn random_state(n_max: usize, seed: u64) -> DensityState {
    use rand::Rng;
    let mut rng = stream_rng(seed, 0);
    let d = 2 * (n_max + 1);
    let mut m = DMatrix::<Complex64>::zeros(d, d);
    for _ in 0..3 {
        let v = DMatrix::<Complex64>::from_fn(d, 1, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        m += &v * v.adjoint();
    }
    let tr = m.trace();
    DensityState::new(m / tr, n_max).unwrap()
}

#[test]
fn band_propagator_matches_full_superoperator() {
    let n_max = 4;
    let l = Liouvillian::new(n_max, 2.0e5, 0.4, 3.0e6, 1.0e4, 2.0e3)
        .unwrap()
        .with_frame(1.0e6, 1);
    let state = random_state(n_max, 3);
    assert_eq!(state.bands(), (0..=n_max).collect::<Vec<_>>());
    let sup = superoperator(&l);
    for &t in &[1e-7, 2e-6, 1.5e-5] {
        let ours = l.evolve(&state, t).unwrap();
        let vec =
            DMatrix::from_column_slice(state.dim() * state.dim(), 1, state.matrix().as_slice());
        let exact = (&sup * c(t)).exp() * vec;
        let exact = DMatrix::from_column_slice(state.dim(), state.dim(), exact.as_slice());
        let err = (ours.matrix() - &exact).map(|z| z.norm()).max();
        assert!(err < 1e-10, "t = {t}: {err:e}");
        ours.validate().unwrap();
    }
}

#[test]
fn trivial_dynamics_is_pure_relaxation() {
    let n_max = 3;
    let gamma1 = 1.0 / 30e-6;
    let l = Liouvillian::new(n_max, 0.0, 0.0, 0.0, gamma1, 0.0).unwrap();
    let state = random_state(n_max, 9);
    let t = 12e-6;
    let out = l.evolve(&state, t).unwrap();
    let decay = (-gamma1 * t).exp();
    for n in 0..=n_max {
        for m in 0..=n_max {
            let ee = state.element(Qubit::E, n, Qubit::E, m);
            let eg = state.element(Qubit::E, n, Qubit::G, m);
            let gg = state.element(Qubit::G, n, Qubit::G, m);
            assert!((out.element(Qubit::E, n, Qubit::E, m) - ee * decay).norm() < 1e-14);
            assert!((out.element(Qubit::E, n, Qubit::G, m) - eg * decay.sqrt()).norm() < 1e-14);
            assert!(
                (out.element(Qubit::G, n, Qubit::G, m) - gg - ee * (1.0 - decay)).norm() < 1e-14
            );
        }
    }
}

#[test]
fn vacuum_coherence_decays_at_closed_form_rate() {
    let (gamma1, gamma_res) = (1.0 / 25e-6, 7.0e3);
    let sys = system(0.0, angular(30e3), CHI, 25e-6, gamma_res);
    let l = build_liouvillian(&sys, 1, 20)
        .unwrap()
        .with_frame(angular(0.3e6), 0);
    let mut m = DMatrix::zeros(42, 42);
    m[(0, 0)] = c(0.5);
    m[(21, 21)] = c(0.5);
    m[(21, 0)] = c(0.5);
    m[(0, 21)] = c(0.5);
    let s = DensityState::new(m, 20).unwrap();
    for &t in &[1e-6, 5e-6, 40e-6] {
        let out = l.evolve(&s, t).unwrap();
        let expect = Complex64::from_polar(
            0.5 * (-(0.5 * gamma1 + gamma_res) * t).exp(),
            -angular(0.3e6) * t,
        );
        assert!((out.element(Qubit::E, 0, Qubit::G, 0) - expect).norm() < 1e-12);
    }
}

#[test]
fn blocks_evolve_independently() {
    // populations never feed coherences and vice versa
    let l = Liouvillian::new(5, 1.0e5, 0.3, CHI, 1.0e4, 1.0e3).unwrap();
    let mut pops = DMatrix::zeros(12, 12);
    for n in 0..6 {
        pops[(n, n)] = c(0.1);
        pops[(6 + n, 6 + n)] = c(0.1 / 1.5);
    }
    let tr = pops.trace();
    let s = DensityState::new(pops / tr, 5).unwrap();
    let out = l.evolve(&s, 3e-6).unwrap();
    for n in 0..6 {
        for m in 0..6 {
            assert_eq!(out.element(Qubit::E, n, Qubit::G, m), c(0.0));
            if n != m {
                assert_eq!(out.element(Qubit::E, n, Qubit::E, m), c(0.0));
            }
        }
    }
}

#[test]
fn truncation_too_small_is_rejected() {
    let sys = system(3.1, angular(8e3), CHI, f64::INFINITY, 0.0);
    assert!(matches!(
        build_liouvillian(&sys, 1, 20),
        Err(QsimError::Photon(_))
    ));
}

#[test]
fn state_validation() {
    let mut m = DMatrix::zeros(4, 4);
    m[(0, 0)] = c(1.0);
    assert!(DensityState::new(m.clone(), 1).is_ok());
    m[(0, 2)] = c(0.2);
    assert!(DensityState::new(m.clone(), 1).is_err());
    m[(2, 0)] = c(0.2);
    // |rho_eg|^2 > rho_gg rho_ee = 0
    assert!(DensityState::new(m.clone(), 1).is_err());
    m[(0, 0)] = c(0.9);
    assert!(DensityState::new(m.clone(), 1).is_err());
    assert!(DensityState::new(DMatrix::zeros(3, 3), 1).is_err());
}

#[test]
fn unconditional_pi_excites_vacuum() {
    let s = DensityState::ground(&PhotonDistribution::vacuum(3).unwrap());
    let pi = PulseSpec::new(PulseKind::Pi, 0.0, Selectivity::Unconditional);
    let out = selective_pulse(&s, &pi, CHI).unwrap();
    assert!((out.element(Qubit::E, 0, Qubit::E, 0).re - 1.0).abs() < 1e-15);
    assert!((out.p_excited() - 1.0).abs() < 1e-15);
}

#[test]
fn selective_pi_excites_only_target_sector() {
    let cav = PhotonDistribution::new(vec![0.6, 0.4, 0.0, 0.0]).unwrap();
    let s = DensityState::ground(&cav);
    let pi = PulseSpec::new(PulseKind::Pi, 0.0, Selectivity::SelectN(0));
    let out = selective_pulse(&s, &pi, CHI).unwrap();
    assert!((out.element(Qubit::E, 0, Qubit::E, 0).re - 0.6).abs() < 1e-15);
    assert!((out.element(Qubit::G, 1, Qubit::G, 1).re - 0.4).abs() < 1e-15);
    assert!(out.element(Qubit::E, 1, Qubit::E, 1).norm() < 1e-15);
}

#[test]
fn gaussian_pulse_is_selective() {
    let pulse = PulseSpec::new(PulseKind::Pi, 0.3, Selectivity::SelectN(0))
        .with_envelope(Envelope::Gaussian { sigma: 100e-9 });
    let u = SectorUnitaries::for_pulse(&pulse, CHI, 3).unwrap();
    // rotation angle implied by each sector's transition amplitude
    let angle = |n: usize| 2.0 * u.get(n)[(1, 0)].norm().min(1.0).asin();
    assert!((angle(0) - std::f64::consts::PI).abs() < 1e-6);
    assert!(
        angle(1) / angle(0) < 1e-3,
        "leakage {:e}",
        angle(1) / angle(0)
    );
    let ideal = pulse::rotation(std::f64::consts::PI, 0.3);
    assert!((u.get(0) - ideal).map(|z| z.norm()).max() < 1e-12);
    assert!(angle(2) < angle(1));
}

fn ramsey_unconditional(detuning: f64) -> SequenceSpec {
    SequenceSpec::ramsey(1, None, detuning, false)
}

#[test]
fn lossless_ramsey_shows_number_split_revivals() {
    let n_bar = 0.5;
    let sys = system(n_bar, 0.0, CHI, f64::INFINITY, 0.0);
    let delta = angular(1.0e6);
    let delays: Vec<f64> = (0..60).map(|i| i as f64 * 23e-9).collect();
    let data = run_sequence(&sys, &ramsey_unconditional(delta), &delays).unwrap();
    let p = thermal_distribution(n_bar, crate::photon::default_n_max(n_bar)).unwrap();
    for (t, s) in delays.iter().zip(&data.signal) {
        let expect: f64 = p
            .probs()
            .iter()
            .enumerate()
            .map(|(n, pn)| pn * 0.5 * (1.0 + ((delta - n as f64 * CHI) * t).cos()))
            .sum();
        assert!((s - expect).abs() < 1e-9, "t = {t}: {s} vs {expect}");
    }
}

#[test]
fn vacuum_selective_ramsey_is_two_level() {
    let (t1, gamma_res) = (30e-6, 2.0e4);
    let sys = system(0.0, angular(32e3), CHI, t1, gamma_res);
    let delta = angular(0.5e6);
    let delays: Vec<f64> = (0..100).map(|i| i as f64 * 0.2e-6).collect();
    let data = run_sequence(
        &sys,
        &SequenceSpec::standard(SequenceKind::Ramsey, 1, 0, delta),
        &delays,
    )
    .unwrap();
    for (t, s) in delays.iter().zip(&data.signal) {
        let expect = 0.5 * (1.0 + (-(0.5 / t1 + gamma_res) * t).exp() * (delta * t).cos());
        assert!((s - expect).abs() < 1e-9);
    }
}

#[test]
fn fringe_frequency_is_programmed_detuning_minus_select_chi() {
    // lossless Fock-1 cavity: only sector 1 contributes
    let sys = system(0.0, 0.0, CHI, f64::INFINITY, 0.0);
    let mut seq = SequenceSpec::standard(SequenceKind::Ramsey, 1, 1, angular(0.8e6));
    seq.prep = CavityPrep::Fock { n: 1 };
    let programmed = seq.programmed_detuning(CHI);
    assert!((programmed - CHI - angular(0.8e6)).abs() < 1e-6);
    let delays: Vec<f64> = (0..40).map(|i| i as f64 * 0.05e-6).collect();
    let data = run_sequence(&sys, &seq, &delays).unwrap();
    for (t, s) in delays.iter().zip(&data.signal) {
        let expect = 0.5 * (1.0 + ((programmed - CHI) * t).cos());
        assert!((s - expect).abs() < 1e-9);
    }
}

#[test]
fn echo_contrast_is_independent_of_static_detuning() {
    let sys = system(0.0, 0.0, CHI, f64::INFINITY, 0.0);
    let delays: Vec<f64> = (0..20).map(|i| i as f64 * 1e-6).collect();
    for &d in &[0.0, angular(0.37e6), angular(-2.1e6)] {
        let data =
            run_sequence(&sys, &SequenceSpec::echo(1, None, d, false, false), &delays).unwrap();
        for s in &data.signal {
            assert!(s.abs() < 1e-10 || (s - 1.0).abs() < 1e-10);
            assert!((s - data.signal[0]).abs() < 1e-10);
        }
    }
}

#[test]
fn incremental_and_per_delay_paths_agree() {
    let sys = system(0.8, angular(60e3), CHI, 20e-6, 5e3);
    let delays: Vec<f64> = (0..30).map(|i| 0.1e-6 + i as f64 * 0.37e-6).collect();
    let fast = run_sequence(
        &sys,
        &SequenceSpec::standard(SequenceKind::Ramsey, 1, 0, angular(1e6)),
        &delays,
    )
    .unwrap();
    // the same sequence with the swept time spread over two gaps takes the general path
    let mut slow_seq = SequenceSpec::standard(SequenceKind::Ramsey, 1, 0, angular(1e6));
    slow_seq.pulses.insert(
        1,
        PulseStep {
            pulse: PulseSpec::new(PulseKind::Custom(0.0), 0.0, Selectivity::Unconditional),
            delay_before: Delay {
                fixed_s: 0.0,
                swept_fraction: 0.3,
            },
        },
    );
    slow_seq.pulses[2].delay_before.swept_fraction = 0.7;
    let slow = run_sequence(&sys, &slow_seq, &delays).unwrap();
    for (a, b) in fast.signal.iter().zip(&slow.signal) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn invalid_sequences_are_rejected() {
    let sys = system(0.1, angular(30e3), CHI, f64::INFINITY, 0.0);
    let seq = SequenceSpec::standard(SequenceKind::Ramsey, 1, 0, 0.0);
    assert!(matches!(
        run_sequence(&sys, &seq, &[1e-6, 0.5e-6]),
        Err(QsimError::InvalidSequence(_))
    ));
    let mut bad = seq.clone();
    bad.pulses[0].delay_before.fixed_s = -1.0;
    assert!(run_sequence(&sys, &bad, &[0.0]).is_err());
    let mut bad = seq.clone();
    bad.pulses[0].pulse.envelope = Envelope::Gaussian { sigma: 0.0 };
    assert!(run_sequence(&sys, &bad, &[0.0]).is_err());
    let mut bad = seq;
    bad.readout_at_end = false;
    assert!(run_sequence(&sys, &bad, &[0.0]).is_err());
}

#[test]
fn mc_vacuum_fringe_is_undamped() {
    let sys = system(0.0, angular(32e3), CHI, f64::INFINITY, 0.0);
    let delta = angular(0.5e6);
    let delays: Vec<f64> = (0..50).map(|i| i as f64 * 0.1e-6).collect();
    let data = mc_fringe(
        &sys,
        &SequenceSpec::standard(SequenceKind::Ramsey, 1, 0, delta),
        &delays,
        100,
        1,
    )
    .unwrap();
    for (t, (s, e)) in delays.iter().zip(data.signal.iter().zip(&data.stderr)) {
        assert!((s - 0.5 * (1.0 + (delta * t).cos())).abs() < 1e-12);
        assert!(*e < 1e-12);
    }
}

#[test]
fn mc_matches_density_matrix() {
    let sys = system(0.25, angular(32e3), CHI, 30e-6, 5e3);
    let seq = SequenceSpec::standard(SequenceKind::Ramsey, 1, 0, angular(0.5e6));
    let delays: Vec<f64> = (0..15).map(|i| i as f64 * 1.3e-6).collect();
    let exact = run_sequence(&sys, &seq, &delays).unwrap();
    let mc = mc_fringe(&sys, &seq, &delays, 20_000, 17).unwrap();
    for i in 0..delays.len() {
        let z = (mc.signal[i] - exact.signal[i]) / mc.stderr[i].max(1e-12);
        assert!(z.abs() < 4.0, "delay {}: z = {z}", delays[i]);
    }
}

#[test]
fn mc_echo_matches_density_matrix() {
    let sys = system(0.4, angular(60e3), CHI, 30e-6, 0.0);
    let seq = SequenceSpec::standard(SequenceKind::Echo, 1, 0, angular(0.5e6));
    let delays: Vec<f64> = (0..10).map(|i| i as f64 * 2.0e-6).collect();
    let exact = run_sequence(&sys, &seq, &delays).unwrap();
    let mc = mc_fringe(&sys, &seq, &delays, 20_000, 5).unwrap();
    for i in 0..delays.len() {
        let z = (mc.signal[i] - exact.signal[i]) / mc.stderr[i].max(1e-12);
        assert!(z.abs() < 4.0, "delay {}: z = {z}", delays[i]);
    }
}

#[test]
fn mc_is_independent_of_thread_count() {
    let sys = system(0.3, angular(32e3), CHI, 30e-6, 0.0);
    let seq = SequenceSpec::standard(SequenceKind::Ramsey, 1, 0, angular(0.5e6));
    let delays: Vec<f64> = (0..8).map(|i| i as f64 * 1e-6).collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_fringe(&sys, &seq, &delays, 3000, 42).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn ringdown_closed_forms() {
    let kappa = angular(32e3);
    let sys = system(0.0, kappa, CHI, f64::INFINITY, 0.0);
    let times: Vec<f64> = (0..20).map(|i| i as f64 * 1e-6).collect();
    let vac = simulate_cavity_ringdown(&sys, 1, &PhotonDistribution::vacuum(20).unwrap(), &times)
        .unwrap();
    assert!(vac.iter().all(|p| (p - 1.0).abs() < 1e-12));
    let one = simulate_cavity_ringdown(&sys, 1, &PhotonDistribution::fock(1, 20).unwrap(), &times)
        .unwrap();
    for (t, p) in times.iter().zip(&one) {
        assert!((p - (1.0 - (-kappa * t).exp())).abs() < 1e-9);
    }
    let hot = thermal_distribution(2.0, 60).unwrap();
    let relax = simulate_cavity_ringdown(&sys, 1, &hot, &times).unwrap();
    for (t, p) in times.iter().zip(&relax) {
        assert!((p - 1.0 / (1.0 + 2.0 * (-kappa * t).exp())).abs() < 1e-8);
    }
}

#[test]
fn readout_is_linear_with_gaussian_noise() {
    let mut rng = stream_rng(0, 0);
    let quiet = ReadoutModel::default();
    assert_eq!(readout_signal(0.0, &quiet, &mut rng).unwrap(), 0.0);
    let shifted = ReadoutModel {
        gain: 2.0,
        offset: -1.0,
        noise_sigma: 0.0,
    };
    assert_eq!(readout_signal(1.0, &shifted, &mut rng).unwrap(), 1.0);
    assert!(readout_signal(1.5, &quiet, &mut rng).is_err());

    let noisy = ReadoutModel {
        gain: 1.0,
        offset: 0.0,
        noise_sigma: 0.2,
    };
    let shots = 10_000;
    let mean = (0..shots)
        .map(|_| readout_signal(0.3, &noisy, &mut rng).unwrap())
        .sum::<f64>()
        / shots as f64;
    assert!((mean - 0.3).abs() < 3.0 * 0.2 / 100.0);
}

#[test]
fn fringe_csv_round_trip_and_errors() {
    let data = FringeData::new(
        vec![0.0, 1e-6, 2e-6],
        vec![1.0, 0.5, 0.25],
        vec![0.0, 0.01, 0.02],
        FringeMeta {
            sequence: "ramsey".into(),
            system: "test".into(),
            seed: Some(5),
        },
    )
    .unwrap();
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    assert_eq!(FringeData::read_csv(buf.as_slice()).unwrap(), data);

    let bad = "delay_s,signal,stderr\n0,1,0\n1e-6,x,0\n";
    assert!(matches!(
        FringeData::read_csv(bad.as_bytes()),
        Err(QsimError::Csv { row: 3, .. })
    ));
    let unsorted = "delay_s,signal\n1e-6,1\n0,1\n";
    assert!(matches!(
        FringeData::read_csv(unsorted.as_bytes()),
        Err(QsimError::Csv { row: 3, .. })
    ));
}
