use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, Tape, Tensor};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn unit_model() -> ChannelModel {
    ChannelModel { rho0: 1.0, eta: 0.0, sigma2: 1.0, p_max: 1.0 }
}

fn flat_links(k: usize) -> LinkPathlosses {
    LinkPathlosses { tr: 1.0, ru: vec![1.0; k], tu: vec![1.0; k] }
}

fn random_set(dims: Dims, seed: u64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ChannelModel { rho0: 1.0, eta: 0.0, sigma2: 0.5, p_max: 2.0 };
    let mut ch = sample_channels(&flat_links(dims.k), dims, &model, &mut rng).unwrap();
    ch.user_weight = (0..dims.k).map(|i| 0.5 + i as f64 * 0.25).collect();
    ch
}

fn random_phases(n: usize, seed: u64) -> PhaseVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PhaseVector::new((0..n).map(|_| rng.random_range(0.0..TAU)).collect()).unwrap()
}

fn random_powers(k: usize, p_max: f64, seed: u64) -> PowerVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / s * p_max).collect();
    // absorb rounding so the budget holds exactly
    let rest: f64 = p[1..].iter().sum();
    p[0] = p_max - rest;
    PowerVector::new(p, p_max).unwrap()
}

#[test]
fn sampling_is_deterministic() {
    let dims = Dims::new(3, 4, 2);
    let links = LinkPathlosses { tr: 2.0, ru: vec![1.0, 3.0, 4.0], tu: vec![5.0, 6.0, 7.0] };
    let model = ChannelModel { rho0: 10.0, eta: 2.0, sigma2: 1.0, p_max: 1.0 };
    let a = sample_channels(&links, dims, &model, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = sample_channels(&links, dims, &model, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unit_variance_channels_have_unit_power() {
    let dims = Dims::new(4, 16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut total, mut count) = (0.0, 0usize);
    while count < 1_000_000 {
        let ch = sample_channels(&flat_links(4), dims, &unit_model(), &mut rng).unwrap();
        let entries =
            ch.h_tr.as_slice().iter().chain(ch.h_ru.iter().flat_map(|h| h.as_slice())).chain(ch.g.iter().flat_map(|g| g.as_slice()));
        for z in entries {
            total += z.norm_sqr();
            count += 1;
        }
    }
    let mean = total / count as f64;
    assert!((0.99..=1.01).contains(&mean), "mean power {mean}");
}

#[test]
fn doubling_pathloss_quarters_power() {
    let model = ChannelModel { rho0: 3.0, eta: 2.0, sigma2: 1.0, p_max: 1.0 };
    assert!((model.variance(5.0) / model.variance(10.0) - 4.0).abs() < 1e-12);

    let dims = Dims::new(1, 64, 64);
    let near = LinkPathlosses { tr: 1.0, ru: vec![1.0], tu: vec![1.0] };
    let far = LinkPathlosses { tr: 2.0, ru: vec![1.0], tu: vec![1.0] };
    let power = |links: &LinkPathlosses| {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        (0..50).map(|_| sample_channels(links, dims, &model, &mut rng).unwrap().h_tr.frobenius().powi(2)).sum::<f64>()
    };
    let ratio = power(&near) / power(&far);
    assert!((ratio - 4.0).abs() < 1e-9, "ratio {ratio}");
}

#[test]
fn non_positive_pathloss_rejected() {
    let dims = Dims::new(1, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for links in [
        LinkPathlosses { tr: 0.0, ru: vec![1.0], tu: vec![1.0] },
        LinkPathlosses { tr: 1.0, ru: vec![-1.0], tu: vec![1.0] },
        LinkPathlosses { tr: 1.0, ru: vec![1.0], tu: vec![f64::NAN] },
    ] {
        assert!(matches!(sample_channels(&links, dims, &unit_model(), &mut rng), Err(TransmitError::InvalidParameter(_))));
    }
}

#[test]
fn calibration_hits_target_ratio() {
    let links = vec![LinkPathlosses { tr: 2.0, ru: vec![4.0], tu: vec![8.0] }, LinkPathlosses { tr: 1.0, ru: vec![2.0], tu: vec![10.0] }];
    let rho0 = calibrate_rho0(&links, 2.0, 1.0, 20.0).unwrap();
    let mean: f64 = links.iter().map(|l| rho0 * l.mean_gain(2.0)).sum::<f64>() / 2.0;
    assert!((mean - 100.0).abs() < 1e-9);
    assert!(calibrate_rho0(&[], 2.0, 1.0, 20.0).is_err());
}

#[test]
fn channel_set_validation() {
    let ch = random_set(Dims::new(2, 3, 2), 0);
    let rebuild =
        |sigma2: Vec<f64>, w: Vec<f64>, p_max: f64| ChannelSet::new(ch.h_tr.clone(), ch.h_ru.clone(), ch.g.clone(), sigma2, w, p_max);
    assert!(rebuild(vec![1.0, 1.0], vec![1.0, 0.0], 1.0).is_ok());
    assert!(rebuild(vec![0.0, 1.0], vec![1.0, 1.0], 1.0).is_err());
    assert!(rebuild(vec![1.0, 1.0], vec![0.0, 0.0], 1.0).is_err());
    assert!(rebuild(vec![1.0, 1.0], vec![1.0, 1.0], 0.0).is_err());
    assert!(rebuild(vec![1.0], vec![1.0, 1.0], 1.0).is_err());
}

#[test]
fn phase_and_power_invariants() {
    assert!(PhaseVector::new(vec![0.0, 6.0]).is_ok());
    assert!(PhaseVector::new(vec![TAU]).is_err());
    assert!(PhaseVector::new(vec![-0.1]).is_err());
    let w = PhaseVector::wrapped(&[-0.5, TAU + 1.0, -1e-18]);
    assert!(w.as_slice().iter().all(|v| (0.0..TAU).contains(v)));
    assert!((w.as_slice()[1] - 1.0).abs() < 1e-12);

    assert!(PowerVector::new(vec![0.5, 0.5], 1.0).is_ok());
    assert!(PowerVector::new(vec![0.5, 0.4], 1.0).is_err());
    assert!(PowerVector::new(vec![1.5, -0.5], 1.0).is_err());
}

#[test]
fn cascade_without_ris_link_is_direct_channel() {
    let mut ch = random_set(Dims::new(2, 3, 2), 1);
    ch.h_ru[1] = CVec::zeros(3);
    let f = cascade_row(&ch, 1, &random_phases(3, 2)).unwrap();
    assert_eq!(f, ch.g[1].conj());
}

#[test]
fn cascade_with_zero_phases() {
    let ch = random_set(Dims::new(2, 3, 2), 3);
    let f = cascade_row(&ch, 0, &PhaseVector::zeros(3)).unwrap();
    let expected = ch.g[0].conj().as_row().add(&ch.h_ru[0].conj().as_row().matmul(&ch.h_tr).unwrap()).unwrap();
    for t in 0..2 {
        assert!((f[t] - expected.get(0, t)).norm() < 1e-14);
    }
}

#[test]
fn cascade_matches_scalar_expansion() {
    let ch = random_set(Dims::new(1, 2, 2), 5);
    let phi = random_phases(2, 6);
    let f = cascade_row(&ch, 0, &phi).unwrap();
    let (h, hk, gk) = (&ch.h_tr, &ch.h_ru[0], &ch.g[0]);
    let (e0, e1) = (C64::from_polar(1.0, phi.as_slice()[0]), C64::from_polar(1.0, phi.as_slice()[1]));
    let f0 = gk[0].conj() + hk[0].conj() * e0 * h.get(0, 0) + hk[1].conj() * e1 * h.get(1, 0);
    let f1 = gk[1].conj() + hk[0].conj() * e0 * h.get(0, 1) + hk[1].conj() * e1 * h.get(1, 1);
    assert!((f[0] - f0).norm() < 1e-14);
    assert!((f[1] - f1).norm() < 1e-14);
}

#[test]
fn g_stacks_cascade_rows() {
    let ch = random_set(Dims::new(3, 4, 2), 7);
    let phi = random_phases(4, 8);
    let g = build_g(&ch, &phi).unwrap();
    assert_eq!((g.rows(), g.cols()), (3, 2));
    for k in 0..3 {
        assert_eq!(g.row(k), cascade_row(&ch, k, &phi).unwrap());
    }
    let single = random_set(Dims::new(1, 4, 3), 9);
    assert_eq!(build_g(&single, &phi).unwrap().rows(), 1);
    assert!(build_g(&ch, &random_phases(3, 1)).is_err());
}

#[test]
fn single_user_direction_is_matched_filter() {
    let f = CMat::from_vec(1, 3, vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.3, -1.0)]).unwrap();
    let d = mmse_directions(&f, &[0.7]).unwrap();
    let expected = f.row(0).conj().scale(c(1.0 / f.row(0).l2norm(), 0.0));
    for t in 0..3 {
        assert!((d[0][t] - expected[t]).norm() < 1e-12);
    }
}

#[test]
fn orthogonal_rows_give_normalized_hermitians() {
    let g = CMat::from_vec(2, 2, vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, 0.0), c(0.0, -2.0)]).unwrap();
    assert!(g.gram().get(0, 1).norm() < 1e-15);
    let d = mmse_directions(&g, &[1.0, 3.0]).unwrap();
    for k in 0..2 {
        let expected = g.row(k).conj().scale(c(1.0 / g.row(k).l2norm(), 0.0));
        for t in 0..2 {
            assert!((d[k][t] - expected[t]).norm() < 1e-12);
        }
    }
}

#[test]
fn low_noise_limit_is_zero_forcing() {
    for seed in 0..10 {
        let ch = random_set(Dims::new(2, 3, 4), seed);
        let g = build_g(&ch, &random_phases(3, seed + 100)).unwrap();
        let d = mmse_directions(&g, &[1e-12, 1e-12]).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                if i != k {
                    let leak = g.row(i).dot(&d[k]).unwrap().norm();
                    assert!(leak < 1e-6 * g.row(i).l2norm(), "leak {leak}");
                }
            }
        }
    }
}

#[test]
fn zero_cascade_direction_is_an_error() {
    let g = CMat::from_vec(2, 2, vec![c(1.0, 0.0), c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
    assert_eq!(mmse_directions(&g, &[1.0, 1.0]), Err(TransmitError::DegenerateDirection(1)));
}

#[test]
fn beamformer_recovery() {
    let d = vec![CVec::new(vec![c(0.6, 0.0), c(0.0, 0.8)]).unwrap(), CVec::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap()];
    let bf = recover_beamformers(&PowerVector::new(vec![4.0, 0.0], 4.0).unwrap(), &d).unwrap();
    assert!((bf.w[0].l2norm() - 2.0).abs() < 1e-15);
    assert_eq!(bf.w[1], CVec::zeros(2));
    assert!((bf.total_power() - 4.0).abs() < 1e-15);
    assert!(recover_beamformers(&PowerVector::uniform(3, 1.0), &d).is_err());
}

#[test]
fn rate_trivial_cases() {
    let h_tr = CMat::zeros(1, 2);
    let ch =
        ChannelSet::new(h_tr, vec![CVec::zeros(1)], vec![CVec::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap()], vec![1.0], vec![1.0], 1.0)
            .unwrap();
    let phi = PhaseVector::zeros(1);
    let unit = BeamformerSet { w: vec![CVec::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap()] };
    assert_eq!(rate(&ch, 0, &unit, &phi).unwrap(), 1.0);
    let zero = BeamformerSet { w: vec![CVec::zeros(2)] };
    assert_eq!(rate(&ch, 0, &zero, &phi).unwrap(), 0.0);
}

#[test]
fn explicit_and_direction_rates_agree() {
    for seed in 0..50 {
        let dims = Dims::new(1 + (seed % 4) as usize, 1 + (seed % 5) as usize, 1 + (seed % 3) as usize);
        let ch = random_set(dims, seed);
        let phi = random_phases(dims.n, seed + 1);
        let p = random_powers(dims.k, ch.p_max, seed + 2);
        let dirs = mmse_directions(&build_g(&ch, &phi).unwrap(), &ch.sigma2).unwrap();
        let bf = recover_beamformers(&p, &dirs).unwrap();
        let tilde = rates_tilde(&ch, &p, &phi).unwrap();
        for (k, &rt) in tilde.iter().enumerate() {
            let r = rate(&ch, k, &bf, &phi).unwrap();
            assert!((r - rt).abs() < 1e-12, "seed {seed} user {k}: {r} vs {rt}");
        }
        let wsr: f64 = tilde.iter().zip(&ch.user_weight).map(|(r, w)| r * w).sum();
        assert!((weighted_sum_rate(&ch, &p, &phi).unwrap() - wsr).abs() < 1e-12);
    }
}

#[test]
fn weighted_sum_rate_trivial_cases() {
    let mut ch = random_set(Dims::new(3, 2, 2), 11);
    let phi = random_phases(2, 12);
    let p = PowerVector::uniform(3, ch.p_max);
    ch.user_weight = vec![0.0; 3];
    assert_eq!(weighted_sum_rate(&ch, &p, &phi).unwrap(), 0.0);

    let mut single = random_set(Dims::new(1, 2, 2), 13);
    single.user_weight = vec![2.5];
    let p = PowerVector::uniform(1, single.p_max);
    let r = rates_tilde(&single, &p, &phi).unwrap()[0];
    assert!((weighted_sum_rate(&single, &p, &phi).unwrap() - 2.5 * r).abs() < 1e-15);
}

fn batch_inputs(sets: &[ChannelSet], seed: u64) -> (Tensor, Tensor) {
    let d = sets[0].dims();
    let mut p = Vec::new();
    let mut phi = Vec::new();
    for (i, ch) in sets.iter().enumerate() {
        p.extend_from_slice(random_powers(d.k, ch.p_max, seed + i as u64).as_slice());
        phi.extend_from_slice(random_phases(d.n, seed + 1000 + i as u64).as_slice());
    }
    (Tensor::new(vec![sets.len(), d.k], p).unwrap(), Tensor::new(vec![sets.len(), d.n], phi).unwrap())
}

#[test]
fn taped_rate_matches_direct_evaluation() {
    let dims = Dims::new(3, 4, 3);
    let sets: Vec<ChannelSet> = (0..20).map(|s| random_set(dims, s)).collect();
    let refs: Vec<&ChannelSet> = sets.iter().collect();
    let batch = ChannelBatch::new(&refs).unwrap();
    let (p, phi) = batch_inputs(&sets, 77);
    let tape = Tape::new();
    let wsr = weighted_sum_rate_var(&tape, &batch, tape.leaf(p.clone()), tape.leaf(phi.clone())).unwrap();
    assert_eq!(wsr.shape(), [20]);
    for (i, ch) in sets.iter().enumerate() {
        let pv = PowerVector::new(p.data()[i * 3..(i + 1) * 3].to_vec(), ch.p_max).unwrap();
        let fv = PhaseVector::new(phi.data()[i * 4..(i + 1) * 4].to_vec()).unwrap();
        let direct = weighted_sum_rate(ch, &pv, &fv).unwrap();
        assert!((wsr.value().data()[i] - direct).abs() < 1e-12);
    }
}

#[test]
fn batch_rejects_mixed_dimensions() {
    let a = random_set(Dims::new(2, 2, 2), 0);
    let b = random_set(Dims::new(2, 3, 2), 0);
    assert!(ChannelBatch::new(&[&a, &b]).is_err());
    assert!(ChannelBatch::new(&[]).is_err());
}

#[test]
fn taped_rate_gradient_matches_finite_differences() {
    let dims = Dims::new(2, 3, 3);
    let sets: Vec<ChannelSet> = (0..3).map(|s| random_set(dims, 40 + s)).collect();
    let refs: Vec<&ChannelSet> = sets.iter().collect();
    let batch = ChannelBatch::new(&refs).unwrap();
    let (p, phi) = batch_inputs(&sets, 5);
    let mut joint = p.data().to_vec();
    joint.extend_from_slice(phi.data());
    let x = Tensor::vector(joint);
    let report = grad_check(
        |t, x| {
            let p = x.slice(0, &[3, 2])?.reshape(&[3, 2])?;
            let phi = x.slice(6, &[9])?.reshape(&[3, 3])?;
            Ok(weighted_sum_rate_var(t, &batch, p, phi)
                .map_err(|e| match e {
                    TransmitError::Autodiff(a) => a,
                    other => panic!("{other}"),
                })?
                .sum())
        },
        &x,
        1e-6,
        1e-6,
    )
    .unwrap();
    assert!(report.passed, "relative error {}", report.max_rel_error);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rate_grows_with_own_power(seed in 0u64..10_000, boost in 0.0f64..3.0) {
        let ch = random_set(Dims::new(3, 2, 2), seed);
        let phi = random_phases(2, seed ^ 1);
        let dirs = mmse_directions(&build_g(&ch, &phi).unwrap(), &ch.sigma2).unwrap();
        let base = [0.4, 0.7, 0.9];
        let mut bumped = base;
        bumped[1] += boost;
        let bf = |p: &[f64]| BeamformerSet { w: dirs.iter().zip(p).map(|(d, &pk)| d.scale(c(pk.sqrt(), 0.0))).collect() };
        let before = rate(&ch, 1, &bf(&base), &phi).unwrap();
        let after = rate(&ch, 1, &bf(&bumped), &phi).unwrap();
        prop_assert!(after >= before);
        prop_assert!(before >= 0.0);
    }

    #[test]
    fn common_beamformer_rotation_keeps_rates(seed in 0u64..10_000, theta in 0.0f64..TAU) {
        let ch = random_set(Dims::new(3, 3, 2), seed);
        let phi = random_phases(3, seed ^ 2);
        let p = random_powers(3, ch.p_max, seed ^ 3);
        let dirs = mmse_directions(&build_g(&ch, &phi).unwrap(), &ch.sigma2).unwrap();
        let bf = recover_beamformers(&p, &dirs).unwrap();
        let rot = BeamformerSet { w: bf.w.iter().map(|w| w.scale(C64::from_polar(1.0, theta))).collect() };
        for k in 0..3 {
            let a = rate(&ch, k, &bf, &phi).unwrap();
            let b = rate(&ch, k, &rot, &phi).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn recovered_beamformers_spend_budget(seed in 0u64..10_000) {
        let ch = random_set(Dims::new(4, 3, 3), seed);
        let phi = random_phases(3, seed ^ 4);
        let p = random_powers(4, ch.p_max, seed ^ 5);
        let dirs = mmse_directions(&build_g(&ch, &phi).unwrap(), &ch.sigma2).unwrap();
        for d in &dirs {
            prop_assert!((d.l2norm() - 1.0).abs() < 1e-12);
        }
        let bf = recover_beamformers(&p, &dirs).unwrap();
        prop_assert!((bf.total_power() - ch.p_max).abs() < 1e-12);
    }

    #[test]
    fn phase_wrap_keeps_objective(seed in 0u64..10_000) {
        let ch = random_set(Dims::new(2, 4, 2), seed);
        let phi = random_phases(4, seed ^ 6);
        let p = random_powers(2, ch.p_max, seed ^ 7);
        let shifted: Vec<f64> = phi.as_slice().iter().map(|v| v + TAU).collect();
        let a = weighted_sum_rate(&ch, &p, &phi).unwrap();
        let b = weighted_sum_rate(&ch, &p, &PhaseVector::wrapped(&shifted)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);

        let batch = ChannelBatch::new(&[&ch]).unwrap();
        let tape = Tape::new();
        let pv = tape.constant(Tensor::new(vec![1, 2], p.as_slice().to_vec()).unwrap());
        let raw = tape.constant(Tensor::new(vec![1, 4], shifted).unwrap());
        let taped = weighted_sum_rate_var(&tape, &batch, pv, raw).unwrap().item();
        prop_assert!((a - taped).abs() < 1e-12);
    }
}
