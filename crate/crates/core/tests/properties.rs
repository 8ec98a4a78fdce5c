use iscit::data::{mix, NoiseSpec};
use iscit::frontend::{self, FeatureMap, FrontendConfig, Waveform};
use iscit::nn::{Graph, ModelParams};
use iscit::objectives::{l_spk_embeddings, pit_si_snr, si_snr};
use iscit::separator::layers::{init_se_block, se_gate, ParamInit};
use iscit::separator::{mbfa, mbfa_closed_form};
use iscit::train::optim::{lr_after, lr_schedule};
use iscit::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn random_vec(rng: &mut Xoshiro256PlusPlus, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn feature_map(data: Tensor) -> FeatureMap {
    FeatureMap { data, frame_stride_samples: 8, kernel_samples: 16 }
}

fn unit(rng: &mut Xoshiro256PlusPlus, d: usize) -> Vec<f64> {
    let v = random_vec(rng, d);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Every ordering of `0..n`, by recursive insertion.
fn all_orders(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_orders(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn segment_then_overlap_add_is_identity(t in 1usize..120, half in 1usize..40, n in 1usize..4, seed: u64) {
        let k = 2 * half.min(t);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let f = feature_map(Tensor::new(vec![n, t], random_vec(&mut rng, n * t)).unwrap());
        let chunks = frontend::segment(&f, k).unwrap();
        prop_assert_eq!(chunks.data.shape()[1], k);
        let back = frontend::overlap_add(&chunks, 8, 16).unwrap();
        prop_assert_eq!(back.data.shape(), f.data.shape());
        for (a, b) in back.data.data().iter().zip(f.data.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn segment_and_overlap_add_are_linear(t in 2usize..60, half in 1usize..10, a in -3.0f64..3.0, b in -3.0f64..3.0, seed: u64) {
        let k = 2 * half;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let x = Tensor::new(vec![2, t], random_vec(&mut rng, 2 * t)).unwrap();
        let y = Tensor::new(vec![2, t], random_vec(&mut rng, 2 * t)).unwrap();
        let combo: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let sx = frontend::segment(&feature_map(x), k).unwrap();
        let sy = frontend::segment(&feature_map(y), k).unwrap();
        let sc = frontend::segment(&feature_map(Tensor::new(vec![2, t], combo).unwrap()), k).unwrap();
        for ((c, p), q) in sc.data.data().iter().zip(sx.data.data()).zip(sy.data.data()) {
            prop_assert!((c - (a * p + b * q)).abs() <= 1e-12);
        }
        let mut scaled = sx.clone();
        scaled.data.data_mut().iter_mut().for_each(|v| *v *= a);
        let ox = frontend::overlap_add(&sx, 8, 16).unwrap();
        let os = frontend::overlap_add(&scaled, 8, 16).unwrap();
        for (s, o) in os.data.data().iter().zip(ox.data.data()) {
            prop_assert!((s - a * o).abs() <= 1e-12);
        }
    }

    #[test]
    fn encoder_frame_count(len in 16usize..600) {
        let cfg = FrontendConfig { channels: 4, kernel: 16, stride: 8 };
        let mut p = ModelParams::new();
        frontend::init_params(&cfg, &mut p, &mut Xoshiro256PlusPlus::seed_from_u64(0)).unwrap();
        let f = frontend::encode(&Waveform::zeros(len, 8000), &p, &cfg).unwrap();
        prop_assert_eq!(f.data.shape(), &[4, (len - 16) / 8 + 1]);
    }

    #[test]
    fn se_gate_ignores_time_upsampling(l in 1usize..12, seed: u64) {
        let d = 8;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut p = ModelParams::new();
        init_se_block(&mut ParamInit { params: &mut p, rng: &mut rng }, "se", d, 4).unwrap();
        // Multiples of 1/8 keep every partial sum exact, so equality is bitwise.
        let v: Vec<f64> = (0..l * d).map(|_| rng.gen_range(-16i32..16) as f64 / 8.0).collect();
        let mut doubled = Vec::with_capacity(2 * l * d);
        for row in v.chunks(d) {
            doubled.extend_from_slice(row);
            doubled.extend_from_slice(row);
        }
        let gate = |data: Vec<f64>, len: usize| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![len, d], data).unwrap());
            let s = se_gate(&mut g, &p, "se", x).unwrap();
            g.value(s).data().to_vec()
        };
        let once = gate(v, l);
        prop_assert_eq!(&once, &gate(doubled, 2 * l));
        prop_assert!(once.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn mbfa_recurrence_matches_closed_form(p in 1usize..=8, bi in 0usize..5, seed: u64) {
        let beta = [0.1, 0.5, 0.6, 0.9, 1.0][bi];
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let ys: Vec<Tensor> = (0..p).map(|_| Tensor::new(vec![3, 4, 2], random_vec(&mut rng, 24)).unwrap()).collect();
        let r = mbfa(&ys, beta).unwrap();
        let c = mbfa_closed_form(&ys, beta).unwrap();
        for (a, b) in r.data().iter().zip(c.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn si_snr_is_scale_invariant(lambda in 1e-3f64..1e3, seed: u64) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let r = random_vec(&mut rng, 64);
        let e: Vec<f64> = r.iter().map(|x| x + 0.7 * rng.gen_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = e.iter().map(|x| lambda * x).collect();
        prop_assert!((si_snr(&scaled, &r).unwrap() - si_snr(&e, &r).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn l_spk_symmetric_under_joint_permutation(c in 2usize..=4, pick in 0usize..24, seed: u64) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let refs: Vec<Vec<f64>> = (0..c).map(|_| unit(&mut rng, 6)).collect();
        let ests: Vec<Vec<f64>> = (0..c).map(|_| unit(&mut rng, 6)).collect();
        let orders = all_orders(c);
        let order = &orders[pick % orders.len()];
        let pr: Vec<Vec<f64>> = order.iter().map(|&i| refs[i].clone()).collect();
        let pe: Vec<Vec<f64>> = order.iter().map(|&i| ests[i].clone()).collect();
        let a = l_spk_embeddings(&refs, &ests).unwrap();
        prop_assert!((a - l_spk_embeddings(&pr, &pe).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn l_spk_two_speaker_bounds(seed: u64) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let refs: Vec<Vec<f64>> = (0..2).map(|_| unit(&mut rng, 5)).collect();
        let ests: Vec<Vec<f64>> = (0..2).map(|_| unit(&mut rng, 5)).collect();
        let v = l_spk_embeddings(&refs, &ests).unwrap();
        prop_assert!((-3.0 - 1e-12..=3.0 + 1e-12).contains(&v));
    }

    #[test]
    fn lr_never_increases_and_halves_only_on_plateaus(
        history in prop::collection::vec(0.0f64..10.0, 1..40),
        warmup in 0usize..10,
        plateau_bias in 0.0f64..1.0,
    ) {
        // Bias some histories towards long non-decreasing runs.
        let history: Vec<f64> = history
            .iter()
            .enumerate()
            .map(|(i, v)| if plateau_bias > 0.5 { i as f64 + v * 0.01 } else { *v })
            .collect();
        let mut prev = lr_after(1.0, 0, &[], warmup, 3);
        prop_assert_eq!(prev, 1.0);
        for e in 1..=history.len() {
            let h = &history[..e];
            let lr = lr_after(1.0, e, h, warmup, 3);
            prop_assert!(lr <= prev);
            if lr_schedule(e, h, warmup, 3) {
                prop_assert!(e > warmup);
                prop_assert!(e >= 4);
                prop_assert!((e - 3..e).all(|i| h[i] >= h[i - 1]));
                prop_assert_eq!(lr, prev / 2.0);
            } else {
                prop_assert_eq!(lr, prev);
            }
            prev = lr;
        }
    }

    #[test]
    fn mixing_is_linear_in_the_sources(lambda in 0.05f64..1.0, g0 in -5.0f64..5.0, g1 in -5.0f64..5.0, seed: u64) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let sources: Vec<Waveform> = (0..2).map(|_| Waveform::new(random_vec(&mut rng, 50).iter().map(|x| 0.2 * x).collect(), 8000)).collect();
        let scaled: Vec<Waveform> = sources.iter().map(|w| Waveform::new(w.samples.iter().map(|x| lambda * x).collect(), 8000)).collect();
        let gains = [g0, g1];
        let a = mix(&sources, &gains, &NoiseSpec::none(), &mut rng).unwrap();
        let b = mix(&scaled, &gains, &NoiseSpec::none(), &mut rng).unwrap();
        for (x, y) in a.mixture.samples.iter().zip(&b.mixture.samples) {
            prop_assert!((lambda * x - y).abs() <= 1e-12);
        }
    }
}

fn brute_force_mean(ests: &[Vec<f64>], refs: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let mut best = (f64::NEG_INFINITY, vec![]);
    for order in all_orders(refs.len()) {
        let m = order.iter().enumerate().map(|(e, &r)| si_snr(&ests[e], &refs[r]).unwrap()).sum::<f64>() / refs.len() as f64;
        if m > best.0 {
            best = (m, order);
        }
    }
    best
}

#[test]
fn pit_matches_exhaustive_search() {
    for c in 2..=4 {
        for trial in 0..50u64 {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(100 * c as u64 + trial);
            let refs: Vec<Vec<f64>> = (0..c).map(|_| random_vec(&mut rng, 40)).collect();
            let ests: Vec<Vec<f64>> = (0..c)
                .map(|i| {
                    let src = &refs[(i + trial as usize) % c];
                    src.iter().map(|x| x + rng.gen_range(-0.8..0.8)).collect()
                })
                .collect();
            let (want, order) = brute_force_mean(&ests, &refs);
            let got = pit_si_snr(&ests, &refs).unwrap();
            assert!((got.mean_si_snr - want).abs() < 1e-12, "C={c} trial {trial}");
            assert_eq!(got.permutation, order, "C={c} trial {trial}");
            let mean = got.per_pair_si_snr.iter().sum::<f64>() / c as f64;
            assert!((mean - got.mean_si_snr).abs() < 1e-12);
        }
    }
}
