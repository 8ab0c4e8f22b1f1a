//! Cell equations checked against straight-line scalar recursions.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlstm_core::cells::*;
use vlstm_core::ndcore::{Eager, Tensor};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row(v: &[f64]) -> Tensor {
    Tensor::matrix(1, v.len(), v.to_vec()).unwrap()
}

/// `σ`-free pre-activation `W x + U h + b` for one row.
fn pre(g: &GateBlock, x: &[f64], h: &[f64]) -> Vec<f64> {
    let (nh, nx) = g.w.dims2().unwrap();
    (0..nh)
        .map(|r| {
            let mut s = 0.0;
            for k in 0..nx {
                s += g.w.at2(r, k) * x[k];
            }
            for k in 0..nh {
                s += g.u.at2(r, k) * h[k];
            }
            s + g.b.as_ref().map_or(0.0, |b| b.data()[r])
        })
        .collect()
}

fn randomize_biases(p: &mut CellParams, rng: &mut impl Rng) {
    p.visit_mut("cell", &mut |name, t| {
        if name.ends_with(".b") || name.ends_with(".mix") {
            for v in t.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
    });
}

fn inputs(rng: &mut impl Rng, steps: usize, nx: usize) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|_| (0..nx).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect()
}

fn lstm_ref(p: &LstmParams, xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let nh = p.hidden;
    let (mut h, mut c) = (vec![0.0; nh], vec![0.0; nh]);
    for x in xs {
        let f: Vec<f64> = pre(&p.forget, x, &h).into_iter().map(sig).collect();
        let i: Vec<f64> = pre(&p.input, x, &h).into_iter().map(sig).collect();
        let o: Vec<f64> = pre(&p.output, x, &h).into_iter().map(sig).collect();
        let g: Vec<f64> = pre(&p.candidate, x, &h).into_iter().map(f64::tanh).collect();
        for j in 0..nh {
            c[j] = f[j] * c[j] + i[j] * g[j];
        }
        h = (0..nh).map(|j| o[j] * c[j].tanh()).collect();
    }
    (h, c)
}

fn vlstm_ref(p: &VlstmParams, xs: &[Vec<f64>]) -> Vec<f64> {
    let nh = p.hidden;
    let n = p.forget.len();
    let mut h = vec![0.0; nh];
    let mut cs = vec![vec![0.0; nh]; n];
    for x in xs {
        let g: Vec<f64> = pre(&p.candidate, x, &h).into_iter().map(f64::tanh).collect();
        let o: Vec<f64> = pre(&p.output, x, &h).into_iter().map(sig).collect();
        for k in 0..n {
            let f: Vec<f64> = pre(&p.forget[k], x, &h).into_iter().map(sig).collect();
            let i: Vec<f64> = match p.coupling {
                GateCoupling::Tied => f.iter().map(|v| 1.0 - v).collect(),
                GateCoupling::Independent => pre(&p.input[k], x, &h).into_iter().map(sig).collect(),
            };
            for j in 0..nh {
                cs[k][j] = f[j] * cs[k][j] + i[j] * g[j];
            }
        }
        let mixed: Vec<f64> = (0..nh)
            .map(|j| match n {
                1 => cs[0][j],
                2 => {
                    let a = sig(p.mix.as_ref().unwrap().data()[j]);
                    a * cs[0][j] + (1.0 - a) * cs[1][j]
                }
                _ => {
                    let m = p.mix.as_ref().unwrap();
                    let z: Vec<f64> = (0..n).map(|k| m.at2(k, j).exp()).collect();
                    let tot: f64 = z.iter().sum();
                    (0..n).map(|k| z[k] / tot * cs[k][j]).sum()
                }
            })
            .collect();
        h = (0..nh).map(|j| o[j] * mixed[j].tanh()).collect();
    }
    h
}

fn msgru_ref(p: &MsGruParams, xs: &[Vec<f64>]) -> Vec<f64> {
    let nh = p.hidden;
    let n = p.update.len();
    let weights = |j: usize| -> Vec<f64> {
        match &p.mix {
            None => vec![1.0],
            Some(m) => {
                let z: Vec<f64> = (0..n).map(|k| m.at2(k, j).exp()).collect();
                let tot: f64 = z.iter().sum();
                z.iter().map(|v| v / tot).collect()
            }
        }
    };
    let mix = |cs: &[Vec<f64>]| -> Vec<f64> {
        (0..nh)
            .map(|j| {
                let w = weights(j);
                (0..n).map(|k| w[k] * cs[k][j]).sum()
            })
            .collect()
    };
    let mut cs = vec![vec![0.0; nh]; n];
    let mut mixed = vec![0.0; nh];
    for x in xs {
        let r: Vec<f64> = pre(&p.reset, x, &mixed).into_iter().map(sig).collect();
        let gated: Vec<f64> = (0..nh).map(|j| r[j] * mixed[j]).collect();
        let g: Vec<f64> = pre(&p.candidate, x, &gated).into_iter().map(f64::tanh).collect();
        for k in 0..n {
            let lam: Vec<f64> = pre(&p.update[k], x, &cs[k]).into_iter().map(sig).collect();
            for j in 0..nh {
                cs[k][j] = (1.0 - lam[j]) * cs[k][j] + lam[j] * g[j];
            }
        }
        mixed = mix(&cs);
    }
    mixed
}

/// Textbook GRU: `h ← (1 − z) h + z tanh(W x + U (r ⊙ h) + b)`.
fn gru_ref(cand: &GateBlock, reset: &GateBlock, update: &GateBlock, xs: &[Vec<f64>]) -> Vec<f64> {
    let nh = cand.u.dims2().unwrap().0;
    let mut h = vec![0.0; nh];
    for x in xs {
        let r: Vec<f64> = pre(reset, x, &h).into_iter().map(sig).collect();
        let z: Vec<f64> = pre(update, x, &h).into_iter().map(sig).collect();
        let rh: Vec<f64> = (0..nh).map(|j| r[j] * h[j]).collect();
        let g: Vec<f64> = pre(cand, x, &rh).into_iter().map(f64::tanh).collect();
        h = (0..nh).map(|j| (1.0 - z[j]) * h[j] + z[j] * g[j]).collect();
    }
    h
}

fn run_h(p: &CellParams, xs: &[Vec<f64>]) -> Vec<f64> {
    let steps: Vec<Tensor> = xs.iter().map(|x| row(x)).collect();
    p.run(&steps).unwrap().h.into_data()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn lstm_three_steps_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..10 {
        let mut p = init_params(&CellConfig::lstm(2, 3, BiasMode::On), trial).unwrap();
        randomize_biases(&mut p, &mut rng);
        let xs = inputs(&mut rng, 3, 2);
        let CellParams::Lstm(lp) = &p else { unreachable!() };
        let (h_ref, c_ref) = lstm_ref(lp, &xs);
        let steps: Vec<Tensor> = xs.iter().map(|x| row(x)).collect();
        let st = p.run(&steps).unwrap();
        assert_close(st.h.data(), &h_ref, 1e-12);
        assert_close(st.scales[0].data(), &c_ref, 1e-12);
    }
}

#[test]
fn vlstm_matches_reference_for_each_mixing_and_coupling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for scales in [1, 2, 3] {
        for coupling in [GateCoupling::Independent, GateCoupling::Tied] {
            for bias in [BiasMode::On, BiasMode::Off] {
                let cfg = CellConfig::vlstm(2, 3, scales, bias, coupling);
                let mut p = init_params(&cfg, rng.gen()).unwrap();
                randomize_biases(&mut p, &mut rng);
                let xs = inputs(&mut rng, 6, 2);
                let CellParams::Vlstm(vp) = &p else { unreachable!() };
                assert_close(&run_h(&p, &xs), &vlstm_ref(vp, &xs), 1e-12);
            }
        }
    }
}

#[test]
fn msgru_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for scales in [1, 2, 3] {
        for bias in [BiasMode::On, BiasMode::Off] {
            let mut p = init_params(&CellConfig::msgru(2, 3, scales, bias), rng.gen()).unwrap();
            randomize_biases(&mut p, &mut rng);
            let xs = inputs(&mut rng, 6, 2);
            let CellParams::MsGru(mp) = &p else { unreachable!() };
            assert_close(&run_h(&p, &xs), &msgru_ref(mp, &xs), 1e-12);
        }
    }
}

#[test]
fn one_scale_msgru_is_a_gru() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = init_params(&CellConfig::msgru(1, 4, 1, BiasMode::On), 11).unwrap();
    randomize_biases(&mut p, &mut rng);
    let xs = inputs(&mut rng, 8, 1);
    let CellParams::MsGru(mp) = &p else { unreachable!() };
    let gru = gru_ref(&mp.candidate, &mp.reset, &mp.update[0], &xs);
    assert_close(&run_h(&p, &xs), &gru, 1e-12);
}

#[test]
fn one_scale_vlstm_is_bit_identical_to_lstm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for draw in 0..100u64 {
        let nh = 1 + (draw % 4) as usize;
        let nx = 1 + (draw % 2) as usize;
        let bias = if draw % 3 == 0 { BiasMode::Off } else { BiasMode::On };
        let lstm = init_params(&CellConfig::lstm(nx, nh, bias), draw).unwrap();
        let vlstm = init_params(
            &CellConfig::vlstm(nx, nh, 1, bias, GateCoupling::Independent),
            draw,
        )
        .unwrap();
        let xs = inputs(&mut rng, 1 + (draw % 7) as usize, nx);
        let a = run_h(&lstm, &xs);
        let b = run_h(&vlstm, &xs);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "draw {draw}");
        assert_eq!(lstm.param_count(), vlstm.param_count());
    }
}

fn vlstm2(seed: u64, coupling: GateCoupling) -> VlstmParams {
    let cfg = CellConfig::vlstm(1, 3, 2, BiasMode::On, coupling);
    match init_params(&cfg, seed).unwrap() {
        CellParams::Vlstm(p) => p,
        _ => unreachable!(),
    }
}

#[test]
fn saturated_mixing_reads_only_the_first_scale() {
    let mut p = vlstm2(6, GateCoupling::Independent);
    p.mix = Some(Tensor::filled(&[3], 1e3));
    let x = row(&[0.4]);
    let h0 = row(&[0.1, -0.2, 0.3]);
    let c1 = row(&[0.5, -0.5, 0.2]);
    let (h_a, scales, mixed) =
        vlstm_step(&mut Eager, &p, &x, &h0, &[c1.clone(), row(&[0.0, 0.0, 0.0])]).unwrap();
    let (h_b, _, _) = vlstm_step(&mut Eager, &p, &x, &h0, &[c1, row(&[9.0, -9.0, 3.0])]).unwrap();
    assert_eq!(h_a, h_b);
    assert_eq!(mixed, scales[0]);
}

#[test]
fn identical_scales_make_mixing_irrelevant() {
    let mut p = vlstm2(7, GateCoupling::Independent);
    p.forget[1] = p.forget[0].clone();
    p.input[1] = p.input[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        p.mix = Some(Tensor::vector((0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()));
        let mut h = row(&[0.0; 3]);
        let mut cs = vec![row(&[0.0; 3]), row(&[0.0; 3])];
        for x in inputs(&mut rng, 5, 1) {
            let (h2, c2, mixed) = vlstm_step(&mut Eager, &p, &row(&x), &h, &cs).unwrap();
            assert_eq!(c2[0], c2[1]);
            assert_close(mixed.data(), c2[0].data(), 1e-15);
            h = h2;
            cs = c2;
        }
    }
}

#[test]
fn tied_gates_sum_to_one() {
    let p = vlstm2(8, GateCoupling::Tied);
    assert!(p.input.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for x in inputs(&mut rng, 20, 1) {
        let h = row(&[rng.gen_range(-1.0..1.0), 0.3, -0.7]);
        for k in 0..2 {
            let (f, i) = vlstm_gates(&mut Eager, &p, k, &row(&x), &h).unwrap();
            for (fv, iv) in f.data().iter().zip(i.data()) {
                assert_eq!(*iv, 1.0 - fv);
                assert!((fv + iv - 1.0).abs() <= f64::EPSILON);
            }
        }
    }
}

#[test]
fn two_scale_swap_with_negated_logits_is_invariant() {
    let p = {
        let mut p = vlstm2(9, GateCoupling::Independent);
        p.mix = Some(Tensor::vector(vec![0.7, -1.2, 2.0]));
        p
    };
    let mut q = p.clone();
    q.forget.swap(0, 1);
    q.input.swap(0, 1);
    q.mix = Some(p.mix.as_ref().unwrap().map(|a| -a));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs = inputs(&mut rng, 10, 1);
    let a = run_h(&CellParams::Vlstm(p), &xs);
    let b = run_h(&CellParams::Vlstm(q), &xs);
    assert_close(&a, &b, 1e-12);
}

#[test]
fn softmax_scale_permutation_is_invariant() {
    let cfg = CellConfig::vlstm(1, 2, 3, BiasMode::On, GateCoupling::Independent);
    let CellParams::Vlstm(mut p) = init_params(&cfg, 10).unwrap() else { unreachable!() };
    p.mix = Some(Tensor::matrix(3, 2, vec![0.1, -0.4, 1.3, 0.2, -0.8, 0.9]).unwrap());
    let perm = [2, 0, 1];
    let mut q = p.clone();
    q.forget = perm.iter().map(|&k| p.forget[k].clone()).collect();
    q.input = perm.iter().map(|&k| p.input[k].clone()).collect();
    let m = p.mix.as_ref().unwrap();
    let data = perm.iter().flat_map(|&k| (0..2).map(move |j| m.at2(k, j))).collect();
    q.mix = Some(Tensor::matrix(3, 2, data).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let xs = inputs(&mut rng, 10, 1);
    assert_close(
        &run_h(&CellParams::Vlstm(p), &xs),
        &run_h(&CellParams::Vlstm(q), &xs),
        1e-12,
    );
}

#[test]
fn zero_update_rates_freeze_gru_states() {
    let cfg = CellConfig::msgru(1, 2, 2, BiasMode::On);
    let CellParams::MsGru(mut p) = init_params(&cfg, 12).unwrap() else { unreachable!() };
    for u in &mut p.update {
        u.w = Tensor::zeros(&[2, 1]);
        u.u = Tensor::zeros(&[2, 2]);
        u.b = Some(Tensor::filled(&[2], -1e4));
    }
    let cs = vec![row(&[0.3, -0.1]), row(&[-0.6, 0.9])];
    let (next, _) = msgru_step(&mut Eager, &p, &row(&[1.5]), &cs).unwrap();
    assert_eq!(next, cs);
}

#[test]
fn independent_gates_can_exceed_one_plus_initial_state() {
    let mut p = init_params(&CellConfig::lstm(1, 1, BiasMode::On), 0).unwrap();
    p.visit_mut("cell", &mut |name, t| {
        let v = match name {
            "cell.forget.b" | "cell.input.b" | "cell.cand.b" => 30.0,
            _ => 0.0,
        };
        for x in t.data_mut() {
            *x = v;
        }
    });
    let st = p.run(&[row(&[0.0]), row(&[0.0]), row(&[0.0])]).unwrap();
    assert!(st.scales[0].data()[0] > 2.9);
}

#[test]
fn wrong_number_of_scale_states_is_rejected() {
    let p = vlstm2(13, GateCoupling::Independent);
    let z = row(&[0.0; 3]);
    assert!(vlstm_step(&mut Eager, &p, &row(&[0.0]), &z, &[z.clone()]).is_err());
}

fn arb_cell() -> impl Strategy<Value = (CellConfig, u64)> {
    let cfg = (0usize..4, 1usize..4, 1usize..4, any::<bool>(), any::<bool>()).prop_map(
        |(kind, nh, n, bias, tied)| {
            let bias = if bias { BiasMode::On } else { BiasMode::Off };
            let coupling = if tied { GateCoupling::Tied } else { GateCoupling::Independent };
            match kind {
                0 => CellConfig::lstm(1, nh, bias),
                1 | 2 => CellConfig::vlstm(1, nh, n, bias, coupling),
                _ => CellConfig::msgru(1, nh, n, bias),
            }
        },
    );
    (cfg, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Convex updates (tied gates, GRU-style EMAs) keep every state within
    /// `max(|c_0|, 1)`; independent gates can add up to 1 per step.
    #[test]
    fn states_stay_bounded_and_gates_open(
        (cfg, seed) in arb_cell(),
        xs in prop::collection::vec(-3.0f64..3.0, 1..40),
        c0 in -2.0f64..2.0,
    ) {
        let p = init_params(&cfg, seed).unwrap();
        let nh = cfg.hidden;
        let mut st = CellState { h: row(&vec![0.0; nh]), scales: vec![row(&vec![c0; nh]); cfg.scales] };
        let convex = cfg.arch == Architecture::MsGru || cfg.coupling == GateCoupling::Tied;
        for (t, x) in xs.iter().enumerate() {
            let x = row(&[*x]);
            if let CellParams::Vlstm(vp) = &p {
                for k in 0..cfg.scales {
                    let (f, i) = vlstm_gates(&mut Eager, vp, k, &x, &st.h).unwrap();
                    prop_assert!(f.data().iter().chain(i.data()).all(|&g| g > 0.0 && g < 1.0));
                }
            }
            st = p.step(&mut Eager, &x, &st).unwrap();
            let bound = if convex { c0.abs().max(1.0) } else { c0.abs() + (t + 1) as f64 };
            for s in &st.scales {
                prop_assert!(s.data().iter().all(|c| c.abs() <= bound + 1e-12));
            }
        }
    }

    #[test]
    fn mixed_state_is_a_convex_combination(
        seed in any::<u64>(),
        n in 2usize..5,
        logits in prop::collection::vec(-4.0f64..4.0, 8),
        xs in prop::collection::vec(-2.0f64..2.0, 1..10),
    ) {
        let cfg = CellConfig::vlstm(1, 2, n, BiasMode::On, GateCoupling::Independent);
        let CellParams::Vlstm(mut p) = init_params(&cfg, seed).unwrap() else { unreachable!() };
        p.mix = Some(if n == 2 {
            Tensor::vector(logits[..2].to_vec())
        } else {
            Tensor::matrix(n, 2, logits.iter().cycle().take(2 * n).copied().collect()).unwrap()
        });
        let mut h = row(&[0.0, 0.0]);
        let mut cs = vec![row(&[0.0, 0.0]); n];
        for x in &xs {
            let (h2, c2, mixed) = vlstm_step(&mut Eager, &p, &row(&[*x]), &h, &cs).unwrap();
            for j in 0..2 {
                let lo = c2.iter().map(|c| c.data()[j]).fold(f64::INFINITY, f64::min);
                let hi = c2.iter().map(|c| c.data()[j]).fold(f64::NEG_INFINITY, f64::max);
                let m = mixed.data()[j];
                prop_assert!(m >= lo - 1e-15 && m <= hi + 1e-15);
            }
            h = h2;
            cs = c2;
        }
    }
}
