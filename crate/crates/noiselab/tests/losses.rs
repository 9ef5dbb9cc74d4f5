use noiselab::losses::{
    composite_objective, logit_grad, loss_grad, loss_grad_unchecked, loss_value, loss_value_unchecked, softmax,
    symmetry_sum,
};
use noiselab::{ElrState, LossKind, LossSpec};
use proptest::prelude::*;

fn spec(kind: LossKind) -> LossSpec {
    kind.into()
}

fn normalized(inner: LossKind) -> LossKind {
    LossKind::Normalized { inner: Box::new(inner) }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

/// GJS as the π-weighted sum of KL divergences to the mixture.
fn gjs_oracle(pi: &[f64], y: usize, p: &[f64]) -> f64 {
    let k = p.len();
    let mut onehot = vec![0.0; k];
    onehot[y] = 1.0;
    let m: Vec<f64> = (0..k).map(|j| pi[0] * onehot[j] + (1.0 - pi[0]) * p[j]).collect();
    let mut total = pi[0] * kl(&onehot, &m);
    for w in &pi[1..] {
        total += w * kl(p, &m);
    }
    total / (-(1.0 - pi[0]) * (1.0 - pi[0]).ln())
}

const P: [f64; 3] = [0.2, 0.5, 0.3];

#[test]
fn hand_values() {
    let v = |k: LossKind| loss_value(&spec(k), &P, 1).unwrap();
    assert!((v(LossKind::Ce) - 2f64.ln()).abs() < 1e-15);
    assert!((v(LossKind::Mae) - 1.0).abs() < 1e-15);
    assert!((v(LossKind::Gce { q: 0.7 }) - (1.0 - 0.5f64.powf(0.7)) / 0.7).abs() < 1e-15);
    assert!((v(LossKind::Rce { a: -4.0 }) - 2.0).abs() < 1e-15);
    assert!((v(LossKind::Sl { alpha: 0.1, beta: 1.0 }) - (0.1 * 2f64.ln() + 2.0)).abs() < 1e-15);
    let nce = 2f64.ln() / (-(0.2f64.ln()) - 0.5f64.ln() - 0.3f64.ln());
    assert!((v(normalized(LossKind::Ce)) - nce).abs() < 1e-15);
    assert!((v(LossKind::Sr) + (0.04 + 0.25 + 0.09)).abs() < 1e-15);
}

#[test]
fn gjs_matches_kl_form() {
    for pi in [vec![1.0 / 3.0; 3], vec![0.5, 0.5], vec![0.2, 0.5, 0.3]] {
        let kind = LossKind::Gjs { pi: pi.clone(), perturb_sigma: 0.0 };
        for y in 0..3 {
            let got = loss_value(&spec(kind.clone()), &P, y).unwrap();
            assert!((got - gjs_oracle(&pi, y, &P)).abs() < 1e-13, "{pi:?} {y}");
        }
    }
}

#[test]
fn gjs_vertices() {
    let kind = LossKind::gjs_default();
    assert!(loss_value(&spec(kind.clone()), &[0.0, 1.0, 0.0], 1).unwrap().abs() < 1e-12);
    // prediction on a wrong vertex: H(π₁, 1−π₁)/Z
    let h = -(1.0 / 3.0 * (1.0f64 / 3.0).ln() + 2.0 / 3.0 * (2.0f64 / 3.0).ln());
    let z = -(2.0 / 3.0) * (2.0f64 / 3.0).ln();
    let got = loss_value(&spec(kind), &[1.0, 0.0, 0.0], 1).unwrap();
    assert!((got - h / z).abs() < 1e-12);
}

#[test]
fn gce_limits() {
    for p in [[0.1, 0.9], [0.6, 0.4], [0.99, 0.01]] {
        let mae = loss_value(&spec(LossKind::Mae), &p, 0).unwrap();
        let gce1 = loss_value(&spec(LossKind::Gce { q: 1.0 }), &p, 0).unwrap();
        assert!((gce1 - mae / 2.0).abs() <= 1e-12);
        let ce = loss_value(&spec(LossKind::Ce), &p, 0).unwrap();
        let gce0 = loss_value(&spec(LossKind::Gce { q: 1e-7 }), &p, 0).unwrap();
        assert!((gce0 - ce).abs() < 1e-5 * ce.max(1.0), "{gce0} {ce}");
    }
}

#[test]
fn invalid_inputs_rejected() {
    assert!(loss_value(&spec(LossKind::Ce), &[0.5, 0.6], 0).is_err());
    assert!(loss_value(&spec(LossKind::Ce), &[0.5, 0.5], 2).is_err());
    assert!(loss_value(&spec(LossKind::Gce { q: 0.0 }), &P, 0).is_err());
    assert!(loss_value(&spec(LossKind::Rce { a: 1.0 }), &P, 0).is_err());
    assert!(loss_value(&spec(LossKind::Gjs { pi: vec![0.5, 0.6], perturb_sigma: 0.1 }), &P, 0).is_err());
    assert!(loss_value(&spec(normalized(LossKind::Sr)), &P, 0).is_err());
    let neg = LossSpec { kind: LossKind::Ce, lambda: -1.0 };
    assert!(loss_grad(&neg, &P, 0).is_err());
}

#[test]
fn ce_is_floored() {
    let v = loss_value(&spec(LossKind::Ce), &[1.0, 0.0], 1).unwrap();
    assert!((v - 1e7f64.ln()).abs() < 1e-12);
    assert_eq!(loss_grad(&spec(LossKind::Ce), &[1.0, 0.0], 1).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn elr_hand_example() {
    let mut st = ElrState::new(2, 2, 0.5).unwrap();
    st.update(1, &[0.8, 0.2]).unwrap();
    st.update(1, &[0.4, 0.6]).unwrap();
    // ȳ = 0.5(0.5·[0.8,0.2]) + 0.5[0.4,0.6] = [0.4, 0.35]
    let t = st.target(1).unwrap();
    assert!((t[0] - 0.4).abs() < 1e-15 && (t[1] - 0.35).abs() < 1e-15);
    assert_eq!(st.target(0).unwrap(), vec![0.0, 0.0]);
    let pen = st.penalty(1, &[0.5, 0.5]).unwrap();
    let arg = 1.0f64 - 0.375;
    assert!((pen.value - arg.ln()).abs() < 1e-15);
    assert!((pen.grad[0] + 0.4 / arg).abs() < 1e-15);
    assert!(!pen.clamped);
    assert!(st.update(2, &[0.5, 0.5]).is_err());
    assert!(ElrState::new(2, 2, 1.5).is_err());
}

#[test]
fn elr_clamps_at_agreement() {
    let mut st = ElrState::new(1, 2, 0.0).unwrap();
    st.update(0, &[1.0, 0.0]).unwrap();
    let pen = st.penalty(0, &[1.0, 0.0]).unwrap();
    assert!(pen.clamped);
    assert!(pen.value.is_finite() && pen.grad.iter().all(|g| g.is_finite()));
}

#[test]
fn composite_adds_penalty() {
    let mut st = ElrState::new(3, 3, 0.7).unwrap();
    st.update(2, &[0.1, 0.1, 0.8]).unwrap();
    let base = spec(LossKind::Gce { q: 0.7 });
    let obj = composite_objective(&base, Some((&st, 3.0))).unwrap();
    let pen = st.penalty(2, &P).unwrap();
    let want = loss_value(&base, &P, 0).unwrap() + 3.0 * pen.value;
    assert!((obj.value(2, &P, 0).unwrap() - want).abs() < 1e-14);
    let (g, clamped) = obj.grad(2, &P, 0).unwrap();
    let gb = loss_grad(&base, &P, 0).unwrap();
    for j in 0..3 {
        assert!((g[j] - gb[j] - 3.0 * pen.grad[j]).abs() < 1e-14);
    }
    assert!(!clamped);
    let plain = composite_objective(&base, None).unwrap();
    assert_eq!(plain.value(2, &P, 0).unwrap(), loss_value(&base, &P, 0).unwrap());
    assert!(composite_objective(&base, Some((&st, f64::NAN))).is_err());
}

fn all_kinds() -> Vec<LossKind> {
    vec![
        LossKind::Ce,
        LossKind::Mae,
        LossKind::Rce { a: -4.0 },
        LossKind::Gce { q: 0.7 },
        LossKind::Sl { alpha: 0.1, beta: 1.0 },
        LossKind::gjs_default(),
        normalized(LossKind::Ce),
        normalized(LossKind::Gce { q: 0.5 }),
        normalized(LossKind::Mae),
    ]
}

/// Strictly interior simplex points, every entry at least 0.02.
fn interior(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, k).prop_map(move |w| {
        let s: f64 = w.iter().sum::<f64>() + 1e-12;
        let free = 1.0 - 0.02 * k as f64;
        w.iter().map(|v| 0.02 + free * v / s).collect()
    })
}

fn fd(kind: &LossKind, p: &[f64], y: usize, j: usize) -> f64 {
    let h = 1e-6;
    let mut a = p.to_vec();
    let mut b = p.to_vec();
    a[j] += h;
    b[j] -= h;
    (loss_value_unchecked(kind, &a, y) - loss_value_unchecked(kind, &b, y)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn gradients_match_finite_differences(k in 2usize..6, seed in 0usize..1000, p in interior(5)) {
        let p: Vec<f64> = {
            let s: f64 = p[..k].iter().sum();
            p[..k].iter().map(|v| v / s).collect()
        };
        let y = seed % k;
        for kind in all_kinds() {
            let g = loss_grad_unchecked(&kind, &p, y);
            for j in 0..k {
                let f = fd(&kind, &p, y, j);
                prop_assert!((g[j] - f).abs() <= 1e-5 * f.abs().max(1.0), "{:?} j={} {} vs {}", kind, j, g[j], f);
            }
        }
    }

    #[test]
    fn logit_gradients_match_finite_differences(z in prop::collection::vec(-3.0..3.0f64, 4), y in 0usize..4) {
        for kind in all_kinds() {
            let g = logit_grad(&kind, &softmax(&z), y);
            for j in 0..4 {
                let h = 1e-6;
                let mut a = z.clone();
                let mut b = z.clone();
                a[j] += h;
                b[j] -= h;
                let f = (loss_value_unchecked(&kind, &softmax(&a), y) - loss_value_unchecked(&kind, &softmax(&b), y)) / (2.0 * h);
                prop_assert!((g[j] - f).abs() <= 1e-5 * f.abs().max(1.0), "{:?} j={}", kind, j);
            }
        }
    }

    #[test]
    fn symmetric_losses_have_constant_sum(p in interior(10), q in interior(10)) {
        for (kind, k) in [
            (LossKind::Mae, 2usize),
            (LossKind::Mae, 10),
            (LossKind::Rce { a: -4.0 }, 10),
            (normalized(LossKind::Ce), 10),
            (normalized(LossKind::Gce { q: 0.7 }), 2),
        ] {
            let norm = |v: &[f64]| { let s: f64 = v[..k].iter().sum(); v[..k].iter().map(|x| x / s).collect::<Vec<_>>() };
            let a = symmetry_sum(&spec(kind.clone()), &norm(&p)).unwrap();
            let b = symmetry_sum(&spec(kind.clone()), &norm(&q)).unwrap();
            prop_assert!((a - b).abs() < 1e-10, "{:?} K={} {} {}", kind, k, a, b);
        }
    }

    #[test]
    fn ce_is_not_symmetric(p in interior(3)) {
        prop_assume!((p[0] - 1.0 / 3.0).abs() > 0.05);
        let u = [1.0 / 3.0; 3];
        let a = symmetry_sum(&spec(LossKind::Ce), &p).unwrap();
        let b = symmetry_sum(&spec(LossKind::Ce), &u).unwrap();
        prop_assert!(a > b);
    }

    #[test]
    fn elr_gradient_matches_finite_differences(t in interior(4), p in interior(4)) {
        let mut st = ElrState::new(1, 4, 0.0).unwrap();
        st.update(0, &t).unwrap();
        let pen = st.penalty(0, &p).unwrap();
        for j in 0..4 {
            let h = 1e-6;
            let mut a = p.clone();
            let mut b = p.clone();
            a[j] += h;
            b[j] -= h;
            let f = (st.penalty(0, &a).unwrap().value - st.penalty(0, &b).unwrap().value) / (2.0 * h);
            prop_assert!((pen.grad[j] - f).abs() <= 1e-6 * f.abs().max(1.0));
        }
    }

    #[test]
    fn losses_nonnegative_on_simplex(p in interior(4), y in 0usize..4) {
        for kind in all_kinds() {
            prop_assert!(loss_value(&spec(kind.clone()), &p, y).unwrap() >= -1e-12);
        }
    }
}
