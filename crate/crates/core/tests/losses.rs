use proptest::prelude::*;
use ssvd_core::heads::Assignment;
use ssvd_core::losses::{
    focal_grad_logit, focal_loss, loss_gradients, smooth_l1, smooth_l1_grad, total_loss, LossConfig, LossTargets,
    StreamOutputs, PROB_CLAMP,
};
use ssvd_core::oracle::{gradient_check, random_loss_case};

proptest! {
    #[test]
    fn focal_is_nonnegative_and_monotone(p in 0.001f64..0.998, dp in 0.0005f64..0.001, alpha in 0.05f64..0.95, gamma in 0.0f64..4.0) {
        let q = p + dp;
        prop_assert!(focal_loss(p, true, alpha, gamma) >= 0.0 && focal_loss(p, false, alpha, gamma) >= 0.0);
        prop_assert!(focal_loss(q, true, alpha, gamma) < focal_loss(p, true, alpha, gamma));
        prop_assert!(focal_loss(q, false, alpha, gamma) > focal_loss(p, false, alpha, gamma));
    }

    #[test]
    fn focal_is_non_increasing_in_gamma(p in 0.001f64..0.999, g in 0.0f64..4.0, dg in 0.0f64..2.0) {
        prop_assert!(focal_loss(p, true, 0.25, g + dg) <= focal_loss(p, true, 0.25, g));
    }

    #[test]
    fn swapping_streams_keeps_the_total(seed in 0u64..10_000) {
        let (asg, targets, l1, d1) = random_loss_case(seed, 12, 3);
        let (_, _, l2, d2) = random_loss_case(seed + 1, 12, 3);
        let t = LossTargets { assignments: &asg, targets: &targets, classes: 3 };
        let (a, b) = (StreamOutputs { logits: &l1, deltas: &d1 }, StreamOutputs { logits: &l2, deltas: &d2 });
        let cfg = LossConfig::default();
        let x = total_loss(Some(a), Some(b), &t, &cfg).unwrap();
        let y = total_loss(Some(b), Some(a), &t, &cfg).unwrap();
        prop_assert!((x.total - y.total).abs() <= 1e-12 * x.total.abs().max(1.0));
        prop_assert_eq!((x.focal_motion, x.loc_motion), (y.focal_sampling, y.loc_sampling));
    }
}

#[test]
fn smooth_l1_is_c1_at_the_joint() {
    let z = [0.0; 4];
    let f = |x: f64| smooth_l1(&[x, 0.0, 0.0, 0.0], &z);
    for sign in [1.0, -1.0] {
        let h = 1e-7;
        let left = (f(sign) - f(sign - h)) / h;
        let right = (f(sign + h) - f(sign)) / h;
        assert!((left - sign).abs() < 1e-6 && (right - sign).abs() < 1e-6, "{left} {right}");
        assert_eq!(smooth_l1_grad(&[sign, 0.0, 0.0, 0.0], &z)[0], sign);
    }
    assert_eq!(smooth_l1(&[0.5, 0.0, 0.0, 0.0], &z), 0.125);
    assert_eq!(smooth_l1(&[3.0, 0.0, 0.0, 0.0], &z), 2.5);
}

#[test]
fn gradient_check_over_more_than_1000_coordinates() {
    let g = gradient_check(2024, 6, 48, 3);
    assert!(g.active >= 1000, "{g:?}");
    assert!(g.max_relative_error < 1e-4, "{g:?}");
}

#[test]
fn ignored_anchors_get_exactly_zero_gradient() {
    let (asg, targets, logits, deltas) = random_loss_case(9, 40, 3);
    let t = LossTargets { assignments: &asg, targets: &targets, classes: 3 };
    let g = loss_gradients(StreamOutputs { logits: &logits, deltas: &deltas }, &t, &LossConfig::default()).unwrap();
    let mut ignored = 0;
    for (j, a) in asg.iter().enumerate() {
        if *a == Assignment::Ignore {
            ignored += 1;
            assert!(g.logits[3 * j..3 * j + 3].iter().chain(&g.deltas[4 * j..4 * j + 4]).all(|&v| v == 0.0));
        }
        if *a == Assignment::Background {
            assert!(g.deltas[4 * j..4 * j + 4].iter().all(|&v| v == 0.0));
        }
    }
    assert!(ignored > 0);
}

#[test]
fn perfect_positive_has_a_flat_gradient() {
    let logit = ((1.0 - 1e-6) / 1e-6f64).ln();
    assert!(focal_grad_logit(logit, true, 0.25, 2.0).abs() < 1e-12);
    assert_eq!(focal_grad_logit(40.0, true, 0.25, 2.0), 0.0);
}

#[test]
fn perfect_foreground_leaves_only_background_terms() {
    let asg = [Assignment::Foreground { class: 1, gt: 0 }, Assignment::Background, Assignment::Background];
    let targets = [[0.1, -0.2, 0.3, 0.0], [0.0; 4], [0.0; 4]];
    let t = LossTargets { assignments: &asg, targets: &targets, classes: 2 };
    let big = ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln();
    let logits = [-big, big, 0.5, -1.0, -2.0, 0.0];
    let mut deltas = [0.0; 12];
    deltas[..4].copy_from_slice(&targets[0]);
    let b = total_loss(Some(StreamOutputs { logits: &logits, deltas: &deltas }), None, &t, &LossConfig::default()).unwrap();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let background: f64 = logits[2..].iter().map(|&l| focal_loss(sig(l), false, 0.25, 2.0)).sum();
    assert_eq!(b.loc_motion, 0.0);
    assert!((b.total - background).abs() < 1e-9, "{} vs {background}", b.total);
}
