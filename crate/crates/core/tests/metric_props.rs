use proptest::prelude::*;

use vlkit_core::grammar::{BoundingBox, Polygon};
use vlkit_core::mask::LabelMap;
use vlkit_core::metrics::{
    aux_rewards, box_iou, ciou, dapo_objective, filter_rollout_groups, kl_metric, miou, parse_count_answer,
    polygon_iou, task_reward, FilterConfig, Payload, RewardConfig, RolloutGroup, Script, Task,
};

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0u32..50, 0u32..50, 0u32..50, 0u32..50)
        .prop_map(|(a, b, c, d)| BoundingBox::new(a.min(b), c.min(d), a.max(b), c.max(d)).unwrap())
}

fn binary(h: usize, w: usize) -> impl Strategy<Value = LabelMap> {
    prop::collection::vec(0u32..2, h * w).prop_map(move |v| LabelMap::new(h, w, v).unwrap())
}

fn rollout() -> impl Strategy<Value = RolloutGroup> {
    prop::collection::vec((-1.0f64..1.0, prop::collection::vec((0.5f64..1.6, -2.0f64..2.0), 1..5)), 1..5)
        .prop_map(|samples| RolloutGroup {
            rewards: samples.iter().map(|s| s.0).collect(),
            ratios: samples.iter().map(|s| s.1.iter().map(|t| t.0).collect()).collect(),
            advantages: samples.iter().map(|s| s.1.iter().map(|t| t.1).collect()).collect(),
        })
}

proptest! {
    #[test]
    fn box_iou_symmetric_bounded(a in bbox(), b in bbox()) {
        let v = box_iou(&a, &b);
        prop_assert_eq!(v, box_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        if a.area() > 0.0 {
            prop_assert_eq!(box_iou(&a, &a), 1.0);
        }
    }

    #[test]
    fn rectangle_polygons_match_box_iou(a in bbox(), b in bbox()) {
        prop_assume!(a.area() > 0.0 && b.area() > 0.0);
        let poly = |r: &BoundingBox| Polygon { points: vec![(r.x1, r.y1), (r.x2, r.y1), (r.x2, r.y2), (r.x1, r.y2)] };
        let p = polygon_iou(&poly(&a), &poly(&b), (50, 50)).unwrap();
        prop_assert!((p - box_iou(&a, &b)).abs() < 1e-12);
        prop_assert_eq!(polygon_iou(&poly(&a), &poly(&a), (50, 50)).unwrap(), 1.0);
    }

    #[test]
    fn mask_metrics_symmetric_bounded(a in binary(6, 5), b in binary(6, 5)) {
        let ab = ciou(&[(a.clone(), b.clone())]).unwrap();
        prop_assert_eq!(ab, ciou(&[(b.clone(), a.clone())]).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        let m = miou(&a, &b, 2, None).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert_eq!(miou(&a, &a, 2, None).unwrap(), 1.0);
    }

    #[test]
    fn kl_zero_exactly_at_unit_ratios(ratios in prop::collection::vec(0.01f64..10.0, 1..20)) {
        let k = kl_metric(&ratios).unwrap();
        prop_assert!(k >= 0.0);
        prop_assert_eq!(k == 0.0, ratios.iter().all(|&r| r == 1.0));
        prop_assert_eq!(kl_metric(&vec![1.0; ratios.len()]).unwrap(), 0.0);
    }

    #[test]
    fn filter_preserves_order_and_is_idempotent(groups in prop::collection::vec(rollout(), 0..8), tau_v in 0.0f64..0.3) {
        let cfg = FilterConfig { tau_v, tau_k: 0.05, ..FilterConfig::default() };
        let once = filter_rollout_groups(&groups, &cfg).unwrap();
        prop_assert_eq!(filter_rollout_groups(&once, &cfg).unwrap(), once.clone());
        let mut it = groups.iter();
        for g in &once {
            prop_assert!(it.any(|h| h == g));
        }
    }

    #[test]
    fn objective_ignores_token_order(group in rollout(), shift in 0usize..7) {
        let base = dapo_objective(&group, &FilterConfig::default()).unwrap();
        let mut rotated = group.clone();
        for (r, a) in rotated.ratios.iter_mut().zip(rotated.advantages.iter_mut()) {
            let s = shift % r.len();
            r.rotate_left(s);
            a.rotate_left(s);
        }
        let moved = dapo_objective(&rotated, &FilterConfig::default()).unwrap();
        prop_assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn rewards_stay_in_unit_interval(p in 0u64..400, g in 0u64..400, a in bbox(), b in bbox()) {
        let cfg = RewardConfig::default();
        let r = task_reward(Task::Counting, &Payload::Count(p), &Payload::Count(g), &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        let r = task_reward(Task::Grounding, &Payload::Box(a), &Payload::Box(b), &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn count_answer_round_trip(n in 0u64..100_000) {
        prop_assert_eq!(parse_count_answer(&format!("I see them. The answer is {n}")), Some(n));
    }

    #[test]
    fn aux_rewards_bounded(s in "\\PC{0,60}") {
        let r = aux_rewards(&s, Script::Latin);
        prop_assert!((0.0..=1.0).contains(&r.repetition));
        prop_assert!((0.0..=1.0).contains(&r.language));
    }
}

#[test]
fn documented_reward_values() {
    let cfg = RewardConfig::default();
    let gt = Payload::Box(BoundingBox::new(0, 0, 10, 10).unwrap());
    let pred = Payload::Box(BoundingBox::new(0, 0, 6, 10).unwrap());
    assert_eq!(task_reward(Task::Grounding, &pred, &gt, &cfg).unwrap(), 1.0);
    assert_eq!(task_reward(Task::Counting, &Payload::Count(3), &Payload::Count(3), &cfg).unwrap(), 1.0);
    let r = task_reward(Task::Counting, &Payload::Count(90), &Payload::Count(100), &cfg).unwrap();
    assert!((r - 0.9).abs() < 1e-12);
    assert!(task_reward(Task::Detection, &pred, &gt, &cfg).is_err());
    assert!((kl_metric(&[2.0]).unwrap() - 0.306_852_819_440_054_7).abs() < 1e-15);
}
