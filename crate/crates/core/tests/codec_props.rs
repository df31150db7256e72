use proptest::prelude::*;

use vlkit_core::depth::{dequantize, quantize, DepthMap, QuantSpec, Scheme, IGNORE_LABEL};
use vlkit_core::mask::{rle_decode, rle_encode, unwrap_mask, wrap_mask, LabelMap};

fn label_map() -> impl Strategy<Value = LabelMap> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u32..4, h * w).prop_map(move |v| LabelMap::new(h, w, v).unwrap())
    })
}

proptest! {
    #[test]
    fn rle_round_trip(map in label_map()) {
        let s = rle_encode(&map);
        prop_assert_eq!(rle_decode(&s, map.height(), map.width()).unwrap(), map.clone());
        let runs: Vec<&str> = s.split(',').collect();
        prop_assert!(runs.len() <= map.height() * map.width());
        let values: Vec<&str> = runs.iter().map(|r| r.split(':').next().unwrap()).collect();
        prop_assert!(values.windows(2).all(|w| w[0] != w[1]), "adjacent runs share a value in {}", s);
        let wrapped = wrap_mask(&s);
        prop_assert_eq!(unwrap_mask(&wrapped), Some(s.as_str()));
    }

    #[test]
    fn rle_is_injective(a in label_map(), b in label_map()) {
        if a.height() == b.height() && a.width() == b.width() && a != b {
            prop_assert_ne!(rle_encode(&a), rle_encode(&b));
        }
    }

    #[test]
    fn rle_text_form_round_trips(map in label_map()) {
        prop_assert_eq!(LabelMap::from_text(&map.to_text()).unwrap(), map);
    }

    #[test]
    fn linear_binning_is_monotone(a in 0.0f64..12.0, b in 0.0f64..12.0, bins in 1u32..1200) {
        let spec = QuantSpec::new(Scheme::Linear, 0.0, 10.0, bins).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if lo > 0.0 {
            prop_assert!(spec.quantize_value(lo) <= spec.quantize_value(hi));
        }
    }

    #[test]
    fn log_binning_is_monotone_with_bounded_error(a in 0.5f64..100.0, b in 0.5f64..100.0) {
        let spec = QuantSpec::open_world();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(spec.quantize_value(lo) <= spec.quantize_value(hi));
        let back = spec.dequantize_value(spec.quantize_value(a)).unwrap().unwrap();
        let half = 0.5 * (spec.d_max / spec.d_min).ln() / spec.bins as f64;
        prop_assert!((back / a).ln().abs() <= half + 1e-12);
    }

    #[test]
    fn ignore_is_absorbing(depths in prop::collection::vec(prop_oneof![Just(0.0), Just(f64::NAN), 0.1f64..9.0], 1..30)) {
        let spec = QuantSpec::nyuv2();
        let n = depths.len();
        let map = DepthMap::new(1, n, depths.clone()).unwrap();
        let labels = quantize(&map, &spec);
        let back = dequantize(&labels, &spec).unwrap();
        let again = quantize(&back, &spec);
        for i in 0..n {
            if labels.labels()[i] == IGNORE_LABEL {
                prop_assert_eq!(again.labels()[i], IGNORE_LABEL);
            } else {
                prop_assert_eq!(again.labels()[i], labels.labels()[i]);
            }
        }
    }
}

#[test]
fn documented_bins() {
    let lin = QuantSpec::nyuv2();
    assert_eq!(lin.quantize_value(5.0), 500);
    assert!((lin.dequantize_value(500).unwrap().unwrap() - 4.995).abs() < 1e-12);
    let log = QuantSpec::open_world();
    assert_eq!(log.quantize_value(0.5), 1);
    assert_eq!(log.quantize_value(100.0), 1000);
    // ln(20)/ln(200)*1000 = 565.4...
    assert_eq!(log.quantize_value(10.0), 566);
    assert_eq!(log.quantize_value(150.0), IGNORE_LABEL);
    assert_eq!(lin.quantize_value(15.0), 1000);
}

#[test]
fn depth_text_round_trip_keeps_spec() {
    let spec = QuantSpec::cityscapes();
    let map = DepthMap::new(2, 2, vec![1.5, 0.0, 79.0, 12.25]).unwrap();
    let (back, parsed) = DepthMap::from_text(&map.to_text(Some(&spec))).unwrap();
    assert_eq!(back, map);
    assert_eq!(parsed, Some(spec));
}
