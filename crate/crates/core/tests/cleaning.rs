use chmreg::cleaning::{keep_score, zero_buildings, EmbeddingPair, Polygon, ProbeModel};
use chmreg::Grid;
use proptest::prelude::*;

fn polygon() -> impl Strategy<Value = Polygon> {
    prop::collection::vec((-2.0f64..22.0, -2.0f64..22.0), 3..8).prop_map(|v| Polygon::new("p", v))
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn keep_score_strictly_inside(
        w in prop::collection::vec(-1e6f64..1e6, 3),
        b in -1e6f64..1e6,
        e in prop::collection::vec(-1e3f64..1e3, 6),
    ) {
        let m = ProbeModel { weights: w, bias: b, threshold: 0.5 };
        let pair = EmbeddingPair::new(e[..3].to_vec(), e[3..].to_vec()).unwrap();
        let s = keep_score(&m, &pair).unwrap();
        prop_assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn threshold_partitions(scores in prop::collection::vec(0.0f64..1.0, 0..50)) {
        let m = ProbeModel { weights: vec![], bias: 0.0, threshold: 0.5 };
        let keep = scores.iter().filter(|s| m.keeps(**s)).count();
        let drop = scores.iter().filter(|s| !m.keeps(**s)).count();
        prop_assert_eq!(keep + drop, scores.len());
    }

    #[test]
    fn zeroing_is_idempotent(polys in prop::collection::vec(polygon(), 0..4)) {
        let g = Grid::from_fn(20, 20, 1.0, |x, y| 1.0 + (x * y) as f64).unwrap();
        let once = zero_buildings(&g, &polys).unwrap();
        prop_assert_eq!(zero_buildings(&once, &polys).unwrap(), once.clone());
        for y in 0..20 {
            for x in 0..20 {
                let inside = polys.iter().any(|p| p.contains(x as f64 + 0.5, y as f64 + 0.5));
                let expect = if inside { 0.0 } else { g.get(x, y).unwrap() };
                prop_assert_eq!(once.get(x, y), Some(expect));
            }
        }
    }
}
