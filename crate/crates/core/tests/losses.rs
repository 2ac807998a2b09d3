use chmreg::losses::{
    curriculum_weights, grad_loss, multiscale_grad_loss, silog, GradLossWeights, LossConfig,
    PoolingMode,
};
use chmreg::raster::{pool, Pool};
use chmreg::Grid;
use proptest::prelude::*;

fn positive_grid() -> impl Strategy<Value = Grid> {
    (4usize..14, 4usize..14).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.2f64..6.0, w * h).prop_map(move |v| Grid::new(w, h, 1.0, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn silog_is_scale_invariant(p in positive_grid(), a in 0.5f64..20.0) {
        let t = p.map(|v| 1.0 + 0.5 * v.sin().abs());
        let cfg = LossConfig::default();
        let base = silog(&p, &t, None, &cfg).unwrap();
        let scaled = silog(&p.map(|v| a * v), &t.map(|v| a * v), None, &cfg).unwrap();
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn grad_loss_scale_invariance(p in positive_grid(), hard in any::<bool>()) {
        let t = p.map(|v| 0.5 + v * v / 4.0);
        let cfg = LossConfig {
            pooling_mode: if hard { PoolingMode::Hard } else { PoolingMode::Soft },
            ..LossConfig::default()
        };
        let w = GradLossWeights::default();
        let base = grad_loss(&p, &t, None, &w, &cfg).unwrap();
        for a in [0.5, 2.0, 10.0] {
            for b in [0.5, 2.0, 10.0] {
                let v = grad_loss(&p.map(|x| a * x), &t.map(|x| b * x), None, &w, &cfg).unwrap();
                prop_assert!((v - base).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn curriculum_sums_to_one(iter in 0i64..=100_000) {
        let w = curriculum_weights(iter, 100_000).unwrap();
        prop_assert!((w.w_silog + w.w_charb - 1.0).abs() < 1e-15);
        prop_assert!((0.0..=0.075).contains(&w.w_grad));
        if iter > 0 {
            let prev = curriculum_weights(iter - 1, 100_000).unwrap();
            prop_assert!((w.w_charb - prev.w_charb).abs() <= 1.0 / 30_000.0 + 1e-15);
            prop_assert!((w.w_grad - prev.w_grad).abs() <= 0.075 / 45_000.0 + 1e-15);
        }
    }

    #[test]
    fn soft_pooling_approaches_hard(g in positive_grid()) {
        let mx = pool(&g, 3, Pool::Max).unwrap();
        let smx = pool(&g, 3, Pool::SoftMax(1e4)).unwrap();
        let mn = pool(&g, 5, Pool::Min).unwrap();
        let smn = pool(&g, 5, Pool::SoftMin(1e4)).unwrap();
        for i in 0..g.len() {
            prop_assert!((mx.values()[i] - smx.values()[i]).abs() < 1e-3);
            prop_assert!((mn.values()[i] - smn.values()[i]).abs() < 1e-3);
        }
    }
}

#[test]
fn multiscale_identical_inputs_vanish() {
    let g = Grid::from_fn(32, 32, 1.0, |x, y| 2.0 + (0.3 * x as f64).sin() + (0.2 * y as f64).cos()).unwrap();
    let ms = multiscale_grad_loss(&g, &g, None, &GradLossWeights::default(), &LossConfig::default()).unwrap();
    assert_eq!(ms.per_scale.len(), 3);
    assert!(ms.per_scale.iter().all(|(_, v)| *v < 1e-9));
}
