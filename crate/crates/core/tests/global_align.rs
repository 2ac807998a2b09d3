use chmreg::global_align::{
    global_align, peak_detect, score_shift, xcorr_shift, GlobalAlignParams, PeakParams,
};
use chmreg::raster::translate;
use chmreg::synthetic::{forest, ForestParams};
use chmreg::{BitMask, Grid};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn brute(a: &BitMask, b: &BitMask, m: i32) -> (i32, i32) {
    let (w, h) = (a.width() as i32, a.height() as i32);
    let mut best = (0u64, 0i32, 0i32);
    let mut first = true;
    for dy in -m..=m {
        for dx in -m..=m {
            let mut c = 0;
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = (x + dx, y + dy);
                    if (0..w).contains(&sx) && (0..h).contains(&sy) {
                        c += u64::from(a.get(x as usize, y as usize) && b.get(sx as usize, sy as usize));
                    }
                }
            }
            let better = c > best.0
                || (c == best.0 && (dx * dx + dy * dy, dx, dy) < (best.1 * best.1 + best.2 * best.2, best.1, best.2));
            if first || better {
                best = (c, dx, dy);
                first = false;
            }
        }
    }
    (best.1, best.2)
}

fn mask_strategy() -> impl Strategy<Value = (BitMask, BitMask, usize)> {
    (6usize..24, 6usize..24).prop_flat_map(|(w, h)| {
        (
            prop::collection::vec(any::<bool>(), w * h),
            prop::collection::vec(any::<bool>(), w * h),
            0..=(w.min(h) - 1) / 2,
        )
            .prop_map(move |(a, b, m)| {
                (BitMask::new(w, h, a).unwrap(), BitMask::new(w, h, b).unwrap(), m)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn xcorr_matches_brute_force((a, b, m) in mask_strategy()) {
        prop_assume!(!a.is_empty() && !b.is_empty());
        let s = xcorr_shift(&a, &b, m).unwrap();
        prop_assert_eq!((s.dx, s.dy), brute(&a, &b, m as i32));
    }
}

fn shifted_mask(a: &BitMask, dx: i32, dy: i32) -> BitMask {
    BitMask::from_fn(a.width(), a.height(), |x, y| {
        let (sx, sy) = (x as i32 - dx, y as i32 - dy);
        sx >= 0 && sy >= 0 && (sx as usize) < a.width() && (sy as usize) < a.height()
            && a.get(sx as usize, sy as usize)
    })
}

#[test]
fn xcorr_examples() {
    let a = BitMask::from_fn(32, 32, |x, y| (x * 7 + y * 13) % 5 == 0 && x > 4 && y > 6);
    let s = xcorr_shift(&a, &a, 8).unwrap();
    assert_eq!((s.dx, s.dy), (0, 0));
    let b = shifted_mask(&a, 3, -2);
    let s = xcorr_shift(&a, &b, 4).unwrap();
    assert_eq!((s.dx, s.dy), (3, -2));
    assert!(xcorr_shift(&a, &b, 16).is_err());
}

fn scene(w: usize, h: usize, seed: u64) -> Grid {
    let p = ForestParams { width: w, height: h, ..Default::default() };
    forest(&p, &mut ChaCha8Rng::seed_from_u64(seed)).chm
}

#[test]
fn peak_detection_examples() {
    let flat = Grid::filled(40, 40, 1.0, 0.0).unwrap();
    let d = peak_detect(&flat, &PeakParams::default()).unwrap();
    assert!(d.peaks.is_empty() && d.mask.is_empty());

    let bump = |cs: &[(f64, f64)]| {
        Grid::from_fn(60, 40, 1.0, |x, y| {
            cs.iter()
                .map(|&(cx, cy)| 20.0 * (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / 18.0).exp())
                .fold(0.0, f64::max)
        })
        .unwrap()
    };
    let d = peak_detect(&bump(&[(21.0, 17.0)]), &PeakParams::default()).unwrap();
    assert_eq!(d.peaks.points, vec![(21, 17)]);
    let d = peak_detect(&bump(&[(12.0, 20.0), (45.0, 20.0)]), &PeakParams::default()).unwrap();
    assert_eq!(d.peaks.len(), 2);
}

#[test]
fn score_shift_examples() {
    let g = scene(96, 96, 1);
    let s = score_shift(&g, &g, (0, 0), 5.0, &PeakParams::default()).unwrap();
    assert_eq!((s.iou, s.lift), (1.0, 0.0));

    let left = Grid::from_fn(40, 20, 1.0, |x, _| if x < 5 { 10.0 } else { 0.0 }).unwrap();
    let right = Grid::from_fn(40, 20, 1.0, |x, _| if x >= 30 { 10.0 } else { 0.0 }).unwrap();
    let s = score_shift(&left, &right, (0, 0), 5.0, &PeakParams::default()).unwrap();
    assert_eq!(s.iou, 0.0);

    let label = translate(&g, (-5, 0));
    let at = score_shift(&g, &label, (5, 0), 5.0, &PeakParams::default()).unwrap();
    let zero = score_shift(&g, &label, (0, 0), 5.0, &PeakParams::default()).unwrap();
    assert!(at.iou > zero.iou);
}

#[test]
fn global_align_examples() {
    let params = GlobalAlignParams::default();
    let g = scene(128, 128, 2);
    let r = global_align(&g, &g, &params).unwrap();
    assert_eq!(r.shift, (0, 0));
    assert!(!r.accepted);

    let label = translate(&g, (-5, -5));
    let r = global_align(&g, &label, &params).unwrap();
    assert!(r.accepted);
    assert_eq!(r.shift, (5, 5));
    assert!(r.iou_after > r.iou_before);
    assert!((r.shift_magnitude() - 50f64.sqrt()).abs() < 1e-12);
}

#[test]
fn shift_outside_window_is_not_recovered() {
    let params = GlobalAlignParams::default();
    let mut wrong = 0;
    for seed in 0..10 {
        let g = scene(128, 128, 100 + seed);
        let label = translate(&g, (-40, 0));
        let r = global_align(&g, &label, &params).unwrap();
        assert!(r.shift.0.abs() <= 16 && r.shift.1.abs() <= 16);
        assert_ne!(r.shift, (40, 0));
        if r.accepted {
            wrong += 1;
            assert!(r.iou_after >= r.iou_before || r.lift > 0.0);
        }
    }
    println!("accepted in-window spurious shifts: {wrong}/10");
}
