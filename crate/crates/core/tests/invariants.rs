use proptest::prelude::*;

use scenetrack::correspondence::{correspondence_from_costs, reliability_map, CorrespondenceNetParams};
use scenetrack::cost_volume::{build_cost_volume, DisplacementWindow};
use scenetrack::fusion::{fuse_scores, PredictorParams};
use scenetrack::grid::{hann_window, stable_softmax};
use scenetrack::propagation::{propagate_states, STATE_DIM};
use scenetrack::state_update::{build_gru_input, conv_gru_step, GruParams};
use scenetrack::{Cell, Grid2D, Grid3D, Point, TargetBox};

fn grid3(w: usize, h: usize, c: usize, data: &[f64]) -> Grid3D<f64> {
    Grid3D::from_fn(w, h, c, |cell, ch| data[((cell.y * w + cell.x) * c + ch) % data.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution_on_its_support(
        values in prop::collection::vec(-50.0f64..50.0, 1..40),
        mask_bits in prop::collection::vec(any::<bool>(), 40),
        shift in -100.0f64..100.0,
    ) {
        let n = values.len();
        let mut support: Vec<bool> = mask_bits[..n].to_vec();
        support[0] = true;
        let p = stable_softmax(&values, &support).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (v, s) in p.iter().zip(&support) {
            prop_assert!(*v >= 0.0);
            if !s {
                prop_assert_eq!(*v, 0.0);
            }
        }
        let moved: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let q = stable_softmax(&moved, &support).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_survives_huge_inputs(a in 1e3f64..1e300, b in 1e3f64..1e300) {
        let p = stable_softmax(&[a, b], &[true, true]).unwrap();
        prop_assert!(p.iter().all(|v| v.is_finite()));
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn propagated_states_stay_in_the_hull(
        w in 2usize..7, h in 2usize..7, d_max in 1usize..4,
        feats in prop::collection::vec(-2.0f64..2.0, 16..200),
        states in prop::collection::vec(-1.0f64..1.0, 16..200),
    ) {
        let a = grid3(w, h, 3, &feats);
        let b = grid3(w, h, 3, &feats[1..]);
        let hs = grid3(w, h, STATE_DIM, &states);
        let cv = build_cost_volume(&a, &b, DisplacementWindow::new(d_max)).unwrap();
        let p = correspondence_from_costs(&cv, &CorrespondenceNetParams::pass_through()).unwrap();
        let out = propagate_states(&hs, &p).unwrap();
        for c in 0..STATE_DIM {
            let plane: Vec<f64> = (0..w * h).map(|i| hs.get(Cell::new(i % w, i / w), c)).collect();
            let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..w * h {
                let v = out.get(Cell::new(i % w, i / w), c);
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
        let xi = reliability_map(&p);
        for i in 0..w * h {
            let r = Cell::new(i % w, i / w);
            prop_assert!(xi.get(r) <= 1e-12);
            prop_assert!(xi.get(r) >= -(p.support(r) as f64).ln() - 1e-9);
        }
    }

    #[test]
    fn gru_keeps_states_bounded(
        states in prop::collection::vec(-0.999f64..0.999, 8..100),
        scores in prop::collection::vec(-3.0f64..3.0, 8..100),
    ) {
        let (w, h) = (4, 3);
        let hs = grid3(w, h, STATE_DIM, &states);
        let s = Grid2D::from_fn(w, h, |c| scores[(c.y * w + c.x) % scores.len()]);
        let xi = Grid2D::filled(w, h, -1.0);
        let pred = PredictorParams::appearance_replicating(STATE_DIM, 8.0, -4.0);
        let fused = fuse_scores(&hs, &xi, &s, &pred).unwrap();
        let f = build_gru_input(&fused, &s).unwrap();
        let next = conv_gru_step(&hs, &f, &GruParams::target_memory(STATE_DIM)).unwrap();
        prop_assert!(next.as_slice().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn window_is_floored_and_peaks_at_center(
        w in 1usize..20, h in 1usize..20, fx in 0.0f64..1.0, fy in 0.0f64..1.0, floor in 0.0f64..0.5,
    ) {
        let center = Cell::new(((w - 1) as f64 * fx) as usize, ((h - 1) as f64 * fy) as usize);
        let win = hann_window(w, h, center.point::<f64>(), floor);
        prop_assert!(win.as_slice().iter().all(|&v| v >= floor && v <= 1.0));
        prop_assert!((win.get(center) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        a in (0.0f64..300.0, 0.0f64..300.0, 1.0f64..100.0, 1.0f64..100.0),
        b in (0.0f64..300.0, 0.0f64..300.0, 1.0f64..100.0, 1.0f64..100.0),
    ) {
        let a = TargetBox::new(a.0, a.1, a.2, a.3);
        let b = TargetBox::new(b.0, b.1, b.2, b.3);
        let (x, y) = (a.iou(&b), b.iou(&a));
        prop_assert!((x - y).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn label_value_one_sigma_out() {
    let cfg = scenetrack::grid::LabelConfig::<f64>::default();
    let z = scenetrack::grid::gaussian_label_map(Point::new(4.0, 4.0), &cfg, 9, 9);
    let at = z.get(Cell::new(4, 4));
    assert_eq!(at, 1.0);
    // one cell is 1/0.9 sigma away
    let one = z.get(Cell::new(5, 4));
    assert!((one - (-1.0f64 / (2.0 * 0.81)).exp()).abs() < 1e-12);
}
