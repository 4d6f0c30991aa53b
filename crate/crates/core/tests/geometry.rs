mod common;

use common::{pixel_intersection, random_box, random_int_box};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riou::boxgeom::{self, Box2D, Point2D};

fn to_box(r: [i64; 4]) -> Box2D {
    Box2D::new(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64).unwrap()
}

#[test]
fn intersection_matches_pixel_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (a, b) = (random_int_box(&mut rng, 32), random_int_box(&mut rng, 32));
        let got = boxgeom::intersection_area(&to_box(a), &to_box(b));
        assert_eq!(got, pixel_intersection(a, b) as f64, "{a:?} {b:?}");
    }
}

#[test]
fn intersection_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 20_000;
    for _ in 0..20 {
        let a = random_box(&mut rng, 4.0, 0.5);
        let b = random_box(&mut rng, 4.0, 0.5);
        let enc = boxgeom::enclosing_box(&a, &b);
        let mut hits = 0;
        for _ in 0..n {
            let x = rng.gen_range(enc.x_min()..enc.x_max());
            let y = rng.gen_range(enc.y_min()..enc.y_max());
            let inside = |r: &Box2D| x >= r.x_min() && x < r.x_max() && y >= r.y_min() && y < r.y_max();
            if inside(&a) && inside(&b) {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let enc_area = boxgeom::area(&enc);
        let estimate = p * enc_area;
        let sigma = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64) * enc_area;
        let exact = boxgeom::intersection_area(&a, &b);
        assert!((estimate - exact).abs() < 5.0 * sigma, "{a} {b}: {estimate} vs {exact}");
    }
}

#[test]
fn union_is_inclusion_exclusion_on_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let (a, b) = (random_int_box(&mut rng, 16), random_int_box(&mut rng, 16));
        let (ba, bb) = (to_box(a), to_box(b));
        let pixels_a = pixel_intersection(a, a);
        let pixels_b = pixel_intersection(b, b);
        let expected = (pixels_a + pixels_b - pixel_intersection(a, b)) as f64;
        assert_eq!(boxgeom::union_area(&ba, &bb), expected);
    }
}

fn arb_box() -> impl Strategy<Value = Box2D> {
    (-50.0f64..50.0, -50.0f64..50.0, 0.01f64..30.0, 0.01f64..30.0)
        .prop_map(|(x, y, w, h)| Box2D::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #[test]
    fn metrics_are_symmetric(a in arb_box(), b in arb_box()) {
        prop_assert_eq!(boxgeom::iou(&a, &b).unwrap(), boxgeom::iou(&b, &a).unwrap());
        prop_assert_eq!(boxgeom::giou_value(&a, &b).unwrap(), boxgeom::giou_value(&b, &a).unwrap());
        prop_assert_eq!(boxgeom::diou_value(&a, &b).unwrap(), boxgeom::diou_value(&b, &a).unwrap());
    }

    #[test]
    fn metrics_are_bounded(a in arb_box(), b in arb_box()) {
        let i = boxgeom::iou(&a, &b).unwrap();
        let g = boxgeom::giou_value(&a, &b).unwrap();
        let d = boxgeom::diou_value(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&i));
        prop_assert!((-1.0..=1.0).contains(&g) && g <= i);
        prop_assert!((-1.0..=1.0).contains(&d) && d <= i);
    }

    #[test]
    fn self_overlap_is_one(a in arb_box()) {
        prop_assert_eq!(boxgeom::iou(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(boxgeom::giou_value(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(boxgeom::diou_value(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn translation_invariance(a in arb_box(), b in arb_box(), dx in -100.0f64..100.0, dy in -100.0f64..100.0) {
        let (ta, tb) = (a.translated(dx, dy).unwrap(), b.translated(dx, dy).unwrap());
        prop_assert!((boxgeom::iou(&a, &b).unwrap() - boxgeom::iou(&ta, &tb).unwrap()).abs() < 1e-9);
        prop_assert!((boxgeom::giou_value(&a, &b).unwrap() - boxgeom::giou_value(&ta, &tb).unwrap()).abs() < 1e-9);
        prop_assert!((boxgeom::diou_value(&a, &b).unwrap() - boxgeom::diou_value(&ta, &tb).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn scale_invariance(a in arb_box(), b in arb_box(), s in 0.01f64..100.0) {
        let o = Point2D::new(0.0, 0.0);
        let (sa, sb) = (a.scaled_about(o, s).unwrap(), b.scaled_about(o, s).unwrap());
        prop_assert!((boxgeom::iou(&a, &b).unwrap() - boxgeom::iou(&sa, &sb).unwrap()).abs() < 1e-9);
        prop_assert!((boxgeom::giou_value(&a, &b).unwrap() - boxgeom::giou_value(&sa, &sb).unwrap()).abs() < 1e-9);
        prop_assert!((boxgeom::diou_value(&a, &b).unwrap() - boxgeom::diou_value(&sa, &sb).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn intersection_never_exceeds_either_area(a in arb_box(), b in arb_box()) {
        let i = boxgeom::intersection_area(&a, &b);
        prop_assert!(i >= 0.0 && i <= boxgeom::area(&a).min(boxgeom::area(&b)) + 1e-12);
    }
}

#[test]
fn nested_boxes_have_equal_iou_and_giou() {
    let outer = Box2D::new(1.156427781039131, -4.170433241205602, 14.67257236138903, 11.907686670972977).unwrap();
    let inner = Box2D::new(5.1603545247148475, -0.9117362988490214, 13.94171381533595, 10.892453138354664).unwrap();
    let i = boxgeom::iou(&outer, &inner).unwrap();
    assert_eq!(boxgeom::giou_value(&outer, &inner).unwrap(), i);
    assert_eq!(boxgeom::giou_value(&inner, &outer).unwrap(), i);
}
