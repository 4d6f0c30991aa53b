#![allow(dead_code)]

use rand::Rng;
use riou::boxgeom::Box2D;
use riou::riou_params::Coefficients;

pub const SWEEP: [f64; 7] = [0.55, 0.65, 0.75, 0.85, 0.90, 0.95, 0.99];

fn system(x: &[f64; 5], beta: f64) -> [f64; 5] {
    let [a, b, c, k, t] = *x;
    [
        b - k / c,
        a + b + k / (1.0 - c),
        c - (k / a).sqrt() - beta,
        k * c.ln() + t,
        a / 2.0 + b + k * (c - 1.0).ln() + t - 1.0,
    ]
}

fn jacobian(x: &[f64; 5]) -> [[f64; 5]; 5] {
    let [a, _, c, k, _] = *x;
    let s = (k / a).sqrt();
    [
        [0.0, 1.0, k / (c * c), -1.0 / c, 0.0],
        [1.0, 1.0, k / ((1.0 - c) * (1.0 - c)), 1.0 / (1.0 - c), 0.0],
        [0.5 * s / a, 0.0, 1.0, -0.5 / (k * a).sqrt(), 0.0],
        [0.0, 0.0, k / c, c.ln(), 1.0],
        [0.5, 1.0, k / (c - 1.0), (c - 1.0).ln(), 1.0],
    ]
}

fn solve_linear(mut m: [[f64; 5]; 5], mut r: [f64; 5]) -> [f64; 5] {
    for col in 0..5 {
        let piv = (col..5)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..5 {
            let f = m[row][col] / m[col][col];
            let pivot_row = m[col];
            for (k, v) in m[row].iter_mut().enumerate().skip(col) {
                *v -= f * pivot_row[k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 5];
    for row in (0..5).rev() {
        let s: f64 = (row + 1..5).map(|k| m[row][k] * x[k]).sum();
        x[row] = (r[row] - s) / m[row][row];
    }
    x
}

fn norm(v: &[f64; 5]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn newton(mut x: [f64; 5], beta: f64) -> [f64; 5] {
    for _ in 0..100 {
        let f = system(&x, beta);
        let f0 = norm(&f);
        if f0 < 1e-15 {
            break;
        }
        let dx = solve_linear(jacobian(&x), f.map(|v| -v));
        let mut step = 1.0;
        loop {
            let trial: [f64; 5] = std::array::from_fn(|i| x[i] + step * dx[i]);
            let feasible = trial[0] > 0.0 && trial[3] > 0.0 && trial[2] > 1.0;
            if feasible && norm(&system(&trial, beta)) < f0 {
                x = trial;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return x;
            }
        }
    }
    x
}

/// Damped Newton on the raw five-equation system, continued in small steps
/// from a rough starting guess at beta = 0.75.
pub fn newton_oracle(beta: f64) -> Coefficients {
    let mut x = [3.0, 0.4, 1.1, 0.45, -0.05];
    let mut b = 0.75;
    x = newton(x, b);
    let steps = ((beta - b).abs() / 0.001).ceil().max(1.0) as usize;
    let db = (beta - b) / steps as f64;
    for _ in 0..steps {
        b += db;
        x = newton(x, b);
    }
    let x = newton(x, beta);
    let [a, b, c, k, t] = x;
    Coefficients { a, b, c, k, t }
}

pub fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

/// Random box with corners in `[-span, span]` and sides at least `min_side`.
pub fn random_box<R: Rng>(rng: &mut R, span: f64, min_side: f64) -> Box2D {
    let x = rng.gen_range(-span..span);
    let y = rng.gen_range(-span..span);
    let w = rng.gen_range(min_side..span);
    let h = rng.gen_range(min_side..span);
    Box2D::new(x, y, x + w, y + h).unwrap()
}

/// True when no pair of pred/gt edge coordinates on the same axis is within
/// `margin`, so every min/max in the loss is locally smooth.
pub fn well_separated(p: &Box2D, g: &Box2D, margin: f64) -> bool {
    let xs = [p.x_min(), p.x_max(), g.x_min(), g.x_max()];
    let ys = [p.y_min(), p.y_max(), g.y_min(), g.y_max()];
    let apart = |v: &[f64; 4]| {
        (0..4).all(|i| (i + 1..4).all(|j| (v[i] - v[j]).abs() > margin))
    };
    apart(&xs) && apart(&ys)
}

/// Unit cells of the integer grid covered by both boxes.
pub fn pixel_intersection(a: [i64; 4], b: [i64; 4]) -> i64 {
    let mut n = 0;
    for x in a[0].min(b[0])..a[2].max(b[2]) {
        for y in a[1].min(b[1])..a[3].max(b[3]) {
            let inside = |r: [i64; 4]| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
            if inside(a) && inside(b) {
                n += 1;
            }
        }
    }
    n
}

pub fn random_int_box<R: Rng>(rng: &mut R, max: i64) -> [i64; 4] {
    let (a, b) = (rng.gen_range(0..=max), rng.gen_range(0..=max));
    let (c, d) = (rng.gen_range(0..=max), rng.gen_range(0..=max));
    [a.min(b), c.min(d), a.max(b), c.max(d)]
}

/// A pred/gt pair away from every non-differentiable tie. Half of the pairs
/// are local perturbations of the ground truth, the rest independent draws.
pub fn differentiable_pair<R: Rng>(rng: &mut R) -> (Box2D, Box2D) {
    loop {
        let gt = random_box(rng, 4.0, 0.3);
        let pred = if rng.gen_bool(0.5) {
            let c = gt.to_array();
            let j: [f64; 4] = std::array::from_fn(|i| c[i] + rng.gen_range(-0.8..0.8));
            match Box2D::from_array(j) {
                Ok(b) if b.width() > 0.05 && b.height() > 0.05 => b,
                _ => continue,
            }
        } else {
            random_box(rng, 4.0, 0.3)
        };
        if well_separated(&pred, &gt, 1e-3) {
            return (pred, gt);
        }
    }
}

/// Normalisation floor for the relative gradient error: below this the
/// gradient is treated as zero.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Derivative of `f` on `[0, 1]` by Richardson-extrapolated second-order
/// differences at steps `h` and `h / 2`. One-sided stencils are used where a
/// centered one would leave the interval.
pub fn richardson_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| {
        if x - h >= 0.0 && x + h <= 1.0 {
            (f(x + h) - f(x - h)) / (2.0 * h)
        } else if x - h < 0.0 {
            (-3.0 * f(x) + 4.0 * f(x + h) - f(x + 2.0 * h)) / (2.0 * h)
        } else {
            (3.0 * f(x) - 4.0 * f(x - h) + f(x - 2.0 * h)) / (2.0 * h)
        }
    };
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

pub const GRID: usize = 1000;

pub fn grid_point(i: usize) -> f64 {
    i as f64 / GRID as f64
}

/// Grid index nearest `beta`.
pub fn nearest_grid(beta: f64) -> usize {
    (beta * GRID as f64).round() as usize
}
