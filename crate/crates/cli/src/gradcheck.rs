//! Analytic versus central-difference gradient comparison over random box
//! pairs.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riou::boxgeom::Box2D;
use riou::losses::{self, BoxGradient, LossError, LossKind};

pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-6;
/// Gradients smaller than this in every component count as zero when
/// normalising the error.
pub const FLOOR: f64 = 1e-6;
/// Minimum gap between any two same-axis edges, keeping each pair away from
/// the kinks of min/max.
pub const TIE_MARGIN: f64 = 1e-3;

pub type AnalyticFn = fn(&Box2D, &Box2D, &LossKind) -> Result<BoxGradient, LossError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Worst {
    pub pred: Box2D,
    pub gt: Box2D,
    pub analytic: BoxGradient,
    pub numeric: BoxGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindResult {
    pub kind: &'static str,
    pub max_rel_error: f64,
    pub worst: Worst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub trials: usize,
    pub seed: u64,
    pub kinds: Vec<KindResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.kinds.iter().all(|k| k.max_rel_error < TOLERANCE)
    }

    pub fn render(&self) -> String {
        let mut s = format!("trials={} seed={} h={STEP:e} tolerance={TOLERANCE:e}\n", self.trials, self.seed);
        let _ = writeln!(s, "{:<6} {:>14} {:>6}", "kind", "max_rel_error", "ok");
        for k in &self.kinds {
            let ok = if k.max_rel_error < TOLERANCE { "yes" } else { "NO" };
            let _ = writeln!(s, "{:<6} {:>14.6e} {:>6}", k.kind, k.max_rel_error, ok);
        }
        for k in self.kinds.iter().filter(|k| k.max_rel_error >= TOLERANCE) {
            let w = &k.worst;
            let _ = writeln!(
                s,
                "worst {}: pred={:?} gt={:?} analytic={:?} numeric={:?}",
                k.kind,
                w.pred.to_array(),
                w.gt.to_array(),
                w.analytic.to_array(),
                w.numeric.to_array()
            );
        }
        s
    }
}

fn random_box<R: Rng>(rng: &mut R) -> Box2D {
    let x = rng.gen_range(-4.0..4.0);
    let y = rng.gen_range(-4.0..4.0);
    let w = rng.gen_range(0.3..4.0);
    let h = rng.gen_range(0.3..4.0);
    Box2D::new(x, y, x + w, y + h).expect("finite ordered corners")
}

fn separated(p: &Box2D, g: &Box2D) -> bool {
    let xs = [p.x_min(), p.x_max(), g.x_min(), g.x_max()];
    let ys = [p.y_min(), p.y_max(), g.y_min(), g.y_max()];
    let apart = |v: &[f64; 4]| (0..4).all(|i| (i + 1..4).all(|j| (v[i] - v[j]).abs() > TIE_MARGIN));
    apart(&xs) && apart(&ys)
}

/// Draws a pred/gt pair where the loss is differentiable. Half are local
/// perturbations of the ground truth, half independent boxes.
pub fn random_pair<R: Rng>(rng: &mut R) -> (Box2D, Box2D) {
    loop {
        let gt = random_box(rng);
        let pred = if rng.gen_bool(0.5) {
            let c = gt.to_array();
            let j: [f64; 4] = std::array::from_fn(|i| c[i] + rng.gen_range(-0.8..0.8));
            match Box2D::from_array(j) {
                Ok(b) if b.width() > 0.05 && b.height() > 0.05 => b,
                _ => continue,
            }
        } else {
            random_box(rng)
        };
        if separated(&pred, &gt) {
            return (pred, gt);
        }
    }
}

pub fn run(trials: usize, seed: u64, kinds: &[LossKind]) -> Result<Report, LossError> {
    run_with(trials, seed, kinds, losses::loss_gradient_boxes)
}

/// Same as [`run`] with a replaceable analytic gradient.
pub fn run_with(trials: usize, seed: u64, kinds: &[LossKind], analytic: AnalyticFn) -> Result<Report, LossError> {
    let mut out = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(f64, Worst)> = None;
        for _ in 0..trials {
            let (pred, gt) = random_pair(&mut rng);
            let a = analytic(&pred, &gt, kind)?;
            let n = losses::finite_diff_gradient(&pred, &gt, kind, STEP)?;
            let e = a.relative_error(&n, FLOOR);
            let e = if e.is_nan() { f64::INFINITY } else { e };
            if best.as_ref().is_none_or(|(m, _)| e > *m) {
                best = Some((
                    e,
                    Worst {
                        pred,
                        gt,
                        analytic: a,
                        numeric: n,
                    },
                ));
            }
        }
        let (max_rel_error, worst) = best.expect("at least one trial");
        out.push(KindResult {
            kind: kind.name(),
            max_rel_error,
            worst,
        });
    }
    Ok(Report {
        trials,
        seed,
        kinds: out,
    })
}
