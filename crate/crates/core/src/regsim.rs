//! Synthetic box-regression experiments.
//!
//! A population of (anchor, ground truth) pairs is drawn with a configurable
//! initial-IoU profile. Each anchor is then regressed on its own by plain
//! gradient descent on `(cx, cy, ln w, ln h)`. There is no shared model: every
//! sample is an independent optimisation problem, so the report measures
//! per-sample gradient magnitudes and convergence only.

use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxgeom::{self, Box2D, GeomError};
use crate::losses::{self, LossError, LossKind};
use crate::riou_params::{self, ParamError};

/// Number of IoU histogram bins, each 0.1 wide.
pub const BINS: usize = 10;
/// Smallest width/height an anchor may shrink to during descent.
pub const MIN_SIZE: f64 = 1e-6;
/// Default cap on `sample_count * steps`.
pub const DEFAULT_BUDGET: u64 = 1_000_000_000;
/// Width of a configured IoU bucket.
pub const BUCKET_WIDTH: f64 = 0.1;

const SCALE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("target IoU {0} cannot be reached by a perturbation; use an explicit disjoint construction")]
    TargetUnreachable(f64),
    #[error("sample_count * steps = {requested} exceeds the budget of {budget}")]
    BudgetExceeded { requested: u128, budget: u64 },
    #[error("bisection failed to reach IoU {target} (last {last})")]
    BisectionFailed { target: f64, last: f64 },
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    /// Translate along one random axis.
    Shift,
    /// Shrink or grow concentrically.
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTag {
    Iou,
    Giou,
    Diou,
    Riou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub sample_count: usize,
    /// `(bucket_lower_iou, weight)` pairs; each bucket spans
    /// `[lower, lower + 0.1)`.
    pub iou_distribution: Vec<(f64, f64)>,
    pub perturb_mode: PerturbMode,
    pub steps: usize,
    pub learning_rate: f64,
    pub loss_kind: LossTag,
    pub beta: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    /// Low-IoU-heavy profile: 0.4/0.25/0.15/0.1/0.05/0.05 over the buckets
    /// starting at 0.1 through 0.6.
    fn default() -> Self {
        Self {
            sample_count: 10_000,
            iou_distribution: vec![
                (0.1, 0.4),
                (0.2, 0.25),
                (0.3, 0.15),
                (0.4, 0.1),
                (0.5, 0.05),
                (0.6, 0.05),
            ],
            perturb_mode: PerturbMode::Shift,
            steps: 200,
            learning_rate: 0.05,
            loss_kind: LossTag::Riou,
            beta: 0.95,
            seed: 7,
        }
    }
}

impl SimConfig {
    /// Parses the flat TOML form and validates it.
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(s).map_err(|e| SimError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.sample_count == 0 {
            return bad("sample_count must be positive".into());
        }
        if self.iou_distribution.is_empty() {
            return bad("iou_distribution must not be empty".into());
        }
        let mut total = 0.0;
        for &(lower, weight) in &self.iou_distribution {
            if !(0.0..1.0).contains(&lower) {
                return bad(format!("bucket lower bound {lower} outside [0, 1)"));
            }
            if !(weight >= 0.0 && weight.is_finite()) {
                return bad(format!("bucket weight {weight} must be finite and non-negative"));
            }
            total += weight;
        }
        if !(total > 0.0 && total.is_finite()) {
            return bad("bucket weights must have a positive finite sum".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.loss_kind == LossTag::Riou {
            riou_params::solve_params(self.beta)?;
        }
        Ok(())
    }

    pub fn resolve_loss(&self) -> Result<LossKind, SimError> {
        Ok(match self.loss_kind {
            LossTag::Iou => LossKind::Iou,
            LossTag::Giou => LossKind::Giou,
            LossTag::Diou => LossKind::Diou,
            LossTag::Riou => LossKind::Riou(riou_params::solve_params(self.beta)?),
        })
    }

    fn bucket_bounds(&self, index: usize) -> (f64, f64) {
        let lower = self.iou_distribution[index].0;
        (lower, (lower + BUCKET_WIDTH).min(1.0))
    }

    /// Compact one-line description of the IoU profile.
    pub fn profile_string(&self) -> String {
        self.iou_distribution
            .iter()
            .map(|(l, w)| format!("{l}:{w}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Execution knobs that do not affect results.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub budget: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePair {
    pub anchor: Box2D,
    pub gt: Box2D,
    pub initial_iou: f64,
}

/// Perturbs `gt` into an anchor whose IoU with it is `target`.
///
/// Shift mode moves the box by `w (1 - t) / (1 + t)` along a random axis and
/// direction, which gives `(w - d) / (w + d) = t` exactly. Scale mode shrinks
/// or grows it about its center, the factor found by bisection.
pub fn make_pair<R: Rng + ?Sized>(
    gt: Box2D,
    target: f64,
    mode: PerturbMode,
    rng: &mut R,
) -> Result<SamplePair, SimError> {
    if target == 0.0 {
        return Err(SimError::TargetUnreachable(target));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(SimError::InvalidConfig(format!("target IoU {target} outside (0, 1]")));
    }
    if gt.is_degenerate() {
        return Err(SimError::InvalidConfig(format!("ground truth {gt} has zero area")));
    }
    let anchor = match mode {
        PerturbMode::Shift => {
            let along_x = rng.gen_bool(0.5);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let extent = if along_x { gt.width() } else { gt.height() };
            let delta = sign * extent * (1.0 - target) / (1.0 + target);
            if along_x {
                gt.translated(delta, 0.0)?
            } else {
                gt.translated(0.0, delta)?
            }
        }
        PerturbMode::Scale => {
            let grow = rng.gen_bool(0.5);
            scale_to_iou(&gt, target, grow)?
        }
    };
    let initial_iou = boxgeom::iou(&anchor, &gt)?;
    Ok(SamplePair {
        anchor,
        gt,
        initial_iou,
    })
}

fn scale_to_iou(gt: &Box2D, target: f64, grow: bool) -> Result<Box2D, SimError> {
    let origin = boxgeom::center(gt);
    let at = |s: f64| -> Result<(Box2D, f64), SimError> {
        let b = gt.scaled_about(origin, s)?;
        let v = boxgeom::iou(&b, gt)?;
        Ok((b, v))
    };
    if target == 1.0 {
        return Ok(*gt);
    }
    // iou rises with s on [0, 1] and falls with s on [1, hi]
    let (mut lo, mut hi) = if grow {
        (1.0, 2.0 / target.sqrt())
    } else {
        (0.0, 1.0)
    };
    let mut last = f64::NAN;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (b, v) = at(mid)?;
        if (v - target).abs() < SCALE_TOLERANCE {
            return Ok(b);
        }
        last = v;
        let too_close = v > target;
        match (grow, too_close) {
            (false, true) | (true, false) => hi = mid,
            (false, false) | (true, true) => lo = mid,
        }
    }
    Err(SimError::BisectionFailed { target, last })
}

/// Draws `sample_count` pairs. Deterministic in `cfg.seed`.
pub fn sample_population(cfg: &SimConfig) -> Result<Vec<SamplePair>, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = WeightedIndex::new(cfg.iou_distribution.iter().map(|&(_, w)| w))
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    (0..cfg.sample_count)
        .map(|_| {
            let cx = rng.gen_range(-8.0..8.0);
            let cy = rng.gen_range(-8.0..8.0);
            let w = rng.gen_range(0.5..2.0);
            let h = rng.gen_range(0.5..2.0);
            let gt = Box2D::from_center_size(cx, cy, w, h)?;
            let (lo, hi) = cfg.bucket_bounds(weights.sample(&mut rng));
            let mut target = rng.gen_range(lo..hi);
            while target == 0.0 {
                target = rng.gen_range(lo..hi);
            }
            make_pair(gt, target, cfg.perturb_mode, &mut rng)
        })
        .collect()
}

/// Decile index of an IoU value; 1.0 falls in the last bin.
pub fn bin_of(iou: f64) -> usize {
    ((iou * BINS as f64).floor() as usize).min(BINS - 1)
}

/// Fraction of the population's total `|dL/dIoU|` contributed by each IoU
/// decile, evaluated at the initial IoUs.
///
/// When every sample has zero gradient the shares fall back to the count
/// fractions, so they still sum to one.
pub fn gradient_share(pop: &[SamplePair], kind: &LossKind) -> Result<[f64; BINS], SimError> {
    let mut mass = [0.0; BINS];
    let mut counts = [0usize; BINS];
    for pair in pop {
        let bin = bin_of(pair.initial_iou);
        mass[bin] += losses::grad_mag_wrt_iou(kind, pair.initial_iou)?;
        counts[bin] += 1;
    }
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        Ok(mass.map(|m| m / total))
    } else {
        let n = pop.len().max(1) as f64;
        Ok(counts.map(|c| c as f64 / n))
    }
}

/// Anchor parametrisation used for descent.
#[derive(Debug, Clone, Copy)]
struct CenterLogSize {
    cx: f64,
    cy: f64,
    log_w: f64,
    log_h: f64,
}

impl CenterLogSize {
    fn from_box(b: &Box2D) -> Self {
        let c = boxgeom::center(b);
        Self {
            cx: c.x,
            cy: c.y,
            log_w: b.width().max(MIN_SIZE).ln(),
            log_h: b.height().max(MIN_SIZE).ln(),
        }
    }

    fn size(&self) -> (f64, f64) {
        (self.log_w.exp().max(MIN_SIZE), self.log_h.exp().max(MIN_SIZE))
    }

    fn to_box(self) -> Result<Box2D, GeomError> {
        let (w, h) = self.size();
        Box2D::from_center_size(self.cx, self.cy, w, h)
    }
}

/// Regresses one anchor for `steps` iterations. Returns the final box and the
/// loss after every step (index 0 is the initial loss).
pub fn descend_pair(
    pair: &SamplePair,
    kind: &LossKind,
    steps: usize,
    learning_rate: f64,
) -> Result<(Box2D, Vec<f64>), SimError> {
    let mut theta = CenterLogSize::from_box(&pair.anchor);
    let mut current = pair.anchor;
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(losses::localization_loss(&current, &pair.gt, kind)?);
    for _ in 0..steps {
        let g = losses::loss_gradient_boxes(&current, &pair.gt, kind)?;
        let (w, h) = theta.size();
        theta.cx -= learning_rate * (g.x_min + g.x_max);
        theta.cy -= learning_rate * (g.y_min + g.y_max);
        theta.log_w -= learning_rate * 0.5 * w * (g.x_max - g.x_min);
        theta.log_h -= learning_rate * 0.5 * h * (g.y_max - g.y_min);
        current = theta.to_box()?;
        trace.push(losses::localization_loss(&current, &pair.gt, kind)?);
    }
    Ok((current, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub config: SimConfig,
    pub gradient_shares: [f64; BINS],
    pub initial_histogram: [usize; BINS],
    pub final_histogram: [usize; BINS],
    pub mean_initial_iou: f64,
    pub mean_final_iou: f64,
    pub frac_final_ge_07: f64,
    pub frac_final_ge_08: f64,
    pub frac_final_ge_09: f64,
    pub steps_executed: usize,
}

pub fn run_descent(cfg: &SimConfig) -> Result<SimReport, SimError> {
    run_descent_with(cfg, RunOptions::default())
}

/// Runs the experiment. Samples may be processed in parallel; aggregation
/// happens in sample order so the report does not depend on `opts.threads`.
pub fn run_descent_with(cfg: &SimConfig, opts: RunOptions) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let requested = cfg.sample_count as u128 * cfg.steps as u128;
    if requested > opts.budget as u128 {
        return Err(SimError::BudgetExceeded {
            requested,
            budget: opts.budget,
        });
    }
    let kind = cfg.resolve_loss()?;
    let pop = sample_population(cfg)?;
    let shares = gradient_share(&pop, &kind)?;

    let work = || -> Result<Vec<f64>, SimError> {
        pop.par_iter()
            .map(|pair| {
                let (fin, _) = descend_pair(pair, &kind, cfg.steps, cfg.learning_rate)?;
                Ok(boxgeom::iou(&fin, &pair.gt)?)
            })
            .collect()
    };
    let finals = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SimError::ThreadPool(e.to_string()))?
            .install(work)?,
        None => work()?,
    };

    let mut initial_histogram = [0usize; BINS];
    let mut final_histogram = [0usize; BINS];
    let (mut sum_init, mut sum_final) = (0.0, 0.0);
    let mut ge = [0usize; 3];
    for (pair, &fin) in pop.iter().zip(&finals) {
        initial_histogram[bin_of(pair.initial_iou)] += 1;
        final_histogram[bin_of(fin)] += 1;
        sum_init += pair.initial_iou;
        sum_final += fin;
        for (slot, thr) in ge.iter_mut().zip([0.7, 0.8, 0.9]) {
            if fin >= thr {
                *slot += 1;
            }
        }
    }
    let n = pop.len() as f64;
    Ok(SimReport {
        config: cfg.clone(),
        gradient_shares: shares,
        initial_histogram,
        final_histogram,
        mean_initial_iou: sum_init / n,
        mean_final_iou: sum_final / n,
        frac_final_ge_07: ge[0] as f64 / n,
        frac_final_ge_08: ge[1] as f64 / n,
        frac_final_ge_09: ge[2] as f64 / n,
        steps_executed: cfg.steps,
    })
}

impl SimReport {
    /// Gradient share of all deciles whose upper edge is at most `iou`.
    pub fn share_below(&self, iou: f64) -> f64 {
        (0..BINS)
            .filter(|&b| (b + 1) as f64 / BINS as f64 <= iou + 1e-12)
            .map(|b| self.gradient_shares[b])
            .sum()
    }

    /// `bin_lower,bin_upper,initial_count,final_count,initial_gradient_share`
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lower,bin_upper,initial_count,final_count,initial_gradient_share\n");
        for b in 0..BINS {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                b as f64 / BINS as f64,
                (b + 1) as f64 / BINS as f64,
                self.initial_histogram[b],
                self.final_histogram[b],
                self.gradient_shares[b]
            );
        }
        out
    }

    /// `key,value` rows: config echo followed by the scalar results.
    pub fn scalars_csv(&self) -> String {
        let c = &self.config;
        let rows: Vec<(&str, String)> = vec![
            ("sample_count", c.sample_count.to_string()),
            ("iou_distribution", c.profile_string()),
            ("perturb_mode", format!("{:?}", c.perturb_mode).to_lowercase()),
            ("steps", c.steps.to_string()),
            ("learning_rate", c.learning_rate.to_string()),
            ("loss_kind", format!("{:?}", c.loss_kind).to_lowercase()),
            ("beta", c.beta.to_string()),
            ("seed", c.seed.to_string()),
            ("steps_executed", self.steps_executed.to_string()),
            ("mean_initial_iou", self.mean_initial_iou.to_string()),
            ("mean_final_iou", self.mean_final_iou.to_string()),
            ("frac_final_iou_ge_0.7", self.frac_final_ge_07.to_string()),
            ("frac_final_iou_ge_0.8", self.frac_final_ge_08.to_string()),
            ("frac_final_iou_ge_0.9", self.frac_final_ge_09.to_string()),
        ];
        let mut out = String::from("key,value\n");
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn summary(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# per-sample independent descent on (cx, cy, ln w, ln h); no shared regressor"
        );
        let _ = writeln!(
            s,
            "loss={:?} beta={} samples={} steps={} lr={} mode={:?} seed={}",
            c.loss_kind, c.beta, c.sample_count, self.steps_executed, c.learning_rate, c.perturb_mode, c.seed
        );
        let _ = writeln!(s, "iou profile (lower:weight): {}", c.profile_string());
        let _ = writeln!(s, "{:>9} {:>9} {:>9} {:>10}", "bin", "initial", "final", "grad_share");
        for b in 0..BINS {
            let _ = writeln!(
                s,
                "{:>4.1}-{:<4.1} {:>9} {:>9} {:>10.4}",
                b as f64 / 10.0,
                (b + 1) as f64 / 10.0,
                self.initial_histogram[b],
                self.final_histogram[b],
                self.gradient_shares[b]
            );
        }
        let _ = writeln!(s, "mean iou: {:.6} -> {:.6}", self.mean_initial_iou, self.mean_final_iou);
        let _ = writeln!(
            s,
            "final iou >= 0.7: {:.4}  >= 0.8: {:.4}  >= 0.9: {:.4}",
            self.frac_final_ge_07, self.frac_final_ge_08, self.frac_final_ge_09
        );
        s
    }
}
