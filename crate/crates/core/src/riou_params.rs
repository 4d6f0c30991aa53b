//! Coefficients of the rectified IoU loss.
//!
//! The gradient magnitude is the hyperbola `g(x) = a x + b + k / (x - c)` and
//! the loss is `1 - (a/2 x^2 + b x + k ln|x - c| + t)`. The five coefficients
//! are pinned by five conditions:
//!
//! 1. `g(0) = 0`:  `b - k/c = 0`
//! 2. `g(1) = 0`:  `a + b + k/(1 - c) = 0`
//! 3. `g` peaks at `beta`:  `c - sqrt(k/a) = beta`
//! 4. loss is 1 at IoU 0:  `k ln|c| + t = 0`
//! 5. loss is 0 at IoU 1:  `a/2 + b + k ln|1 - c| + t = 1`
//!
//! Eliminating `a`, `b` and `k` from the first three leaves
//! `(c - beta)^2 = c (c - 1)`, so `c = beta^2 / (2 beta - 1)`. The remaining
//! coefficients then follow in closed form.

use thiserror::Error;

/// Residuals above this are treated as a failed solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error(
        "beta = {beta} is outside the valid domain (0.5, 1): at or below 0.5 the pole c = beta^2/(2 beta - 1) \
         is undefined or negative, and at 1 the gradient pole lands on IoU = 1 so the boundary conditions are singular"
    )]
    BetaOutOfDomain { beta: f64 },
    #[error("solved coefficients for beta = {beta} leave residual {residual:e} above {RESIDUAL_TOLERANCE:e}")]
    ResidualTooLarge { beta: f64, residual: f64 },
}

/// Raw coefficients, without any guarantee that they satisfy the constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub k: f64,
    pub t: f64,
}

/// A solved loss instance. Only obtainable through [`solve_params`], so the
/// constraint residuals are always below [`RESIDUAL_TOLERANCE`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiouParams {
    beta: f64,
    coeffs: Coefficients,
    // c - 1, computed without cancellation
    c_minus_one: f64,
    // unnormalised loss at IoU = 0; equals 1/a
    norm: f64,
}

impl RiouParams {
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn a(&self) -> f64 {
        self.coeffs.a
    }
    pub fn b(&self) -> f64 {
        self.coeffs.b
    }
    pub fn c(&self) -> f64 {
        self.coeffs.c
    }
    pub fn k(&self) -> f64 {
        self.coeffs.k
    }
    pub fn t(&self) -> f64 {
        self.coeffs.t
    }

    pub fn coefficients(&self) -> Coefficients {
        self.coeffs
    }

    pub fn residuals(&self) -> [f64; 5] {
        residuals(&self.coeffs, self.beta)
    }

    pub fn max_residual(&self) -> f64 {
        max_abs(&self.residuals())
    }

    /// Gradient magnitude at `x`, written as `a x (1 - x) / (c - x)`.
    ///
    /// This is the same hyperbola as `a x + b + k/(x - c)` once the first two
    /// conditions hold, but it vanishes exactly at both ends of `[0, 1]` and
    /// avoids cancellation near the pole.
    pub(crate) fn grad_unchecked(&self, x: f64) -> f64 {
        x * (1.0 - x) / ((self.c_minus_one + (1.0 - x)) * self.norm)
    }

    /// Loss at `x`, written as the integral of the gradient from `x` to 1.
    ///
    /// `phi(x) / phi(0)` with
    /// `phi(x) = (1 - x^2)/2 + (c-1)(1-x) + c (c-1) ln((c-1)/(c-x))`,
    /// which is exactly 1 at `x = 0` and exactly 0 at `x = 1`.
    pub(crate) fn loss_unchecked(&self, x: f64) -> f64 {
        self.phi(x) / self.norm
    }

    fn phi(&self, x: f64) -> f64 {
        let cm1 = self.c_minus_one;
        0.5 * (1.0 - x * x)
            + cm1 * (1.0 - x)
            + self.coeffs.c * cm1 * (cm1 / (cm1 + (1.0 - x))).ln()
    }
}

/// Left-hand side minus right-hand side of the five constraints, in the order
/// listed in the module docs.
pub fn residuals(p: &Coefficients, beta: f64) -> [f64; 5] {
    let Coefficients { a, b, c, k, t } = *p;
    [
        b - k / c,
        a + b + k / (1.0 - c),
        c - (k / a).sqrt() - beta,
        k * c.abs().ln() + t,
        a / 2.0 + b + k * (1.0 - c).abs().ln() + t - 1.0,
    ]
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, r| {
        if r.is_nan() {
            f64::INFINITY
        } else {
            m.max(r.abs())
        }
    })
}

/// Solves for the coefficients whose gradient peaks at `beta`.
///
/// `beta` must lie in the open interval (0.5, 1). Within a few thousandths of
/// either end the coefficients cannot be represented accurately enough in
/// double precision for the residuals to stay below [`RESIDUAL_TOLERANCE`];
/// those inputs fail with [`ParamError::ResidualTooLarge`].
pub fn solve_params(beta: f64) -> Result<RiouParams, ParamError> {
    if !(beta > 0.5 && beta < 1.0) {
        return Err(ParamError::BetaOutOfDomain { beta });
    }
    let denom = 2.0 * beta - 1.0;
    let c = beta * beta / denom;
    let c_minus_one = (1.0 - beta) * (1.0 - beta) / denom;

    let mut params = RiouParams {
        beta,
        coeffs: Coefficients {
            a: 0.0,
            b: 0.0,
            c,
            k: 0.0,
            t: 0.0,
        },
        c_minus_one,
        norm: 1.0,
    };
    let norm = params.phi(0.0);
    let a = 1.0 / norm;
    let k = a * (c - beta) * (c - beta);
    let b = k / c;
    let t = -k * c.ln();
    params.coeffs = Coefficients { a, b, c, k, t };
    params.norm = norm;

    let residual = params.max_residual();
    // a NaN residual must fail too
    if residual.is_nan() || residual >= RESIDUAL_TOLERANCE {
        return Err(ParamError::ResidualTooLarge { beta, residual });
    }
    Ok(params)
}
