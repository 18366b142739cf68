//! Signal-dependent motility functions and their range bounds.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::HypothesisError;

/// Default number of sample points used by [`compute_bounds`].
pub const DEFAULT_SAMPLES: usize = 4096;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Constant(f64),
    ExpDecay(f64),
    Rational(f64),
    Affine(f64, f64),
    Custom { eval: ScalarFn, deriv: ScalarFn },
}

/// A motility function `φ` together with its derivative.
///
/// Builtins are positive on `[0, ∞)` by construction. Custom motilities are
/// only checked where they are sampled, in [`compute_bounds`].
#[derive(Clone)]
pub struct Motility {
    name: String,
    params: Vec<f64>,
    kind: Kind,
}

/// Config form: `{name, params}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotilitySpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl fmt::Debug for Motility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Motility").field("name", &self.name).field("params", &self.params).finish()
    }
}

fn bad(name: &str, reason: impl Into<String>) -> HypothesisError {
    HypothesisError::BadParameters { name: name.to_owned(), reason: reason.into() }
}

/// Names accepted by [`builtin_motility`].
pub const BUILTIN_NAMES: [&str; 4] = ["constant", "exp_decay", "rational", "affine"];

/// Builds one of the closed-form motilities:
///
/// | name        | params | φ(ξ)          |
/// |-------------|--------|---------------|
/// | `constant`  | `c`    | `c`           |
/// | `exp_decay` | `a`    | `exp(-a ξ)`   |
/// | `rational`  | `a`    | `1/(1 + a ξ)` |
/// | `affine`    | `a, b` | `a + b ξ`     |
pub fn builtin_motility(name: &str, params: &[f64]) -> Result<Motility, HypothesisError> {
    let arity = match name {
        "constant" | "exp_decay" | "rational" => 1,
        "affine" => 2,
        _ => return Err(HypothesisError::UnknownMotility(name.to_owned())),
    };
    if params.len() != arity {
        return Err(bad(name, format!("expects {arity} parameter(s), got {}", params.len())));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(bad(name, "parameters must be finite"));
    }
    let kind = match name {
        "constant" => {
            if params[0] <= 0.0 {
                return Err(HypothesisError::NonPositiveMotility { at: 0.0, value: params[0] });
            }
            Kind::Constant(params[0])
        }
        "exp_decay" => Kind::ExpDecay(params[0]),
        "rational" => {
            if params[0] < 0.0 {
                return Err(bad(name, "a must be nonnegative or 1 + a ξ vanishes on [0, ∞)"));
            }
            Kind::Rational(params[0])
        }
        _ => {
            let (a, b) = (params[0], params[1]);
            if a <= 0.0 {
                return Err(HypothesisError::NonPositiveMotility { at: 0.0, value: a });
            }
            if b < 0.0 {
                return Err(bad(name, "slope b must be nonnegative"));
            }
            Kind::Affine(a, b)
        }
    };
    Ok(Motility { name: name.to_owned(), params: params.to_vec(), kind })
}

impl Motility {
    pub fn from_spec(spec: &MotilitySpec) -> Result<Self, HypothesisError> {
        builtin_motility(&spec.name, &spec.params)
    }

    /// A user-supplied motility. Positivity is not checked here.
    pub fn custom<E, D>(name: &str, eval: E, deriv: D) -> Self
    where
        E: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.to_owned(),
            params: Vec::new(),
            kind: Kind::Custom { eval: Arc::new(eval), deriv: Arc::new(deriv) },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn spec(&self) -> MotilitySpec {
        MotilitySpec { name: self.name.clone(), params: self.params.clone() }
    }

    #[inline]
    pub fn eval(&self, xi: f64) -> f64 {
        match &self.kind {
            Kind::Constant(c) => *c,
            Kind::ExpDecay(a) => (-a * xi).exp(),
            Kind::Rational(a) => 1.0 / (1.0 + a * xi),
            Kind::Affine(a, b) => a + b * xi,
            Kind::Custom { eval, .. } => eval(xi),
        }
    }

    #[inline]
    pub fn deriv(&self, xi: f64) -> f64 {
        match &self.kind {
            Kind::Constant(_) => 0.0,
            Kind::ExpDecay(a) => -a * (-a * xi).exp(),
            Kind::Rational(a) => {
                let d = 1.0 + a * xi;
                -a / (d * d)
            }
            Kind::Affine(_, b) => *b,
            Kind::Custom { deriv, .. } => deriv(xi),
        }
    }

    /// `Some(c)` when φ is identically `c`.
    pub fn as_constant(&self) -> Option<f64> {
        match self.kind {
            Kind::Constant(c) => Some(c),
            _ => None,
        }
    }
}

/// Range bounds of φ and |φ′| on `[0, vbar]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotilityBounds {
    /// Lower bound of φ.
    pub kappa1: f64,
    /// Upper bound of φ.
    pub kappa2: f64,
    /// Upper bound of |φ′|.
    pub kappa3: f64,
    pub vbar: f64,
}

impl MotilityBounds {
    /// Whether `kappa1 <= phi(xi) <= kappa2` and `|phi'(xi)| <= kappa3`.
    pub fn contains(&self, phi: &Motility, xi: f64) -> bool {
        let p = phi.eval(xi);
        self.kappa1 <= p && p <= self.kappa2 && phi.deriv(xi).abs() <= self.kappa3
    }
}

/// Golden-section search for the maximiser of `f` on `[lo, hi]`.
fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> (f64, f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if hi - lo <= 1e-14 * (1.0 + hi.abs()) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let (x, fx) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    (x, fx, hi - lo)
}

/// Sampled extremum refined inside the bracket around the best sample.
/// Returns the refined maximum of `f` padded by `lip * width`, where `lip`
/// is a local Lipschitz estimate.
fn refined_max<F, L>(f: F, lip: L, xs: &[f64]) -> f64
where
    F: Fn(f64) -> f64,
    L: Fn(f64, f64) -> f64,
{
    let (best, fbest) = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (i, f(x)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if xs.len() < 2 {
        return fbest;
    }
    let lo = xs[best.saturating_sub(1)];
    let hi = xs[(best + 1).min(xs.len() - 1)];
    let (x, fx, width) = golden_max(&f, lo, hi);
    let peak = fbest.max(fx);
    // The golden search leaves the true extremum within `width` of `x`.
    peak + lip(x, width) * width
}

/// Bounds φ and |φ′| on `[0, vbar]` by dense sampling (`samples` points,
/// endpoints included) followed by refinement around each extremum.
pub fn compute_bounds_with(
    phi: &Motility,
    vbar: f64,
    samples: usize,
) -> Result<MotilityBounds, HypothesisError> {
    if !(vbar.is_finite() && vbar >= 0.0) {
        return Err(HypothesisError::Other(format!("vbar = {vbar} must be finite and nonnegative")));
    }
    let n = if vbar == 0.0 { 1 } else { samples.max(2) };
    let xs: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| vbar * i as f64 / (n - 1) as f64).collect()
    };
    for &x in &xs {
        let p = phi.eval(x);
        if !(p.is_finite() && p > 0.0) {
            return Err(HypothesisError::NonPositiveMotility { at: x, value: p });
        }
    }
    let dphi = |x: f64| phi.deriv(x);
    let slope = |x: f64, w: f64| dphi(x).abs().max(dphi((x - w).max(0.0)).abs()).max(dphi((x + w).min(vbar)).abs());
    let kappa2 = refined_max(|x| phi.eval(x), slope, &xs);
    let kappa1 = -refined_max(|x| -phi.eval(x), slope, &xs);
    let curvature = |x: f64, w: f64| {
        let h = w.max(1e-6 * (1.0 + vbar));
        let (a, b) = ((x - h).max(0.0), (x + h).min(vbar));
        if b > a {
            ((dphi(b) - dphi(a)) / (b - a)).abs()
        } else {
            0.0
        }
    };
    let kappa3 = refined_max(|x| dphi(x).abs(), curvature, &xs);
    if !(kappa1 > 0.0) {
        return Err(HypothesisError::NonPositiveMotility { at: f64::NAN, value: kappa1 });
    }
    Ok(MotilityBounds { kappa1, kappa2, kappa3, vbar })
}

/// [`compute_bounds_with`] at the default sample density.
pub fn compute_bounds(phi: &Motility, vbar: f64) -> Result<MotilityBounds, HypothesisError> {
    compute_bounds_with(phi, vbar, DEFAULT_SAMPLES)
}
