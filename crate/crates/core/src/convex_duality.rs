//! One-dimensional convex conjugation.
//!
//! Every model in the crate builds its Lagrangian as the Legendre transform
//! of a Hamiltonian that is smooth and strictly convex in the momentum. This
//! module provides the numeric transform used to cross-check those closed
//! forms:
//!
//! ```text
//! f*(s) = sup_p [ s·p − f(p) ]
//! ```
//!
//! The supremum is located with a golden-section search on a bracket and,
//! when a derivative is available, polished with Newton iterations on
//! `f'(p) = s`.

use std::sync::Arc;

use thiserror::Error;

type Evaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Where a [`ScalarFunction`] is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Real,
    /// Closed interval `[lo, hi]`.
    Interval(f64, f64),
}

impl Domain {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Domain::Real => x.is_finite(),
            Domain::Interval(lo, hi) => x >= lo && x <= hi,
        }
    }
}

/// A real function of one variable, optionally carrying its derivative.
///
/// Evaluators are shared behind `Arc` and must be callable concurrently.
#[derive(Clone)]
pub struct ScalarFunction {
    eval: Evaluator,
    derivative: Option<Evaluator>,
    domain: Domain,
}

impl std::fmt::Debug for ScalarFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarFunction")
            .field("domain", &self.domain)
            .field("has_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl ScalarFunction {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(f),
            derivative: None,
            domain: Domain::Real,
        }
    }

    pub fn with_derivative(mut self, df: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(df));
        self
    }

    pub fn on_interval(mut self, lo: f64, hi: f64) -> Self {
        self.domain = Domain::Interval(lo, hi);
        self
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn derivative(&self, x: f64) -> Option<f64> {
        self.derivative.as_ref().map(|d| d(x))
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    /// Largest relative mismatch between the supplied derivative and a
    /// central difference of the evaluator over `points`. `None` when no
    /// derivative was supplied.
    pub fn derivative_mismatch(&self, points: &[f64]) -> Option<f64> {
        let d = self.derivative.as_ref()?;
        let mut worst: f64 = 0.0;
        for &x in points {
            let h = 1e-5 * x.abs().max(1.0);
            let fd = (self.eval(x + h) - self.eval(x - h)) / (2.0 * h);
            let exact = d(x);
            let rel = (fd - exact).abs() / exact.abs().max(1.0);
            worst = worst.max(rel);
        }
        Some(worst)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualityError {
    #[error("supremum is unbounded at slope {slope} (maximizer escapes every bracket)")]
    NonCoercive { slope: f64 },
    #[error("midpoint convexity violated near p = {at}")]
    NotConvex { at: f64 },
}

/// Settings for [`conjugate`].
#[derive(Debug, Clone, Copy)]
pub struct ConjugateSolver {
    pub bracket: (f64, f64),
    pub value_tol: f64,
    pub argmax_tol: f64,
    /// Number of grid points used for the convexity probe.
    pub probe_points: usize,
    pub max_doublings: usize,
}

impl Default for ConjugateSolver {
    fn default() -> Self {
        Self {
            bracket: (-50.0, 50.0),
            value_tol: 1e-10,
            argmax_tol: 1e-8,
            probe_points: 65,
            max_doublings: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conjugate {
    pub value: f64,
    pub argmax: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden_max(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut gc = g(c);
    let mut gd = g(d);
    while (b - a).abs() > tol * (1.0 + c.abs().max(d.abs())) {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d);
        }
    }
    // Compare the interior best against the bracket ends so a maximizer on a
    // hard domain edge is returned exactly.
    let mid = 0.5 * (a + b);
    let mut best = (mid, g(mid));
    for x in [a, b] {
        let gx = g(x);
        if gx > best.1 {
            best = (x, gx);
        }
    }
    best.0
}

fn check_convexity(f: &ScalarFunction, lo: f64, hi: f64, points: usize) -> Result<(), DualityError> {
    let n = points.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let vals: Vec<f64> = (0..n).map(|i| f.eval(lo + step * i as f64)).collect();
    for i in 1..n - 1 {
        let (a, m, b) = (vals[i - 1], vals[i], vals[i + 1]);
        if !(a.is_finite() && m.is_finite() && b.is_finite()) {
            continue;
        }
        let scale = 1.0 + a.abs() + b.abs();
        if m > 0.5 * (a + b) + 1e-9 * scale {
            return Err(DualityError::NotConvex {
                at: lo + step * i as f64,
            });
        }
    }
    Ok(())
}

/// `sup_p [slope·p − f(p)]` together with its maximizer.
pub fn conjugate(
    f: &ScalarFunction,
    slope: f64,
    solver: &ConjugateSolver,
) -> Result<Conjugate, DualityError> {
    let (mut lo, mut hi) = solver.bracket;
    let (mut hard_lo, mut hard_hi) = (false, false);
    if let Domain::Interval(dlo, dhi) = f.domain() {
        if dlo >= lo {
            lo = dlo;
            hard_lo = true;
        }
        if dhi <= hi {
            hi = dhi;
            hard_hi = true;
        }
    }
    check_convexity(f, lo, hi, solver.probe_points)?;

    let g = |p: f64| slope * p - f.eval(p);
    let mut doublings = 0;
    let mut p = loop {
        let p = golden_max(&g, lo, hi, solver.argmax_tol * 1e-2);
        let edge = 1e-6 * (hi - lo);
        let at_lo = !hard_lo && p - lo <= edge;
        let at_hi = !hard_hi && hi - p <= edge;
        if !(at_lo || at_hi) {
            break p;
        }
        if doublings == solver.max_doublings {
            return Err(DualityError::NonCoercive { slope });
        }
        let width = hi - lo;
        if at_lo {
            lo -= width;
            if let Domain::Interval(dlo, _) = f.domain() {
                if dlo >= lo {
                    lo = dlo;
                    hard_lo = true;
                }
            }
        }
        if at_hi {
            hi += width;
            if let Domain::Interval(_, dhi) = f.domain() {
                if dhi <= hi {
                    hi = dhi;
                    hard_hi = true;
                }
            }
        }
        doublings += 1;
    };

    if f.has_derivative() {
        p = newton_polish(f, slope, p, lo, hi);
    }
    Ok(Conjugate {
        value: g(p),
        argmax: p,
    })
}

fn newton_polish(f: &ScalarFunction, slope: f64, start: f64, lo: f64, hi: f64) -> f64 {
    let df = |x: f64| f.derivative(x).expect("derivative checked by caller");
    let g = |x: f64| slope * x - f.eval(x);
    let mut p = start;
    let mut best = g(p);
    for _ in 0..30 {
        let r = df(p) - slope;
        if r.abs() <= 1e-13 * (1.0 + slope.abs()) {
            break;
        }
        let h = 1e-6 * p.abs().max(1.0);
        let curv = (df(p + h) - df(p - h)) / (2.0 * h);
        if !(curv > 0.0) || !curv.is_finite() {
            break;
        }
        let next = p - r / curv;
        if !(lo..=hi).contains(&next) {
            break;
        }
        let gn = g(next);
        if gn + 1e-15 * (1.0 + gn.abs()) < best {
            break;
        }
        best = best.max(gn);
        p = next;
    }
    p
}

/// Largest discrepancy `|H(x,p) − sup_q [p·q − L(x,q)]|` over the grid.
///
/// Swap the two families to check the reverse direction.
pub fn duality_gap<H, L>(
    hamiltonian: H,
    lagrangian: L,
    states: &[f64],
    slopes: &[f64],
    solver: &ConjugateSolver,
) -> Result<f64, DualityError>
where
    H: Fn(f64) -> ScalarFunction,
    L: Fn(f64) -> ScalarFunction,
{
    let mut gap: f64 = 0.0;
    for &x in states {
        let h = hamiltonian(x);
        let l = lagrangian(x);
        for &p in slopes {
            let c = conjugate(&l, p, solver)?;
            gap = gap.max((h.eval(p) - c.value).abs());
        }
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> ScalarFunction {
        ScalarFunction::new(|p| 0.5 * p * p).with_derivative(|p| p)
    }

    #[test]
    fn quadratic_is_self_conjugate() {
        let c = conjugate(&quad(), 1.0, &ConjugateSolver::default()).unwrap();
        assert!((c.value - 0.5).abs() < 1e-10);
        assert!((c.argmax - 1.0).abs() < 1e-8);
    }

    #[test]
    fn exponential_conjugate_at_one() {
        let f = ScalarFunction::new(|p: f64| p.exp() - 1.0).with_derivative(f64::exp);
        let c = conjugate(&f, 1.0, &ConjugateSolver::default()).unwrap();
        assert!(c.value.abs() < 1e-10);
        assert!(c.argmax.abs() < 1e-8);
    }

    #[test]
    fn magnetization_hamiltonian_at_zero() {
        // H(0,p) = cosh(2p) − 1; the slope-2 supremum sits at sinh(2p) = 1.
        let f = ScalarFunction::new(|p: f64| (2.0 * p).cosh() - 1.0)
            .with_derivative(|p: f64| 2.0 * (2.0 * p).sinh());
        let c = conjugate(&f, 2.0, &ConjugateSolver::default()).unwrap();
        assert!((c.value - 0.467_160_024_646_447_9).abs() < 1e-10, "{}", c.value);
        assert!((f.derivative(c.argmax).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn golden_section_alone_reaches_tolerance() {
        let f = ScalarFunction::new(|p| 0.5 * p * p);
        let c = conjugate(&f, -3.0, &ConjugateSolver::default()).unwrap();
        assert!((c.value - 4.5).abs() < 1e-10);
        assert!((c.argmax + 3.0).abs() < 1e-6);
    }

    #[test]
    fn linear_function_is_non_coercive() {
        let f = ScalarFunction::new(|p| p);
        let err = conjugate(&f, 2.0, &ConjugateSolver::default()).unwrap_err();
        assert_eq!(err, DualityError::NonCoercive { slope: 2.0 });
    }

    #[test]
    fn concave_function_is_rejected() {
        let f = ScalarFunction::new(|p: f64| -p * p);
        assert!(matches!(
            conjugate(&f, 0.0, &ConjugateSolver::default()),
            Err(DualityError::NotConvex { .. })
        ));
    }

    #[test]
    fn hard_interval_edge_is_a_valid_maximizer() {
        // f = p²/2 on [−1, 1]: for slope 3 the maximizer is the edge p = 1.
        let f = quad().on_interval(-1.0, 1.0);
        let c = conjugate(&f, 3.0, &ConjugateSolver::default()).unwrap();
        assert!((c.argmax - 1.0).abs() < 1e-9);
        assert!((c.value - 2.5).abs() < 1e-9);
    }

    #[test]
    fn gap_for_offset_pair() {
        let solver = ConjugateSolver::default();
        let states = [0.0];
        let slopes: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.5).collect();
        let exact = duality_gap(|_| quad(), |_| quad(), &states, &slopes, &solver).unwrap();
        assert!(exact < 1e-10);
        let shifted = duality_gap(
            |_| quad(),
            |_| ScalarFunction::new(|q| 0.5 * q * q + 0.1).with_derivative(|q| q),
            &states,
            &slopes,
            &solver,
        )
        .unwrap();
        assert!((shifted - 0.1).abs() < 1e-9);
    }

    #[test]
    fn derivative_mismatch_detects_wrong_derivative() {
        let pts = [-1.0, 0.3, 2.0];
        assert!(quad().derivative_mismatch(&pts).unwrap() < 1e-6);
        let bad = ScalarFunction::new(|p| 0.5 * p * p).with_derivative(|p| 2.0 * p);
        assert!(bad.derivative_mismatch(&pts).unwrap() > 0.1);
    }
}
