//! Binary KL divergence, its inversion, and the PAC-Bayes bound formulas.
//!
//! Everything here is pure `f64` arithmetic in nats. The penalty shared by
//! all bounds is
//!
//! ```text
//! B = (KL(Q || Q0) + ln(2 sqrt(n) / delta)) / n
//! ```
//!
//! and the certificate is the nested inversion
//! `kl_inv(kl_inv(mc_avg, ln(2/delta')/m), B)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Absolute tolerance of the bisection in [`kl_inversion`].
pub const KL_INV_TOL: f64 = 1e-9;
/// Iteration cap of the bisection in [`kl_inversion`].
pub const KL_INV_MAX_ITER: usize = 200;

/// Confidence and sample-count inputs to a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundBudget {
    pub delta: f64,
    pub delta_prime: f64,
    pub n_bound: usize,
    pub m_mc: usize,
}

impl BoundBudget {
    pub fn new(delta: f64, delta_prime: f64, n_bound: usize, m_mc: usize) -> Result<Self> {
        let b = Self {
            delta,
            delta_prime,
            n_bound,
            m_mc,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_open_unit(self.delta, "delta")?;
        check_open_unit(self.delta_prime, "delta_prime")?;
        if self.n_bound == 0 {
            return Err(domain("n_bound must be at least 1"));
        }
        if self.m_mc == 0 {
            return Err(domain("m_mc must be at least 1"));
        }
        Ok(())
    }

    /// Overall confidence `1 - delta - delta'` of a certificate.
    pub fn confidence(&self) -> f64 {
        1.0 - self.delta - self.delta_prime
    }
}

/// The KL-plus-confidence penalty shared by every bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenTerm {
    pub kl_div: f64,
    pub n: usize,
    pub delta: f64,
}

impl PenTerm {
    pub fn new(kl_div: f64, n: usize, delta: f64) -> Result<Self> {
        if !(kl_div >= 0.0) {
            return Err(domain(format!(
                "KL divergence must be nonnegative, got {kl_div}"
            )));
        }
        if n == 0 {
            return Err(domain("n must be at least 1"));
        }
        check_open_unit(delta, "delta")?;
        Ok(Self { kl_div, n, delta })
    }

    /// `ln(2 sqrt(n) / delta)`.
    pub fn log_term(&self) -> f64 {
        confidence_log_term(self.n, self.delta)
    }

    /// `B = (KL + ln(2 sqrt(n)/delta)) / n`.
    pub fn value(&self) -> f64 {
        (self.kl_div + self.log_term()) / self.n as f64
    }
}

pub(crate) fn confidence_log_term(n: usize, delta: f64) -> f64 {
    (2.0 * (n as f64).sqrt() / delta).ln()
}

fn check_open_unit(x: f64, name: &str) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must lie in (0,1), got {x}")))
    }
}

fn check_prob(x: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(domain(format!("{name} must lie in [0,1], got {x}")))
    }
}

/// `kl(q || q')` between Bernoulli(q) and Bernoulli(q'), with `0 ln 0 = 0`.
pub fn binary_kl(q: f64, q_prime: f64) -> Result<f64> {
    check_prob(q, "q")?;
    check_prob(q_prime, "q'")?;
    Ok(binary_kl_unchecked(q, q_prime))
}

pub(crate) fn binary_kl_unchecked(q: f64, p: f64) -> f64 {
    let first = if q == 0.0 {
        0.0
    } else if p == 0.0 {
        return f64::INFINITY;
    } else {
        q * log_ratio(q, p)
    };
    let second = if q == 1.0 {
        0.0
    } else if p == 1.0 {
        return f64::INFINITY;
    } else {
        (1.0 - q) * log_ratio(1.0 - q, 1.0 - p)
    };
    (first + second).max(0.0)
}

/// `ln(a / b)`, through `ln_1p` when the ratio is close to one.
fn log_ratio(a: f64, b: f64) -> f64 {
    let t = (b - a) / a;
    if t.abs() < 0.5 {
        -t.ln_1p()
    } else {
        (a / b).ln()
    }
}

/// `sup { y in [x, 1] : kl(x || y) <= b }` by bisection.
///
/// `kl(x || .)` is increasing on `[x, 1]`, so the feasible set is an interval
/// and the bisection keeps `lo` feasible throughout. It runs until the
/// bracket is below [`KL_INV_TOL`] and then keeps halving while the bracket
/// still shrinks in floating point (at most [`KL_INV_MAX_ITER`] steps), which
/// lands on the last representable feasible `y`.
pub fn kl_inversion(x: f64, b: f64) -> Result<f64> {
    check_prob(x, "x")?;
    if !(b >= 0.0) {
        return Err(domain(format!("budget b must be nonnegative, got {b}")));
    }
    if b == 0.0 || x == 1.0 {
        return Ok(x);
    }
    if b.is_infinite() {
        return Ok(1.0);
    }
    let mut lo = x;
    let mut hi = 1.0;
    for _ in 0..KL_INV_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if binary_kl_unchecked(x, mid) <= b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The upper end is only feasible as a limit; report it when the bisection
    // could not separate lo from 1.
    if hi == 1.0 && 1.0 - lo <= f64::EPSILON {
        return Ok(1.0);
    }
    Ok(lo)
}

/// PAC-Bayes-classic: `emp + sqrt(B/2)`.
pub fn bound_classic(emp: f64, pen: &PenTerm) -> Result<f64> {
    check_prob(emp, "emp")?;
    Ok(classic_from_penalty(emp, pen.value()))
}

/// PAC-Bayes-quadratic: `(sqrt(emp + B/2) + sqrt(B/2))^2`.
pub fn bound_quad(emp: f64, pen: &PenTerm) -> Result<f64> {
    check_prob(emp, "emp")?;
    Ok(quad_from_penalty(emp, pen.value()))
}

/// PAC-Bayes-lambda: `emp / (1 - lambda/2) + B / (lambda (1 - lambda/2))`.
pub fn bound_lambda(emp: f64, pen: &PenTerm, lambda: f64) -> Result<f64> {
    check_prob(emp, "emp")?;
    if !(lambda > 0.0 && lambda < 2.0) {
        return Err(domain(format!("lambda must lie in (0,2), got {lambda}")));
    }
    Ok(lambda_from_penalty(emp, pen.value(), lambda))
}

pub fn classic_from_penalty(emp: f64, b: f64) -> f64 {
    emp + (b / 2.0).sqrt()
}

pub fn quad_from_penalty(emp: f64, b: f64) -> f64 {
    let h = b / 2.0;
    let s = (emp + h).sqrt() + h.sqrt();
    s * s
}

pub fn lambda_from_penalty(emp: f64, b: f64, lambda: f64) -> f64 {
    let g = 1.0 - lambda / 2.0;
    emp / g + b / (lambda * g)
}

/// Variational objective `emp + eta * KL / n`.
pub fn objective_bbb(emp: f64, kl_div: f64, n: usize, eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(domain(format!("eta must be positive, got {eta}")));
    }
    if n == 0 {
        return Err(domain("n must be at least 1"));
    }
    Ok(emp + eta * kl_div / n as f64)
}

/// Budget `ln(2/delta') / m` of the Monte-Carlo sampling step.
pub fn mc_budget(m: usize, delta_prime: f64) -> f64 {
    (2.0 / delta_prime).ln() / m as f64
}

/// Upper bound on the true empirical loss of Q from its m-sample average.
pub fn mc_loss_upper(avg: f64, m: usize, delta_prime: f64) -> Result<f64> {
    check_open_unit(delta_prime, "delta_prime")?;
    if m == 0 {
        return Err(domain("m must be at least 1"));
    }
    kl_inversion(avg, mc_budget(m, delta_prime))
}

/// Nested certificate: invert the MC bound, then the PAC-Bayes-kl bound.
pub fn final_certificate(avg: f64, budget: &BoundBudget, kl_div: f64) -> Result<f64> {
    budget.validate()?;
    let upper = mc_loss_upper(avg, budget.m_mc, budget.delta_prime)?;
    let pen = PenTerm::new(kl_div, budget.n_bound, budget.delta)?;
    kl_inversion(upper, pen.value())
}

/// Informational union-bound correction `ln(C) / n` over `C` configurations.
pub fn union_bound_correction(configs: usize, n_bound: usize) -> f64 {
    (configs.max(1) as f64).ln() / n_bound as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Independent oracle: plain bisection to the last feasible float, written
    // with a fixed 1100-step loop over the float interval.
    fn oracle_inv(x: f64, b: f64) -> f64 {
        let kl = |y: f64| {
            let a = if x == 0.0 { 0.0 } else { x * (x / y).ln() };
            let c = if x == 1.0 {
                0.0
            } else {
                (1.0 - x) * ((1.0 - x) / (1.0 - y)).ln()
            };
            a + c
        };
        let (mut lo, mut hi) = (x, 1.0f64);
        for _ in 0..1100 {
            let mid = lo + (hi - lo) / 2.0;
            if kl(mid) <= b {
                lo = mid
            } else {
                hi = mid
            }
        }
        lo
    }

    #[test]
    fn binary_kl_examples() {
        assert_eq!(binary_kl(0.5, 0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(
            binary_kl(0.0, 0.5).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        // 0.1 ln 0.5 + 0.9 ln(0.9/0.8), evaluated in 30-digit arithmetic.
        assert_abs_diff_eq!(
            binary_kl(0.1, 0.2).unwrap(),
            0.036_690_014_034_750_55,
            epsilon = 1e-15
        );
    }

    #[test]
    fn binary_kl_boundaries() {
        assert_eq!(binary_kl(0.3, 0.0).unwrap(), f64::INFINITY);
        assert_eq!(binary_kl(0.3, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(binary_kl(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(binary_kl(1.0, 1.0).unwrap(), 0.0);
        assert!(binary_kl(-0.1, 0.5).is_err());
        assert!(binary_kl(0.5, 1.5).is_err());
    }

    #[test]
    fn inversion_examples() {
        for &x in &[0.0, 0.2, 0.7, 1.0] {
            assert_eq!(kl_inversion(x, 0.0).unwrap(), x);
        }
        for &b in &[1e-4f64, 0.01, 0.5, 3.0] {
            let closed = 1.0 - (-b).exp();
            assert_abs_diff_eq!(kl_inversion(0.0, b).unwrap(), closed, epsilon = 1e-12);
            assert_abs_diff_eq!(
                kl_inversion(0.0, b).unwrap(),
                oracle_inv(0.0, b),
                epsilon = 1e-15
            );
        }
        // kl(0.3 || y) reaches 10 only about 2.6e-7 below 1.
        let y = kl_inversion(0.3, 10.0).unwrap();
        assert_abs_diff_eq!(y, oracle_inv(0.3, 10.0), epsilon = 1e-14);
        assert!(y > 1.0 - 3e-7 && y < 1.0, "{y}");
        assert!(kl_inversion(-0.1, 1.0).is_err());
        assert!(kl_inversion(0.1, -1.0).is_err());
        assert!(kl_inversion(0.1, f64::NAN).is_err());
        assert_eq!(kl_inversion(0.4, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn inversion_returns_last_feasible_float() {
        for &(x, b) in &[
            (0.02, 5.298_317_366_548_036e-4),
            (0.31, 0.2),
            (0.9, 0.05),
            (0.001, 3.0),
        ] {
            let y = kl_inversion(x, b).unwrap();
            assert!(binary_kl_unchecked(x, y) <= b);
            let next = f64::from_bits(y.to_bits() + 1);
            assert!(next >= 1.0 || binary_kl_unchecked(x, next) > b);
            assert_abs_diff_eq!(y, oracle_inv(x, b), epsilon = 1e-14);
        }
    }

    #[test]
    fn relaxation_examples() {
        let pen = PenTerm::new(0.0, 100, 0.05).unwrap();
        assert_abs_diff_eq!(pen.value(), (400f64).ln() / 100.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            bound_classic(0.0, &pen).unwrap(),
            0.173_081_838_260_228_5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bound_quad(0.0, &pen).unwrap(),
            0.119_829_290_942_159_6,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bound_lambda(0.0, &pen, 1.0).unwrap(),
            2.0 * pen.value(),
            epsilon = 1e-15
        );

        let pen = PenTerm::new(2.0, 1000, 0.025).unwrap();
        assert_abs_diff_eq!(
            bound_classic(0.1, &pen).unwrap(),
            0.170_128_112_316_548_7,
            epsilon = 1e-12
        );

        // (sqrt(0.11) + sqrt(0.01))^2
        assert_abs_diff_eq!(
            quad_from_penalty(0.1, 0.02),
            0.186_332_495_807_108,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(quad_from_penalty(0.37, 0.0), 0.37, epsilon = 1e-15);
        assert_abs_diff_eq!(
            lambda_from_penalty(0.1, 0.02, 0.46),
            0.186_335_403_726_708_1,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(lambda_from_penalty(0.25, 0.0, 1e-9), 0.25, epsilon = 1e-9);
        assert!(bound_lambda(0.1, &pen, 0.0).is_err());
        assert!(bound_lambda(0.1, &pen, 2.0).is_err());
    }

    #[test]
    fn vacuous_bounds_are_not_clamped() {
        let pen = PenTerm::new(5000.0, 100, 0.05).unwrap();
        assert!(bound_classic(0.5, &pen).unwrap() > 1.0);
        assert!(bound_quad(0.5, &pen).unwrap() > 1.0);
    }

    #[test]
    fn bbb_examples() {
        assert_abs_diff_eq!(
            objective_bbb(0.3, 5.0, 100, 1.0).unwrap(),
            0.35,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            objective_bbb(0.3, 5.0, 100, 0.1).unwrap(),
            0.305,
            epsilon = 1e-15
        );
        assert_eq!(objective_bbb(0.42, 0.0, 7, 3.0).unwrap(), 0.42);
        assert!(objective_bbb(0.3, 1.0, 10, 0.0).is_err());
    }

    #[test]
    fn mc_upper_examples() {
        // 1 - exp(-ln(200)/150000)
        let u = mc_loss_upper(0.0, 150_000, 0.01).unwrap();
        assert_abs_diff_eq!(u, 3.532_149_195_840_03e-5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            mc_loss_upper(0.5, usize::MAX, 0.01).unwrap(),
            0.5,
            epsilon = 1e-9
        );
        let u = mc_loss_upper(0.02, 10_000, 0.01).unwrap();
        assert_abs_diff_eq!(u, 0.024_901_245_326_154_28, epsilon = 1e-10);
    }

    #[test]
    fn final_certificate_examples() {
        let budget = BoundBudget::new(0.025, 0.01, 30_000, 150_000).unwrap();
        let c = final_certificate(0.0, &budget, 0.0).unwrap();
        // nested inversion in 30-digit arithmetic
        assert_abs_diff_eq!(c, 4.424_054_140_632_438e-4, epsilon = 1e-10);
        assert!(c > 0.0 && c < 0.01);
        assert_eq!(final_certificate(0.1, &budget, f64::INFINITY).unwrap(), 1.0);
        assert!(final_certificate(0.1, &budget, 1e12).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn budget_validation() {
        assert!(BoundBudget::new(0.0, 0.01, 10, 10).is_err());
        assert!(BoundBudget::new(0.025, 1.0, 10, 10).is_err());
        assert!(BoundBudget::new(0.025, 0.01, 0, 10).is_err());
        assert!(BoundBudget::new(0.025, 0.01, 10, 0).is_err());
        assert_abs_diff_eq!(
            BoundBudget::new(0.025, 0.01, 1, 1).unwrap().confidence(),
            0.965
        );
    }

    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        for _ in 0..200 {
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - r * (b - a);
            d = a + r * (b - a);
        }
        f(0.5 * (a + b))
    }

    proptest! {
        #[test]
        fn inversion_is_monotone(x in 0.0..=1.0f64, dx in 0.0..0.2f64, b in 0.0..5.0f64, db in 0.0..1.0f64) {
            let y = kl_inversion(x, b).unwrap();
            prop_assert!(y >= x);
            prop_assert!(kl_inversion((x + dx).min(1.0), b).unwrap() >= y);
            prop_assert!(kl_inversion(x, b + db).unwrap() >= y);
        }

        #[test]
        fn relaxations_dominate_inversion(emp in 0.0..=1.0f64, b in 0.0..5.0f64) {
            let inv = kl_inversion(emp, b).unwrap();
            prop_assert!(inv <= quad_from_penalty(emp, b) + 1e-12);
            prop_assert!(inv <= classic_from_penalty(emp, b) + 1e-12);
        }

        #[test]
        fn lambda_minimum_is_quad(emp in 0.0..=1.0f64, b in 0.0..5.0f64) {
            let m = golden_min(|l| lambda_from_penalty(emp, b, l), 1e-4, 2.0 - 1e-4);
            prop_assert!((m - quad_from_penalty(emp, b)).abs() <= 1e-6);
        }

        #[test]
        fn pinsker_inequalities(q in 0.0..=1.0f64, p in 1e-6..1.0f64) {
            let kl = binary_kl(q, p).unwrap();
            prop_assert!(kl >= 2.0 * (q - p) * (q - p) - 1e-12);
            if q < p {
                prop_assert!(kl >= (p - q) * (p - q) / (2.0 * p) - 1e-12);
            }
        }
    }
}
