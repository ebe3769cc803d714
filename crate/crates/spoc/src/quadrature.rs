//! Gauss-Legendre quadrature used for load assembly and time integrals.

use crate::error::{Error, Result};

/// A quadrature node/weight pair on the reference interval [-1, 1].
#[derive(Debug, Clone, Copy)]
pub struct GaussPoint {
    pub x: f64,
    pub w: f64,
}

const GL1: [GaussPoint; 1] = [GaussPoint { x: 0.0, w: 2.0 }];

const GL2: [GaussPoint; 2] = [
    GaussPoint {
        x: -0.577_350_269_189_625_8,
        w: 1.0,
    },
    GaussPoint {
        x: 0.577_350_269_189_625_8,
        w: 1.0,
    },
];

const GL3: [GaussPoint; 3] = [
    GaussPoint {
        x: -0.774_596_669_241_483_4,
        w: 5.0 / 9.0,
    },
    GaussPoint {
        x: 0.0,
        w: 8.0 / 9.0,
    },
    GaussPoint {
        x: 0.774_596_669_241_483_4,
        w: 5.0 / 9.0,
    },
];

const GL4: [GaussPoint; 4] = [
    GaussPoint {
        x: -0.861_136_311_594_052_6,
        w: 0.347_854_845_137_453_85,
    },
    GaussPoint {
        x: -0.339_981_043_584_856_26,
        w: 0.652_145_154_862_546_2,
    },
    GaussPoint {
        x: 0.339_981_043_584_856_26,
        w: 0.652_145_154_862_546_2,
    },
    GaussPoint {
        x: 0.861_136_311_594_052_6,
        w: 0.347_854_845_137_453_85,
    },
];

const GL5: [GaussPoint; 5] = [
    GaussPoint {
        x: -0.906_179_845_938_664,
        w: 0.236_926_885_056_189_08,
    },
    GaussPoint {
        x: -0.538_469_310_105_683,
        w: 0.478_628_670_499_366_47,
    },
    GaussPoint {
        x: 0.0,
        w: 0.568_888_888_888_888_9,
    },
    GaussPoint {
        x: 0.538_469_310_105_683,
        w: 0.478_628_670_499_366_47,
    },
    GaussPoint {
        x: 0.906_179_845_938_664,
        w: 0.236_926_885_056_189_08,
    },
];

/// Returns the Gauss-Legendre rule with `order` points (1..=5).
pub fn points(order: usize) -> Option<&'static [GaussPoint]> {
    match order {
        1 => Some(&GL1),
        2 => Some(&GL2),
        3 => Some(&GL3),
        4 => Some(&GL4),
        5 => Some(&GL5),
        _ => None,
    }
}

/// Load-assembly rule; rejects orders below 2 (a one-point rule cannot
/// integrate products against the linear basis exactly).
pub fn load_rule(order: usize) -> Result<&'static [GaussPoint]> {
    if order < 2 {
        return Err(Error::QuadratureOrder(order));
    }
    points(order).ok_or(Error::QuadratureOrder(order))
}

/// Integrates `f` over [a, b] with the given rule.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rule: &[GaussPoint]) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    rule.iter().map(|p| p.w * f(mid + half * p.x)).sum::<f64>() * half
}

/// Composite rule: splits [a, b] into `panels` equal panels.
pub fn integrate_composite(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    panels: usize,
    rule: &[GaussPoint],
) -> f64 {
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + p as f64 * width;
            integrate(&f, lo, lo + width, rule)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exactness() {
        // order-n Gauss is exact for degree 2n-1
        let rule = points(2).unwrap();
        let exact = 1.0 / 4.0; // int_0^1 x^3
        assert_relative_eq!(
            integrate(|x| x * x * x, 0.0, 1.0, rule),
            exact,
            epsilon = 1e-15
        );

        let rule = points(4).unwrap();
        let exact = 1.0 / 8.0; // int_0^1 x^7
        assert_relative_eq!(
            integrate(|x| x.powi(7), 0.0, 1.0, rule),
            exact,
            epsilon = 1e-15
        );
    }

    #[test]
    fn composite_matches_single_on_smooth() {
        let rule = points(4).unwrap();
        let a = integrate_composite(|x| (x * 3.0).sin(), 0.0, 2.0, 16, rule);
        assert_relative_eq!(a, (1.0 - (6.0f64).cos()) / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn load_rule_rejects_low_order() {
        assert!(load_rule(1).is_err());
        assert!(load_rule(0).is_err());
        assert!(load_rule(2).is_ok());
        assert!(load_rule(6).is_err());
    }
}
