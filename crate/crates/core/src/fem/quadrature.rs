//! Fixed quadrature rules.

/// Symmetric 6-point triangle rule, exact for polynomials of degree 4:
/// barycentric coordinates and weights (weights sum to one).
pub const TRIANGLE: [([f64; 3], f64); 6] = {
    const A1: f64 = 0.445_948_490_915_965;
    const B1: f64 = 0.108_103_018_168_070;
    const W1: f64 = 0.223_381_589_678_011;
    const A2: f64 = 0.091_576_213_509_771;
    const B2: f64 = 0.816_847_572_980_459;
    const W2: f64 = 0.109_951_743_655_322;
    [
        ([B1, A1, A1], W1),
        ([A1, B1, A1], W1),
        ([A1, A1, B1], W1),
        ([B2, A2, A2], W2),
        ([A2, B2, A2], W2),
        ([A2, A2, B2], W2),
    ]
};

/// Three-point Gauss rule on [0, 1], exact for degree 5.
pub const LINE: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

pub fn map_point(p: [[f64; 2]; 3], bary: [f64; 3]) -> [f64; 2] {
    [
        bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
        bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    // integral of x^a y^b over the reference triangle: a! b! / (a + b + 2)!
    fn exact(a: u32, b: u32) -> f64 {
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        f(a) * f(b) / f(a + b + 2)
    }

    #[test]
    fn triangle_rule_is_degree_four() {
        let p = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for a in 0..=4 {
            for b in 0..=(4 - a) {
                let q: f64 = TRIANGLE
                    .iter()
                    .map(|&(l, w)| {
                        let x = map_point(p, l);
                        0.5 * w * x[0].powi(a as i32) * x[1].powi(b as i32)
                    })
                    .sum();
                assert!((q - exact(a, b)).abs() < 1e-14, "x^{a} y^{b}");
            }
        }
        let total: f64 = TRIANGLE.iter().map(|t| t.1).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn line_rule_is_degree_five() {
        for k in 0..=5 {
            let q: f64 = LINE.iter().map(|&(t, w)| w * t.powi(k)).sum();
            assert!((q - 1.0 / f64::from(k as u32 + 1)).abs() < 1e-15);
        }
    }
}
