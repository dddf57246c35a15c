/// Symmetric triangle quadrature: barycentric points with weights summing to one
/// (multiply by the element area).
#[derive(Debug, Clone, Copy)]
pub struct TriangleRule {
    pub points: &'static [[f64; 3]],
    pub weights: &'static [f64],
    pub degree: usize,
}

const D2_POINTS: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];
const D2_WEIGHTS: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

const A4: f64 = 0.445_948_490_915_965;
const B4: f64 = 0.091_576_213_509_771;
const WA4: f64 = 0.223_381_589_678_011;
const WB4: f64 = 0.109_951_743_655_322;
const D4_POINTS: [[f64; 3]; 6] = [
    [A4, A4, 1.0 - 2.0 * A4],
    [A4, 1.0 - 2.0 * A4, A4],
    [1.0 - 2.0 * A4, A4, A4],
    [B4, B4, 1.0 - 2.0 * B4],
    [B4, 1.0 - 2.0 * B4, B4],
    [1.0 - 2.0 * B4, B4, B4],
];
const D4_WEIGHTS: [f64; 6] = [WA4, WA4, WA4, WB4, WB4, WB4];

/// 3-point rule, exact for degree 2.
pub const DEGREE_2: TriangleRule = TriangleRule {
    points: &D2_POINTS,
    weights: &D2_WEIGHTS,
    degree: 2,
};

/// 6-point rule, exact for degree 4.
pub const DEGREE_4: TriangleRule = TriangleRule {
    points: &D4_POINTS,
    weights: &D4_WEIGHTS,
    degree: 4,
};

#[cfg(test)]
mod tests {
    use super::*;

    // ∫_T λ1^a λ2^b λ3^c = 2|T| a! b! c! / (a+b+c+2)!
    fn exact(a: u32, b: u32, c: u32) -> f64 {
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        2.0 * f(a) * f(b) * f(c) / f(a + b + c + 2)
    }

    fn check(rule: &TriangleRule) {
        let w: f64 = rule.weights.iter().sum();
        assert!((w - 1.0).abs() < 1e-14);
        for a in 0..=rule.degree as u32 {
            for b in 0..=(rule.degree as u32 - a) {
                for c in 0..=(rule.degree as u32 - a - b) {
                    let q: f64 = rule
                        .points
                        .iter()
                        .zip(rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32))
                        .sum();
                    // the area factor |T| cancels against the normalized weights
                    assert!((q - exact(a, b, c)).abs() < 1e-13, "monomial {a} {b} {c}");
                }
            }
        }
    }

    #[test]
    fn rules_integrate_their_degree_exactly() {
        check(&DEGREE_2);
        check(&DEGREE_4);
    }
}
