//! Globally adaptive Gauss-Kronrod (7/15) quadrature on finite intervals.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_SEGMENTS: usize = 4096;

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (i, (&x, &w)) in XGK.iter().zip(&WGK).take(7).enumerate() {
        let dx = half * x;
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += w * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[a, b]` until the summed error estimate is below
/// `rel_tol * |integral|` (or an absolute floor for integrals near zero).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid("integration limits must be finite"));
    }
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return integrate(f, b, a, rel_tol).map(|v| -v);
    }
    let mut segments = vec![gauss_kronrod(&f, a, b)];
    loop {
        let value: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if !value.is_finite() {
            return Err(Error::invalid("integrand is not finite on the interval"));
        }
        if error <= rel_tol * value.abs() || error <= f64::MIN_POSITIVE {
            return Ok(value);
        }
        if segments.len() >= MAX_SEGMENTS {
            return Err(Error::invalid(format!(
                "quadrature did not reach relative tolerance {rel_tol:e} (estimate {error:e})"
            )));
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .unwrap();
        let s = segments.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        segments.push(gauss_kronrod(&f, s.a, mid));
        segments.push(gauss_kronrod(&f, mid, s.b));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = integrate(|x| 3.0 * x * x + 2.0 * x + 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 14.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_transcendental() {
        let v = integrate(f64::sin, 0.0, std::f64::consts::PI, 1e-10).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
        let v = integrate(|x| (-x * x).exp(), -8.0, 8.0, 1e-10).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn reversed_and_empty_intervals() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-8).unwrap(), 0.0);
        let v = integrate(|x| x, 1.0, 0.0, 1e-10).unwrap();
        assert!((v + 0.5).abs() < 1e-12);
    }

    #[test]
    fn sharp_peak_needs_subdivision() {
        let v = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((v - exact).abs() / exact < 1e-9);
    }
}
