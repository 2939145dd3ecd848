//! Real spherical harmonics normalized in `L²(S², μ)` with `μ` the uniform
//! probability measure.

/// Real spherical harmonic `Y_l^m` at the unit vector `u`, scaled so that
/// `(1/4π) ∫ Y² dΩ = 1`. Negative `m` selects the sine family.
pub fn real_spherical_harmonic(l: usize, m: i64, u: &[f64]) -> f64 {
    let am = m.unsigned_abs() as usize;
    assert!(am <= l, "|m| must not exceed l");
    let z = u[2].clamp(-1.0, 1.0);
    let s = u[0].hypot(u[1]);
    let p = normalized_legendre(l, am, z, s);
    if m == 0 {
        return p;
    }
    let phi = u[1].atan2(u[0]);
    let trig = if m > 0 { (am as f64 * phi).cos() } else { (am as f64 * phi).sin() };
    std::f64::consts::SQRT_2 * p * trig
}

/// `√((2l+1)(l−m)!/(l+m)!) P_l^m(z)` without the Condon–Shortley phase, with
/// `s = √(1 − z²)` supplied by the caller.
fn normalized_legendre(l: usize, m: usize, z: f64, s: f64) -> f64 {
    let mut pmm = 1.0;
    for k in 1..=m {
        let k = k as f64;
        pmm *= ((2.0 * k + 1.0) / (2.0 * k)).sqrt() * s;
    }
    if l == m {
        return pmm;
    }
    let mut prev = pmm;
    let mut cur = (2.0 * m as f64 + 3.0).sqrt() * z * pmm;
    for ll in (m + 2)..=l {
        let lf = ll as f64;
        let mf = m as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
        let next = a * (z * cur - b * prev);
        prev = cur;
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_degree_closed_forms() {
        let u = [0.48, -0.6, 0.64];
        assert!((real_spherical_harmonic(0, 0, &u) - 1.0).abs() < 1e-15);
        let r3 = 3f64.sqrt();
        assert!((real_spherical_harmonic(1, 0, &u) - r3 * u[2]).abs() < 1e-14);
        assert!((real_spherical_harmonic(1, 1, &u) - r3 * u[0]).abs() < 1e-14);
        assert!((real_spherical_harmonic(1, -1, &u) - r3 * u[1]).abs() < 1e-14);
        let y20 = 5f64.sqrt() * 0.5 * (3.0 * u[2] * u[2] - 1.0);
        assert!((real_spherical_harmonic(2, 0, &u) - y20).abs() < 1e-14);
        let y22 = 15f64.sqrt() * 0.5 * (u[0] * u[0] - u[1] * u[1]);
        assert!((real_spherical_harmonic(2, 2, &u) - y22).abs() < 1e-14);
        let y21 = 15f64.sqrt() * u[0] * u[2];
        assert!((real_spherical_harmonic(2, 1, &u) - y21).abs() < 1e-14);
    }
}
