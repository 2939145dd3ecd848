//! Gap arithmetic for the product manifold `S² × aS²`.
//!
//! Uses the un-normalized convention: block `i ≥ 1` of `S²` has eigenvalue
//! `(i−1)i` and block `j ≥ 1` of `aS²` has eigenvalue `a⁻²(j−1)j`.

use serde::Serialize;

use crate::error::{invalid, Result};

/// One entry of the adjacent-block family `|2i − 2j a⁻²|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRecord {
    pub i: usize,
    pub j: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub convention: &'static str,
    pub a_sq_inv: f64,
    pub lambda_max: f64,
    /// Number of distinct combined eigenvalues up to `lambda_max`.
    pub distinct_values: usize,
    /// Smallest positive distance between distinct combined eigenvalues.
    pub min_gap: f64,
    /// Block index pairs `(i, j)` of the two eigenvalues achieving `min_gap`.
    pub min_gap_pairs: [(usize, usize); 2],
    /// Smallest positive `|2i − 2j a⁻²|` over admissible `(i, j)`.
    pub family_min: GapRecord,
    /// Successive minima of the family as `j` grows.
    pub family_records: Vec<GapRecord>,
}

fn sphere_block(i: usize) -> f64 {
    ((i - 1) * i) as f64
}

/// Scans all combined eigenvalues `(i−1)i + a⁻²(j−1)j ≤ lambda_max`.
pub fn product_sphere_gap_scan(a_sq_inv: f64, lambda_max: f64) -> Result<GapReport> {
    if !(a_sq_inv > 0.0 && a_sq_inv.is_finite()) || !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(invalid("a_sq_inv and lambda_max must be positive and finite"));
    }
    let mut values: Vec<(f64, usize, usize)> = Vec::new();
    let mut i = 1;
    while sphere_block(i) <= lambda_max {
        let mut j = 1;
        loop {
            let v = sphere_block(i) + a_sq_inv * sphere_block(j);
            if v > lambda_max {
                break;
            }
            values.push((v, i, j));
            j += 1;
        }
        i += 1;
    }
    values.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut distinct: Vec<(f64, usize, usize)> = Vec::new();
    for v in values {
        match distinct.last() {
            Some(last) if v.0 - last.0 <= 1e-9 * (1.0 + v.0) => {}
            _ => distinct.push(v),
        }
    }
    let mut min_gap = f64::INFINITY;
    let mut min_gap_pairs = [(0, 0); 2];
    for w in distinct.windows(2) {
        let g = w[1].0 - w[0].0;
        if g < min_gap {
            min_gap = g;
            min_gap_pairs = [(w[0].1, w[0].2), (w[1].1, w[1].2)];
        }
    }

    let mut records: Vec<GapRecord> = Vec::new();
    let mut family_min = GapRecord { i: 0, j: 0, gap: f64::INFINITY };
    let mut j = 1;
    while a_sq_inv * sphere_block(j + 1) <= lambda_max {
        let mut best: Option<GapRecord> = None;
        let mut i = 1;
        while sphere_block(i + 1) + a_sq_inv * sphere_block(j) <= lambda_max {
            if sphere_block(i) + a_sq_inv * sphere_block(j + 1) <= lambda_max {
                let gap = (2.0 * i as f64 - 2.0 * j as f64 * a_sq_inv).abs();
                if gap > 1e-9 && best.is_none_or(|b| gap < b.gap) {
                    best = Some(GapRecord { i, j, gap });
                }
            }
            i += 1;
        }
        if let Some(b) = best {
            if b.gap < family_min.gap {
                family_min = b;
                records.push(b);
            }
        }
        j += 1;
    }
    Ok(GapReport {
        convention: "un-normalized product spectrum (i-1)i + a^-2 (j-1)j",
        a_sq_inv,
        lambda_max,
        distinct_values: distinct.len(),
        min_gap,
        min_gap_pairs,
        family_min,
        family_records: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent brute force over `i, j ≤ 100` of the family `|2i − 2ja⁻²|`.
    fn brute_family(a: f64) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 1..=100usize {
            for j in 1..=100usize {
                out.push((i, j, (2.0 * i as f64 - 2.0 * j as f64 * a).abs()));
            }
        }
        out
    }

    #[test]
    fn integer_ratio_gives_gap_two() {
        for a in [1.0, 2.0] {
            let r = product_sphere_gap_scan(a, 1e4).unwrap();
            assert_eq!(r.min_gap, 2.0);
            assert_eq!(r.family_min.gap, 2.0);
            let brute_min = brute_family(a)
                .into_iter()
                .map(|t| t.2)
                .filter(|&g| g > 0.0)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(brute_min, 2.0);
        }
    }

    #[test]
    fn sqrt_two_witness() {
        let a = 2f64.sqrt();
        let r = product_sphere_gap_scan(a, 1e4).unwrap();
        let w = r.family_records.iter().find(|rec| rec.gap < 0.1).unwrap();
        assert_eq!((w.i, w.j), (17, 12));
        let exact = 34.0 - 24.0 * a;
        assert!((w.gap - exact.abs()).abs() < 1e-12);
        assert!((w.gap - 0.0589).abs() < 1e-4);
        let brute = brute_family(a)
            .into_iter()
            .find(|&(i, j, _)| i == 17 && j == 12)
            .unwrap();
        assert!((brute.2 - w.gap).abs() < 1e-12);
        // earlier convergents all stay above 0.1
        for rec in r.family_records.iter().take_while(|rec| rec.j < 12) {
            assert!(rec.gap > 0.1);
        }
        assert!(r.min_gap > 0.0 && r.min_gap < 0.1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(product_sphere_gap_scan(0.0, 10.0).is_err());
        assert!(product_sphere_gap_scan(1.0, -1.0).is_err());
    }
}
