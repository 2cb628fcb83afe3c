//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use cpnav::trajgen::Knot;
use nalgebra::{DMatrix, DVector};

/// `d`-th derivative row of the monomial basis at `t`.
fn basis_row(t: f64, d: usize) -> [f64; 8] {
    let mut r = [0.0; 8];
    for (k, v) in r.iter_mut().enumerate().skip(d) {
        *v = (0..d).map(|i| (k - i) as f64).product::<f64>() * t.powi((k - d) as i32);
    }
    r
}

fn pinned(k: &Knot, d: usize) -> Option<f64> {
    match d {
        0 => Some(k.pos),
        1 => k.vel,
        2 => k.acc,
        _ => k.jerk,
    }
}

/// Minimum-snap coefficients in physical time from a dense KKT solve with
/// an exact analytic snap Gram matrix.
pub fn dense_min_snap(knots: &[Knot], durations: &[f64]) -> Vec<[f64; 8]> {
    let m = durations.len();
    let n = 8 * m;
    let mut q = DMatrix::zeros(n, n);
    for (s, &t) in durations.iter().enumerate() {
        for j in 4..8 {
            for k in 4..8 {
                let fj: f64 = (0..4).map(|i| (j - i) as f64).product();
                let fk: f64 = (0..4).map(|i| (k - i) as f64).product();
                let p = (j + k - 7) as i32;
                q[(8 * s + j, 8 * s + k)] = fj * fk * t.powi(p) / p as f64;
            }
        }
    }
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut put = |entries: &[(usize, [f64; 8], f64)], val: f64| {
        let mut full = vec![0.0; n];
        for (seg, c, sign) in entries {
            for k in 0..8 {
                full[8 * seg + k] += sign * c[k];
            }
        }
        rows.push((full, val));
    };
    for s in 0..m {
        put(&[(s, basis_row(0.0, 0), 1.0)], knots[s].pos);
        put(&[(s, basis_row(durations[s], 0), 1.0)], knots[s + 1].pos);
    }
    for d in 1..4 {
        if let Some(v) = pinned(&knots[0], d) {
            put(&[(0, basis_row(0.0, d), 1.0)], v);
        }
        if let Some(v) = pinned(&knots[m], d) {
            put(&[(m - 1, basis_row(durations[m - 1], d), 1.0)], v);
        }
        for j in 1..m {
            put(
                &[
                    (j - 1, basis_row(durations[j - 1], d), 1.0),
                    (j, basis_row(0.0, d), -1.0),
                ],
                0.0,
            );
            if let Some(v) = pinned(&knots[j], d) {
                put(&[(j, basis_row(0.0, d), 1.0)], v);
            }
        }
    }
    let nc = rows.len();
    let mut kkt = DMatrix::zeros(n + nc, n + nc);
    let mut rhs = DVector::zeros(n + nc);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(&q * 2.0));
    for (r, (coeffs, val)) in rows.iter().enumerate() {
        for (c, v) in coeffs.iter().enumerate() {
            kkt[(n + r, c)] = *v;
            kkt[(c, n + r)] = *v;
        }
        rhs[n + r] = *val;
    }
    let x = kkt
        .full_piv_lu()
        .solve(&rhs)
        .expect("non-singular KKT system");
    (0..m)
        .map(|s| {
            let mut out = [0.0; 8];
            out.copy_from_slice(&x.as_slice()[8 * s..8 * s + 8]);
            out
        })
        .collect()
}

/// Random rest-to-rest problem with free interior derivatives.
pub fn random_problem(rng: &mut impl rand::Rng) -> (Vec<Knot>, Vec<f64>) {
    let m = rng.gen_range(1..6);
    let mut knots: Vec<Knot> = (0..=m)
        .map(|_| Knot::free(rng.gen_range(-5.0..5.0)))
        .collect();
    knots[0] = Knot::rest(knots[0].pos);
    knots[m] = Knot::rest(knots[m].pos);
    let durations = (0..m).map(|_| rng.gen_range(0.3..3.0)).collect();
    (knots, durations)
}
