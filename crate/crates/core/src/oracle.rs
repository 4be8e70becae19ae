//! Brute-force and closed-form reference values for small single-stream
//! subproblems, used to cross-check the convex solver.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ia_core::interference_columns;
use crate::model::ChannelSet;
use crate::numerics::ComplexMatrix;

/// `n` nearly uniform points on the unit sphere (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Unit vector in C^2 whose Bloch-sphere image is `p`. Every unit vector of C^2
/// equals one of these up to a global phase.
pub fn bloch_vector(p: [f64; 3]) -> [Complex64; 2] {
    let theta = p[2].clamp(-1.0, 1.0).acos();
    let phi = p[1].atan2(p[0]);
    [Complex64::new((theta / 2.0).cos(), 0.0), Complex64::from_polar((theta / 2.0).sin(), phi)]
}

fn dot(row: &ComplexMatrix, w: &[Complex64; 2]) -> Complex64 {
    row.get(0, 0) * w[0] + row.get(0, 1) * w[1]
}

/// Smallest `|a w| t` over unit directions `w` on the grid and scales `t` with
/// `b w t` real and at least `eps`; the best scale is `eps / |b w|` and the
/// phase is absorbed. Directions with `|b w|` below `1e-12 |b|` are rejected.
fn grid_ratio(a: &ComplexMatrix, b: &ComplexMatrix, eps: f64, grid: &[[f64; 3]]) -> f64 {
    let floor = 1e-12 * b.frobenius_norm();
    grid.iter()
        .map(|&p| {
            let w = bloch_vector(p);
            let bw = dot(b, &w).norm();
            if bw <= floor {
                f64::INFINITY
            } else {
                eps * dot(a, &w).norm() / bw
            }
        })
        .fold(f64::INFINITY, f64::min)
}

fn two_user_single_stream(ch: &ChannelSet, fixed: &[ComplexMatrix], dim: usize) -> Result<()> {
    if ch.users != 2 || fixed.len() != 2 || fixed.iter().any(|m| m.shape() != (dim, 1)) {
        return Err(Error::contract("grid oracle needs two users, single streams and two-antenna variables"));
    }
    Ok(())
}

/// Grid-search optimum of the precoder subproblem for two users with two
/// transmit antennas and one stream each. The objective separates as
/// `|u_1^H H_12 v_2| + |u_2^H H_21 v_1|`.
pub fn grid_precoder_objective(ch: &ChannelSet, u: &[ComplexMatrix], eps: f64, points: usize) -> Result<f64> {
    two_user_single_stream(ch, u, ch.rx_antennas)?;
    if ch.tx_antennas != 2 {
        return Err(Error::contract("grid oracle needs two transmit antennas"));
    }
    let grid = fibonacci_sphere(points);
    Ok((0..2)
        .map(|l| {
            let k = 1 - l;
            let a = &u[k].adjoint() * ch.get(k, l);
            let b = &u[l].adjoint() * ch.get(l, l);
            grid_ratio(&a, &b, eps, &grid)
        })
        .sum())
}

/// Grid-search optimum of the zero-forcer subproblem for two users with two
/// receive antennas and one stream each.
pub fn grid_zeroforcer_objective(ch: &ChannelSet, v: &[ComplexMatrix], eps: f64, points: usize) -> Result<f64> {
    two_user_single_stream(ch, v, ch.tx_antennas)?;
    if ch.rx_antennas != 2 {
        return Err(Error::contract("grid oracle needs two receive antennas"));
    }
    let grid = fibonacci_sphere(points);
    Ok((0..2)
        .map(|k| {
            let l = 1 - k;
            let a = (ch.get(k, l) * &v[l]).adjoint();
            let b = (ch.get(k, k) * &v[k]).adjoint();
            grid_ratio(&a, &b, eps, &grid)
        })
        .sum())
}

/// Exact single-stream zero-forcer optimum when every `C_k C_k^H` is
/// invertible: `sum_k eps / sqrt(D_k^H (C_k C_k^H)^-1 D_k)` with
/// `C_k = [H_kl v_l]` and `D_k = H_kk v_k`.
pub fn zeroforcer_closed_form(ch: &ChannelSet, v: &[ComplexMatrix], eps: f64) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..ch.users {
        let c = interference_columns(ch, v, k);
        let gram = (&c * &c.adjoint()).into_dmatrix();
        let inv = gram
            .try_inverse()
            .ok_or(Error::Numerical { op: "inverse", rows: c.rows(), cols: c.rows() })?;
        let dk = ch.get(k, k) * &v[k];
        if dk.cols() != 1 {
            return Err(Error::contract("closed form needs single-stream precoders"));
        }
        let q = (dk.adjoint().into_dmatrix() * inv * dk.as_dmatrix())[(0, 0)].re;
        total += eps / q.sqrt();
    }
    Ok(total)
}

/// Exact precoder optimum with one transmit antenna and one stream: each
/// scalar `v_l` has magnitude `eps / |u_l^H h_ll|`.
pub fn single_antenna_precoder_closed_form(ch: &ChannelSet, u: &[ComplexMatrix], eps: f64) -> Result<f64> {
    if ch.tx_antennas != 1 || u.iter().any(|m| m.cols() != 1) {
        return Err(Error::contract("closed form needs one transmit antenna and single streams"));
    }
    let gain = |k: usize, l: usize| (&u[k].adjoint() * ch.get(k, l)).get(0, 0);
    let mags: Vec<f64> = (0..ch.users).map(|l| eps / gain(l, l).norm()).collect();
    Ok((0..ch.users)
        .map(|k| {
            (0..ch.users)
                .filter(|&l| l != k)
                .map(|l| (gain(k, l) * mags[l]).norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_are_unit_and_balanced() {
        let pts = fibonacci_sphere(1000);
        let mut mean = [0.0; 3];
        for p in &pts {
            assert!((p[0] * p[0] + p[1] * p[1] + p[2] * p[2] - 1.0).abs() < 1e-12);
            for i in 0..3 {
                mean[i] += p[i] / 1000.0;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 1e-2));
    }

    #[test]
    fn bloch_vectors_cover_basis_directions() {
        let north = bloch_vector([0.0, 0.0, 1.0]);
        assert!((north[0].norm() - 1.0).abs() < 1e-12 && north[1].norm() < 1e-12);
        let south = bloch_vector([0.0, 0.0, -1.0]);
        assert!(south[0].norm() < 1e-12);
        let w = bloch_vector([1.0, 0.0, 0.0]);
        assert!((w[0].norm_sqr() + w[1].norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_ratio_finds_orthogonal_direction() {
        // a = [1, 0] is nulled by w = e_2, which b = [1, 1] still sees
        let a = ComplexMatrix::from_real_fn(1, 2, |_, j| [1.0, 0.0][j]);
        let b = ComplexMatrix::from_real_fn(1, 2, |_, _| 1.0);
        assert!(grid_ratio(&a, &b, 0.1, &fibonacci_sphere(10_000)) < 1e-2);
        // a = b makes the ratio constant
        assert!((grid_ratio(&b, &b, 0.1, &fibonacci_sphere(100)) - 0.1).abs() < 1e-12);
    }
}
