//! Direction grids on the unit sphere `S^{k-1}`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Points per great circle, rounded up to a multiple of 4 so that every
/// coordinate axis direction `±e_j` is on the grid.
pub fn circle_points(grid: usize) -> usize {
    4 * grid.div_ceil(4).max(1)
}

/// Unit-circle direction at angle `phi`.
pub fn circle_direction(phi: f64) -> Vec<f64> {
    vec![phi.cos(), phi.sin()]
}

/// Unit-sphere direction in `R^3` at polar angle `theta` and azimuth `phi`.
pub fn sphere_direction(theta: f64, phi: f64) -> Vec<f64> {
    vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// Grid on `S^{k-1}` for `k <= 3`: equispaced angles for `k = 2`, a
/// polar-by-azimuth product grid (`grid/2 + 1` by `grid`) for `k = 3`.
pub fn sphere_grid(k: usize, grid: usize) -> Result<Vec<Vec<f64>>> {
    let g = circle_points(grid);
    match k {
        1 => Ok(vec![vec![1.0], vec![-1.0]]),
        2 => Ok((0..g).map(|i| circle_direction(2.0 * PI * i as f64 / g as f64)).collect()),
        3 => {
            let half = g / 2;
            let mut out = vec![vec![0.0, 0.0, 1.0]];
            for j in 1..half {
                let theta = PI * j as f64 / half as f64;
                for i in 0..g {
                    out.push(sphere_direction(theta, 2.0 * PI * i as f64 / g as f64));
                }
            }
            out.push(vec![0.0, 0.0, -1.0]);
            Ok(out)
        }
        _ => Err(Error::Unsupported(format!("direction grids are implemented for k <= 3, got k = {k}"))),
    }
}

/// The `k = 3` grid of [`sphere_grid`] together with a triangulation of the
/// sphere by index triples into the point list.
pub fn sphere_triangulation(grid: usize) -> (Vec<Vec<f64>>, Vec<[usize; 3]>) {
    let g = circle_points(grid);
    let half = g / 2;
    let points = sphere_grid(3, grid).expect("k = 3 is supported");
    let south = points.len() - 1;
    let ring = |j: usize, i: usize| 1 + (j - 1) * g + (i % g);
    let mut tris = Vec::new();
    for i in 0..g {
        tris.push([0, ring(1, i), ring(1, i + 1)]);
        tris.push([south, ring(half - 1, i), ring(half - 1, i + 1)]);
    }
    for j in 1..half - 1 {
        for i in 0..g {
            tris.push([ring(j, i), ring(j, i + 1), ring(j + 1, i)]);
            tris.push([ring(j, i + 1), ring(j + 1, i + 1), ring(j + 1, i)]);
        }
    }
    (points, tris)
}
