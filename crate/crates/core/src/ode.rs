//! Dormand–Prince 5(4) integration of linear matrix ODEs `Y' = F(x, Y)`.

use crate::error::{Error, Result};
use crate::linalg::{r, Mat};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (equal to the last row of `A`).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Difference between fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest admissible step relative to the integration length.
    pub min_step_fraction: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            min_step_fraction: 1e-13,
            max_steps: 200_000,
        }
    }
}

/// Accepted points of an integration, in the direction of integration.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub xs: Vec<f64>,
    pub ys: Vec<Mat>,
}

fn stages<F: Fn(f64, &Mat) -> Mat>(rhs: &F, x: f64, y: &Mat, h: f64) -> [Mat; 7] {
    let mut k: Vec<Mat> = Vec::with_capacity(7);
    k.push(rhs(x, y));
    for s in 1..7 {
        let mut ys = y.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = A[s][j];
            if a != 0.0 {
                ys += kj * r(h * a);
            }
        }
        k.push(rhs(x + C[s] * h, &ys));
    }
    k.try_into().expect("seven stages")
}

/// One fifth-order Dormand–Prince step of size `h` (which may be negative).
pub fn step_dp5<F: Fn(f64, &Mat) -> Mat>(rhs: &F, x: f64, y: &Mat, h: f64) -> Mat {
    if h == 0.0 {
        return y.clone();
    }
    let k = stages(rhs, x, y, h);
    let mut out = y.clone();
    for (kj, &b) in k.iter().zip(B5.iter()) {
        if b != 0.0 {
            out += kj * r(h * b);
        }
    }
    out
}

/// Adaptive integration from `x0` to `x1` (either direction).
pub fn integrate_dp45<F: Fn(f64, &Mat) -> Mat>(
    rhs: &F,
    x0: f64,
    y0: Mat,
    x1: f64,
    opts: &OdeOptions,
) -> Result<Trajectory> {
    let mut xs = vec![x0];
    let mut ys = vec![y0.clone()];
    let span = x1 - x0;
    if span == 0.0 {
        return Ok(Trajectory { xs, ys });
    }
    let dir = span.signum();
    let h_min = span.abs() * opts.min_step_fraction;
    let mut h = span.abs().min(0.1) * dir;
    let mut x = x0;
    let mut y = y0;
    let mut steps = 0;
    while (x1 - x) * dir > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::accuracy(
                format!("ode step budget exhausted at x = {x}"),
                h.abs(),
            ));
        }
        if (x + h - x1) * dir > 0.0 {
            h = x1 - x;
        }
        let k = stages(rhs, x, &y, h);
        let mut y_new = y.clone();
        let mut err = y.map(|_| Default::default());
        for j in 0..7 {
            if B5[j] != 0.0 {
                y_new += &k[j] * r(h * B5[j]);
            }
            err += &k[j] * r(h * E[j]);
        }
        let mut ratio: f64 = 0.0;
        for ((e, a), b) in err.iter().zip(y.iter()).zip(y_new.iter()) {
            let scale = opts.atol + opts.rtol * a.norm().max(b.norm());
            ratio = ratio.max(e.norm() / scale);
        }
        if ratio <= 1.0 {
            x = if (x + h - x1) * dir >= 0.0 { x1 } else { x + h };
            y = y_new;
            xs.push(x);
            ys.push(y.clone());
            let grow = if ratio == 0.0 {
                5.0
            } else {
                (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= grow;
        } else {
            h *= (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.9);
            if h.abs() < h_min {
                return Err(Error::accuracy(format!("ode step size underflow at x = {x}"), ratio));
            }
        }
    }
    Ok(Trajectory { xs, ys })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, eye, frob, from_real_rows, zeros, C64};

    #[test]
    fn rotation_matches_closed_form() {
        // u' = J^{-1}(λ u) for J = [[0,-1],[1,0]]: rotation by angle λx
        let jinv = from_real_rows(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let lam = c(2.0, 0.0);
        let rhs = |_x: f64, y: &Mat| (&jinv * y) * lam;
        let traj = integrate_dp45(&rhs, 0.0, eye(2), 3.0, &OdeOptions::default()).unwrap();
        let y = traj.ys.last().unwrap();
        let (cs, sn) = ((2.0f64 * 3.0).cos(), (2.0f64 * 3.0).sin());
        let exact = from_real_rows(2, 2, &[cs, sn, -sn, cs]);
        assert!(frob(&(y - exact)) < 1e-9);
        assert_eq!(*traj.xs.last().unwrap(), 3.0);
    }

    #[test]
    fn backward_integration_and_single_step() {
        let rhs = |x: f64, y: &Mat| y * r(x);
        let traj = integrate_dp45(&rhs, 1.0, eye(1), -1.0, &OdeOptions::default()).unwrap();
        // y = exp((x² - 1)/2)
        assert!((traj.ys.last().unwrap()[(0, 0)].re - 1.0).abs() < 1e-10);
        let mid = step_dp5(&rhs, 0.0, &(eye(1) * r((-0.5f64).exp())), 0.01);
        let exact = ((0.0001 - 1.0) / 2.0f64).exp();
        assert!((mid[(0, 0)].re - exact).abs() < 1e-13);
    }

    #[test]
    fn zero_rhs_takes_few_steps() {
        let rhs = |_x: f64, y: &Mat| zeros(y.nrows(), y.ncols());
        let y0 = Mat::from_element(2, 1, C64::new(1.0, -2.0));
        let traj = integrate_dp45(&rhs, 0.0, y0.clone(), 10.0, &OdeOptions::default()).unwrap();
        assert!(traj.xs.len() < 10);
        assert_eq!(traj.ys.last().unwrap(), &y0);
    }
}
