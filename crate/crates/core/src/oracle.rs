//! Independent reference computations used by the test suites.
//!
//! Nothing here shares code with the main kinematics path: matrices are
//! plain arrays, every branch is composed from its first row, and the
//! trigonometry is the standard library's.

use crate::skeleton::{DhField, GlobalTransform, ParamVector, SkeletonTopology};

pub type M4 = [[f64; 4]; 4];

pub fn naive_dh(a: f64, d: f64, alpha: f64, theta: f64) -> M4 {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    [
        [ct, -st, 0.0, a],
        [st * ca, ct * ca, -sa, -d * sa],
        [st * sa, ct * sa, ca, d * ca],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

pub fn mat_mul(x: &M4, y: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out[i][j] += x[i][k] * y[k][j];
            }
        }
    }
    out
}

/// `Rx(rx)·Ry(ry)·Rz(rz)·p + t`.
pub fn naive_global(p: [f64; 3], g: &GlobalTransform) -> [f64; 3] {
    let rot = |p: [f64; 3], axis: usize, a: f64| {
        let (s, c) = a.sin_cos();
        let (i, j) = match axis {
            0 => (1, 2),
            1 => (2, 0),
            _ => (0, 1),
        };
        let mut q = p;
        q[i] = c * p[i] - s * p[j];
        q[j] = s * p[i] + c * p[j];
        q
    };
    let q = rot(rot(rot(p, 2, g.rz), 1, g.ry), 0, g.rx);
    [q[0] + g.tx, q[1] + g.ty, q[2] + g.tz]
}

/// Keypoints from composing every branch separately.
pub fn naive_forward_kinematics(
    topo: &SkeletonTopology,
    params: &ParamVector,
    g: &GlobalTransform,
) -> Vec<[f64; 3]> {
    let mut joints = vec![[f64::NAN; 3]; topo.keypoint_count()];
    for (b, branch) in topo.branches().iter().enumerate() {
        let mut m: M4 = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let mut frames = Vec::with_capacity(branch.rows.len());
        for (r, row) in branch.rows.iter().enumerate() {
            let field = |f: DhField, base: f64| {
                base + topo.param_id(b, r, f).map_or(0.0, |id| params.values[id])
            };
            let local = naive_dh(
                field(DhField::A, row.a),
                field(DhField::D, row.d),
                field(DhField::Alpha, row.alpha),
                field(DhField::Theta, row.theta),
            );
            m = mat_mul(&m, &local);
            frames.push(m);
        }
        for &(r, k) in &branch.keypoint_map {
            let f = frames[r];
            joints[k] = naive_global([f[0][3], f[1][3], f[2][3]], g);
        }
    }
    joints
}

/// Central difference `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{default_topology, forward_kinematics};

    #[test]
    fn rest_pose_matches_table() {
        let topo = default_topology();
        let got =
            naive_forward_kinematics(&topo, &ParamVector::zeros(), &GlobalTransform::identity());
        for (a, b) in got.iter().zip(&topo.rest_pose().unwrap().joints) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn agrees_with_main_path() {
        let topo = default_topology();
        let p = ParamVector::from_vec(
            (0..topo.num_params())
                .map(|i| 0.01 * (i as f64).sin())
                .collect(),
        );
        let g = GlobalTransform::from_array([0.1, -0.2, 0.3, 0.1, 0.2, 5.0]);
        let a = naive_forward_kinematics(&topo, &p, &g);
        let b = forward_kinematics(&topo, &p, &g).unwrap();
        for (x, y) in a.iter().zip(&b.joints) {
            for i in 0..3 {
                assert!((x[i] - y[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(&[1.0, -2.0], 1e-4, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] - 3.0).abs() < 1e-9);
    }
}
