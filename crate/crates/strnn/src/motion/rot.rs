//! Minimal 3-D rotation helpers: axis-angle vectors and y-axis rotations.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

/// Rotation about +y by `angle` (right-handed: +x toward +z for positive
/// angles is NOT the convention here; this maps (0,0,1) to (sin a, 0, cos a)).
pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

/// Rodrigues' formula for an axis-angle vector (axis · angle).
pub fn axis_angle_to_matrix(v: Vec3) -> Mat3 {
    let angle = norm(v);
    if angle < 1e-12 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let [x, y, z] = scale(v, 1.0 / angle);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Inverse of [`axis_angle_to_matrix`].
pub fn matrix_to_axis_angle(m: &Mat3) -> Vec3 {
    let trace = m[0][0] + m[1][1] + m[2][2];
    let cos_a = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos_a.acos();
    if angle < 1e-12 {
        return [0.0, 0.0, 0.0];
    }
    if (std::f64::consts::PI - angle).abs() < 1e-6 {
        // Near π the off-diagonal extraction degenerates; recover the axis
        // from the diagonal instead.
        let xx = ((m[0][0] + 1.0) / 2.0).max(0.0).sqrt();
        let yy = ((m[1][1] + 1.0) / 2.0).max(0.0).sqrt();
        let zz = ((m[2][2] + 1.0) / 2.0).max(0.0).sqrt();
        let mut axis = [xx, yy, zz];
        // fix signs using the largest component
        if xx >= yy && xx >= zz {
            axis[1] = (m[0][1] + m[1][0]) / (4.0 * xx);
            axis[2] = (m[0][2] + m[2][0]) / (4.0 * xx);
        } else if yy >= zz {
            axis[0] = (m[0][1] + m[1][0]) / (4.0 * yy);
            axis[2] = (m[1][2] + m[2][1]) / (4.0 * yy);
        } else {
            axis[0] = (m[0][2] + m[2][0]) / (4.0 * zz);
            axis[1] = (m[1][2] + m[2][1]) / (4.0 * zz);
        }
        return scale(axis, angle);
    }
    let s = 2.0 * angle.sin();
    let axis = [
        (m[2][1] - m[1][2]) / s,
        (m[0][2] - m[2][0]) / s,
        (m[1][0] - m[0][1]) / s,
    ];
    scale(axis, angle)
}

/// Heading (rotation about +y) of an orientation: the yaw that aligns the
/// rotated forward vector (0,0,1) with its projection on the x–z plane.
pub fn heading_of(orientation: Vec3) -> f64 {
    let m = axis_angle_to_matrix(orientation);
    let f = mat_vec(&m, [0.0, 0.0, 1.0]);
    f[0].atan2(f[2])
}

/// Wrap an angle difference into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * std::f64::consts::PI);
    if x > std::f64::consts::PI {
        x -= 2.0 * std::f64::consts::PI;
    } else if x <= -std::f64::consts::PI {
        x += 2.0 * std::f64::consts::PI;
    }
    x
}
