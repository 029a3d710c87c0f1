//! Fixed-size 2-vector / 2×2 helpers. Matrices are row-major.

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm2(a: Vec2) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    norm2(a).sqrt()
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

/// m v
#[inline]
pub fn mat_vec(m: &Mat2, v: Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// mᵀ v
#[inline]
pub fn mat_t_vec(m: &Mat2, v: Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[1][0] * v[1], m[0][1] * v[0] + m[1][1] * v[1]]
}

pub fn mat_sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

/// a bᵀ
pub fn mat_mul_t(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[j][0] + a[i][1] * b[j][1];
        }
    }
    out
}

#[inline]
pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Solve m x = v by Cramer's rule. Caller guarantees m is invertible.
pub fn solve2(m: &Mat2, v: Vec2) -> Vec2 {
    let d = det(m);
    [
        (m[1][1] * v[0] - m[0][1] * v[1]) / d,
        (m[0][0] * v[1] - m[1][0] * v[0]) / d,
    ]
}
