//! 3-vectors and 3x3 matrices over any [`Real`].

use core::ops::{Add, Neg, Sub};

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct V3<S = f64> {
    pub x: S,
    pub y: S,
    pub z: S,
}

pub const fn v3(x: f64, y: f64, z: f64) -> V3 {
    V3 { x, y, z }
}

impl<S: Real> V3<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        V3 { x, y, z }
    }

    pub fn zero() -> Self {
        Self::cst(V3::ZERO)
    }

    /// Lifts a plain vector; on a tape this yields constants.
    pub fn cst(v: V3) -> Self {
        V3 {
            x: S::cst(v.x),
            y: S::cst(v.y),
            z: S::cst(v.z),
        }
    }

    pub fn val(&self) -> V3 {
        V3 {
            x: self.x.val(),
            y: self.y.val(),
            z: self.z.val(),
        }
    }

    pub fn to_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [S; 3]) -> Self {
        V3 {
            x: a[0],
            y: a[1],
            z: a[2],
        }
    }

    pub fn scale(self, s: S) -> Self {
        V3 {
            x: self.x * s,
            y: self.y * s,
            z: self.z * s,
        }
    }

    pub fn scale_f(self, s: f64) -> Self {
        V3 {
            x: self.x * s,
            y: self.y * s,
            z: self.z * s,
        }
    }

    pub fn add_f(self, o: V3) -> Self {
        V3 {
            x: self.x + o.x,
            y: self.y + o.y,
            z: self.z + o.z,
        }
    }

    pub fn dot(self, o: Self) -> S {
        S::dot(&self.to_array(), &o.to_array())
    }

    /// Dot product with a plain vector.
    pub fn dot_f(self, o: V3) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        V3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm(self) -> S {
        S::norm(&self.to_array())
    }

    pub fn norm_sq(self) -> S {
        self.dot(self)
    }

    /// Unit vector; the zero vector maps to itself.
    pub fn normalize(self) -> Self {
        let n = self.norm();
        if n.val() > 0.0 {
            self.scale(S::cst(1.0) / n)
        } else {
            self
        }
    }

    pub fn map<T>(self, f: impl Fn(S) -> T) -> V3<T> {
        V3 {
            x: f(self.x),
            y: f(self.y),
            z: f(self.z),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.val().is_finite() && self.y.val().is_finite() && self.z.val().is_finite()
    }
}

impl V3 {
    pub const ZERO: V3 = v3(0.0, 0.0, 0.0);
    pub const X: V3 = v3(1.0, 0.0, 0.0);
    pub const Y: V3 = v3(0.0, 1.0, 0.0);
    pub const Z: V3 = v3(0.0, 0.0, 1.0);

    pub fn get(&self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn max_abs(&self) -> f64 {
        use crate::math::abs;
        abs(self.x).max(abs(self.y)).max(abs(self.z))
    }

    pub fn dist(self, o: V3) -> f64 {
        (self - o).norm()
    }
}

impl<S: Real> Add for V3<S> {
    type Output = V3<S>;
    fn add(self, o: Self) -> Self {
        V3 {
            x: self.x + o.x,
            y: self.y + o.y,
            z: self.z + o.z,
        }
    }
}

impl<S: Real> Sub for V3<S> {
    type Output = V3<S>;
    fn sub(self, o: Self) -> Self {
        V3 {
            x: self.x - o.x,
            y: self.y - o.y,
            z: self.z - o.z,
        }
    }
}

impl<S: Real> Neg for V3<S> {
    type Output = V3<S>;
    fn neg(self) -> Self {
        V3 {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// 3x3 matrix stored by columns.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct M3<S = f64> {
    pub cols: [V3<S>; 3],
}

impl<S: Real> M3<S> {
    pub fn from_cols(c0: V3<S>, c1: V3<S>, c2: V3<S>) -> Self {
        M3 { cols: [c0, c1, c2] }
    }

    pub fn identity() -> Self {
        Self::cst(M3::IDENTITY)
    }

    pub fn cst(m: M3) -> Self {
        M3 {
            cols: [V3::cst(m.cols[0]), V3::cst(m.cols[1]), V3::cst(m.cols[2])],
        }
    }

    pub fn val(&self) -> M3 {
        M3 {
            cols: [self.cols[0].val(), self.cols[1].val(), self.cols[2].val()],
        }
    }

    /// Entry at row `r`, column `c`.
    pub fn at(&self, r: usize, c: usize) -> S {
        let col = &self.cols[c];
        match r {
            0 => col.x,
            1 => col.y,
            _ => col.z,
        }
    }

    pub fn row(&self, r: usize) -> V3<S> {
        V3::new(self.at(r, 0), self.at(r, 1), self.at(r, 2))
    }

    pub fn transpose(&self) -> Self {
        M3::from_cols(self.row(0), self.row(1), self.row(2))
    }

    pub fn mul_vec(&self, v: V3<S>) -> V3<S> {
        self.cols[0].scale(v.x) + self.cols[1].scale(v.y) + self.cols[2].scale(v.z)
    }

    pub fn mul(&self, o: &M3<S>) -> M3<S> {
        M3::from_cols(
            self.mul_vec(o.cols[0]),
            self.mul_vec(o.cols[1]),
            self.mul_vec(o.cols[2]),
        )
    }

    /// Right-multiplication by a plain matrix.
    pub fn mul_f(&self, o: &M3) -> M3<S> {
        let col = |c: V3| self.cols[0].scale_f(c.x) + self.cols[1].scale_f(c.y) + self.cols[2].scale_f(c.z);
        M3::from_cols(col(o.cols[0]), col(o.cols[1]), col(o.cols[2]))
    }

    /// Row-major flattening.
    pub fn flatten_rows(&self) -> [S; 9] {
        [
            self.at(0, 0),
            self.at(0, 1),
            self.at(0, 2),
            self.at(1, 0),
            self.at(1, 1),
            self.at(1, 2),
            self.at(2, 0),
            self.at(2, 1),
            self.at(2, 2),
        ]
    }
}

impl M3 {
    pub const IDENTITY: M3 = M3 {
        cols: [V3::X, V3::Y, V3::Z],
    };

    pub fn det(&self) -> f64 {
        self.cols[0].dot(self.cols[1].cross(self.cols[2]))
    }

    /// Rotation about the world z-axis.
    pub fn rot_z(yaw: f64) -> M3 {
        let (s, c) = (crate::math::sin(yaw), crate::math::cos(yaw));
        M3::from_cols(v3(c, s, 0.0), v3(-s, c, 0.0), V3::Z)
    }

    pub fn rot_y(a: f64) -> M3 {
        let (s, c) = (crate::math::sin(a), crate::math::cos(a));
        M3::from_cols(v3(c, 0.0, -s), V3::Y, v3(s, 0.0, c))
    }

    pub fn rot_x(a: f64) -> M3 {
        let (s, c) = (crate::math::sin(a), crate::math::cos(a));
        M3::from_cols(V3::X, v3(0.0, c, s), v3(0.0, -s, c))
    }

    /// `Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> M3 {
        M3::rot_z(yaw).mul(&M3::rot_y(pitch)).mul(&M3::rot_x(roll))
    }

    /// Rotation by `|w|` about `w/|w|` (Rodrigues).
    pub fn exp_so3(w: V3) -> M3 {
        let theta = w.norm();
        if theta < 1e-12 {
            let k = skew(w);
            return M3::IDENTITY.add_m(&k);
        }
        let k = skew(w.scale(1.0 / theta));
        let k2 = k.mul(&k);
        M3::IDENTITY
            .add_m(&k.scale_m(crate::math::sin(theta)))
            .add_m(&k2.scale_m(1.0 - crate::math::cos(theta)))
    }

    pub fn add_m(&self, o: &M3) -> M3 {
        M3::from_cols(self.cols[0] + o.cols[0], self.cols[1] + o.cols[1], self.cols[2] + o.cols[2])
    }

    pub fn sub_m(&self, o: &M3) -> M3 {
        M3::from_cols(self.cols[0] - o.cols[0], self.cols[1] - o.cols[1], self.cols[2] - o.cols[2])
    }

    pub fn scale_m(&self, s: f64) -> M3 {
        M3::from_cols(self.cols[0].scale(s), self.cols[1].scale(s), self.cols[2].scale(s))
    }

    /// Gram-Schmidt re-orthonormalisation keeping the z column direction.
    pub fn orthonormalize(&self) -> M3 {
        let z = self.cols[2].normalize();
        let x = (self.cols[0] - z.scale(self.cols[0].dot(z))).normalize();
        let y = z.cross(x);
        M3::from_cols(x, y, z)
    }

    /// Largest entry of `|R^T R - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose().mul(self).sub_m(&M3::IDENTITY);
        p.cols.iter().map(|c| c.max_abs()).fold(0.0, f64::max)
    }

    /// Unit quaternion `(w, x, y, z)`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = |r, c| self.at(r, c);
        let tr = m(0, 0) + m(1, 1) + m(2, 2);
        let q = if tr > 0.0 {
            let s = crate::math::sqrt(tr + 1.0) * 2.0;
            [0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s]
        } else if m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2) {
            let s = crate::math::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
            [(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s]
        } else if m(1, 1) > m(2, 2) {
            let s = crate::math::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
            [(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s]
        } else {
            let s = crate::math::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
            [(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s]
        };
        if q[0] < 0.0 {
            [-q[0], -q[1], -q[2], -q[3]]
        } else {
            q
        }
    }
}

/// Cross-product matrix of `w`.
pub fn skew(w: V3) -> M3 {
    M3::from_cols(v3(0.0, w.z, -w.y), v3(-w.z, 0.0, w.x), v3(w.y, -w.x, 0.0))
}

/// Inverse of [`skew`] applied to the skew-symmetric part of `m`.
pub fn vee_skew_part(m: &M3) -> V3 {
    v3(
        0.5 * (m.at(2, 1) - m.at(1, 2)),
        0.5 * (m.at(0, 2) - m.at(2, 0)),
        0.5 * (m.at(1, 0) - m.at(0, 1)),
    )
}
