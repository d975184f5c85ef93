//! Double-double arithmetic (about 32 significant digits) for reference
//! computations in tests.
#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd { hi: 6.931471805599452862e-01, lo: 2.319046813846299558e-17 };
pub const PI: Dd = Dd { hi: 3.141592653589793116e+00, lo: 1.224646799147353207e-16 };

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn norm(hi: f64, lo: f64) -> Self {
        let (h, l) = quick_two_sum(hi, lo);
        Dd { hi: h, lo: l }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let x = Dd::new(self.hi.sqrt());
        x + (self - x * x) / (x * 2.0)
    }

    fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        Dd { hi: self.hi * s, lo: self.lo * s }
    }

    pub fn exp(self) -> Self {
        if self.hi == 0.0 {
            return Dd::ONE;
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * k).ldexp(-10);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..30 {
            term = term * r / n as f64;
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.ldexp(k as i32)
    }

    pub fn ln(self) -> Self {
        let mut x = Dd::new(self.hi.ln());
        for _ in 0..3 {
            x = x + self * (-x).exp() - 1.0;
        }
        x
    }

    pub fn powf(self, e: Dd) -> Self {
        (e * self.ln()).exp()
    }

    pub fn powi(self, n: u32) -> Self {
        (0..n).fold(Dd::ONE, |acc, _| acc * self)
    }

    /// sin and cos by Taylor series after reduction to |x| <= pi/4 ... pi/2.
    pub fn sin_cos(self) -> (Dd, Dd) {
        let two_pi = PI * 2.0;
        let k = (self.hi / two_pi.hi).round();
        let r = self - two_pi * k;
        let q = (r.hi / (PI.hi / 2.0)).round();
        let t = r - PI * (q * 0.5);
        let t2 = t * t;
        let (mut s, mut c) = (t, Dd::ONE);
        let (mut st, mut ct) = (t, Dd::ONE);
        for n in 1..25 {
            st = -st * t2 / ((2 * n) * (2 * n + 1)) as f64;
            ct = -ct * t2 / ((2 * n - 1) * (2 * n)) as f64;
            s = s + st;
            c = c + ct;
        }
        match (q as i64).rem_euclid(4) {
            0 => (s, c),
            1 => (c, -s),
            2 => (-s, -c),
            _ => (-c, s),
        }
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd::new(v)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        Dd::norm(s1, s2 + t2)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        Dd::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * q1;
        let q2 = r.hi / b.hi;
        let r = r - b * q2;
        let q3 = r.hi / b.hi;
        let (h, l) = quick_two_sum(q1, q2);
        Dd { hi: h, lo: l } + Dd::new(q3)
    }
}

macro_rules! scalar_ops {
    ($($tr:ident $f:ident),*) => {$(
        impl $tr<f64> for Dd {
            type Output = Dd;
            fn $f(self, b: f64) -> Dd { $tr::$f(self, Dd::new(b)) }
        }
        impl $tr<Dd> for f64 {
            type Output = Dd;
            fn $f(self, b: Dd) -> Dd { $tr::$f(Dd::new(self), b) }
        }
    )*};
}
scalar_ops!(Add add, Sub sub, Mul mul, Div div);

/// Gaussian elimination with partial pivoting.
pub fn solve_dd(mut a: Vec<Vec<Dd>>, mut b: Vec<Dd>) -> Vec<Dd> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().hi.total_cmp(&a[j][col].abs().hi))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] = a[row][k] - f * a[col][k];
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = vec![Dd::ZERO; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s = s - a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Least squares through the normal equations A^T A x = A^T y.
pub fn normal_equations_dd(rows: &[Vec<f64>], y: &[f64]) -> Vec<Dd> {
    let n = rows[0].len();
    let mut ata = vec![vec![Dd::ZERO; n]; n];
    let mut aty = vec![Dd::ZERO; n];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..n {
            aty[i] = aty[i] + Dd::new(r[i]) * yi;
            for j in 0..n {
                ata[i][j] = ata[i][j] + Dd::new(r[i]) * r[j];
            }
        }
    }
    solve_dd(ata, aty)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn double_double_sanity() {
    let third = Dd::ONE / 3.0;
    assert!(((third * 3.0) - 1.0).abs().hi < 1e-31);
    let e = Dd::ONE.exp();
    assert!((e.hi - std::f64::consts::E).abs() < 1e-15);
    assert!((e.ln() - 1.0).abs().hi < 1e-27);
    let two = Dd::new(2.0);
    assert!((two.sqrt() * two.sqrt() - 2.0).abs().hi < 1e-30);
    let (s, c) = Dd::new(0.7).sin_cos();
    assert!((s * s + c * c - 1.0).abs().hi < 1e-30);
    assert!((s.hi - 0.7f64.sin()).abs() < 1e-15);
    let (s, c) = Dd::new(5.0).sin_cos();
    assert!((s.hi - 5f64.sin()).abs() < 1e-15 && (c.hi - 5f64.cos()).abs() < 1e-15);
}
