//! Exact rational arithmetic for laws with finitely many positive steps.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

/// `C(2j, j) / 4^j` as an exact fraction.
pub fn central_binomial(j: u64) -> BigRational {
    let mut v = BigRational::one();
    for i in 1..=j {
        v *= BigRational::new(BigInt::from(2 * i - 1), BigInt::from(2 * i));
    }
    v
}

/// Exact `h↓(ℓ)`.
pub fn h_down(l: i64) -> BigRational {
    if l < 0 {
        BigRational::zero()
    } else {
        central_binomial(l as u64)
    }
}

/// Exact `h↑(ℓ)`.
pub fn h_up(l: i64) -> BigRational {
    if l <= 0 {
        BigRational::zero()
    } else {
        h_down(l) * BigRational::from_integer(BigInt::from(2 * l))
    }
}

/// Law with finitely many positive steps and an exact negative table.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactLaw {
    /// `ν(0), ν(1), …`
    pub pos: Vec<BigRational>,
    /// `ν(-1), ν(-2), …`
    pub neg: Vec<BigRational>,
}

impl ExactLaw {
    /// Build `ν` from weights `q_k` and `c`, solving `h↓`-harmonicity for `ν(-1..=-n)`.
    pub fn from_weights(q: &[(u64, BigRational)], c: &BigRational, n: usize) -> Self {
        let kmax = q.iter().map(|x| x.0).max().unwrap_or(1) as usize;
        let mut pos = vec![BigRational::zero(); kmax];
        for (k, v) in q {
            let j = (*k - 1) as i32;
            pos[j as usize] = v * pow(c, j);
        }
        let hd: Vec<BigRational> = (0..=(n + kmax) as i64).map(h_down).collect();
        let mut neg: Vec<BigRational> = Vec::with_capacity(n);
        for l in 1..=n {
            let mut s = hd[l].clone();
            for (k, v) in pos.iter().enumerate() {
                if !v.is_zero() {
                    s -= v * &hd[l + k];
                }
            }
            for j in 1..l {
                s -= &neg[j - 1] * &hd[l - j];
            }
            neg.push(s);
        }
        Self { pos, neg }
    }

    /// The quadrangulation law on `ν(-1..=-n)`.
    pub fn quadrangulation(n: usize) -> Self {
        Self::from_weights(
            &[(2, BigRational::new(1.into(), 12.into()))],
            &BigRational::from_integer(8.into()),
            n,
        )
    }

    pub fn pmf(&self, k: i64) -> BigRational {
        if k >= 0 {
            self.pos.get(k as usize).cloned().unwrap_or_else(BigRational::zero)
        } else {
            self.neg
                .get((-k - 1) as usize)
                .cloned()
                .unwrap_or_else(BigRational::zero)
        }
    }

    /// `Σ_k ν(k) h(ℓ+k) - h(ℓ)` for `h ∈ {h↓, h↑}`; requires `ℓ ≤ neg.len()`.
    pub fn harmonic_defect(&self, up: bool, l: i64) -> BigRational {
        let h = |x: i64| if up { h_up(x) } else { h_down(x) };
        let mut s = -h(l);
        for k in -l..(self.pos.len() as i64) {
            let v = self.pmf(k);
            if !v.is_zero() {
                s += v * h(l + k);
            }
        }
        s
    }

    /// `c = 2/ν(-1)`, `q_{k+1} = ν(k) c^{-k}`, `W^(k) = ν(-k-1) c^{k+1}/2`.
    pub fn to_weights(&self) -> (BigRational, Vec<(u64, BigRational)>, Vec<BigRational>) {
        let two = BigRational::from_integer(2.into());
        let c = &two / &self.neg[0];
        let q = self
            .pos
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(k, v)| ((k + 1) as u64, v / pow(&c, k as i32)))
            .collect();
        let w = self
            .neg
            .iter()
            .enumerate()
            .map(|(k, v)| v * pow(&c, k as i32 + 1) / &two)
            .collect();
        (c, q, w)
    }

    /// Inverse of [`ExactLaw::to_weights`].
    pub fn from_weights_and_partition(
        c: &BigRational,
        q: &[(u64, BigRational)],
        w: &[BigRational],
    ) -> Self {
        let kmax = q.iter().map(|x| x.0).max().unwrap_or(1) as usize;
        let mut pos = vec![BigRational::zero(); kmax];
        for (k, v) in q {
            pos[*k as usize - 1] = v * pow(c, *k as i32 - 1);
        }
        let two = BigRational::from_integer(2.into());
        let neg = w
            .iter()
            .enumerate()
            .map(|(k, v)| v * &two / pow(c, k as i32 + 1))
            .collect();
        Self { pos, neg }
    }
}

fn pow(x: &BigRational, e: i32) -> BigRational {
    let mut r = BigRational::one();
    for _ in 0..e {
        r *= x;
    }
    r
}

/// Exact quadrangulation partition functions via the loop equation
/// `W^(m+1) = 12 (W^(m) - Σ_{i+j=m-1} W^(i) W^(j))`.
pub fn quadrangulation_partition(n: usize) -> Vec<BigRational> {
    let mut w = vec![BigRational::one()];
    if n == 0 {
        return w;
    }
    w.push(BigRational::new(4.into(), 3.into()));
    let twelve = BigRational::from_integer(12.into());
    while w.len() <= n {
        let m = w.len() - 1;
        let mut conv = BigRational::zero();
        for i in 0..m {
            conv += &w[i] * &w[m - 1 - i];
        }
        let next = &twelve * (&w[m] - conv);
        w.push(next);
    }
    w
}
