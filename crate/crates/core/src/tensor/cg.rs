//! Clebsch–Gordan coupling in the real harmonic basis.
//!
//! Coefficients come from the Racah formula for the complex (Condon–Shortley)
//! basis, rotated into the real basis used by [`sh_values`](super::sh_values):
//!
//! ```text
//! m > 0:  Y_{l,m}  = ((-1)^m Y^m + Y^-m) / √2
//! m < 0:  Y_{l,-μ} = i (Y^-μ - (-1)^μ Y^μ) / √2
//! ```
//!
//! Each `(l1, l2, L)` block is normalized so that `Σ_{M,m1,m2} C² = 2L+1`
//! (every output component has unit norm over its inputs) and its sign is
//! chosen so that the first non-zero coefficient in `(M, m1, m2)` order is
//! positive, for `l1 ≤ l2`. Blocks with `l1 > l2` follow from the exchange
//! rule `C[M][m2][m1](l2,l1,L) = (-1)^(l1+l2-L) C[M][m1][m2](l1,l2,L)`.

use super::harmonics::L_MAX;
use nalgebra::Complex;
use std::collections::BTreeMap;
use std::sync::OnceLock;

type C64 = Complex<f64>;

fn fact(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `⟨j1 m1 j2 m2 | J M⟩` in the complex basis.
pub fn complex_cg(j1: i64, m1: i64, j2: i64, m2: i64, j: i64, m: i64) -> f64 {
    if m1 + m2 != m || j < (j1 - j2).abs() || j > j1 + j2 {
        return 0.0;
    }
    if m1.abs() > j1 || m2.abs() > j2 || m.abs() > j {
        return 0.0;
    }
    let pre = ((2 * j + 1) as f64 * fact(j + j1 - j2) * fact(j - j1 + j2) * fact(j1 + j2 - j)
        / fact(j1 + j2 + j + 1))
    .sqrt();
    let norm = (fact(j + m)
        * fact(j - m)
        * fact(j1 - m1)
        * fact(j1 + m1)
        * fact(j2 - m2)
        * fact(j2 + m2))
    .sqrt();
    let mut sum = 0.0;
    for k in 0..=(j1 + j2 - j) {
        let den = [
            j1 + j2 - j - k,
            j1 - m1 - k,
            j2 + m2 - k,
            j - j2 + m1 + k,
            j - j1 - m2 + k,
        ];
        if den.iter().any(|&d| d < 0) {
            continue;
        }
        let d: f64 = fact(k) * den.iter().map(|&d| fact(d)).product::<f64>();
        sum += if k % 2 == 0 { 1.0 } else { -1.0 } / d;
    }
    pre * norm * sum
}

/// Rows: real index `m + l`; columns: complex index `μ + l`.
fn real_from_complex(l: i64) -> Vec<Vec<C64>> {
    let n = (2 * l + 1) as usize;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = vec![vec![C64::new(0.0, 0.0); n]; n];
    for m in -l..=l {
        let r = (m + l) as usize;
        let sign = if m.abs() % 2 == 0 { 1.0 } else { -1.0 };
        match m.cmp(&0) {
            std::cmp::Ordering::Greater => {
                u[r][(m + l) as usize] = C64::new(sign * s, 0.0);
                u[r][(-m + l) as usize] = C64::new(s, 0.0);
            }
            std::cmp::Ordering::Less => {
                let mu = -m;
                u[r][(-mu + l) as usize] = C64::new(0.0, s);
                u[r][(mu + l) as usize] = C64::new(0.0, -sign * s);
            }
            std::cmp::Ordering::Equal => u[r][r] = C64::new(1.0, 0.0),
        }
    }
    u
}

fn idx(l1: usize, l2: usize, l: usize, big_m: usize, m1: usize, m2: usize) -> usize {
    let _ = l;
    (big_m * (2 * l1 + 1) + m1) * (2 * l2 + 1) + m2
}

fn compute_block(l1: usize, l2: usize, l: usize) -> Vec<f64> {
    let (n1, n2, n) = (2 * l1 + 1, 2 * l2 + 1, 2 * l + 1);
    let (i1, i2, i) = (l1 as i64, l2 as i64, l as i64);
    let u1 = real_from_complex(i1);
    let u2 = real_from_complex(i2);
    let ul = real_from_complex(i);
    let mut cplx = vec![C64::new(0.0, 0.0); n * n1 * n2];
    for big_m in 0..n {
        for a in 0..n1 {
            for b in 0..n2 {
                let mut acc = C64::new(0.0, 0.0);
                for mp in 0..n {
                    if ul[big_m][mp].norm_sqr() == 0.0 {
                        continue;
                    }
                    for mu1 in 0..n1 {
                        if u1[a][mu1].norm_sqr() == 0.0 {
                            continue;
                        }
                        for mu2 in 0..n2 {
                            if u2[b][mu2].norm_sqr() == 0.0 {
                                continue;
                            }
                            let c = complex_cg(
                                i1,
                                mu1 as i64 - i1,
                                i2,
                                mu2 as i64 - i2,
                                i,
                                mp as i64 - i,
                            );
                            if c != 0.0 {
                                acc += ul[big_m][mp] * c * u1[a][mu1].conj() * u2[b][mu2].conj();
                            }
                        }
                    }
                }
                cplx[idx(l1, l2, l, big_m, a, b)] = acc;
            }
        }
    }
    let re: f64 = cplx.iter().map(|c| c.re * c.re).sum();
    let im: f64 = cplx.iter().map(|c| c.im * c.im).sum();
    let mut v: Vec<f64> = if re >= im {
        cplx.iter().map(|c| c.re).collect()
    } else {
        cplx.iter().map(|c| c.im).collect()
    };
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>();
    let scale = ((n as f64) / norm).sqrt();
    let first = v.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
    let scale = scale * first.signum();
    for x in &mut v {
        *x *= scale;
        if x.abs() < 1e-15 {
            *x = 0.0;
        }
    }
    v
}

fn table() -> &'static BTreeMap<(usize, usize, usize), Vec<f64>> {
    static TABLE: OnceLock<BTreeMap<(usize, usize, usize), Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = BTreeMap::new();
        for l1 in 0..=L_MAX {
            for l2 in l1..=L_MAX {
                for l in l2 - l1..=(l1 + l2).min(L_MAX) {
                    let c = compute_block(l1, l2, l);
                    if l1 != l2 {
                        let sign = if (l1 + l2 - l) % 2 == 0 { 1.0 } else { -1.0 };
                        let (n1, n2) = (2 * l1 + 1, 2 * l2 + 1);
                        let mut sw = vec![0.0; c.len()];
                        for big_m in 0..2 * l + 1 {
                            for a in 0..n1 {
                                for b in 0..n2 {
                                    sw[idx(l2, l1, l, big_m, b, a)] =
                                        sign * c[idx(l1, l2, l, big_m, a, b)];
                                }
                            }
                        }
                        t.insert((l2, l1, l), sw);
                    }
                    t.insert((l1, l2, l), c);
                }
            }
        }
        t
    })
}

/// Dense `(2L+1) × (2l1+1) × (2l2+1)` coupling block, row-major in
/// `(M, m1, m2)`, or `None` if the triangle rule fails or a degree
/// exceeds the supported maximum.
pub fn cg_block(l1: usize, l2: usize, l: usize) -> Option<&'static [f64]> {
    table().get(&(l1, l2, l)).map(|v| v.as_slice())
}

/// Real-basis coupling table up to a maximum degree.
#[derive(Clone, Debug)]
pub struct CgTable {
    l_max: usize,
    blocks: BTreeMap<(usize, usize, usize), &'static [f64]>,
}

impl CgTable {
    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Every `(l1, l2, L)` triple in the table.
    pub fn paths(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.blocks.keys().copied()
    }

    pub fn block(&self, l1: usize, l2: usize, l: usize) -> Option<&'static [f64]> {
        self.blocks.get(&(l1, l2, l)).copied()
    }

    /// Coefficient for `(l1 m1) ⊗ (l2 m2) → (L M)`; zero outside the table.
    pub fn get(&self, l1: usize, l2: usize, l: usize, m1: i64, m2: i64, m: i64) -> f64 {
        let Some(b) = self.block(l1, l2, l) else {
            return 0.0;
        };
        let (i1, i2, i) = (l1 as i64, l2 as i64, l as i64);
        if m1.abs() > i1 || m2.abs() > i2 || m.abs() > i {
            return 0.0;
        }
        b[idx(
            l1,
            l2,
            l,
            (m + i) as usize,
            (m1 + i1) as usize,
            (m2 + i2) as usize,
        )]
    }
}

pub fn build_cg_table(l_max: usize) -> Result<CgTable, super::TensorError> {
    if l_max > L_MAX {
        return Err(super::TensorError::UnsupportedDegree(l_max));
    }
    let blocks = table()
        .iter()
        .filter(|((a, b, c), _)| *a <= l_max && *b <= l_max && *c <= l_max)
        .map(|(k, v)| (*k, v.as_slice()))
        .collect();
    Ok(CgTable { l_max, blocks })
}
