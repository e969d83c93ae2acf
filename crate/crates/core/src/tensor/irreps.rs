use super::TensorError;
use crate::numeric::Scalar;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of_degree(l: usize) -> Self {
        if l % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

impl std::ops::Mul for Parity {
    type Output = Parity;
    fn mul(self, o: Parity) -> Parity {
        if self == o {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// An O(3) irrep: degree `l` with parity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Irrep {
    pub l: usize,
    pub p: Parity,
}

impl Irrep {
    pub const fn new(l: usize, p: Parity) -> Self {
        Irrep { l, p }
    }

    pub const fn scalar() -> Self {
        Irrep {
            l: 0,
            p: Parity::Even,
        }
    }

    pub fn dim(self) -> usize {
        2 * self.l + 1
    }

    pub fn is_scalar(self) -> bool {
        self.l == 0
    }
}

impl fmt::Display for Irrep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = if self.p == Parity::Even { 'e' } else { 'o' };
        write!(f, "{}{}", self.l, p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrrepEntry {
    pub mult: usize,
    pub ir: Irrep,
}

/// Direct sum `m₁×ir₁ + m₂×ir₂ + …`, kept sorted by (l, parity) with
/// unique keys.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct IrrepsSpec {
    entries: Vec<IrrepEntry>,
    offsets: Vec<usize>,
    dim: usize,
}

impl IrrepsSpec {
    pub fn new(mut entries: Vec<IrrepEntry>) -> Result<Self, TensorError> {
        entries.retain(|e| e.mult > 0);
        entries.sort_by_key(|e| e.ir);
        for w in entries.windows(2) {
            if w[0].ir == w[1].ir {
                return Err(TensorError::InvalidIrreps(format!("duplicate block {}", w[0].ir)));
            }
        }
        let mut offsets = Vec::with_capacity(entries.len());
        let mut dim = 0;
        for e in &entries {
            offsets.push(dim);
            dim += e.mult * e.ir.dim();
        }
        Ok(IrrepsSpec {
            entries,
            offsets,
            dim,
        })
    }

    pub fn from_pairs(pairs: &[(usize, usize, Parity)]) -> Result<Self, TensorError> {
        Self::new(
            pairs
                .iter()
                .map(|&(mult, l, p)| IrrepEntry {
                    mult,
                    ir: Irrep::new(l, p),
                })
                .collect(),
        )
    }

    /// `mult` copies of `0e`.
    pub fn scalars(mult: usize) -> Self {
        Self::from_pairs(&[(mult, 0, Parity::Even)]).expect("valid")
    }

    /// `1×0e + 1×1o + … + 1×l_max` with parity (−1)^l, the layout of spherical harmonics.
    pub fn spherical_harmonics(l_max: usize) -> Self {
        let pairs: Vec<_> = (0..=l_max).map(|l| (1, l, Parity::of_degree(l))).collect();
        Self::from_pairs(&pairs).expect("valid")
    }

    pub fn entries(&self) -> &[IrrepEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn find(&self, ir: Irrep) -> Option<usize> {
        self.entries.iter().position(|e| e.ir == ir)
    }

    pub fn mult_of(&self, ir: Irrep) -> usize {
        self.find(ir).map_or(0, |k| self.entries[k].mult)
    }

    pub fn l_max(&self) -> usize {
        self.entries.iter().map(|e| e.ir.l).max().unwrap_or(0)
    }

    /// Sub-spec of the entries whose irreps satisfy `keep`.
    pub fn filter(&self, keep: impl Fn(Irrep) -> bool) -> Self {
        Self::new(self.entries.iter().copied().filter(|e| keep(e.ir)).collect()).expect("subset")
    }

    /// Total multiplicity of blocks with `l > 0`.
    pub fn nonscalar_mult(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !e.ir.is_scalar())
            .map(|e| e.mult)
            .sum()
    }
}

impl FromStr for IrrepsSpec {
    type Err = TensorError;

    /// Parses `"8x0e+4x1o"`; a bare `"1o"` means multiplicity 1.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TensorError::InvalidIrreps(s.to_string());
        let mut entries = Vec::new();
        for term in s.split('+').map(str::trim).filter(|t| !t.is_empty()) {
            let (mult, ir) = match term.split_once('x') {
                Some((m, ir)) => (m.trim().parse::<usize>().map_err(|_| bad())?, ir.trim()),
                None => (1, term),
            };
            let (l, p) = ir.split_at(ir.len().checked_sub(1).ok_or_else(bad)?);
            let l = l.parse::<usize>().map_err(|_| bad())?;
            let p = match p {
                "e" => Parity::Even,
                "o" => Parity::Odd,
                _ => return Err(bad()),
            };
            if mult == 0 {
                return Err(bad());
            }
            entries.push(IrrepEntry {
                mult,
                ir: Irrep::new(l, p),
            });
        }
        IrrepsSpec::new(entries)
    }
}

impl fmt::Display for IrrepsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.entries.iter().enumerate() {
            if k > 0 {
                f.write_str("+")?;
            }
            write!(f, "{}x{}", e.mult, e.ir)?;
        }
        Ok(())
    }
}

impl Serialize for IrrepsSpec {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> Result<Se::Ok, Se::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for IrrepsSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Feature vector laid out block by block; block `k` is a row-major
/// `mult × (2l+1)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivariantFeature<S> {
    spec: IrrepsSpec,
    data: Vec<S>,
}

impl<S: Scalar> EquivariantFeature<S> {
    pub fn zeros(spec: IrrepsSpec) -> Self {
        let data = vec![S::zero(); spec.dim()];
        EquivariantFeature { spec, data }
    }

    pub fn from_vec(spec: IrrepsSpec, data: Vec<S>) -> Result<Self, TensorError> {
        if data.len() != spec.dim() {
            return Err(TensorError::ShapeError(format!(
                "feature {} needs {} values, got {}",
                spec,
                spec.dim(),
                data.len()
            )));
        }
        Ok(EquivariantFeature { spec, data })
    }

    pub fn spec(&self) -> &IrrepsSpec {
        &self.spec
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// Block `k` as a flat `mult × (2l+1)` slice.
    pub fn block(&self, k: usize) -> &[S] {
        let e = self.spec.entries()[k];
        let o = self.spec.offset(k);
        &self.data[o..o + e.mult * e.ir.dim()]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [S] {
        let e = self.spec.entries()[k];
        let o = self.spec.offset(k);
        &mut self.data[o..o + e.mult * e.ir.dim()]
    }

    pub fn block_of(&self, ir: Irrep) -> Option<&[S]> {
        self.spec.find(ir).map(|k| self.block(k))
    }

    pub fn to_f64(&self) -> EquivariantFeature<f64> {
        EquivariantFeature {
            spec: self.spec.clone(),
            data: self.data.iter().map(|x| x.val()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
