use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::tensor::{numel, strides, Tensor};
use crate::error::{bail, Error, Result};

/// A two-operand einsum equation such as `bhik,bhkj->bhij`.
///
/// Subscripts are lowercase ASCII letters, each appearing at most once per
/// term. Letters absent from the output are summed over.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EinsumEquation {
    pub lhs: Vec<u8>,
    pub rhs: Vec<u8>,
    pub out: Vec<u8>,
}

fn parse_term(term: &str) -> Result<Vec<u8>> {
    let bytes = term.trim().as_bytes().to_vec();
    if bytes.is_empty() {
        bail!(Einsum, "empty subscript term");
    }
    for (i, c) in bytes.iter().enumerate() {
        if !c.is_ascii_lowercase() {
            bail!(Einsum, "subscript '{}' is not a lowercase letter", *c as char);
        }
        if bytes[..i].contains(c) {
            bail!(Einsum, "repeated subscript '{}' in one term", *c as char);
        }
    }
    Ok(bytes)
}

impl EinsumEquation {
    pub fn new(lhs: Vec<u8>, rhs: Vec<u8>, out: Vec<u8>) -> Result<Self> {
        let eq = EinsumEquation { lhs, rhs, out };
        eq.to_string().parse()
    }

    /// Equation of a batched matmul over `batch` leading axes.
    pub fn batched_matmul(batch: usize, transpose_a: bool, transpose_b: bool) -> Result<Self> {
        const BATCH: &[u8] = b"bhgnpqrs";
        if batch > BATCH.len() {
            bail!(Einsum, "at most {} batch axes are supported", BATCH.len());
        }
        let lead = &BATCH[..batch];
        let mut lhs = lead.to_vec();
        lhs.extend_from_slice(if transpose_a { b"ki" } else { b"ik" });
        let mut rhs = lead.to_vec();
        rhs.extend_from_slice(if transpose_b { b"jk" } else { b"kj" });
        let mut out = lead.to_vec();
        out.extend_from_slice(b"ij");
        Ok(EinsumEquation { lhs, rhs, out })
    }

    pub fn operand(&self, i: usize) -> &[u8] {
        if i == 0 {
            &self.lhs
        } else {
            &self.rhs
        }
    }

    pub fn operand_mut(&mut self, i: usize) -> &mut Vec<u8> {
        if i == 0 {
            &mut self.lhs
        } else {
            &mut self.rhs
        }
    }

    /// Letters present in both operands and in the output.
    pub fn batch_letters(&self) -> Vec<u8> {
        self.out.iter().copied().filter(|c| self.lhs.contains(c) && self.rhs.contains(c)).collect()
    }

    /// Output extents for operands of the given shapes.
    pub fn output_dims(&self, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
        let sizes = self.letter_sizes(a, b)?;
        Ok(self.out.iter().map(|c| sizes[(*c - b'a') as usize]).collect())
    }

    fn letter_sizes(&self, a: &[usize], b: &[usize]) -> Result<[usize; 26]> {
        let mut sizes = [0usize; 26];
        for (term, dims) in [(&self.lhs, a), (&self.rhs, b)] {
            if term.len() != dims.len() {
                bail!(
                    Einsum,
                    "term '{}' has {} subscripts but operand has rank {}",
                    String::from_utf8_lossy(term),
                    term.len(),
                    dims.len()
                );
            }
            for (c, &d) in term.iter().zip(dims) {
                let slot = &mut sizes[(*c - b'a') as usize];
                if *slot != 0 && *slot != d {
                    bail!(Einsum, "subscript '{}' bound to extents {} and {d}", *c as char, *slot);
                }
                *slot = d;
            }
        }
        Ok(sizes)
    }

    /// Contract `a` and `b`. Summation runs in a fixed order so results are
    /// reproducible bit for bit.
    pub fn evaluate(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let sizes = self.letter_sizes(a.dims(), b.dims())?;
        let out_dims: Vec<usize> = self.out.iter().map(|c| sizes[(*c - b'a') as usize]).collect();
        let summed: Vec<u8> = self.lhs.iter().chain(self.rhs.iter()).copied().filter(|c| !self.out.contains(c)).fold(
            Vec::new(),
            |mut acc, c| {
                if !acc.contains(&c) {
                    acc.push(c);
                }
                acc
            },
        );
        let letter_stride = |term: &[u8], dims: &[usize], c: u8| -> usize {
            let s = strides(dims);
            term.iter().position(|t| *t == c).map_or(0, |p| s[p])
        };
        let out_a: Vec<usize> = self.out.iter().map(|c| letter_stride(&self.lhs, a.dims(), *c)).collect();
        let out_b: Vec<usize> = self.out.iter().map(|c| letter_stride(&self.rhs, b.dims(), *c)).collect();
        let sum_dims: Vec<usize> = summed.iter().map(|c| sizes[(*c - b'a') as usize]).collect();
        let sum_a: Vec<usize> = summed.iter().map(|c| letter_stride(&self.lhs, a.dims(), *c)).collect();
        let sum_b: Vec<usize> = summed.iter().map(|c| letter_stride(&self.rhs, b.dims(), *c)).collect();
        let inner = numel(&sum_dims);

        let (ad, bd) = (a.data(), b.data());
        let mut data = Vec::with_capacity(numel(&out_dims));
        let mut oidx = vec![0usize; out_dims.len()];
        let (mut oa, mut ob) = (0usize, 0usize);
        let mut sidx = vec![0usize; sum_dims.len()];
        for _ in 0..numel(&out_dims) {
            let (mut pa, mut pb) = (oa, ob);
            let mut acc = 0.0;
            for _ in 0..inner {
                acc += ad[pa] * bd[pb];
                for ax in (0..sum_dims.len()).rev() {
                    sidx[ax] += 1;
                    pa += sum_a[ax];
                    pb += sum_b[ax];
                    if sidx[ax] < sum_dims[ax] {
                        break;
                    }
                    pa -= sum_a[ax] * sum_dims[ax];
                    pb -= sum_b[ax] * sum_dims[ax];
                    sidx[ax] = 0;
                }
            }
            data.push(acc);
            for ax in (0..out_dims.len()).rev() {
                oidx[ax] += 1;
                oa += out_a[ax];
                ob += out_b[ax];
                if oidx[ax] < out_dims[ax] {
                    break;
                }
                oa -= out_a[ax] * out_dims[ax];
                ob -= out_b[ax] * out_dims[ax];
                oidx[ax] = 0;
            }
        }
        Tensor::new(out_dims, data)
    }
}

impl FromStr for EinsumEquation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('→', "->");
        let Some((inputs, out)) = s.split_once("->") else {
            bail!(Einsum, "equation '{s}' has no '->'");
        };
        let terms: Vec<&str> = inputs.split(',').collect();
        if terms.len() != 2 {
            bail!(Einsum, "expected two operands in '{s}', got {}", terms.len());
        }
        let lhs = parse_term(terms[0])?;
        let rhs = parse_term(terms[1])?;
        let out = parse_term(out)?;
        for c in &out {
            if !lhs.contains(c) && !rhs.contains(c) {
                bail!(Einsum, "output subscript '{}' not found in any operand", *c as char);
            }
        }
        Ok(EinsumEquation { lhs, rhs, out })
    }
}

impl fmt::Display for EinsumEquation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |t: &[u8]| String::from_utf8_lossy(t).into_owned();
        write!(f, "{},{}->{}", s(&self.lhs), s(&self.rhs), s(&self.out))
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for EinsumEquation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for EinsumEquation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
