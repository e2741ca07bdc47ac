//! Analytic floating-point operation counts for the two mechanisms.
//!
//! Convention: a multiply-add is 2 flops, softmax costs 5 flops per element
//! (exp, subtract, add, divide, max bookkeeping), and a scaling pass costs 1
//! flop per element. Counted per head over `[N, d]` blocks with `d = C/h`,
//! then summed over heads:
//!
//! * dot-product: `h · (4N²d + 5N² + Nd)` — quadratic in tokens;
//! * factorized:  `h · (4Nd² + 5Nd + Nd)` — linear in tokens.
//!
//! The two closed forms cross at exactly `N = d`: their difference is
//! `N(N − d)(4d + 5)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    DotProduct,
    Factorized,
}

impl Mechanism {
    pub const ALL: [Mechanism; 2] = [Mechanism::DotProduct, Mechanism::Factorized];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::DotProduct => "dot_product",
            Mechanism::Factorized => "factorized",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot_product" => Ok(Mechanism::DotProduct),
            "factorized" => Ok(Mechanism::Factorized),
            other => Err(Error::Config(format!(
                "unknown mechanism `{}` (expected dot_product or factorized)",
                other
            ))),
        }
    }
}

fn mul(a: u64, b: u64) -> Result<u64> {
    a.checked_mul(b)
        .ok_or_else(|| Error::Config("flop count overflows a 64-bit counter".into()))
}

fn add(a: u64, b: u64) -> Result<u64> {
    a.checked_add(b)
        .ok_or_else(|| Error::Config("flop count overflows a 64-bit counter".into()))
}

/// Exact flop total for one forward pass of `mechanism` on `N` tokens of
/// width `C` split over `heads` heads.
pub fn flop_count(mechanism: Mechanism, n: usize, c: usize, heads: usize) -> Result<u64> {
    if n == 0 || c == 0 || heads == 0 {
        return Err(Error::Config(format!(
            "flop_count requires positive N, C and heads, got N={} C={} heads={}",
            n, c, heads
        )));
    }
    if c % heads != 0 {
        return Err(Error::Config(format!(
            "head count {} does not divide channel width {}",
            heads, c
        )));
    }
    let (n, h) = (n as u64, heads as u64);
    let d = c as u64 / h;
    let per_head = match mechanism {
        Mechanism::DotProduct => {
            let n2 = mul(n, n)?;
            add(add(mul(4, mul(n2, d)?)?, mul(5, n2)?)?, mul(n, d)?)?
        }
        Mechanism::Factorized => {
            let nd = mul(n, d)?;
            add(add(mul(4, mul(nd, d)?)?, mul(5, nd)?)?, nd)?
        }
    };
    mul(h, per_head)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_case_hand_count() {
        assert_eq!(flop_count(Mechanism::DotProduct, 1, 1, 1).unwrap(), 10);
        assert_eq!(flop_count(Mechanism::Factorized, 1, 1, 1).unwrap(), 10);
    }

    #[test]
    fn factorized_is_exactly_linear_in_tokens() {
        for &n in &[1usize, 7, 64, 1024, 4096] {
            let one = flop_count(Mechanism::Factorized, n, 64, 1).unwrap();
            let two = flop_count(Mechanism::Factorized, 2 * n, 64, 1).unwrap();
            assert_eq!(two, 2 * one);
        }
    }

    #[test]
    fn mechanisms_cross_exactly_at_n_equals_d() {
        let d = 64;
        let at = |n| {
            (
                flop_count(Mechanism::DotProduct, n, d, 1).unwrap(),
                flop_count(Mechanism::Factorized, n, d, 1).unwrap(),
            )
        };
        let (dot, fact) = at(d - 1);
        assert!(dot < fact);
        let (dot, fact) = at(d);
        assert_eq!(dot, fact);
        let (dot, fact) = at(d + 1);
        assert!(dot > fact);
    }

    #[test]
    fn heads_sum_per_head_counts() {
        let whole = flop_count(Mechanism::Factorized, 8, 8, 2).unwrap();
        let per_head = flop_count(Mechanism::Factorized, 8, 4, 1).unwrap();
        assert_eq!(whole, 2 * per_head);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(flop_count(Mechanism::DotProduct, 0, 64, 1).is_err());
        assert!(flop_count(Mechanism::DotProduct, 8, 64, 3).is_err());
        assert!(flop_count(Mechanism::DotProduct, 1 << 32, 1 << 20, 1).is_err());
    }

    #[test]
    fn mechanism_names_round_trip() {
        for m in Mechanism::ALL {
            assert_eq!(m.name().parse::<Mechanism>().unwrap(), m);
        }
        assert!("softmax".parse::<Mechanism>().is_err());
    }
}
