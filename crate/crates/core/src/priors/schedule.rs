use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Per-call error budget `ε_k` for an inexact denoiser, `k = 0, 1, …`.
///
/// Spec-string grammar: `zero`, `const:<c>`, `pow:<c>:<p>` (`ε_k = c/(k+1)^p`),
/// `list:<c1,c2,...>` (zero past the end of the list).
#[derive(Debug, Clone, PartialEq)]
pub enum EpsilonSchedule {
    Zero,
    Constant(f64),
    Power { c: f64, p: f64 },
    List(Vec<f64>),
}

impl EpsilonSchedule {
    pub fn epsilon(&self, k: usize) -> f64 {
        match self {
            EpsilonSchedule::Zero => 0.0,
            EpsilonSchedule::Constant(c) => *c,
            EpsilonSchedule::Power { c, p } => c / ((k + 1) as f64).powf(*p),
            EpsilonSchedule::List(v) => v.get(k).copied().unwrap_or(0.0),
        }
    }

    /// Whether `Σ ε_k²` is finite, decided analytically.
    pub fn square_summable(&self) -> bool {
        match self {
            EpsilonSchedule::Zero | EpsilonSchedule::List(_) => true,
            EpsilonSchedule::Constant(c) => *c == 0.0,
            EpsilonSchedule::Power { c, p } => *c == 0.0 || *p > 0.5,
        }
    }

    /// `ε_k ≤ other.ε_k` for the first `horizon` calls.
    pub fn dominated_by(&self, other: &EpsilonSchedule, horizon: usize) -> bool {
        (0..horizon).all(|k| self.epsilon(k) <= other.epsilon(k))
    }
}

impl fmt::Display for EpsilonSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonSchedule::Zero => write!(f, "zero"),
            EpsilonSchedule::Constant(c) => write!(f, "const:{c}"),
            EpsilonSchedule::Power { c, p } => write!(f, "pow:{c}:{p}"),
            EpsilonSchedule::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "list:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for EpsilonSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::Schedule(s.to_string());
        let num = |t: &str| -> Result<f64, Error> {
            let v: f64 = t.trim().parse().map_err(|_| bad())?;
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        let parts: Vec<&str> = s.trim().splitn(2, ':').collect();
        match parts.as_slice() {
            ["zero"] => Ok(EpsilonSchedule::Zero),
            ["const", c] => Ok(EpsilonSchedule::Constant(num(c)?)),
            ["pow", rest] => {
                let (c, p) = rest.split_once(':').ok_or_else(bad)?;
                Ok(EpsilonSchedule::Power {
                    c: num(c)?,
                    p: num(p)?,
                })
            }
            ["list", rest] => {
                let v = rest
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(num)
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(EpsilonSchedule::List(v))
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for EpsilonSchedule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EpsilonSchedule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grammar() {
        assert_eq!("zero".parse::<EpsilonSchedule>().unwrap(), EpsilonSchedule::Zero);
        assert_eq!(
            "const:0.1".parse::<EpsilonSchedule>().unwrap(),
            EpsilonSchedule::Constant(0.1)
        );
        assert_eq!(
            "pow:0.1:1".parse::<EpsilonSchedule>().unwrap(),
            EpsilonSchedule::Power { c: 0.1, p: 1.0 }
        );
        assert_eq!(
            "list:0.1,0.2,0".parse::<EpsilonSchedule>().unwrap(),
            EpsilonSchedule::List(vec![0.1, 0.2, 0.0])
        );
        for bad in ["", "const", "const:-1", "pow:1", "pow:a:b", "exp:1", "list:1,x"] {
            assert!(bad.parse::<EpsilonSchedule>().is_err(), "{bad}");
        }
    }

    #[test]
    fn display_round_trips() {
        for s in ["zero", "const:0.1", "pow:0.1:0.5", "list:1,2.5"] {
            let sched: EpsilonSchedule = s.parse().unwrap();
            assert_eq!(sched.to_string().parse::<EpsilonSchedule>().unwrap(), sched);
        }
    }

    #[test]
    fn p_series_summability() {
        assert!(EpsilonSchedule::Power { c: 0.1, p: 1.0 }.square_summable());
        assert!(!EpsilonSchedule::Power { c: 0.1, p: 0.5 }.square_summable());
        assert!(!EpsilonSchedule::Constant(0.1).square_summable());
        assert!(EpsilonSchedule::Constant(0.0).square_summable());
        assert!(EpsilonSchedule::Zero.square_summable());
        assert!(EpsilonSchedule::List(vec![1.0; 4]).square_summable());
    }

    #[test]
    fn values() {
        let s = EpsilonSchedule::Power { c: 0.1, p: 1.0 };
        assert_eq!(s.epsilon(0), 0.1);
        assert!((s.epsilon(9) - 0.01).abs() < 1e-18);
        assert_eq!(EpsilonSchedule::List(vec![0.3]).epsilon(5), 0.0);
        assert!(EpsilonSchedule::Zero.dominated_by(&s, 100));
        assert!(!EpsilonSchedule::Constant(0.05).dominated_by(&s, 100));
    }
}
