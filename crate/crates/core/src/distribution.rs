//! Discrete laws of the matrix entries and the closed forms attached to them.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{format_rational, lcm_of_denominators, parse_rational, to_f64, Rational};

/// Finite-support law with exact rational atoms and probabilities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteDist {
    atoms: Vec<Rational>,
    probs: Vec<Rational>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistStats {
    pub entropy: f64,
    pub p_inf: Rational,
    pub p2_sq: Rational,
    pub p0: Rational,
    pub is_uniform: bool,
    pub symmetric_shift: Option<Rational>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivedDists {
    pub diff: DiscreteDist,
    pub sum: DiscreteDist,
    pub tilted: DiscreteDist,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictedProbabilities {
    /// Probability of a fixed zero column.
    pub p_e1: Rational,
    /// Probability that two fixed columns are equal.
    pub p_e1_minus: Rational,
    /// Probability that two fixed columns are negatives of each other.
    pub p_e1_plus: Rational,
    pub conjecture: Rational,
    pub bernoulli_two_term: Option<Rational>,
}

/// On-disk form: `{"atoms": ["0","1"], "probs": ["7/10","3/10"]}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DistFile {
    pub atoms: Vec<serde_json::Value>,
    pub probs: Vec<serde_json::Value>,
}

fn json_rational(v: &serde_json::Value) -> Result<Rational> {
    match v {
        serde_json::Value::String(s) => parse_rational(s),
        serde_json::Value::Number(n) => parse_rational(&n.to_string()),
        other => Err(Error::InvalidDistribution(format!(
            "expected a rational, got {other}"
        ))),
    }
}

impl DiscreteDist {
    pub fn new(atoms: Vec<Rational>, probs: Vec<Rational>) -> Result<Self> {
        if atoms.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} atoms but {} probabilities",
                atoms.len(),
                probs.len()
            )));
        }
        if atoms.len() < 2 {
            return Err(Error::InvalidDistribution("fewer than 2 atoms".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_positive()) {
            return Err(Error::InvalidDistribution(format!(
                "nonpositive probability {}",
                format_rational(p)
            )));
        }
        let total: Rational = probs.iter().sum();
        if !total.is_one() {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {}",
                format_rational(&total)
            )));
        }
        let mut pairs: Vec<(Rational, Rational)> = atoms.into_iter().zip(probs).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidDistribution("duplicate atoms".into()));
        }
        let (atoms, probs) = pairs.into_iter().unzip();
        Ok(DiscreteDist { atoms, probs })
    }

    pub fn bernoulli(p: Rational) -> Result<Self> {
        let one = Rational::one();
        Self::new(vec![Rational::zero(), one.clone()], vec![one - &p, p])
    }

    pub fn rademacher() -> Self {
        let half = Rational::new(1.into(), 2.into());
        Self::new(
            vec![Rational::from_integer((-1).into()), Rational::one()],
            vec![half.clone(), half],
        )
        .expect("valid law")
    }

    pub fn uniform(atoms: Vec<Rational>) -> Result<Self> {
        let k = atoms.len().max(1);
        let p = Rational::new(1.into(), BigInt::from(k));
        let probs = vec![p; atoms.len()];
        Self::new(atoms, probs)
    }

    /// Shorthand grammar: `ber:p`, `rademacher`, `uniform:a1,a2,...`,
    /// or an inline JSON object in the file format.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.starts_with('{') {
            return Self::from_json_str(spec);
        }
        let (head, arg) = spec.split_once(':').unwrap_or((spec, ""));
        match head.to_ascii_lowercase().as_str() {
            "ber" | "bernoulli" => Self::bernoulli(parse_rational(arg)?),
            "rademacher" | "rad" if arg.is_empty() => Ok(Self::rademacher()),
            "uniform" => {
                let atoms = arg
                    .split(',')
                    .map(parse_rational)
                    .collect::<Result<Vec<_>>>()?;
                Self::uniform(atoms)
            }
            _ => Err(Error::InvalidDistribution(format!(
                "unrecognised distribution {spec:?}"
            ))),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: DistFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidDistribution(format!("bad distribution JSON: {e}")))?;
        let atoms = file
            .atoms
            .iter()
            .map(json_rational)
            .collect::<Result<Vec<_>>>()?;
        let probs = file
            .probs
            .iter()
            .map(json_rational)
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms, probs)
    }

    pub fn to_json(&self) -> DistFile {
        let s = |v: &Rational| serde_json::Value::String(format_rational(v));
        DistFile {
            atoms: self.atoms.iter().map(s).collect(),
            probs: self.probs.iter().map(s).collect(),
        }
    }

    pub fn atoms(&self) -> &[Rational] {
        &self.atoms
    }

    pub fn probs(&self) -> &[Rational] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms_f64(&self) -> Vec<f64> {
        self.atoms.iter().map(to_f64).collect()
    }

    pub fn probs_f64(&self) -> Vec<f64> {
        self.probs.iter().map(to_f64).collect()
    }

    pub fn index_of(&self, a: &Rational) -> Option<usize> {
        self.atoms.binary_search(a).ok()
    }

    pub fn prob_of(&self, a: &Rational) -> Rational {
        self.index_of(a)
            .map(|i| self.probs[i].clone())
            .unwrap_or_else(Rational::zero)
    }

    /// Least common denominator D of the probabilities, and the integer weights p_j·D.
    pub fn integer_weights(&self) -> (BigInt, Vec<BigInt>) {
        let d = lcm_of_denominators(&self.probs);
        let w = self.probs.iter().map(|p| (p * &d).to_integer()).collect();
        (d, w)
    }

    /// Positive scale c and integer atoms c·a_j.
    pub fn integer_atoms(&self) -> (BigInt, Vec<BigInt>) {
        let c = lcm_of_denominators(&self.atoms);
        let a = self.atoms.iter().map(|x| (x * &c).to_integer()).collect();
        (c, a)
    }

    /// Integer atoms as i64, failing if they do not fit.
    pub fn integer_atoms_i64(&self) -> Result<(BigInt, Vec<i64>)> {
        let (c, a) = self.integer_atoms();
        let a = a
            .iter()
            .map(|v| {
                v.to_i64()
                    .ok_or_else(|| Error::Overflow(format!("atom {v} too large")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((c, a))
    }

    pub fn max_abs_atom(&self) -> Rational {
        self.atoms
            .iter()
            .map(|a| a.abs())
            .max()
            .unwrap_or_else(Rational::zero)
    }

    /// Law of a·ξ + b·ξ′ for independent copies, as an exact convolution.
    fn combine(&self, sign: i32) -> DiscreteDist {
        let mut out: std::collections::BTreeMap<Rational, Rational> = Default::default();
        for (a, p) in self.atoms.iter().zip(&self.probs) {
            for (b, q) in self.atoms.iter().zip(&self.probs) {
                let v = if sign > 0 { a + b } else { a - b };
                *out.entry(v).or_insert_with(Rational::zero) += p * q;
            }
        }
        let (atoms, probs) = out.into_iter().unzip();
        DiscreteDist { atoms, probs }
    }

    pub fn derived(&self) -> DerivedDists {
        let weights: Vec<Rational> = self.probs.iter().map(|p| p * p).collect();
        let z: Rational = weights.iter().sum();
        let tilted = DiscreteDist {
            atoms: self.atoms.clone(),
            probs: weights.into_iter().map(|w| w / &z).collect(),
        };
        DerivedDists {
            diff: self.combine(-1),
            sum: self.combine(1),
            tilted,
        }
    }

    /// Exact P[ξ = ξ′].
    pub fn collision(&self) -> Rational {
        self.probs.iter().map(|p| p * p).sum()
    }

    /// Exact P[ξ = −ξ′].
    pub fn anti_collision(&self) -> Rational {
        self.atoms
            .iter()
            .zip(&self.probs)
            .map(|(a, p)| p * self.prob_of(&-a))
            .sum()
    }

    pub fn stats(&self) -> DistStats {
        let entropy = -self.probs_f64().iter().map(|&p| p * p.ln()).sum::<f64>();
        let p_inf = self
            .probs
            .iter()
            .max()
            .cloned()
            .unwrap_or_else(Rational::zero);
        let p2_sq = self.collision();
        let p0 = self.prob_of(&Rational::zero());
        let is_uniform = self.probs.iter().all(|p| *p == self.probs[0]);
        let s = &self.atoms[0] + &self.atoms[self.k() - 1];
        let symmetric = self
            .atoms
            .iter()
            .zip(&self.probs)
            .all(|(a, p)| self.prob_of(&(&s - a)) == *p);
        DistStats {
            entropy,
            p_inf,
            p2_sq,
            p0,
            is_uniform,
            symmetric_shift: symmetric.then_some(s),
        }
    }

    pub fn predicted(&self, n: u32) -> PredictedProbabilities {
        let pow = |r: &Rational| num_traits::pow(r.clone(), n as usize);
        let p0 = self.prob_of(&Rational::zero());
        let p_e1 = pow(&p0);
        let p_e1_minus = pow(&self.collision());
        let p_e1_plus = pow(&self.anti_collision());
        let nn = Rational::from_integer(n.into());
        let pairs = &nn * (&nn - Rational::one());
        let conjecture =
            Rational::from_integer(2.into()) * &nn * &p_e1 + &pairs * (&p_e1_minus + &p_e1_plus);
        let bernoulli_two_term =
            if self.k() == 2 && self.atoms[0].is_zero() && self.atoms[1].is_one() {
                let p = &self.probs[1];
                let q = Rational::one() - p;
                let two = Rational::from_integer(2.into());
                Some(two * &nn * pow(&q) + pairs * pow(&(p * p + &q * &q)))
            } else {
                None
            };
        PredictedProbabilities {
            p_e1,
            p_e1_minus,
            p_e1_plus,
            conjecture,
            bernoulli_two_term,
        }
    }
}

impl std::fmt::Display for DiscreteDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a: Vec<String> = self.atoms.iter().map(format_rational).collect();
        let p: Vec<String> = self.probs.iter().map(format_rational).collect();
        write!(f, "atoms=[{}] probs=[{}]", a.join(","), p.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    fn ints(v: &[i64]) -> Vec<Rational> {
        v.iter().map(|&x| q(x, 1)).collect()
    }

    #[test]
    fn construction_validates() {
        let d = DiscreteDist::new(ints(&[1, 0]), vec![q(1, 3), q(2, 3)]).unwrap();
        assert_eq!(d.atoms(), &ints(&[0, 1])[..]);
        assert_eq!(d.probs(), &[q(2, 3), q(1, 3)][..]);
        let dup = DiscreteDist::new(ints(&[0, 0]), vec![q(1, 2), q(1, 2)]);
        assert!(matches!(dup, Err(Error::InvalidDistribution(m)) if m.contains("duplicate")));
        assert!(DiscreteDist::new(ints(&[0, 1]), vec![q(1, 2), q(1, 3)]).is_err());
        assert!(DiscreteDist::new(ints(&[0, 1]), vec![q(1, 1), q(0, 1)]).is_err());
        assert!(DiscreteDist::new(ints(&[0]), vec![q(1, 1)]).is_err());
        assert!(DiscreteDist::parse("ber:1").is_err());
    }

    #[test]
    fn shorthand_and_json() {
        let a = DiscreteDist::parse("ber:3/10").unwrap();
        let b = DiscreteDist::from_json_str(r#"{"atoms": ["0","1"], "probs": ["7/10","3/10"]}"#)
            .unwrap();
        let c =
            DiscreteDist::from_json_str(r#"{"atoms": [0, 1], "probs": ["0.7", "0.3"]}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(
            DiscreteDist::parse("rademacher").unwrap(),
            DiscreteDist::rademacher()
        );
        let u = DiscreteDist::parse("uniform:-1,0,1").unwrap();
        assert_eq!(u.probs(), &[q(1, 3), q(1, 3), q(1, 3)][..]);
        let round = serde_json::to_string(&a.to_json()).unwrap();
        assert_eq!(DiscreteDist::from_json_str(&round).unwrap(), a);
        assert!(DiscreteDist::parse("poisson:1").is_err());
    }

    #[test]
    fn derived_laws() {
        let p = q(1, 3);
        let d = DiscreteDist::bernoulli(p.clone()).unwrap().derived();
        assert_eq!(d.diff.atoms(), &ints(&[-1, 0, 1])[..]);
        let pq = &p * (Rational::one() - &p);
        assert_eq!(d.diff.probs(), &[pq.clone(), q(5, 9), pq][..]);
        assert_eq!(d.tilted.probs(), &[q(4, 5), q(1, 5)][..]);
        let r = DiscreteDist::rademacher().derived();
        assert_eq!(r.sum.atoms(), &ints(&[-2, 0, 2])[..]);
        assert_eq!(r.sum.probs(), &[q(1, 4), q(1, 2), q(1, 4)][..]);
    }

    #[test]
    fn stats_examples() {
        let s = DiscreteDist::parse("ber:1/2").unwrap().stats();
        assert!((s.entropy - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(
            (s.p_inf.clone(), s.p2_sq.clone(), s.p0.clone()),
            (q(1, 2), q(1, 2), q(1, 2))
        );
        assert!(s.is_uniform);
        assert_eq!(s.symmetric_shift, Some(q(1, 1)));
        let s = DiscreteDist::parse("ber:3/10").unwrap().stats();
        assert_eq!((s.p_inf.clone(), s.p2_sq.clone()), (q(7, 10), q(58, 100)));
        assert_eq!(s.symmetric_shift, None);
        let s = DiscreteDist::rademacher().stats();
        assert_eq!(s.symmetric_shift, Some(q(0, 1)));
        assert_eq!(s.p0, q(0, 1));
    }

    #[test]
    fn predicted_examples() {
        let p = DiscreteDist::parse("ber:1/2").unwrap().predicted(2);
        assert_eq!(
            (p.p_e1.clone(), p.p_e1_minus.clone(), p.p_e1_plus.clone()),
            (q(1, 4), q(1, 4), q(1, 16))
        );
        assert_eq!(p.conjecture, q(13, 8));
        let p = DiscreteDist::rademacher().predicted(3);
        assert_eq!(p.p_e1, q(0, 1));
        assert_eq!(p.p_e1_minus, q(1, 8));
        assert_eq!(p.p_e1_plus, q(1, 8));
        assert_eq!(p.conjecture, q(3, 2));
        assert_eq!(p.bernoulli_two_term, None);
        // 2n(1-p)^n + n(n-1)(p^2+(1-p)^2)^n evaluated in floats.
        let p = DiscreteDist::parse("ber:1/5").unwrap().predicted(30);
        let want = 60.0 * 0.8f64.powi(30) + 870.0 * 0.68f64.powi(30);
        let got = to_f64(p.bernoulli_two_term.as_ref().unwrap());
        assert!(
            (got - want).abs() < 1e-15 && (got - 8.25e-2).abs() < 5e-4,
            "{got}"
        );
    }
}
