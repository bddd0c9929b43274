//! CSV and JSON formats: exact fractions, paths, decompositions, modulus
//! problems and solutions, per-seed statistics.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use confdim::brownian::{BrownianPath, Decomposition, ElementKind};
use confdim::modulus::{LinearSolution, ModulusProblem, Solution};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::LabError;

/// `p/q` in lowest terms, or `p` when `q = 1`.
pub fn format_fraction(q: &BigRational) -> String {
    if q.denom().is_one() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

/// Parses `p/q`, `p` or a terminating decimal such as `0.25` exactly.
pub fn parse_fraction(text: &str) -> Result<BigRational, LabError> {
    let t = text.trim();
    let bad = || LabError::Parse(format!("`{text}` is not an exact fraction"));
    if let Some((p, q)) = t.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(p, q));
    }
    if let Some((int, frac)) = t.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| bad())?;
        let scale = num_traits::pow(BigInt::from(10), frac.len());
        return Ok(BigRational::new(digits, scale));
    }
    Ok(BigRational::from_integer(t.parse().map_err(|_| bad())?))
}

/// Serde adapter writing a rational as a fraction string.
pub mod fraction {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_fraction(q))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let text = String::deserialize(d)?;
        parse_fraction(&text).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for vectors of rationals.
pub mod fraction_vec {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(format_fraction))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigRational>, D::Error> {
        let text = Vec::<String>::deserialize(d)?;
        text.iter().map(|t| parse_fraction(t).map_err(serde::de::Error::custom)).collect()
    }
}

pub fn create_dir(dir: &Path) -> Result<(), LabError> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LabError> {
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, LabError> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Parse(format!("{}: {e}", path.display())))
}

/// Writes a CSV with a header row and any number of records.
pub fn write_csv<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<(), LabError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    w.flush().map_err(|e| LabError::io(path, e))?;
    Ok(())
}

/// Path dump with columns `t,W`.
pub fn write_path_csv(path: &Path, p: &BrownianPath) -> Result<(), LabError> {
    let rows = p.times().iter().zip(p.values()).map(|(t, w)| vec![t.to_string(), w.to_string()]);
    write_csv(path, &["t", "W"], rows)
}

/// Reads a `t,W` dump back. The step is the smallest time increment.
pub fn read_path_csv(path: &Path) -> Result<BrownianPath, LabError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut values = Vec::new();
    let mut times = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let t: f64 = rec.get(0).unwrap_or("").parse().map_err(|_| LabError::Parse(format!("{}: bad time", path.display())))?;
        let w: f64 = rec.get(1).unwrap_or("").parse().map_err(|_| LabError::Parse(format!("{}: bad value", path.display())))?;
        times.push(t);
        values.push(w);
    }
    let dt = times.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
    if times.windows(2).any(|p| ((p[1] - p[0]) / dt - 1.0).abs() > 1e-9) {
        return Err(LabError::Parse(format!("{}: only uniformly sampled paths can be read back", path.display())));
    }
    BrownianPath::from_values(dt, values).map_err(|e| LabError::Parse(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementRecord {
    pub generation: u32,
    /// 1-based height index: the band is `((m - 1) 2^-n, m 2^-n]`.
    pub band_m: i64,
    /// Times of the stopping events bounding the element.
    pub interval: [f64; 2],
    /// First and last in-band sample times.
    pub extent: [f64; 2],
    pub samples: usize,
    pub kind: String,
    pub flat: bool,
    pub parent: Option<usize>,
}

pub fn decomposition_records(dec: &Decomposition) -> Vec<ElementRecord> {
    dec.generations
        .iter()
        .flatten()
        .map(|e| ElementRecord {
            generation: e.generation,
            band_m: e.band.index + 1,
            interval: [e.t_start, if e.t_end.is_finite() { e.t_end } else { e.last }],
            extent: [e.first, e.last],
            samples: e.samples,
            kind: match e.kind {
                ElementKind::Up => "up",
                ElementKind::Down => "down",
                ElementKind::Merged => "merged",
                ElementKind::Root => "root",
            }
            .into(),
            flat: e.flat,
            parent: e.parent,
        })
        .collect()
}

pub fn write_decomposition_json(path: &Path, dec: &Decomposition) -> Result<(), LabError> {
    write_json(path, &decomposition_records(dec))
}

/// Modulus problem file: masses and weights as exact fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub p: f64,
    #[serde(with = "fraction_vec")]
    pub masses: Vec<BigRational>,
    /// Each family lists `[cell, weight]` pairs.
    pub families: Vec<Vec<(usize, String)>>,
}

impl ProblemFile {
    pub fn to_problem(&self) -> Result<ModulusProblem, LabError> {
        let families = self
            .families
            .iter()
            .map(|f| f.iter().map(|(c, w)| Ok((*c, parse_fraction(w)?))).collect::<Result<Vec<_>, LabError>>())
            .collect::<Result<Vec<_>, _>>()?;
        ModulusProblem::new(self.masses.clone(), families, self.p)
            .map_err(|source| LabError::Modulus { context: "modulus problem file".into(), source })
    }

    pub fn from_problem(prob: &ModulusProblem) -> Self {
        ProblemFile {
            p: prob.p,
            masses: prob.masses.clone(),
            families: prob.families.iter().map(|f| f.iter().map(|(c, w)| (*c, format_fraction(w))).collect()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub p: f64,
    pub value: f64,
    /// Exact value and density when `p = 1`.
    pub exact_value: Option<String>,
    pub exact_rho: Option<Vec<String>>,
    pub rho: Vec<f64>,
    pub duality_gap: Option<f64>,
    pub iterations: Option<usize>,
}

impl SolutionRecord {
    pub fn new(p: f64, sol: &Solution<BigRational>) -> Self {
        match sol {
            Solution::Linear(LinearSolution { value, rho, .. }) => SolutionRecord {
                p,
                value: sol.value_f64(),
                exact_value: Some(format_fraction(value)),
                exact_rho: Some(rho.iter().map(format_fraction).collect()),
                rho: sol.rho_f64(),
                duality_gap: Some(0.0),
                iterations: None,
            },
            Solution::Convex(c) => SolutionRecord {
                p,
                value: c.value,
                exact_value: None,
                exact_rho: None,
                rho: c.rho.clone(),
                duality_gap: Some(c.gap),
                iterations: Some(c.iterations),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_round_trip() {
        for text in ["1/3", "-7/4", "5", "0"] {
            assert_eq!(format_fraction(&parse_fraction(text).unwrap()), text);
        }
        assert_eq!(format_fraction(&parse_fraction("0.25").unwrap()), "1/4");
        assert_eq!(format_fraction(&parse_fraction("6/4").unwrap()), "3/2");
        assert!(parse_fraction("1/0").is_err());
        assert!(parse_fraction("x").is_err());
        assert!(parse_fraction("1.").is_err());
    }

    #[test]
    fn fraction_fields_serialize_as_strings() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct S {
            #[serde(with = "fraction")]
            q: BigRational,
        }
        let s = S { q: parse_fraction("2/6").unwrap() };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"q":"1/3"}"#);
        assert_eq!(serde_json::from_str::<S>(&text).unwrap(), s);
    }
}
