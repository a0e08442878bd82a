use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    IntUniform { lo: i64, hi: i64 },
    Categorical { values: Vec<String> },
}

impl Distribution {
    fn validate(&self, name: &str) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpace(format!("{name}: {m}")));
        match self {
            Distribution::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                bad(format!("need finite lo < hi, got [{lo}, {hi}]"))
            }
            Distribution::LogUniform { lo, hi } if !(*lo > 0.0 && hi.is_finite() && lo < hi) => {
                bad(format!("need 0 < lo < hi, got [{lo}, {hi}]"))
            }
            Distribution::IntUniform { lo, hi } if lo >= hi => bad(format!("need lo < hi, got [{lo}, {hi}]")),
            Distribution::Categorical { values } if values.is_empty() => bad("no categories".into()),
            _ => Ok(()),
        }
    }

    /// Bounds in the internal (sampling) space: log for log-uniform, and
    /// `[lo − 0.5, hi + 0.5]` for integers so rounding is uniform.
    pub(crate) fn internal_bounds(&self) -> Option<(f64, f64)> {
        match self {
            Distribution::Uniform { lo, hi } => Some((*lo, *hi)),
            Distribution::LogUniform { lo, hi } => Some((lo.ln(), hi.ln())),
            Distribution::IntUniform { lo, hi } => Some((*lo as f64 - 0.5, *hi as f64 + 0.5)),
            Distribution::Categorical { .. } => None,
        }
    }

    pub(crate) fn to_internal(&self, v: &Value) -> Option<f64> {
        match (self, v) {
            (Distribution::Uniform { .. }, Value::Float(x)) => Some(*x),
            (Distribution::LogUniform { .. }, Value::Float(x)) => Some(x.ln()),
            (Distribution::IntUniform { .. }, Value::Int(i)) => Some(*i as f64),
            _ => None,
        }
    }

    pub(crate) fn from_internal(&self, x: f64) -> Value {
        match self {
            Distribution::Uniform { lo, hi } => Value::Float(x.clamp(*lo, *hi)),
            Distribution::LogUniform { lo, hi } => Value::Float(x.exp().clamp(*lo, *hi)),
            Distribution::IntUniform { lo, hi } => Value::Int((x.round() as i64).clamp(*lo, *hi)),
            Distribution::Categorical { values } => Value::Cat(values[0].clone()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match self {
            Distribution::Categorical { values } => Value::Cat(values[rng.random_range(0..values.len())].clone()),
            Distribution::IntUniform { lo, hi } => Value::Int(rng.random_range(*lo..=*hi)),
            d => {
                let (lo, hi) = d.internal_bounds().expect("numeric");
                d.from_internal(rng.random_range(lo..hi))
            }
        }
    }

    pub fn contains(&self, v: &Value) -> bool {
        match (self, v) {
            (Distribution::Uniform { lo, hi } | Distribution::LogUniform { lo, hi }, Value::Float(x)) => {
                (*lo..=*hi).contains(x)
            }
            (Distribution::IntUniform { lo, hi }, Value::Int(i)) => (*lo..=*hi).contains(i),
            (Distribution::Categorical { values }, Value::Cat(c)) => values.contains(c),
            _ => false,
        }
    }

    /// Whether every value of `self` is also a value of `outer`.
    pub fn is_subset_of(&self, outer: &Distribution) -> bool {
        use Distribution::*;
        match (self, outer) {
            (Uniform { lo, hi }, Uniform { lo: a, hi: b }) | (LogUniform { lo, hi }, LogUniform { lo: a, hi: b }) => {
                lo >= a && hi <= b
            }
            (IntUniform { lo, hi }, IntUniform { lo: a, hi: b }) => lo >= a && hi <= b,
            (Categorical { values }, Categorical { values: outer }) => values.iter().all(|v| outer.contains(v)),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Cat(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(x) => Some(*x),
            Value::Cat(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Cat(c) => write!(f, "{c:?}"),
        }
    }
}

pub type Params = BTreeMap<String, Value>;

/// Named parameter distributions, in declaration order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchSpace {
    params: Vec<(String, Distribution)>,
}

impl SearchSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(mut self, name: &str, dist: Distribution) -> Result<Self> {
        dist.validate(name)?;
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidSpace(format!("duplicate parameter {name:?}")));
        }
        self.params.push((name.to_string(), dist));
        Ok(self)
    }

    pub fn uniform(self, name: &str, lo: f64, hi: f64) -> Result<Self> {
        self.add(name, Distribution::Uniform { lo, hi })
    }

    pub fn log_uniform(self, name: &str, lo: f64, hi: f64) -> Result<Self> {
        self.add(name, Distribution::LogUniform { lo, hi })
    }

    pub fn int_uniform(self, name: &str, lo: i64, hi: i64) -> Result<Self> {
        self.add(name, Distribution::IntUniform { lo, hi })
    }

    pub fn categorical(self, name: &str, values: &[&str]) -> Result<Self> {
        self.add(
            name,
            Distribution::Categorical {
                values: values.iter().map(|s| s.to_string()).collect(),
            },
        )
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Distribution)> {
        self.params.iter().map(|(n, d)| (n.as_str(), d))
    }

    pub fn get(&self, name: &str) -> Option<&Distribution> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    pub fn contains(&self, params: &Params) -> bool {
        self.params
            .iter()
            .all(|(n, d)| params.get(n).is_some_and(|v| d.contains(v)))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Params {
        self.params.iter().map(|(n, d)| (n.clone(), d.sample(rng))).collect()
    }

    pub fn is_subset_of(&self, outer: &SearchSpace) -> bool {
        self.params
            .iter()
            .all(|(n, d)| outer.get(n).is_some_and(|o| d.is_subset_of(o)))
    }

    /// Each numeric range becomes a window of relative width `narrow`
    /// (in the sampling space) centred on `best`, clipped to the current
    /// bounds. Categoricals are unchanged.
    pub fn narrowed(&self, best: &Params, narrow: f64) -> Result<SearchSpace> {
        if !(narrow > 0.0 && narrow <= 1.0) {
            return Err(Error::InvalidSpace(format!("narrow {narrow} outside (0, 1]")));
        }
        let mut out = SearchSpace::new();
        for (name, dist) in &self.params {
            let center = best.get(name).and_then(|v| dist.to_internal(v));
            let new = match (dist, center) {
                (Distribution::Uniform { lo, hi }, Some(c)) => {
                    let half = narrow * (hi - lo) / 2.0;
                    Distribution::Uniform {
                        lo: (c - half).max(*lo),
                        hi: (c + half).min(*hi),
                    }
                }
                (Distribution::LogUniform { lo, hi }, Some(c)) => {
                    let half = narrow * (hi.ln() - lo.ln()) / 2.0;
                    Distribution::LogUniform {
                        lo: (c - half).exp().max(*lo),
                        hi: (c + half).exp().min(*hi),
                    }
                }
                (Distribution::IntUniform { lo, hi }, Some(c)) => {
                    let half = narrow * (hi - lo) as f64 / 2.0;
                    let mut a = ((c - half).floor() as i64).max(*lo);
                    let mut b = ((c + half).ceil() as i64).min(*hi);
                    if a == b {
                        if b < *hi {
                            b += 1;
                        } else {
                            a -= 1;
                        }
                    }
                    Distribution::IntUniform { lo: a, hi: b }
                }
                (d, _) => d.clone(),
            };
            out = out.add(name, new)?;
        }
        Ok(out)
    }

    /// The parameters as a TOML table body.
    pub fn params_toml(params: &Params) -> String {
        params.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn space() -> SearchSpace {
        SearchSpace::new()
            .uniform("u", -1.0, 2.0)
            .unwrap()
            .log_uniform("l", 0.01, 10.0)
            .unwrap()
            .int_uniform("i", 3, 10)
            .unwrap()
            .categorical("c", &["a", "b"])
            .unwrap()
    }

    #[test]
    fn invalid_spaces() {
        assert!(SearchSpace::new().uniform("x", 1.0, 1.0).is_err());
        assert!(SearchSpace::new().log_uniform("x", 0.0, 1.0).is_err());
        assert!(SearchSpace::new().int_uniform("x", 2, 1).is_err());
        assert!(SearchSpace::new().categorical("x", &[]).is_err());
        assert!(space().uniform("u", 0.0, 1.0).is_err());
    }

    #[test]
    fn toml_fragment_parses() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let p = space().sample(&mut rng);
        let parsed: toml::Table = SearchSpace::params_toml(&p).parse().unwrap();
        assert_eq!(parsed.len(), 4);
        assert!(parsed["i"].is_integer() && parsed["u"].is_float() && parsed["c"].is_str());
    }

    proptest! {
        #[test]
        fn samples_in_bounds(seed in any::<u64>()) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let s = space();
            prop_assert!(s.contains(&s.sample(&mut rng)));
        }

        #[test]
        fn narrowed_is_subset(seed in any::<u64>(), narrow in 0.01f64..=1.0) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let s = space();
            let best = s.sample(&mut rng);
            let n = s.narrowed(&best, narrow).unwrap();
            prop_assert!(n.is_subset_of(&s));
            prop_assert!(n.contains(&best));
            let twice = n.narrowed(&n.sample(&mut rng), narrow).unwrap();
            prop_assert!(twice.is_subset_of(&n));
        }
    }
}
