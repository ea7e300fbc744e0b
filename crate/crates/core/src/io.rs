//! JSON market files.
//!
//! ```json
//! {
//!   "n_private": 1, "n_public": 1,
//!   "couples": [
//!     {"man": 0, "woman": 0, "committed": true, "q": [2.0], "Q": [1.0],
//!      "assignable_m": [0.5], "assignable_w": [0.5]}
//!   ],
//!   "prices":  [{"m": 0, "w": 0, "p": [1.0], "P": [1.0]}, {"m": 0, "w": "∅", "p": [1.0], "P": [1.0]}],
//!   "incomes": [{"m": 0, "w": 0, "y": 3.0}, {"m": 0, "w": "∅", "y": 1.5}]
//! }
//! ```
//!
//! Couples are indexed by the husband. An absent partner is written `"∅"`
//! (or `null`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::market::{validate_market, Assignable, CommittedSet, Market, Matching, PairKey, PairPrices, Violation};

pub const EMPTY_SYMBOL: &str = "∅";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("malformed market file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("malformed market file: {0}")]
    Structure(String),
    #[error("invalid market: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// A partner slot: an agent index or the empty partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot(pub Option<usize>);

impl Serialize for Slot {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(i) => s.serialize_u64(i as u64),
            None => s.serialize_str(EMPTY_SYMBOL),
        }
    }
}

impl<'de> Deserialize<'de> for Slot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Text(String),
            Null(()),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(Slot(Some(i))),
            Raw::Null(()) => Ok(Slot(None)),
            Raw::Text(t) if t == EMPTY_SYMBOL || t.eq_ignore_ascii_case("empty") => Ok(Slot(None)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected an index or \"{EMPTY_SYMBOL}\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleRecord {
    pub man: usize,
    pub woman: usize,
    #[serde(default)]
    pub committed: bool,
    pub q: Vec<f64>,
    #[serde(rename = "Q")]
    pub big_q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignable_m: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignable_w: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceRecord {
    pub m: Slot,
    pub w: Slot,
    pub p: Vec<f64>,
    #[serde(rename = "P")]
    pub big_p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncomeRecord {
    pub m: Slot,
    pub w: Slot,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketFile {
    pub n_private: usize,
    pub n_public: usize,
    pub couples: Vec<CoupleRecord>,
    pub prices: Vec<PriceRecord>,
    pub incomes: Vec<IncomeRecord>,
}

fn key_of(m: Slot, w: Slot) -> Result<PairKey, IoError> {
    match (m.0, w.0) {
        (None, None) => Err(IoError::Structure("pair (∅, ∅) is not a potential pair".into())),
        (man, woman) => Ok(PairKey { man, woman }),
    }
}

fn slot_pair(key: &PairKey) -> (Slot, Slot) {
    (Slot(key.man), Slot(key.woman))
}

impl MarketFile {
    /// Converts to a market without checking its invariants.
    pub fn into_market(self) -> Result<Market, IoError> {
        let n = self.couples.len();
        let mut by_man: Vec<Option<CoupleRecord>> = vec![None; n];
        for record in self.couples {
            let m = record.man;
            if m >= n {
                return Err(IoError::Structure(format!(
                    "man index {m} out of range for {n} couples"
                )));
            }
            if by_man[m].is_some() {
                return Err(IoError::Structure(format!("man {m} listed twice")));
            }
            by_man[m] = Some(record);
        }
        let records: Vec<CoupleRecord> = by_man.into_iter().map(|r| r.expect("n distinct men in 0..n")).collect();
        let pairs: Vec<(usize, usize)> = records.iter().map(|r| (r.man, r.woman)).collect();
        let mut women_seen = vec![false; n];
        for &(_, w) in &pairs {
            if w >= n {
                return Err(IoError::Structure(format!(
                    "woman index {w} out of range for {n} couples"
                )));
            }
            if std::mem::replace(&mut women_seen[w], true) {
                return Err(IoError::Structure(format!("woman {w} listed twice")));
            }
        }

        let mut prices = BTreeMap::new();
        for r in self.prices {
            let key = key_of(r.m, r.w)?;
            if prices
                .insert(
                    key,
                    PairPrices {
                        private: r.p,
                        public: r.big_p,
                    },
                )
                .is_some()
            {
                return Err(IoError::Structure(format!("duplicate prices for {key}")));
            }
        }
        let mut incomes = BTreeMap::new();
        for r in self.incomes {
            let key = key_of(r.m, r.w)?;
            if incomes.insert(key, r.y).is_some() {
                return Err(IoError::Structure(format!("duplicate income for {key}")));
            }
        }
        let assignable = records
            .iter()
            .map(|r| match (&r.assignable_m, &r.assignable_w) {
                (None, None) => Ok(None),
                (m, w) => {
                    let zeros = || vec![0.0; self.n_private];
                    Ok(Some(Assignable {
                        man: m.clone().unwrap_or_else(zeros),
                        woman: w.clone().unwrap_or_else(zeros),
                    }))
                }
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        Ok(Market {
            n_private: self.n_private,
            n_public: self.n_public,
            matching: Matching::from_pairs(n, n, &pairs),
            committed: CommittedSet::from_flags(records.iter().map(|r| r.committed).collect()),
            private_obs: records.iter().map(|r| r.q.clone()).collect(),
            public_obs: records.iter().map(|r| r.big_q.clone()).collect(),
            prices,
            incomes,
            assignable,
        })
    }

    pub fn from_market(market: &Market) -> Self {
        let couples = (0..market.couples())
            .map(|c| CoupleRecord {
                man: c,
                woman: market.matching.wife(c),
                committed: market.committed.is_committed(c),
                q: market.private_obs[c].clone(),
                big_q: market.public_obs[c].clone(),
                assignable_m: market.assignable[c].as_ref().map(|a| a.man.clone()),
                assignable_w: market.assignable[c].as_ref().map(|a| a.woman.clone()),
            })
            .collect();
        let prices = market
            .prices
            .iter()
            .map(|(k, p)| {
                let (m, w) = slot_pair(k);
                PriceRecord {
                    m,
                    w,
                    p: p.private.clone(),
                    big_p: p.public.clone(),
                }
            })
            .collect();
        let incomes = market
            .incomes
            .iter()
            .map(|(k, &y)| {
                let (m, w) = slot_pair(k);
                IncomeRecord { m, w, y }
            })
            .collect();
        Self {
            n_private: market.n_private,
            n_public: market.n_public,
            couples,
            prices,
            incomes,
        }
    }
}

/// Parses and validates a market.
pub fn parse_market(text: &str) -> Result<Market, IoError> {
    let file: MarketFile = serde_json::from_str(text)?;
    let market = file.into_market()?;
    let violations = validate_market(&market);
    if violations.is_empty() {
        Ok(market)
    } else {
        Err(IoError::Invalid(violations))
    }
}

pub fn read_market(path: &Path) -> Result<Market, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_market(&text)
}

pub fn market_to_json(market: &Market) -> String {
    serde_json::to_string_pretty(&MarketFile::from_market(market)).expect("market files serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::uniform;

    #[test]
    fn round_trip() {
        let mut market = uniform(&[2.0, 1.0], &[1.0, 3.0]);
        market.assignable[1] = Some(Assignable {
            man: vec![0.2],
            woman: vec![0.3],
        });
        market.committed = CommittedSet::from_flags(vec![true, false]);
        let text = market_to_json(&market);
        assert!(text.contains(EMPTY_SYMBOL));
        assert_eq!(parse_market(&text).unwrap(), market);
    }

    #[test]
    fn unknown_field_rejected() {
        let market = uniform(&[1.0], &[1.0]);
        let text = market_to_json(&market).replacen("\"n_public\"", "\"extra\": 1, \"n_public\"", 1);
        assert!(matches!(parse_market(&text), Err(IoError::Parse(_))));
    }

    #[test]
    fn budget_violation_reported() {
        let mut market = uniform(&[1.0], &[1.0]);
        *market.incomes.get_mut(&PairKey::cross(0, 0)).unwrap() = 5.0;
        let err = parse_market(&market_to_json(&market)).unwrap_err();
        assert!(matches!(err, IoError::Invalid(v) if v.iter().any(|x| x.code() == "BudgetMismatch")));
    }

    #[test]
    fn empty_partner_spellings() {
        for spelling in ["\"∅\"", "null", "\"empty\""] {
            let r: IncomeRecord = serde_json::from_str(&format!("{{\"m\": 0, \"w\": {spelling}, \"y\": 1}}")).unwrap();
            assert_eq!(r.w, Slot(None));
        }
        assert!(serde_json::from_str::<IncomeRecord>("{\"m\": 0, \"w\": \"x\", \"y\": 1}").is_err());
    }
}
