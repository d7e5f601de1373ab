use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One objective term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    CrossEntropy,
    /// Position-aligned n-gram rewards, `n >= 2`.
    Rewards(usize),
    /// Position-free n-gram matches, `n >= 1`.
    Matches(usize),
    /// Probabilistic n-gram precision (P-P2 at `n = 2`).
    Pp(usize),
    /// Bag of n-grams.
    Bon(usize),
}

impl Term {
    pub fn validate(self) -> Result<()> {
        let (n, min) = match self {
            Term::CrossEntropy => return Ok(()),
            Term::Rewards(n) => (n, 2),
            Term::Matches(n) | Term::Pp(n) | Term::Bon(n) => (n, 1),
        };
        if n < min {
            return Err(Error::invalid(format!("{self} requires n >= {min}")));
        }
        Ok(())
    }

    /// Short column label, e.g. `ce`, `rewards2`, `pp2`, `bon3`.
    pub fn label(self) -> String {
        match self {
            Term::CrossEntropy => "ce".into(),
            Term::Rewards(n) => format!("rewards{n}"),
            Term::Matches(n) => format!("matches{n}"),
            Term::Pp(n) => format!("pp{n}"),
            Term::Bon(n) => format!("bon{n}"),
        }
    }

    pub fn order(self) -> Option<usize> {
        match self {
            Term::CrossEntropy => None,
            Term::Rewards(n) | Term::Matches(n) | Term::Pp(n) | Term::Bon(n) => Some(n),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Which terms make up a composite objective.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub ce: bool,
    pub rewards: BTreeSet<usize>,
    pub matches: BTreeSet<usize>,
    pub pp: BTreeSet<usize>,
    pub bon: BTreeSet<usize>,
}

impl ObjectiveSpec {
    pub fn ce_only() -> Self {
        Self {
            ce: true,
            ..Self::default()
        }
    }

    pub fn with_rewards(mut self, orders: impl IntoIterator<Item = usize>) -> Self {
        self.rewards.extend(orders);
        self
    }

    pub fn with_matches(mut self, orders: impl IntoIterator<Item = usize>) -> Self {
        self.matches.extend(orders);
        self
    }

    pub fn with_pp(mut self, orders: impl IntoIterator<Item = usize>) -> Self {
        self.pp.extend(orders);
        self
    }

    pub fn with_bon(mut self, orders: impl IntoIterator<Item = usize>) -> Self {
        self.bon.extend(orders);
        self
    }

    pub fn single(term: Term) -> Self {
        let s = Self::default();
        match term {
            Term::CrossEntropy => Self::ce_only(),
            Term::Rewards(n) => s.with_rewards([n]),
            Term::Matches(n) => s.with_matches([n]),
            Term::Pp(n) => s.with_pp([n]),
            Term::Bon(n) => s.with_bon([n]),
        }
    }

    /// Enabled terms in fixed order: CE, rewards, matches, pp, bon, each by
    /// ascending order.
    pub fn terms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        if self.ce {
            out.push(Term::CrossEntropy);
        }
        out.extend(self.rewards.iter().map(|&n| Term::Rewards(n)));
        out.extend(self.matches.iter().map(|&n| Term::Matches(n)));
        out.extend(self.pp.iter().map(|&n| Term::Pp(n)));
        out.extend(self.bon.iter().map(|&n| Term::Bon(n)));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let terms = self.terms();
        if terms.is_empty() {
            return Err(Error::invalid("objective has no enabled terms"));
        }
        terms.into_iter().try_for_each(Term::validate)
    }
}

impl fmt::Display for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.ce {
            parts.push("ce".to_string());
        }
        for (name, set) in [
            ("rewards", &self.rewards),
            ("matches", &self.matches),
            ("pp", &self.pp),
            ("bon", &self.bon),
        ] {
            if !set.is_empty() {
                let orders: Vec<String> = set.iter().map(usize::to_string).collect();
                parts.push(format!("{name}:{}", orders.join(",")));
            }
        }
        f.write_str(&parts.join("+"))
    }
}

/// Parses `ce+rewards:2,3,4+matches:2`-style strings.
impl FromStr for ObjectiveSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = ObjectiveSpec::default();
        for part in s.split('+').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "ce" {
                spec.ce = true;
                continue;
            }
            let (name, orders) = part
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("term `{part}` needs orders, e.g. `{part}:2`")))?;
            let set = match name {
                "rewards" => &mut spec.rewards,
                "matches" => &mut spec.matches,
                "pp" => &mut spec.pp,
                "bon" => &mut spec.bon,
                other => return Err(Error::invalid(format!("unknown objective `{other}`"))),
            };
            for o in orders.split(',') {
                let n = o
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad order `{o}` in `{part}`")))?;
                set.insert(n);
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}
