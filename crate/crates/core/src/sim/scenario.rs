//! Line-oriented scenario scripts.
//!
//! ```text
//! # comment
//! CONFIG slices=1 page_stores=4
//! AT 10 WRITE page=1 len=64
//! AT 20 CRASH node=ps2 FOR 400
//! REPEAT 100 EVERY 10 AT 50 WRITE page=random len=32
//! AT 900 CHECK converged
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::types::{Lsn, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct ScenarioParseError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageSel {
    Fixed(u64),
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsnSel {
    Latest,
    Fixed(Lsn),
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Durability,
    Oracle,
    Converged,
    Present(Lsn),
    AppendOnly,
    CvMonotone,
    ReplicaConsistency,
    LogCacheNoDiskReads,
    RecoveryMinimal,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Check::Durability => f.write_str("durability"),
            Check::Oracle => f.write_str("oracle"),
            Check::Converged => f.write_str("converged"),
            Check::Present(l) => write!(f, "present lsn={l}"),
            Check::AppendOnly => f.write_str("append_only"),
            Check::CvMonotone => f.write_str("cv_monotone"),
            Check::ReplicaConsistency => f.write_str("replica_consistency"),
            Check::LogCacheNoDiskReads => f.write_str("log_cache_no_disk_reads"),
            Check::RecoveryMinimal => f.write_str("recovery_minimal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Write {
        page: PageSel,
        len: usize,
    },
    BeginGroup,
    EndGroup,
    /// One group writing the same bytes at offset 0 of every listed page.
    GroupWrite {
        pages: Vec<u64>,
        len: usize,
    },
    Crash {
        node: NodeId,
        dur: u64,
    },
    Hang {
        node: NodeId,
        dur: u64,
    },
    Partition {
        a: NodeId,
        b: NodeId,
        dur: u64,
    },
    Drop {
        node: NodeId,
        n: u32,
    },
    Heal,
    Read {
        page: PageSel,
        replica: Option<NodeId>,
        lsn: LsnSel,
    },
    ViewCheck {
        replica: NodeId,
        pages: Vec<u64>,
        samples: u32,
    },
    Truncate,
    Gossip {
        slice: u32,
    },
    Check(Check),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scenario {
    pub config: Vec<(String, String)>,
    pub events: Vec<(u64, Action)>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioParseError> {
        let mut sc = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ScenarioParseError { line: i + 1, msg };
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "CONFIG" => {
                    for t in &toks[1..] {
                        let (k, v) = t
                            .split_once('=')
                            .ok_or_else(|| err(format!("expected key=value, got `{t}`")))?;
                        sc.config.push((k.to_string(), v.to_string()));
                    }
                }
                "AT" => {
                    let at = num(toks.get(1), "time").map_err(err)?;
                    let action = parse_action(&toks[2..]).map_err(err)?;
                    sc.events.push((at, action));
                }
                "REPEAT" => {
                    let n: u64 = num(toks.get(1), "count").map_err(err)?;
                    if toks.get(2) != Some(&"EVERY") {
                        return Err(err("expected EVERY".into()));
                    }
                    let every: u64 = num(toks.get(3), "interval").map_err(err)?;
                    if toks.get(4) != Some(&"AT") {
                        return Err(err("expected AT".into()));
                    }
                    let start: u64 = num(toks.get(5), "time").map_err(err)?;
                    let action = parse_action(&toks[6..]).map_err(err)?;
                    for k in 0..n {
                        sc.events.push((start + k * every, action.clone()));
                    }
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        // Stable: same-time events keep file order.
        sc.events.sort_by_key(|(t, _)| *t);
        Ok(sc)
    }

    pub fn end_time(&self) -> u64 {
        self.events.iter().map(|(t, _)| *t).max().unwrap_or(0)
    }
}

fn num<T: std::str::FromStr>(tok: Option<&&str>, what: &str) -> Result<T, String> {
    let t = tok.ok_or_else(|| format!("missing {what}"))?;
    t.parse().map_err(|_| format!("invalid {what} `{t}`"))
}

fn kv<'a>(toks: &[&'a str]) -> Result<BTreeMap<&'a str, &'a str>, String> {
    let mut m = BTreeMap::new();
    for t in toks {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{t}`"))?;
        m.insert(k, v);
    }
    Ok(m)
}

fn req<'a>(m: &BTreeMap<&str, &'a str>, key: &str) -> Result<&'a str, String> {
    m.get(key)
        .copied()
        .ok_or_else(|| format!("missing `{key}=`"))
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("invalid value `{v}` for `{key}`"))
}

fn page_sel(v: &str) -> Result<PageSel, String> {
    if v == "random" {
        Ok(PageSel::Random)
    } else {
        parse_num(v, "page").map(PageSel::Fixed)
    }
}

fn list(v: &str) -> Result<Vec<u64>, String> {
    v.split(',').map(|p| parse_num(p, "pages")).collect()
}

/// `<kw> ... FOR <ms>`: returns the tokens before FOR and the duration.
fn split_for<'a>(toks: &'a [&'a str]) -> Result<(&'a [&'a str], u64), String> {
    let i = toks
        .iter()
        .position(|t| *t == "FOR")
        .ok_or("missing FOR <ms>")?;
    let dur = num(toks.get(i + 1), "duration")?;
    Ok((&toks[..i], dur))
}

fn parse_action(toks: &[&str]) -> Result<Action, String> {
    let Some((&kw, rest)) = toks.split_first() else {
        return Err("missing action".into());
    };
    Ok(match kw {
        "WRITE" => {
            let m = kv(rest)?;
            Action::Write {
                page: page_sel(req(&m, "page")?)?,
                len: parse_num(req(&m, "len")?, "len")?,
            }
        }
        "BEGIN_GROUP" => Action::BeginGroup,
        "END_GROUP" => Action::EndGroup,
        "GROUP_WRITE" => {
            let m = kv(rest)?;
            Action::GroupWrite {
                pages: list(req(&m, "pages")?)?,
                len: parse_num(req(&m, "len")?, "len")?,
            }
        }
        "CRASH" | "HANG" => {
            let (head, dur) = split_for(rest)?;
            let node = NodeId::new(req(&kv(head)?, "node")?);
            if kw == "CRASH" {
                Action::Crash { node, dur }
            } else {
                Action::Hang { node, dur }
            }
        }
        "PARTITION" => {
            let (head, dur) = split_for(rest)?;
            let [a, b] = head else {
                return Err("PARTITION needs two node ids".into());
            };
            Action::Partition {
                a: NodeId::new(*a),
                b: NodeId::new(*b),
                dur,
            }
        }
        "DROP" => {
            let m = kv(rest)?;
            Action::Drop {
                node: NodeId::new(req(&m, "node")?),
                n: parse_num(req(&m, "n")?, "n")?,
            }
        }
        "HEAL" => Action::Heal,
        "READ" => {
            let m = kv(rest)?;
            let lsn = match m.get("lsn") {
                None => LsnSel::Latest,
                Some(&"random") => LsnSel::Random,
                Some(v) => LsnSel::Fixed(Lsn(parse_num(v, "lsn")?)),
            };
            Action::Read {
                page: page_sel(req(&m, "page")?)?,
                replica: m.get("replica").map(|r| NodeId::new(*r)),
                lsn,
            }
        }
        "VIEW_CHECK" => {
            let m = kv(rest)?;
            Action::ViewCheck {
                replica: NodeId::new(req(&m, "replica")?),
                pages: list(req(&m, "pages")?)?,
                samples: parse_num(req(&m, "samples")?, "samples")?,
            }
        }
        "TRUNCATE" => Action::Truncate,
        "GOSSIP" => {
            let m = kv(rest)?;
            Action::Gossip {
                slice: parse_num(req(&m, "slice")?, "slice")?,
            }
        }
        "CHECK" => {
            let (&name, args) = rest.split_first().ok_or("missing check name")?;
            let c = match name {
                "durability" => Check::Durability,
                "oracle" => Check::Oracle,
                "converged" => Check::Converged,
                "present" => {
                    let m = kv(args)?;
                    Check::Present(Lsn(parse_num(req(&m, "lsn")?, "lsn")?))
                }
                "append_only" => Check::AppendOnly,
                "cv_monotone" => Check::CvMonotone,
                "replica_consistency" => Check::ReplicaConsistency,
                "log_cache_no_disk_reads" => Check::LogCacheNoDiskReads,
                "recovery_minimal" => Check::RecoveryMinimal,
                other => return Err(format!("unknown check `{other}`")),
            };
            Action::Check(c)
        }
        other => return Err(format!("unknown action `{other}`")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_core_grammar() {
        let s = Scenario::parse(
            "# x\nCONFIG slices=1\nAT 5 WRITE page=3 len=8\nAT 1 CRASH node=ps2 FOR 400\n\
             AT 7 PARTITION master ps1 FOR 10\nAT 9 READ page=random replica=rr0 lsn=random\n\
             AT 9 CHECK present lsn=4\nREPEAT 3 EVERY 10 AT 100 BEGIN_GROUP\n",
        )
        .unwrap();
        assert_eq!(s.config, vec![("slices".into(), "1".into())]);
        assert_eq!(s.events.len(), 8);
        assert_eq!(
            s.events[0],
            (
                1,
                Action::Crash {
                    node: NodeId::new("ps2"),
                    dur: 400
                }
            )
        );
        assert_eq!(s.events[4].1, Action::Check(Check::Present(Lsn(4))));
        assert_eq!(s.events[7].0, 120);
        assert_eq!(s.end_time(), 120);
    }

    #[test]
    fn empty_script_is_empty() {
        assert_eq!(Scenario::parse("").unwrap(), Scenario::default());
    }

    #[test]
    fn reports_line_numbers() {
        let e = Scenario::parse("AT 1 WRITE page=1 len=2\nAT x WRITE\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(Scenario::parse("AT 1 FLY").is_err());
        assert!(Scenario::parse("AT 1 CRASH node=ps1").is_err());
        assert!(Scenario::parse("AT 1 CHECK nonsense").is_err());
    }
}
