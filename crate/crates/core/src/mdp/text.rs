//! Plain-text MDP format.
//!
//! ```text
//! # comments and blank lines are ignored
//! S A gamma
//! r(0,0) … r(0,A−1)            S reward rows
//! …
//! P(·|0,0)                     S·A transition rows of S entries,
//! …                            ordered by state then action
//! ```
//!
//! Files carry no behavior policy: loaded models use a uniform behavior
//! policy and a uniform initial distribution.

use std::fmt::Write as _;
use std::str::FromStr;

use super::TabularMdp;
use crate::error::{Error, Result};

fn numbers<T: FromStr>(line: usize, text: &str) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<T>().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse `{tok}`"),
            })
        })
        .collect()
}

impl TabularMdp {
    pub fn from_text(input: &str) -> Result<Self> {
        let mut lines = input
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 0,
            message: "empty input".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: hline,
                message: "header must be `S A gamma`".into(),
            });
        }
        let parse_usize = |tok: &str| {
            tok.parse::<usize>().map_err(|_| Error::Parse {
                line: hline,
                message: format!("bad count `{tok}`"),
            })
        };
        let ns = parse_usize(fields[0])?;
        let na = parse_usize(fields[1])?;
        let gamma: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: hline,
            message: format!("bad gamma `{}`", fields[2]),
        })?;

        let mut read_rows = |count: usize, width: usize, what: &str| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count * width);
            for _ in 0..count {
                let (ln, text) = lines.next().ok_or(Error::Parse {
                    line: 0,
                    message: format!("unexpected end of input in {what}"),
                })?;
                let row: Vec<f64> = numbers(ln, text)?;
                if row.len() != width {
                    return Err(Error::Parse {
                        line: ln,
                        message: format!("{what} row has {} entries, expected {width}", row.len()),
                    });
                }
                out.extend(row);
            }
            Ok(out)
        };
        let rewards = read_rows(ns, na, "reward")?;
        let transitions = read_rows(ns * na, ns, "transition")?;
        if let Some((ln, _)) = lines.next() {
            return Err(Error::Parse {
                line: ln,
                message: "trailing data".into(),
            });
        }
        TabularMdp::with_uniform_behavior(ns, na, transitions, rewards, gamma)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{} {} {}",
            self.num_states, self.num_actions, self.gamma
        )
        .unwrap();
        let join = |xs: &[f64]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        for row in self.rewards.chunks(self.num_actions) {
            writeln!(out, "{}", join(row)).unwrap();
        }
        for row in self.transitions.chunks(self.num_states) {
            writeln!(out, "{}", join(row)).unwrap();
        }
        out
    }
}
