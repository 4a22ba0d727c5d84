//! SCM definition files.
//!
//! ```text
//! [scm]
//! query_card = 2
//! response_card = 2
//! n = 2
//!
//! [query_prior]
//! p = 0.5 0.5
//!
//! [response_kernel]      # one row per query value
//! 0 = 0.5 0.5
//! 1 = 0.5 0.5
//!
//! [collider_kernel]      # keyed by "q y_0 .. y_{n-1}"
//! 0 0 0 = 1 0
//! 0 0 1 = 0 1
//! ...
//! ```
//!
//! Rows within 1e-9 of summing to one are renormalised; anything further
//! off is rejected with the offending line number.

use std::fmt::Write as _;
use std::path::Path;

use super::FiniteScm;
use crate::error::{Error, Result};
use crate::kv::{Entry, KvDocument, KvError};

const LOAD_TOL: f64 = 1e-9;

pub fn read_scm_file(path: impl AsRef<Path>) -> Result<FiniteScm> {
    let text = std::fs::read_to_string(path)?;
    parse_scm(&text)
}

pub fn parse_scm(text: &str) -> Result<FiniteScm> {
    let doc = KvDocument::parse(text)?;
    for s in &doc.sections {
        if !["scm", "query_prior", "response_kernel", "collider_kernel"].contains(&s.name.as_str())
        {
            return Err(KvError::new(s.line, format!("unknown section [{}]", s.name)).into());
        }
    }
    let head = doc.require_section("scm")?;
    for e in &head.entries {
        if !["query_card", "response_card", "n"].contains(&e.key.as_str()) {
            return Err(KvError::new(e.line, format!("unknown key `{}`", e.key)).into());
        }
    }
    let query_card: usize = head.require("query_card")?.parse()?;
    let response_card: usize = head.require("response_card")?.parse()?;
    let n: usize = head.require("n")?.parse()?;
    if query_card == 0 || response_card == 0 || n < 2 {
        return Err(Error::Validation(format!(
            "line {}: need query_card, response_card >= 1 and n >= 2",
            head.line
        )));
    }

    let prior_sec = doc.require_section("query_prior")?;
    let prior = prior_sec.require("p")?;
    let query_prior = read_row(prior, query_card)?;

    let resp_sec = doc.require_section("response_kernel")?;
    let mut response_kernel = vec![None; query_card];
    for e in &resp_sec.entries {
        let q: usize = e
            .key
            .parse()
            .map_err(|_| KvError::new(e.line, format!("bad query value `{}`", e.key)))?;
        let slot = response_kernel
            .get_mut(q)
            .ok_or_else(|| KvError::new(e.line, format!("query value {q} out of range")))?;
        *slot = Some(read_row(e, response_card)?);
    }
    let response_kernel = response_kernel
        .into_iter()
        .enumerate()
        .map(|(q, r)| {
            r.ok_or_else(|| {
                KvError::new(resp_sec.line, format!("missing response row for q = {q}"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut scm = FiniteScm {
        query_card,
        response_card,
        n,
        query_prior,
        response_kernel,
        collider_kernel: Vec::new(),
    };
    let col_sec = doc.require_section("collider_kernel")?;
    let mut rows = vec![None; scm.collider_rows()];
    for e in &col_sec.entries {
        let codes: Vec<usize> = e
            .key
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| KvError::new(e.line, format!("bad collider key `{}`", e.key)))?;
        if codes.len() != n + 1
            || codes[0] >= query_card
            || codes[1..].iter().any(|&y| y >= response_card)
        {
            return Err(
                KvError::new(e.line, format!("collider key `{}` out of range", e.key)).into(),
            );
        }
        let r = scm.collider_row(codes[0], &codes[1..]);
        if rows[r].is_some() {
            return Err(KvError::new(e.line, format!("duplicate collider row `{}`", e.key)).into());
        }
        rows[r] = Some(read_row(e, response_card)?);
    }
    scm.collider_kernel = rows
        .into_iter()
        .enumerate()
        .map(|(r, row)| {
            row.ok_or_else(|| KvError::new(col_sec.line, format!("missing collider row #{r}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    scm.validate()?;
    Ok(scm)
}

fn read_row(e: &Entry, card: usize) -> Result<Vec<f64>> {
    let mut row: Vec<f64> = e.parse_list()?;
    if row.len() != card {
        return Err(KvError::new(
            e.line,
            format!("expected {card} probabilities, got {}", row.len()),
        )
        .into());
    }
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(KvError::new(e.line, "probabilities must lie in [0, 1]").into());
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > LOAD_TOL {
        return Err(KvError::new(e.line, format!("row sums to {s}, not 1")).into());
    }
    row.iter_mut().for_each(|p| *p /= s);
    Ok(row)
}

/// Render an SCM in the file format above.
pub fn scm_to_text(scm: &FiniteScm) -> String {
    let join = |row: &[f64]| {
        row.iter()
            .map(|p| format!("{p}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "[scm]\nquery_card = {}\nresponse_card = {}\nn = {}\n",
        scm.query_card, scm.response_card, scm.n
    );
    let _ = writeln!(out, "[query_prior]\np = {}\n", join(&scm.query_prior));
    let _ = writeln!(out, "[response_kernel]");
    for (q, row) in scm.response_kernel.iter().enumerate() {
        let _ = writeln!(out, "{q} = {}", join(row));
    }
    let _ = writeln!(out, "\n[collider_kernel]");
    let rc = scm.response_card;
    for (r, row) in scm.collider_kernel.iter().enumerate() {
        let mut codes = vec![0usize; scm.n + 1];
        let mut rest = r;
        for slot in codes[1..].iter_mut().rev() {
            *slot = rest % rc;
            rest /= rc;
        }
        codes[0] = rest;
        let key = codes
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(out, "{key} = {}", join(row));
    }
    out
}
