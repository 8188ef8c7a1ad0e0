//! Collates the CSV outputs of `eval`, `refine` and `causal` into one
//! markdown summary with pass/fail verdicts.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::{ACCURACY_CURVE_CSV, CAUSAL_CSV, REFINE_CSV};
use crate::scene::ObjectKind;
use crate::trajectory::UserType;

pub const REPORT_MD: &str = "report.md";

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

impl Verdict {
    fn label(&self) -> &'static str {
        match self {
            Verdict::Pass(_) => "PASS",
            Verdict::Fail(_) => "FAIL",
            Verdict::NotRun(_) => "not run",
        }
    }

    fn detail(&self) -> &str {
        match self {
            Verdict::Pass(s) | Verdict::Fail(s) | Verdict::NotRun(s) => s,
        }
    }

    fn from_checks(failures: Vec<String>, ok: String) -> Self {
        if failures.is_empty() {
            Verdict::Pass(ok)
        } else {
            Verdict::Fail(failures.join("; "))
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.label(), self.detail())
    }
}

pub type Row = BTreeMap<String, String>;

/// Header-keyed rows of a comma-separated table without quoting.
pub fn parse_csv(text: &str) -> Vec<Row> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(header) = lines.next() else { return Vec::new() };
    let keys: Vec<&str> = header.split(',').collect();
    lines
        .map(|l| keys.iter().map(|k| k.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

fn num(row: &Row, key: &str) -> Option<f64> {
    row.get(key)?.parse().ok()
}

fn find<'a>(rows: &'a [Row], pairs: &[(&str, &str)]) -> Option<&'a Row> {
    rows.iter().find(|r| pairs.iter().all(|(k, v)| r.get(*k).map(String::as_str) == Some(*v)))
}

/// Accuracy trend on the first user type found in the curve (careful when present).
pub fn check_accuracy(rows: &[Row]) -> Verdict {
    let user = if find(rows, &[("user_type", "careful")]).is_some() {
        "careful".to_string()
    } else {
        match rows.first().and_then(|r| r.get("user_type")) {
            Some(u) => u.clone(),
            None => return Verdict::NotRun("no accuracy rows".into()),
        }
    };
    let mean = |model: &str, k: usize| {
        find(rows, &[("user_type", &user), ("model", model), ("k", &k.to_string())]).and_then(|r| num(r, "mean"))
    };
    let (Some(f9), Some(f1)) = (mean("full", 9), mean("full", 1)) else {
        return Verdict::NotRun("full model at k=1 and k=9 required".into());
    };
    let mut bad = Vec::new();
    if f9 < 0.90 {
        bad.push(format!("full k=9 mean {f9:.3} < 0.90"));
    }
    if f1 > f9 - 0.10 {
        bad.push(format!("full k=1 {f1:.3} is not 0.10 below k=9 {f9:.3}"));
    }
    for k in 1..=3 {
        if let (Some(f), Some(c)) = (mean("full", k), mean("classifier", k)) {
            if f < c {
                bad.push(format!("full {f:.3} < classifier {c:.3} at k={k}"));
            }
        }
    }
    match mean("irl", 1) {
        Some(i) if i >= f1 => bad.push(format!("irl k=1 {i:.3} not below full {f1:.3}")),
        None => bad.push("irl k=1 missing".into()),
        _ => {}
    }
    Verdict::from_checks(bad, format!("{user}: full k=1 {f1:.3}, k=9 {f9:.3}"))
}

pub fn check_refinement(rows: &[Row]) -> Verdict {
    let rate = |u: &str| find(rows, &[("user_type", u)]).and_then(|r| num(r, "success_rate"));
    let (Some(c), Some(n), Some(a)) = (rate("careful"), rate("normal"), rate("aggressive")) else {
        return Verdict::NotRun("all three user types required".into());
    };
    let mut bad = Vec::new();
    if a != 1.0 {
        bad.push(format!("aggressive {a:.3} != 1"));
    }
    if n < 0.85 {
        bad.push(format!("normal {n:.3} < 0.85"));
    }
    if c < 0.60 {
        bad.push(format!("careful {c:.3} < 0.60"));
    }
    Verdict::from_checks(bad, format!("careful {c:.3}, normal {n:.3}, aggressive {a:.3}"))
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn check_causal_pattern(rows: &[Row]) -> Verdict {
    if rows.is_empty() {
        return Verdict::NotRun("no causal rows".into());
    }
    let mut bad = Vec::new();
    for u in UserType::ALL {
        for k in ObjectKind::ALL {
            let iv = format!("add_{k}");
            let Some(r) = find(rows, &[("user_type", u.name()), ("intervention", &iv)]) else {
                bad.push(format!("{u}/{k} missing"));
                continue;
            };
            let sig = r.get("significant").map(String::as_str) == Some("true");
            let delta = num(r, "delta_vs_baseline").unwrap_or(f64::NAN);
            let expect = u.avoids(k);
            if sig != expect || (expect && !(delta < 0.0)) {
                bad.push(format!("{u}/{k} flagged={sig} delta={delta:+.3}"));
            }
            if u == UserType::Aggressive && num(r, "mean").is_none_or(|m| m < 0.99) {
                bad.push(format!("{u}/{k} mean below 0.99"));
            }
        }
    }
    Verdict::from_checks(bad, "flag pattern as expected".into())
}

// Negated comparisons make a NaN (unparsable cell) fail the check.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn check_user_type_order(rows: &[Row]) -> Verdict {
    let base = |u: &str| find(rows, &[("user_type", u), ("intervention", "none")]);
    let (Some(c), Some(n), Some(a)) = (base("careful"), base("normal"), base("aggressive")) else {
        return Verdict::NotRun("baselines for all three user types required".into());
    };
    let m = |r: &Row| num(r, "mean").unwrap_or(f64::NAN);
    let (mc, mn, ma) = (m(c), m(n), m(a));
    let mut bad = Vec::new();
    if !(mc < mn && mn < ma) {
        bad.push(format!("means not increasing: {mc:.3}, {mn:.3}, {ma:.3}"));
    }
    let (ch, al) = (num(c, "ci_high").unwrap_or(f64::NAN), num(a, "ci_low").unwrap_or(f64::NAN));
    if !(ch < al) {
        bad.push(format!("careful CI high {ch:.3} overlaps aggressive CI low {al:.3}"));
    }
    Verdict::from_checks(bad, format!("{mc:.3} < {mn:.3} < {ma:.3}"))
}

fn locate(dirs: &[PathBuf], name: &str) -> Option<PathBuf> {
    dirs.iter().map(|d| d.join(name)).find(|p| p.is_file())
}

/// Markdown summary over whichever inputs exist in `dirs`.
pub fn build_report(dirs: &[PathBuf]) -> Result<String> {
    let load = |name: &str| -> Result<Option<Vec<Row>>> {
        match locate(dirs, name) {
            Some(p) => Ok(Some(parse_csv(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?))),
            None => Ok(None),
        }
    };
    let missing = |name: &str| Verdict::NotRun(format!("{name} not found"));
    let acc = load(ACCURACY_CURVE_CSV)?;
    let refine = load(REFINE_CSV)?;
    let causal = load(CAUSAL_CSV)?;
    let rows = [
        ("accuracy trend", acc.as_deref().map_or_else(|| missing(ACCURACY_CURVE_CSV), check_accuracy)),
        ("refinement", refine.as_deref().map_or_else(|| missing(REFINE_CSV), check_refinement)),
        ("symbol interventions", causal.as_deref().map_or_else(|| missing(CAUSAL_CSV), check_causal_pattern)),
        ("user-type ordering", causal.as_deref().map_or_else(|| missing(CAUSAL_CSV), check_user_type_order)),
    ];
    let mut out = String::from("# Reproduction report\n\n| check | status | detail |\n|---|---|---|\n");
    for (name, v) in &rows {
        let _ = writeln!(out, "| {name} | {} | {} |", v.label(), v.detail().replace('|', "/"));
    }
    if let Some(acc) = &acc {
        out.push_str("\n## Accuracy curve\n\n| user_type | model | k | mean | q1 | q3 |\n|---|---|---|---|---|---|\n");
        for r in acc {
            let g = |k: &str| r.get(k).cloned().unwrap_or_default();
            let _ = writeln!(out, "| {} | {} | {} | {} | {} | {} |", g("user_type"), g("model"), g("k"), g("mean"), g("q1"), g("q3"));
        }
    }
    if let Some(c) = &causal {
        out.push_str("\n## Interventions\n\n| user_type | intervention | mean | delta | significant |\n|---|---|---|---|---|\n");
        for r in c {
            let g = |k: &str| r.get(k).cloned().unwrap_or_default();
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                g("user_type"),
                g("intervention"),
                g("mean"),
                g("delta_vs_baseline"),
                g("significant")
            );
        }
    }
    Ok(out)
}

pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<String> {
    let text = build_report(dirs)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(REPORT_MD);
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(f1: f64, f9: f64, c1: f64, irl1: f64) -> Vec<Row> {
        parse_csv(&format!(
            "user_type,model,k,mean\ncareful,full,1,{f1}\ncareful,full,9,{f9}\ncareful,classifier,1,{c1}\ncareful,irl,1,{irl1}\n"
        ))
    }

    #[test]
    fn accuracy_thresholds() {
        assert!(matches!(check_accuracy(&curve(0.7, 0.95, 0.6, 0.55)), Verdict::Pass(_)));
        assert!(matches!(check_accuracy(&curve(0.7, 0.89, 0.6, 0.55)), Verdict::Fail(_)));
        assert!(matches!(check_accuracy(&curve(0.86, 0.95, 0.6, 0.55)), Verdict::Fail(_)));
        assert!(matches!(check_accuracy(&curve(0.7, 0.95, 0.8, 0.55)), Verdict::Fail(_)));
        assert!(matches!(check_accuracy(&curve(0.7, 0.95, 0.6, 0.75)), Verdict::Fail(_)));
        assert!(matches!(check_accuracy(&[]), Verdict::NotRun(_)));
    }

    #[test]
    fn refinement_thresholds() {
        let t = |c: f64, n: f64, a: f64| {
            parse_csv(&format!("user_type,success_rate\ncareful,{c}\nnormal,{n}\naggressive,{a}\n"))
        };
        assert!(matches!(check_refinement(&t(0.6, 0.85, 1.0)), Verdict::Pass(_)));
        assert!(matches!(check_refinement(&t(0.59, 0.9, 1.0)), Verdict::Fail(_)));
        assert!(matches!(check_refinement(&t(0.9, 0.9, 0.99)), Verdict::Fail(_)));
    }

    fn causal(pattern: impl Fn(UserType, ObjectKind) -> bool) -> Vec<Row> {
        let mut text = String::from("user_type,intervention,mean,ci_low,ci_high,delta_vs_baseline,significant\n");
        for (u, m) in [(UserType::Careful, 0.3), (UserType::Normal, 0.6), (UserType::Aggressive, 1.0)] {
            let _ = writeln!(text, "{u},none,{m},{},{},0,false", m - 0.02, m + 0.02);
            for k in ObjectKind::ALL {
                let s = pattern(u, k);
                let _ = writeln!(text, "{u},add_{k},{m},0,1,{},{}", if s { -0.1 } else { 0.0 }, s);
            }
        }
        parse_csv(&text)
    }

    #[test]
    fn causal_pattern_and_order() {
        let good = causal(|u, k| u.avoids(k));
        assert!(matches!(check_causal_pattern(&good), Verdict::Pass(_)));
        assert!(matches!(check_user_type_order(&good), Verdict::Pass(_)));
        let none = causal(|_, _| false);
        assert!(matches!(check_causal_pattern(&none), Verdict::Fail(_)));
    }

    #[test]
    fn missing_inputs_are_not_failures() {
        let dir = tempfile::tempdir().unwrap();
        let text = cmd_report(&[dir.path().to_path_buf()], dir.path()).unwrap();
        assert_eq!(text.matches("| not run |").count(), 4);
        assert!(!text.contains("FAIL"));
        assert_eq!(cmd_report(&[dir.path().to_path_buf()], dir.path()).unwrap(), text);
    }
}
