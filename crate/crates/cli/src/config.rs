//! Config-file merging, provenance stamps and artifact writers.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use ramp::model::TOOL_VERSION;
use ramp::seed::{config_hash, Provenance};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Bad flags or config values. Reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Fills every flag left unset (`null`, `false` or empty list) from the
/// config file. Top-level keys apply to every command; keys under an
/// object named after the command apply to it alone and take precedence.
pub fn merge<T: Serialize + DeserializeOwned>(args: &T, config: Option<&Path>, command: &str) -> Result<T> {
    let Some(path) = config else { return Ok(serde_json::from_value(serde_json::to_value(args)?)?) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let file: Value = serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(file) = file else { return Err(usage("config file must hold a JSON object")) };
    let Value::Object(mut merged) = serde_json::to_value(args)? else { unreachable!("flags serialize to an object") };
    let mut fill = |src: &Map<String, Value>, strict: bool| -> Result<()> {
        // Objects at the top level are sections for other commands.
        for (k, v) in src.iter().filter(|(_, v)| strict || !v.is_object()) {
            match merged.get_mut(k) {
                Some(slot) if unset(slot) => *slot = v.clone(),
                Some(_) => {}
                None if strict => return Err(usage(format!("unknown key `{k}` for {command}"))),
                None => {}
            }
        }
        Ok(())
    };
    if let Some(Value::Object(section)) = file.get(command) {
        fill(section, true)?;
    }
    fill(&file, false)?;
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn unset(v: &Value) -> bool {
    match v {
        Value::Null | Value::Bool(false) => true,
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

/// Seed from the flag or config, else `RAMP_SEED`, else 0.
pub fn resolve_seed(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var("RAMP_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("RAMP_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

pub fn provenance<T: Serialize>(effective: &T, seed: u64) -> Provenance {
    Provenance { tool_version: TOOL_VERSION.into(), config_hash: config_hash(effective), seed }
}

/// Rejects inputs written by another tool version.
pub fn check_version(what: &str, version: &str) -> Result<()> {
    if version != TOOL_VERSION {
        anyhow::bail!("{what} was written by ramp {version}, this is ramp {TOOL_VERSION}; regenerate it with this version");
    }
    Ok(())
}

/// A JSON artifact carrying its provenance.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(&Stamped { provenance: prov.clone(), body })?;
    s.push('\n');
    write(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn stamp_line(prov: &Provenance) -> String {
    format!("ramp {} config {} seed {}", prov.tool_version, prov.config_hash, prov.seed)
}

/// CSV with a leading `#` provenance comment.
pub fn write_csv(path: &Path, prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = format!("# {}\n{}\n", stamp_line(prov), header.join(","));
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    write(path, s.as_bytes())
}

/// SVG with the provenance as its first comment.
pub fn write_svg(path: &Path, prov: &Provenance, svg: &str) -> Result<()> {
    let (head, rest) = svg.split_once('\n').unwrap_or((svg, ""));
    let s = format!("{head}\n<!-- {} -->\n{rest}", stamp_line(prov));
    write(path, s.as_bytes())
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Parses `x,y[,...]`.
pub fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| usage(format!("bad coordinate list `{s}`"))))
        .collect()
}

pub fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| usage(format!("missing --{flag}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(rename_all = "kebab-case")]
    struct Flags {
        batch: Option<usize>,
        no_apf: bool,
        env: Vec<String>,
        seed: Option<u64>,
    }

    struct Tmp(std::path::PathBuf);

    impl Drop for Tmp {
        fn drop(&mut self) {
            let _ = std::fs::remove_file(&self.0);
        }
    }

    fn config(json: &str) -> Tmp {
        static NEXT: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
        let k = NEXT.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let p = std::env::temp_dir().join(format!("ramp-cfg-{}-{k}.json", std::process::id()));
        std::fs::write(&p, json).unwrap();
        Tmp(p)
    }

    #[test]
    fn flags_override_config_and_sections_override_top_level() {
        let f = config(r#"{"batch": 8, "seed": 3, "plan": {"batch": 16, "no-apf": true, "env": ["a.json"]}}"#);
        let a = Flags { batch: None, no_apf: false, env: vec![], seed: Some(9) };
        let m = merge(&a, Some(&f.0), "plan").unwrap();
        assert_eq!(m, Flags { batch: Some(16), no_apf: true, env: vec!["a.json".into()], seed: Some(9) });
        let m = merge(&a, Some(&f.0), "simulate").unwrap();
        assert_eq!(m.batch, Some(8));
        let given = Flags { batch: Some(2), ..a };
        assert_eq!(merge(&given, Some(&f.0), "plan").unwrap().batch, Some(2));
    }

    #[test]
    fn bad_config_is_a_usage_error() {
        let a = Flags { batch: None, no_apf: false, env: vec![], seed: None };
        let f = config(r#"{"plan": {"bogus": 1}}"#);
        assert!(merge(&a, Some(&f.0), "plan").unwrap_err().is::<UsageError>());
        let f = config(r#"{"batch": "x"}"#);
        assert!(merge(&a, Some(&f.0), "plan").unwrap_err().is::<UsageError>());
    }

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("0.5, -1").unwrap(), vec![0.5, -1.0]);
        assert!(parse_point("a,b").is_err());
    }
}
