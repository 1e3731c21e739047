use jtve_core::{Error, Result};
use serde_json::{Map, Value};

/// Parses `key.path=value`; the value is read as JSON when possible and as
/// a bare string otherwise.
pub fn parse(spec: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set {spec:?}: expected KEY=VALUE")))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("--set {spec:?}: empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

/// Sets `path` inside `root`, creating intermediate objects.
pub fn apply(root: &mut Value, path: &[String], value: Value) -> Result<()> {
    let mut node = root;
    for (i, seg) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{}: not an object", path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(seg.clone(), value);
            return Ok(());
        }
        node = obj.entry(seg.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}
