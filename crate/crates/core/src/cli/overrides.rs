use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::UsageError;

/// Splits `--a.b=value`, `--a.b value` and `--set path=value` out of
/// `args`, returning the remaining arguments and the `(path, value)` pairs
/// in order.
pub fn extract_dotted(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), UsageError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut found = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_owned(), Some(v.to_owned())),
            None => (flag.to_owned(), None),
        };
        if name == "set" {
            let assignment = match inline {
                Some(v) => v,
                None => it.next().ok_or_else(|| UsageError("--set needs path=value".into()))?,
            };
            let (path, value) = assignment
                .split_once('=')
                .ok_or_else(|| UsageError(format!("--set expects path=value, got `{assignment}`")))?;
            found.push((path.to_owned(), value.to_owned()));
            continue;
        }
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| UsageError(format!("--{name} needs a value")))?,
        };
        found.push((name, value));
    }
    Ok((rest, found))
}

/// Applies dotted overrides to `config` through its JSON form. Values are
/// parsed as JSON when possible and taken as strings otherwise.
pub fn apply<T: Serialize + DeserializeOwned>(config: &T, overrides: &[(String, String)]) -> Result<T, UsageError> {
    if overrides.is_empty() {
        return serde_json::from_value(serde_json::to_value(config).expect("config serializes"))
            .map_err(|e| UsageError(format!("config: {e}")));
    }
    let mut root = serde_json::to_value(config).expect("config serializes");
    for (path, raw) in overrides {
        let mut node = &mut root;
        for key in path.split('.') {
            node = match node {
                Value::Object(map) => map.get_mut(key),
                Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| UsageError(format!("unknown config field `{path}`")))?;
        }
        *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
    }
    serde_json::from_value(root).map_err(|e| UsageError(format!("invalid override value: {e}")))
}
