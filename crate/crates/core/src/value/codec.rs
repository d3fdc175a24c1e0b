use serde_json::{json, Map, Value};

use super::{ApiInput, ConcreteValue, DtypeTable, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct DecodeError {
    /// JSON-pointer-like location, e.g. `/args/input/shape`.
    pub path: String,
    pub message: String,
}

fn err<T>(path: &str, message: impl Into<String>) -> Result<T, DecodeError> {
    Err(DecodeError {
        path: if path.is_empty() { "/".into() } else { path.into() },
        message: message.into(),
    })
}

fn num(x: f64) -> Value {
    if x.is_nan() {
        Value::from("nan")
    } else if x == f64::INFINITY {
        Value::from("inf")
    } else if x == f64::NEG_INFINITY {
        Value::from("-inf")
    } else {
        json!(x)
    }
}

fn dtype_doc(code: u32, table: &DtypeTable) -> Value {
    match table.get(code) {
        Some(d) => Value::from(d.name.clone()),
        None => Value::from(code),
    }
}

pub fn encode_value(v: &ConcreteValue) -> Value {
    encode_value_with(v, &DtypeTable::default())
}

pub fn encode_value_with(v: &ConcreteValue, table: &DtypeTable) -> Value {
    match v {
        ConcreteValue::Int(i) => json!({"kind": "int", "value": i}),
        ConcreteValue::Float(x) => json!({"kind": "float", "value": num(*x)}),
        ConcreteValue::Bool(b) => json!({"kind": "bool", "value": b}),
        ConcreteValue::Str(s) => json!({"kind": "str", "value": s}),
        ConcreteValue::Dtype(c) => json!({"kind": "dtype", "value": dtype_doc(*c, table)}),
        ConcreteValue::Tensor(t) => {
            let mut m = Map::new();
            m.insert("kind".into(), "tensor".into());
            m.insert("ndim".into(), t.ndim().into());
            m.insert("shape".into(), t.shape.clone().into());
            m.insert("dtype".into(), dtype_doc(t.dtype, table));
            m.insert("lo".into(), num(t.lo));
            m.insert("hi".into(), num(t.hi));
            if let Some(el) = &t.elements {
                m.insert("elements".into(), el.iter().map(|x| num(*x)).collect());
            }
            Value::Object(m)
        }
        ConcreteValue::List(xs) => json!({
            "kind": "list",
            "items": xs.iter().map(|x| encode_value_with(x, table)).collect::<Vec<_>>(),
        }),
        ConcreteValue::Tuple(xs) => json!({
            "kind": "tuple",
            "items": xs.iter().map(|x| encode_value_with(x, table)).collect::<Vec<_>>(),
        }),
        ConcreteValue::None => json!({"kind": "none"}),
    }
}

pub fn decode_value(doc: &Value) -> Result<ConcreteValue, DecodeError> {
    decode_value_with(doc, &DtypeTable::default())
}

pub fn decode_value_with(doc: &Value, table: &DtypeTable) -> Result<ConcreteValue, DecodeError> {
    decode_at(doc, table, "")
}

fn allowed(m: &Map<String, Value>, keys: &[&str], path: &str) -> Result<(), DecodeError> {
    for k in m.keys() {
        if !keys.contains(&k.as_str()) {
            return err(&format!("{path}/{k}"), "unknown field");
        }
    }
    Ok(())
}

fn field<'a>(m: &'a Map<String, Value>, k: &str, path: &str) -> Result<&'a Value, DecodeError> {
    m.get(k).map_or_else(|| err(path, format!("missing field '{k}'")), Ok)
}

fn read_f64(v: &Value, path: &str) -> Result<f64, DecodeError> {
    match v {
        Value::Number(n) => n.as_f64().map_or_else(|| err(path, "not a number"), Ok),
        Value::String(s) => match s.as_str() {
            "nan" => Ok(f64::NAN),
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => err(path, format!("not a number: {s:?}")),
        },
        _ => err(path, "expected a number"),
    }
}

fn read_dtype(v: &Value, table: &DtypeTable, path: &str) -> Result<u32, DecodeError> {
    match v {
        Value::String(s) => table
            .by_name(s)
            .map(|d| d.code)
            .map_or_else(|| err(path, format!("unknown dtype {s:?}")), Ok),
        Value::Number(n) => match n.as_u64() {
            Some(c) if c <= u32::MAX as u64 => Ok(c as u32),
            _ => err(path, "dtype code out of range"),
        },
        _ => err(path, "expected a dtype name"),
    }
}

fn decode_at(doc: &Value, table: &DtypeTable, path: &str) -> Result<ConcreteValue, DecodeError> {
    let Value::Object(m) = doc else {
        return err(path, "expected an object");
    };
    let kind = field(m, "kind", path)?
        .as_str()
        .map_or_else(|| err(&format!("{path}/kind"), "expected a string"), Ok)?;
    let vpath = format!("{path}/value");
    let scalar = |keys: &[&str]| allowed(m, keys, path);
    Ok(match kind {
        "int" => {
            scalar(&["kind", "value"])?;
            let v = field(m, "value", path)?;
            ConcreteValue::Int(v.as_i64().map_or_else(|| err(&vpath, "expected an integer"), Ok)?)
        }
        "float" => {
            scalar(&["kind", "value"])?;
            ConcreteValue::Float(read_f64(field(m, "value", path)?, &vpath)?)
        }
        "bool" => {
            scalar(&["kind", "value"])?;
            let v = field(m, "value", path)?;
            ConcreteValue::Bool(v.as_bool().map_or_else(|| err(&vpath, "expected a bool"), Ok)?)
        }
        "str" => {
            scalar(&["kind", "value"])?;
            let v = field(m, "value", path)?;
            ConcreteValue::Str(
                v.as_str()
                    .map_or_else(|| err(&vpath, "expected a string"), Ok)?
                    .to_string(),
            )
        }
        "dtype" => {
            scalar(&["kind", "value"])?;
            ConcreteValue::Dtype(read_dtype(field(m, "value", path)?, table, &vpath)?)
        }
        "none" => {
            scalar(&["kind"])?;
            ConcreteValue::None
        }
        "list" | "tuple" => {
            scalar(&["kind", "items"])?;
            let ipath = format!("{path}/items");
            let Value::Array(items) = field(m, "items", path)? else {
                return err(&ipath, "expected an array");
            };
            let xs = items
                .iter()
                .enumerate()
                .map(|(i, x)| decode_at(x, table, &format!("{ipath}/{i}")))
                .collect::<Result<Vec<_>, _>>()?;
            if kind == "list" {
                ConcreteValue::List(xs)
            } else {
                ConcreteValue::Tuple(xs)
            }
        }
        "tensor" => {
            allowed(
                m,
                &["kind", "ndim", "shape", "dtype", "lo", "hi", "elements"],
                path,
            )?;
            let spath = format!("{path}/shape");
            let Value::Array(dims) = field(m, "shape", path)? else {
                return err(&spath, "expected an array");
            };
            let shape = dims
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    d.as_u64()
                        .map_or_else(|| err(&format!("{spath}/{i}"), "dims must be integers >= 0"), Ok)
                })
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(nd) = m.get("ndim") {
                if nd.as_u64() != Some(shape.len() as u64) {
                    return err(&spath, format!("length {} disagrees with ndim {nd}", shape.len()));
                }
            }
            let dtype = read_dtype(field(m, "dtype", path)?, table, &format!("{path}/dtype"))?;
            let lo = read_f64(field(m, "lo", path)?, &format!("{path}/lo"))?;
            let hi = read_f64(field(m, "hi", path)?, &format!("{path}/hi"))?;
            let elements = match m.get("elements") {
                None => None,
                Some(Value::Array(xs)) => Some(
                    xs.iter()
                        .enumerate()
                        .map(|(i, x)| read_f64(x, &format!("{path}/elements/{i}")))
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                Some(_) => return err(&format!("{path}/elements"), "expected an array"),
            };
            let t = Tensor {
                shape,
                dtype,
                lo,
                hi,
                elements,
            };
            if let Err(msg) = t.check() {
                let at = if msg.contains("elements") || msg.starts_with("element") {
                    format!("{path}/elements")
                } else {
                    format!("{path}/lo")
                };
                return err(&at, msg);
            }
            ConcreteValue::Tensor(t)
        }
        other => return err(&format!("{path}/kind"), format!("unknown kind {other:?}")),
    })
}

pub fn encode_input(input: &ApiInput) -> Value {
    let args: Map<String, Value> = input
        .args
        .iter()
        .map(|(n, v)| (n.clone(), encode_value(v)))
        .collect();
    json!({"api": input.api, "args": args})
}

pub fn decode_input(doc: &Value) -> Result<ApiInput, DecodeError> {
    let Value::Object(m) = doc else {
        return err("", "expected an object");
    };
    allowed(m, &["api", "args"], "")?;
    let api = field(m, "api", "")?
        .as_str()
        .map_or_else(|| err("/api", "expected a string"), Ok)?;
    let Value::Object(args) = field(m, "args", "")? else {
        return err("/args", "expected an object");
    };
    let mut out = ApiInput::new(api);
    for (k, v) in args {
        out.args.push((k.clone(), decode_at(v, &DtypeTable::default(), &format!("/args/{k}"))?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let v = ConcreteValue::Tensor(Tensor {
            shape: vec![3],
            dtype: 0,
            lo: 0.0,
            hi: 1.0,
            elements: Some(vec![0.2, 0.5, 0.9]),
        });
        assert_eq!(decode_value(&encode_value(&v)).unwrap(), v);
    }

    #[test]
    fn ndim_mismatch_points_at_shape() {
        let doc = json!({"kind":"tensor","ndim":2,"shape":[1,2,3],"dtype":"float32","lo":0,"hi":1});
        let e = decode_value(&doc).unwrap_err();
        assert_eq!(e.path, "/shape");
    }

    #[test]
    fn list_round_trip_and_unknown_field() {
        let v = ConcreteValue::List(vec![ConcreteValue::Int(1), ConcreteValue::Int(2)]);
        let doc = encode_value(&v);
        assert_eq!(doc["items"][0]["kind"], "int");
        assert_eq!(decode_value(&doc).unwrap(), v);
        let bad = json!({"kind":"int","value":1,"extra":0});
        assert_eq!(decode_value(&bad).unwrap_err().path, "/extra");
    }

    #[test]
    fn non_finite_floats() {
        for x in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            let v = ConcreteValue::Float(x);
            assert_eq!(decode_value(&encode_value(&v)).unwrap(), v);
        }
    }
}
