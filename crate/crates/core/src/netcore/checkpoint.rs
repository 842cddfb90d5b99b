use std::fmt::Write as _;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::{Error, Result};

const MAGIC: &str = "format: ccgan-checkpoint v1";

/// Named tensors plus free-form metadata.
///
/// On disk: UTF-8 `key: value` header lines, one `param:` line per tensor with
/// its shape, dtype and byte range, an `end` line, then the little-endian f64
/// blob in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub component: String,
    pub meta: Vec<(String, String)>,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(component: impl Into<String>) -> Self {
        Checkpoint {
            component: component.into(),
            meta: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn with_store(mut self, store: &ParamStore) -> Self {
        self.add_store(store);
        self
    }

    pub fn add_store(&mut self, store: &ParamStore) {
        for (n, v) in store.names().iter().zip(store.values()) {
            self.params.push((n.clone(), v.clone()));
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every parameter of `store` with the saved tensor of the same name.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.names().to_vec();
        for name in names {
            let t = self.param(&name).ok_or_else(|| {
                Error::Config(format!(
                    "checkpoint '{}' has no parameter {name}",
                    self.component
                ))
            })?;
            let id = store.find(&name).expect("name taken from store");
            store.set(id, t.clone())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        let _ = writeln!(header, "component: {}", self.component);
        for (k, v) in &self.meta {
            let _ = writeln!(header, "meta.{k}: {v}");
        }
        let mut offset = 0usize;
        for (name, t) in &self.params {
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let len = t.len() * 8;
            let _ = writeln!(
                header,
                "param: {name} shape={} dtype=f64 offset={offset} len={len}",
                shape.join("x")
            );
            offset += len;
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        for (_, t) in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut pos = 0usize;
        let mut lines = Vec::new();
        loop {
            let nl = bytes[pos..]
                .iter()
                .position(|b| *b == b'\n')
                .ok_or_else(|| err(lines.len() + 1, "header is not terminated by 'end'".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + nl])
                .map_err(|_| err(lines.len() + 1, "header is not UTF-8".into()))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line.to_string());
        }
        let blob = &bytes[pos..];
        if lines.first().map(String::as_str) != Some(MAGIC) {
            return Err(err(1, format!("expected '{MAGIC}'")));
        }
        let mut ck = Checkpoint::new("");
        let mut expected_offset = 0usize;
        for (i, line) in lines.iter().enumerate().skip(1) {
            let lineno = i + 1;
            let (key, value) = line
                .split_once(": ")
                .ok_or_else(|| err(lineno, format!("malformed line {line:?}")))?;
            if key == "component" {
                ck.component = value.to_string();
            } else if let Some(k) = key.strip_prefix("meta.") {
                ck.meta.push((k.to_string(), value.to_string()));
            } else if key == "param" {
                let mut parts = value.split(' ');
                let name = parts.next().unwrap_or_default().to_string();
                let mut shape = None;
                let mut offset = None;
                let mut len = None;
                for p in parts {
                    let (k, v) = p
                        .split_once('=')
                        .ok_or_else(|| err(lineno, format!("malformed field {p:?}")))?;
                    match k {
                        "shape" => {
                            let dims: std::result::Result<Vec<usize>, _> =
                                v.split('x').map(str::parse).collect();
                            shape =
                                Some(dims.map_err(|_| err(lineno, format!("bad shape {v:?}")))?);
                        }
                        "dtype" if v == "f64" => {}
                        "dtype" => return Err(err(lineno, format!("unsupported dtype {v:?}"))),
                        "offset" => {
                            offset = Some(
                                v.parse::<usize>()
                                    .map_err(|_| err(lineno, "bad offset".into()))?,
                            )
                        }
                        "len" => {
                            len = Some(
                                v.parse::<usize>()
                                    .map_err(|_| err(lineno, "bad len".into()))?,
                            )
                        }
                        _ => return Err(err(lineno, format!("unknown field {k:?}"))),
                    }
                }
                let (shape, offset, len) = match (shape, offset, len) {
                    (Some(s), Some(o), Some(l)) => (s, o, l),
                    _ => return Err(err(lineno, "param line needs shape, offset and len".into())),
                };
                let count: usize = shape.iter().product();
                if len != count * 8 || offset != expected_offset || offset + len > blob.len() {
                    return Err(err(lineno, format!("inconsistent byte range for {name}")));
                }
                expected_offset += len;
                let data: Vec<f64> = blob[offset..offset + len]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                ck.params.push((name, Tensor::new(shape, data)?));
            } else {
                return Err(err(lineno, format!("unknown key {key:?}")));
            }
        }
        if expected_offset != blob.len() {
            return Err(err(
                lines.len() + 1,
                format!(
                    "blob has {} bytes, header lists {expected_offset}",
                    blob.len()
                ),
            ));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut s = ParamStore::new();
        s.add(
            "g.l0.w",
            Tensor::matrix(2, 3, vec![0.1, -0.0, 1e-300, f64::MIN_POSITIVE, 3.5, -7.25]).unwrap(),
        );
        s.add(
            "g.l0.b",
            Tensor::matrix(1, 3, vec![1.0 / 3.0, 2.0, -1.0]).unwrap(),
        );
        let mut ck = Checkpoint::new("generator").with_store(&s);
        ck.set_meta("iter", 42);
        ck.set_meta("label_input", "nli");
        ck
    }

    #[test]
    fn round_trip_bit_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ckpt");
        ck.write(&p).unwrap();
        let back = Checkpoint::read(&p).unwrap();
        assert_eq!(back.component, "generator");
        assert_eq!(back.meta("iter"), Some("42"));
        for ((na, ta), (nb, tb)) in ck.params.iter().zip(&back.params) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn header_lists_layout() {
        let bytes = sample().to_bytes();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("param: g.l0.w shape=2x3 dtype=f64 offset=0 len=48"));
        assert!(text.contains("param: g.l0.b shape=1x3 dtype=f64 offset=48 len=24"));
    }

    #[test]
    fn truncated_blob_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, Path::new("x")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn load_into_store() {
        let ck = sample();
        let mut s = ParamStore::new();
        s.add("g.l0.w", Tensor::zeros(&[2, 3]));
        s.add("g.l0.b", Tensor::zeros(&[1, 3]));
        ck.load_into(&mut s).unwrap();
        assert_eq!(s.values()[1], ck.params[1].1);
        let mut other = ParamStore::new();
        other.add("missing", Tensor::zeros(&[1, 1]));
        assert!(ck.load_into(&mut other).is_err());
    }
}
