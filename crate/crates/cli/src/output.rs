//! Human and machine output.
//!
//! Machine output is one JSON object per line. Every record carries
//! `"schema"` (bumped only on incompatible changes) and `"record"` naming the
//! record type. Fields are only ever added within a schema version.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::{json, Map, Value};

pub const SCHEMA: &str = "lisa/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Human,
    Machine,
}

pub struct Out {
    pub format: Format,
    stdout: io::Stdout,
}

impl Out {
    pub fn new(format: Format) -> Self {
        Out {
            format,
            stdout: io::stdout(),
        }
    }

    pub fn machine(&self) -> bool {
        self.format == Format::Machine
    }

    /// Writes a record in machine mode; does nothing in human mode.
    pub fn record(&mut self, kind: &str, body: impl Serialize) -> io::Result<()> {
        if !self.machine() {
            return Ok(());
        }
        let mut obj = Map::new();
        obj.insert("schema".into(), json!(SCHEMA));
        obj.insert("record".into(), json!(kind));
        match serde_json::to_value(body).map_err(io::Error::other)? {
            Value::Object(fields) => obj.extend(fields),
            Value::Null => {}
            other => {
                obj.insert("value".into(), other);
            }
        }
        let mut lock = self.stdout.lock();
        serde_json::to_writer(&mut lock, &Value::Object(obj)).map_err(io::Error::other)?;
        lock.write_all(b"\n")
    }

    /// Writes a line of prose in human mode; does nothing in machine mode.
    pub fn line(&mut self, text: impl AsRef<str>) -> io::Result<()> {
        if self.machine() {
            return Ok(());
        }
        let mut lock = self.stdout.lock();
        lock.write_all(text.as_ref().as_bytes())?;
        lock.write_all(b"\n")
    }

    /// Writes raw text regardless of mode.
    pub fn raw(&mut self, text: &str) -> io::Result<()> {
        self.stdout.lock().write_all(text.as_bytes())
    }
}

pub fn format_bytes(bytes: usize) -> String {
    const KIB: f64 = 1024.0;
    let b = bytes as f64;
    if b < KIB {
        format!("{bytes} B")
    } else if b < KIB * KIB {
        format!("{:.1} KiB", b / KIB)
    } else {
        format!("{:.1} MiB", b / (KIB * KIB))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_sizes() {
        assert_eq!(format_bytes(12), "12 B");
        assert_eq!(format_bytes(2048), "2.0 KiB");
        assert_eq!(format_bytes(3 * 1024 * 1024 + 512 * 1024), "3.5 MiB");
    }
}
