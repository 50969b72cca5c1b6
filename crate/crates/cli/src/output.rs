//! Artifact writers. Floats are printed with 17 significant digits so that
//! identical runs give byte-identical files.

use std::io::Write;
use std::path::Path;

use serde_json::value::RawValue;

pub const SCHEMA_VERSION: u32 = 1;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON object with fixed float formatting; keys keep insertion order.
#[derive(Debug, Default)]
pub struct JsonDoc(Vec<(String, Box<RawValue>)>);

impl JsonDoc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts an artifact document carrying `schema_version`.
    pub fn artifact() -> Self {
        let mut d = Self::new();
        d.int("schema_version", SCHEMA_VERSION as i64);
        d
    }

    fn raw(&mut self, key: &str, text: String) -> &mut Self {
        let raw = RawValue::from_string(text).expect("generated JSON is valid");
        match self.0.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = raw,
            None => self.0.push((key.to_string(), raw)),
        }
        self
    }

    /// Non-finite values become null.
    pub fn num(&mut self, key: &str, x: f64) -> &mut Self {
        if x.is_finite() {
            self.raw(key, fmt_f64(x))
        } else {
            self.raw(key, "null".into())
        }
    }

    pub fn opt_num(&mut self, key: &str, x: Option<f64>) -> &mut Self {
        self.num(key, x.unwrap_or(f64::NAN))
    }

    pub fn array(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let items: Vec<String> = values
            .iter()
            .map(|&x| if x.is_finite() { fmt_f64(x) } else { "null".into() })
            .collect();
        self.raw(key, format!("[{}]", items.join(",")))
    }

    pub fn int(&mut self, key: &str, v: i64) -> &mut Self {
        self.raw(key, v.to_string())
    }

    pub fn boolean(&mut self, key: &str, v: bool) -> &mut Self {
        self.raw(key, v.to_string())
    }

    pub fn string(&mut self, key: &str, v: &str) -> &mut Self {
        self.raw(key, serde_json::to_string(v).expect("strings serialize"))
    }

    pub fn object(&mut self, key: &str, doc: JsonDoc) -> &mut Self {
        self.raw(key, doc.to_json())
    }

    pub fn to_json(&self) -> String {
        let fields: Vec<String> = self
            .0
            .iter()
            .map(|(k, v)| format!("{}:{}", serde_json::to_string(k).expect("strings serialize"), v.get()))
            .collect();
        format!("{{{}}}", fields.join(","))
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{}", self.to_json())
    }
}

pub enum Cell {
    Num(f64),
    Int(i64),
    Empty,
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Num(x) => fmt_f64(*x),
            Cell::Int(v) => v.to_string(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

/// CSV table: comma-separated, LF endings, header first.
pub struct Table<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> Table<W> {
    pub fn new(inner: W, header: &[&str]) -> csv::Result<Self> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(inner);
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, cells: impl IntoIterator<Item = Cell>) -> csv::Result<()> {
        self.writer.write_record(cells.into_iter().map(|c| c.text()))
    }

    pub fn finish(mut self) -> csv::Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

pub fn table_file(path: &Path, header: &[&str]) -> csv::Result<Table<std::fs::File>> {
    Table::new(std::fs::File::create(path)?, header)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let x = 0.1f64 + 0.2;
        let s = fmt_f64(x);
        assert_eq!(s, "3.0000000000000004e-1");
        assert_eq!(s.parse::<f64>().unwrap(), x);
    }

    #[test]
    fn json_keeps_order_and_parses() {
        let mut d = JsonDoc::artifact();
        d.num("b", 2.0).num("a", f64::NAN).string("c", "x\"y");
        let mut inner = JsonDoc::new();
        inner.boolean("ok", true);
        d.object("z", inner);
        let text = d.to_json();
        assert!(text.starts_with("{\"schema_version\":1,\"b\":2.0000000000000000e0,\"a\":null,\"c\":\"x\\\"y\""));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["z"]["ok"], true);
        assert_eq!(v["b"], 2.0);
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        {
            let mut t = Table::new(&mut buf, &["t", "x"]).unwrap();
            t.row([Cell::Num(1.5), Cell::Empty]).unwrap();
            t.row([Cell::Int(3), Cell::from(Some(0.25))]).unwrap();
            t.finish().unwrap();
        }
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,x\n1.5000000000000000e0,\n3,2.5000000000000000e-1\n"
        );
    }
}
