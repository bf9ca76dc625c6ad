//! CSV output with fixed schemas, and the run manifest.

use sha2::{Digest, Sha256};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    RunRecord,
    Sweep,
    Sensitivity,
    Slr,
}

impl Schema {
    pub fn id(self) -> &'static str {
        match self {
            Self::RunRecord => "runrecord",
            Self::Sweep => "sweep",
            Self::Sensitivity => "sensitivity",
            Self::Slr => "slr",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Self::RunRecord => &["t", "H_truth", "L_truth", "H_analysis", "L_analysis", "H_obs", "L_obs", "P_HH", "P_LL"],
            Self::Sweep => &["axis", "msd_H", "msd_L", "seeds", "msd_H_iqr", "msd_L_iqr"],
            Self::Sensitivity => &["t", "sample_id", "factor", "H", "L"],
            Self::Slr => &["t", "Q", "Qg", "dV_km3", "Vcum_km3", "slr_mm"],
        }
    }
}

/// One cell. `None` is written as an empty field.
pub type Cell = Option<f64>;

/// 17 significant digits in scientific notation, independent of locale.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvArtifact {
    pub path: PathBuf,
    pub schema: Schema,
    pub rows: usize,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn render_csv(schema: Schema, rows: &[Vec<Cell>]) -> io::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(schema.columns())?;
    for row in rows {
        if row.len() != schema.columns().len() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("{} row has {} cells", schema.id(), row.len()),
            ));
        }
        w.write_record(row.iter().map(|c| c.map(format_float).unwrap_or_default()))?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

pub fn emit_csv(path: &Path, schema: Schema, rows: &[Vec<Cell>]) -> io::Result<CsvArtifact> {
    let bytes = render_csv(schema, rows)?;
    write_atomic(path, &bytes)?;
    Ok(CsvArtifact {
        path: path.to_path_buf(),
        schema,
        rows: rows.len(),
        sha256: sha256_hex(&bytes),
    })
}

/// Reads a file written by [`emit_csv`], checking the header.
pub fn read_csv(path: &Path, schema: Schema) -> io::Result<Vec<Vec<Cell>>> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != schema.columns() {
        return Err(bad(format!("header {header:?} is not the {} schema", schema.id())));
    }
    r.records()
        .map(|rec| {
            rec?.iter()
                .map(|f| {
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse().map(Some).map_err(|e| bad(format!("`{f}`: {e}")))
                    }
                })
                .collect()
        })
        .collect()
}

/// Files written by one subcommand, with digests and free-form metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub subcommand: String,
    pub files: Vec<ManifestEntry>,
    pub metadata: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub file: String,
    pub schema: String,
    pub rows: usize,
    pub sha256: String,
}

impl Manifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            ..Self::default()
        }
    }

    pub fn add(&mut self, a: &CsvArtifact) {
        self.files.push(ManifestEntry {
            file: file_name(&a.path),
            schema: a.schema.id().to_string(),
            rows: a.rows,
            sha256: a.sha256.clone(),
        });
    }

    pub fn add_file(&mut self, path: &Path, schema: &str, bytes: &[u8]) {
        self.files.push(ManifestEntry {
            file: file_name(path),
            schema: schema.to_string(),
            rows: 0,
            sha256: sha256_hex(bytes),
        });
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut doc = toml::Table::new();
        doc.insert("subcommand".into(), self.subcommand.clone().into());
        let files = self
            .files
            .iter()
            .map(|f| {
                let mut t = toml::Table::new();
                t.insert("file".into(), f.file.clone().into());
                t.insert("schema".into(), f.schema.clone().into());
                t.insert("rows".into(), (f.rows as i64).into());
                t.insert("sha256".into(), f.sha256.clone().into());
                toml::Value::Table(t)
            })
            .collect::<Vec<_>>();
        let mut meta = toml::Table::new();
        for (k, v) in &self.metadata {
            meta.insert(k.clone(), v.clone().into());
        }
        doc.insert("metadata".into(), meta.into());
        doc.insert("files".into(), files.into());
        toml::to_string(&doc).expect("manifest serializes")
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_for_no_rows() {
        let bytes = render_csv(Schema::Sweep, &[]).unwrap();
        assert_eq!(bytes, b"axis,msd_H,msd_L,seeds,msd_H_iqr,msd_L_iqr\n");
    }

    #[test]
    fn float_format_is_seventeen_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(-2300.0), "-2.3000000000000000e3");
        assert_eq!(format_float(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn empty_cells_and_width_check() {
        let rows = vec![vec![Some(1.0), None, Some(2.0), Some(3.0), Some(4.0)]];
        let bytes = render_csv(Schema::Sensitivity, &rows).unwrap();
        assert!(String::from_utf8(bytes).unwrap().ends_with("1.0000000000000000e0,,2.0000000000000000e0,3.0000000000000000e0,4.0000000000000000e0\n"));
        assert!(render_csv(Schema::Sensitivity, &[vec![Some(1.0)]]).is_err());
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let rows = vec![
            vec![Some(0.0), Some(1.0 / 3.0), Some(f64::MIN_POSITIVE), Some(1e300), None, Some(-0.0)],
            vec![Some(1.5), Some(2.0), Some(3.0), Some(4.0), Some(5.0), Some(6.0)],
        ];
        let a = emit_csv(&path, Schema::Slr, &rows).unwrap();
        assert_eq!(a.rows, 2);
        assert_eq!(a.sha256, sha256_hex(&fs::read(&path).unwrap()));
        let back = read_csv(&path, Schema::Slr).unwrap();
        for (x, y) in rows.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(x.map(f64::to_bits), y.map(f64::to_bits));
        }
        assert!(read_csv(&path, Schema::Sweep).is_err());
        assert!(!dir.path().join("s.csv.tmp").exists());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_files() {
        let mut m = Manifest::new("truth");
        m.add_file(Path::new("/x/resolved-config.toml"), "config", b"abc");
        m.note("plateau_entry", 7);
        let text = m.render();
        let parsed: toml::Table = text.parse().unwrap();
        assert_eq!(parsed["subcommand"].as_str(), Some("truth"));
        assert_eq!(parsed["files"][0]["file"].as_str(), Some("resolved-config.toml"));
        assert_eq!(parsed["metadata"]["plateau_entry"].as_str(), Some("7"));
    }
}
