//! Dataset manifests: CSV with header `path,patient_id,site,label`.
//!
//! Relative paths resolve against the manifest's directory. An optional
//! fifth `mask` column names a per-image exclusion mask; it is carried
//! through but not interpreted.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{Label, Site};
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["path", "patient_id", "site", "label"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub patient_id: String,
    pub site: Site,
    pub label: Label,
    pub mask: Option<String>,
}

impl ManifestRow {
    /// Image identifier used in reports: the path as written.
    pub fn id(&self) -> &str {
        &self.path
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(dir: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Result<Self> {
        let m = Manifest { dir: dir.into(), rows };
        m.check_unique(&m.dir.join("<memory>"))?;
        Ok(m)
    }

    fn check_unique(&self, path: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.path.as_str()) {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    detail: format!("duplicate path {}", r.path),
                });
            }
        }
        Ok(())
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    /// Parses a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |detail: String| Error::Manifest {
            path: path.to_path_buf(),
            detail,
        };
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if names.len() < 4 || names[..4] != HEADER || (names.len() == 5 && names[4] != "mask") || names.len() > 5 {
            return Err(bad(format!("header must be {} (optionally ,mask), got {}", HEADER.join(","), names.join(","))));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let line = i + 2;
            if rec.len() < 4 || rec.len() > names.len() {
                return Err(bad(format!("line {line}: expected {} fields, got {}", names.len(), rec.len())));
            }
            let field = |k: usize| rec.get(k).unwrap_or("").trim();
            let site = field(2).parse().map_err(|e: Error| bad(format!("line {line}: {e}")))?;
            let label = field(3).parse().map_err(|e: Error| bad(format!("line {line}: {e}")))?;
            if field(0).is_empty() || field(1).is_empty() {
                return Err(bad(format!("line {line}: empty path or patient id")));
            }
            let mask = Some(field(4)).filter(|m| !m.is_empty()).map(str::to_string);
            rows.push(ManifestRow {
                path: field(0).to_string(),
                patient_id: field(1).to_string(),
                site,
                label,
                mask,
            });
        }
        let m = Manifest {
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            rows,
        };
        m.check_unique(path)?;
        for r in &m.rows {
            let f = m.resolve(r);
            if !f.is_file() {
                return Err(bad(format!("referenced file {} does not exist", f.display())));
            }
        }
        Ok(m)
    }

    /// Writes the manifest with LF line endings. Paths are written as
    /// stored, so relative paths stay relative to the manifest directory.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let with_mask = self.rows.iter().any(|r| r.mask.is_some());
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| Error::Manifest {
            path: path.to_path_buf(),
            detail: e.to_string(),
        };
        if with_mask {
            w.write_record(HEADER.iter().copied().chain(["mask"])).map_err(io)?;
        } else {
            w.write_record(HEADER).map_err(io)?;
        }
        for r in &self.rows {
            let mut rec = vec![r.path.as_str(), r.patient_id.as_str(), r.site.as_str(), r.label.as_str()];
            if with_mask {
                rec.push(r.mask.as_deref().unwrap_or(""));
            }
            w.write_record(rec).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Subset of rows, keeping the manifest directory.
    pub fn select(&self, ids: &[String]) -> Manifest {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        Manifest {
            dir: self.dir.clone(),
            rows: self.rows.iter().filter(|r| keep.contains(r.id())).cloned().collect(),
        }
    }

    /// Distinct patient ids in order of first appearance.
    pub fn patients(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.patient_id.as_str()))
            .map(|r| r.patient_id.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(path: &str) -> ManifestRow {
        ManifestRow {
            path: path.into(),
            patient_id: "p0".into(),
            site: Site::OralCavity,
            label: Label::Carcinoma,
            mask: None,
        }
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.pgm"), b"x").unwrap();
        std::fs::write(dir.path().join("b.pgm"), b"x").unwrap();
        let mut b = row("b.pgm");
        b.mask = Some("b_mask.pgm".into());
        let m = Manifest::new(dir.path(), vec![row("a.pgm"), b]).unwrap();
        let path = dir.path().join("manifest.csv");
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("path,patient_id,site,label,mask\n"));
        assert!(!text.contains('\r'));
        assert_eq!(Manifest::load(&path).unwrap(), m);
    }

    #[test]
    fn missing_file_fails_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, "path,patient_id,site,label\nnope.pgm,p1,both,normal\n").unwrap();
        let err = Manifest::load(&path).unwrap_err().to_string();
        assert!(err.contains("nope.pgm"), "{err}");
    }

    #[test]
    fn bad_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.pgm"), b"x").unwrap();
        let path = dir.path().join("m.csv");
        for body in [
            "path,patient,site,label\na.pgm,p1,both,normal\n",
            "path,patient_id,site,label\na.pgm,p1,lung,normal\n",
            "path,patient_id,site,label\na.pgm,p1,both,benign\n",
            "path,patient_id,site,label\na.pgm,p1,both,normal\na.pgm,p2,both,normal\n",
        ] {
            std::fs::write(&path, body).unwrap();
            assert!(matches!(Manifest::load(&path), Err(Error::Manifest { .. })), "{body}");
        }
        assert!(Manifest::new(".", vec![row("a"), row("a")]).is_err());
    }
}
