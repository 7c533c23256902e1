use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use super::pgm;
use super::SourcedExample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    /// As written in the CSV; relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub label: u8,
    pub source: usize,
}

/// Image list with labels and sources. Source indices follow the order in
/// which source names first appear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    root: PathBuf,
    records: Vec<Record>,
    sources: Vec<String>,
}

impl Manifest {
    /// Builds a manifest from `(path, label, source name)` rows.
    pub fn from_rows<P: Into<PathBuf>, S: AsRef<str>>(
        root: impl Into<PathBuf>,
        rows: impl IntoIterator<Item = (P, u8, S)>,
    ) -> Result<Self> {
        let mut m = Manifest { root: root.into(), records: Vec::new(), sources: Vec::new() };
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, (path, label, source)) in rows.into_iter().enumerate() {
            if label > 1 {
                return Err(Error::Validation(format!("row {i}: label {label} is not 0 or 1")));
            }
            let name = source.as_ref();
            let s = *index.entry(name.to_string()).or_insert_with(|| {
                m.sources.push(name.to_string());
                m.sources.len() - 1
            });
            m.records.push(Record { path: path.into(), label, source: s });
        }
        Ok(m)
    }

    /// Reads a `path,label,source` CSV.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
        let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != ["path", "label", "source"] {
            return Err(parse_err(1, format!("header must be path,label,source, got {:?}", header.as_slice())));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let label = match &rec[1] {
                "0" => 0u8,
                "1" => 1u8,
                other => return Err(parse_err(line, format!("label {other:?} is not 0 or 1"))),
            };
            if rec[0].is_empty() || rec[2].is_empty() {
                return Err(parse_err(line, "empty path or source".into()));
            }
            rows.push((PathBuf::from(&rec[0]), label, rec[2].to_string()));
        }
        if rows.is_empty() {
            return Err(parse_err(1, "empty manifest".into()));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::from_rows(root, rows)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| Error::io(path, e.into());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["path", "label", "source"]).map_err(io)?;
        for r in &self.records {
            let p = r.path.to_string_lossy();
            w.write_record([p.as_ref(), if r.label == 1 { "1" } else { "0" }, &self.sources[r.source]])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn source_names(&self) -> &[String] {
        &self.sources
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn source_index(&self, name: &str) -> Option<usize> {
        self.sources.iter().position(|s| s == name)
    }

    /// Per-record source index, in record order.
    pub fn source_of_records(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.source).collect()
    }

    pub fn resolve(&self, r: &Record) -> PathBuf {
        if r.path.is_absolute() {
            r.path.clone()
        } else {
            self.root.join(&r.path)
        }
    }

    /// Keeps only records whose source passes `keep`, re-indexing sources in
    /// first-appearance order.
    pub fn filter_sources(&self, keep: impl Fn(&str) -> bool) -> Manifest {
        let rows = self
            .records
            .iter()
            .filter(|r| keep(&self.sources[r.source]))
            .map(|r| (r.path.clone(), r.label, self.sources[r.source].clone()));
        Manifest::from_rows(self.root.clone(), rows).expect("labels were already validated")
    }

    /// Side length of the first image, which must be square.
    pub fn image_size(&self) -> Result<usize> {
        let first = self.records.first().ok_or_else(|| Error::Validation("empty manifest".into()))?;
        let path = self.resolve(first);
        let img = pgm::read_pgm(&path)?;
        if img.width != img.height {
            return Err(Error::shape("image_size", format!("{} is {}×{}, not square", path.display(), img.height, img.width)));
        }
        Ok(img.width)
    }

    /// Decodes every image, checking it is `size×size`.
    pub fn load_examples(&self, size: usize) -> Result<Vec<SourcedExample>> {
        self.records
            .iter()
            .map(|r| {
                let image = pgm::decode_image(self.resolve(r), (size, size))?;
                Ok(SourcedExample { image, label: r.label, source: r.source })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("m.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn first_appearance_indexing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "path,label,source\na.pgm,1,A\nb.pgm,0,B\nc.pgm,0,A\n");
        let m = Manifest::load(&p).unwrap();
        assert_eq!(m.num_sources(), 2);
        assert_eq!(m.source_index("A"), Some(0));
        assert_eq!(m.source_index("B"), Some(1));
        assert_eq!(m.source_of_records(), vec![0, 1, 0]);
        assert_eq!(m.resolve(&m.records()[0]), dir.path().join("a.pgm"));
    }

    #[test]
    fn empty_body_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = Manifest::load(write(dir.path(), "path,label,source\n")).unwrap_err();
        assert!(err.to_string().contains("empty manifest"), "{err}");
    }

    #[test]
    fn bad_label_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let err = Manifest::load(write(dir.path(), "path,label,source\na,1,A\nb,2,A\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:") && msg.contains("\"2\""), "{msg}");
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Manifest::load(write(dir.path(), "file,label,source\na,1,A\n")).is_err());
    }

    #[test]
    fn duplicates_are_distinct_records() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::load(write(dir.path(), "path,label,source\na,1,A\na,1,A\n")).unwrap();
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn filtering_reindexes() {
        let m = Manifest::from_rows("", [("a", 1, "A"), ("b", 0, "B"), ("c", 1, "C")]).unwrap();
        let f = m.filter_sources(|s| s != "A");
        assert_eq!(f.source_names(), &["B".to_string(), "C".to_string()]);
        assert_eq!(f.source_of_records(), vec![0, 1]);
    }
}
