//! Directories of image/label pairs described by a checksummed manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::volio::{read_labels, read_volume, synth_phantom, write_labels, write_volume, LabelMap, Volume};

pub const MANIFEST_FILE: &str = "manifest.csv";
const SCHEMA_LINE: &str = "# schema-version: 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: String,
    pub volume: Volume,
    pub labels: LabelMap,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub cases: Vec<Case>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Largest class count over all label maps.
    pub fn classes(&self) -> usize {
        self.cases.iter().map(|c| c.labels.classes()).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub case_id: String,
    pub image: String,
    pub labels: String,
    pub image_sha256: String,
    pub labels_sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).with_path(path))?;
    Ok(sha256_hex(&bytes))
}

/// Writes `count` phantom pairs plus a manifest into `dir`.
pub fn write_phantom_set(
    dir: impl AsRef<Path>,
    seed: u64,
    count: usize,
    dims: [usize; 3],
    classes: usize,
) -> Result<Vec<ManifestEntry>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::from(e).with_path(dir))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let (volume, labels) = synth_phantom(derive_seed(seed, i as u64), dims, [1.0; 3], classes)?;
        let case_id = format!("case_{i:03}");
        let image = format!("{case_id}_image.vol3d");
        let label_file = format!("{case_id}_labels.vol3d");
        write_volume(&volume, dir.join(&image))?;
        write_labels(&labels, dir.join(&label_file))?;
        entries.push(ManifestEntry {
            image_sha256: file_sha256(&dir.join(&image))?,
            labels_sha256: file_sha256(&dir.join(&label_file))?,
            case_id,
            image,
            labels: label_file,
        });
    }
    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{SCHEMA_LINE}")?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["case_id", "image", "labels", "image_sha256", "labels_sha256"])
            .map_err(csv_error)?;
        for e in entries {
            w.write_record([&e.case_id, &e.image, &e.labels, &e.image_sha256, &e.labels_sha256])
                .map_err(csv_error)?;
        }
        w.flush()?;
    }
    fs::write(path, buf).map_err(|e| Error::from(e).with_path(path))
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Malformed(format!("{other:?}")),
    }
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).with_path(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| csv_error(e).with_path(path))?;
        if r.len() != 5 {
            return Err(Error::Malformed(format!("manifest row has {} fields, expected 5", r.len()))
                .with_path(path));
        }
        entries.push(ManifestEntry {
            case_id: r[0].to_string(),
            image: r[1].to_string(),
            labels: r[2].to_string(),
            image_sha256: r[3].to_string(),
            labels_sha256: r[4].to_string(),
        });
    }
    Ok(entries)
}

/// Loads every case listed in `dir/manifest.csv`, verifying checksums.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut cases = Vec::new();
    for e in read_manifest(&dir.join(MANIFEST_FILE))? {
        let image = dir.join(&e.image);
        let label_path = dir.join(&e.labels);
        for (path, want) in [(&image, &e.image_sha256), (&label_path, &e.labels_sha256)] {
            if !want.is_empty() && &file_sha256(path)? != want {
                return Err(Error::Malformed("checksum does not match manifest".into()).with_path(path));
            }
        }
        let volume = read_volume(&image)?;
        let labels = read_labels(&label_path)?;
        labels.check_aligned(&volume).map_err(|err| err.with_path(&label_path))?;
        cases.push(Case {
            id: e.case_id,
            volume,
            labels,
        });
    }
    if cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset { cases })
}
