//! On-disk datasets described by a small key-value manifest.
//!
//! ```text
//! name = blobs
//! classes = 8
//! shape = 16          # or HxWxC for images
//! format = table      # table | images
//! path = blobs.csv    # relative to the manifest
//! ```
//!
//! A `table` file holds one sample per line: `split,label,v0,v1,...` with
//! `split` either `train` or `test`. An `images` directory holds either
//! `train/<class>/` and `test/<class>/` subtrees, or bare `<class>/`
//! subdirectories, in which case the last 20% of each class (by file name)
//! is held out for testing.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::synthetic::HELD_OUT_FRACTION;
use super::{Dataset, Partition, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageFormat {
    Table,
    Images,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub classes: usize,
    pub shape: Vec<usize>,
    pub format: StorageFormat,
    pub path: PathBuf,
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    let dims: std::result::Result<Vec<usize>, _> = text.split('x').map(|d| d.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if !d.is_empty() && d.iter().all(|&v| v > 0) => Ok(d),
        _ => Err(Error::parse("manifest", format!("bad shape `{text}`"))),
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let (mut name, mut classes, mut shape, mut format, mut path) = (None, None, None, None, None);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(
                    "manifest",
                    format!("line {}: expected `key = value`", lineno + 1),
                ));
            };
            let value = value.trim();
            match key.trim() {
                "name" => name = Some(value.to_string()),
                "classes" => {
                    classes = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| Error::parse("manifest", format!("line {}: classes: {e}", lineno + 1)))?,
                    )
                }
                "shape" => shape = Some(parse_shape(value)?),
                "format" => {
                    format = Some(match value {
                        "table" => StorageFormat::Table,
                        "images" => StorageFormat::Images,
                        other => return Err(Error::parse("manifest", format!("unknown format `{other}`"))),
                    })
                }
                "path" => path = Some(PathBuf::from(value)),
                other => {
                    return Err(Error::parse("manifest", format!("unknown key `{other}`")));
                }
            }
        }
        let missing = |k: &str| Error::parse("manifest", format!("missing key `{k}`"));
        Ok(Self {
            name: name.ok_or_else(|| missing("name"))?,
            classes: classes.ok_or_else(|| missing("classes"))?,
            shape: shape.ok_or_else(|| missing("shape"))?,
            format: format.unwrap_or(StorageFormat::Table),
            path: path.ok_or_else(|| missing("path"))?,
        })
    }

    pub fn to_text(&self) -> String {
        let shape: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        let format = match self.format {
            StorageFormat::Table => "table",
            StorageFormat::Images => "images",
        };
        format!(
            "name = {}\nclasses = {}\nshape = {}\nformat = {}\npath = {}\n",
            self.name,
            self.classes,
            shape.join("x"),
            format,
            self.path.display()
        )
    }
}

/// Reads a manifest file and the dataset it points to.
pub fn load_manifest(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = Manifest::parse(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let data_path = base.join(&manifest.path);
    let samples = match manifest.format {
        StorageFormat::Table => read_table(&data_path)?,
        StorageFormat::Images => read_image_tree(&data_path, &manifest)?,
    };
    Dataset::new(manifest.name, manifest.classes, manifest.shape, samples)
}

fn read_table(path: &Path) -> Result<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let bad = |msg: String| Error::parse(path.display().to_string(), format!("row {}: {msg}", row + 1));
        let partition = match record.get(0) {
            Some("train") => Partition::Train,
            Some("test") => Partition::Test,
            other => return Err(bad(format!("split must be train or test, got {other:?}"))),
        };
        let label = record
            .get(1)
            .ok_or_else(|| bad("missing label".into()))?
            .parse::<usize>()
            .map_err(|e| bad(format!("label: {e}")))?;
        let input = record
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("value `{v}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample::new(input, label, partition));
    }
    Ok(samples)
}

/// Writes `dataset` as a table file readable by [`load_manifest`], plus its manifest.
pub fn write_table(dataset: &Dataset, manifest_path: &Path) -> Result<()> {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    let table_name = format!("{stem}.csv");
    let table_path = manifest_path.with_file_name(&table_name);
    let mut out = String::new();
    for s in dataset.samples() {
        let split = match s.partition {
            Partition::Train => "train",
            Partition::Test => "test",
        };
        write!(out, "{split},{}", s.label).unwrap();
        for v in s.input.iter() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(&table_path, out).map_err(|e| Error::io(&table_path, e))?;
    let manifest = Manifest {
        name: dataset.name().to_string(),
        classes: dataset.num_classes(),
        shape: dataset.input_shape().to_vec(),
        format: StorageFormat::Table,
        path: PathBuf::from(table_name),
    };
    fs::write(manifest_path, manifest.to_text()).map_err(|e| Error::io(manifest_path, e))
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() == want_dirs {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_image(path: &Path, shape: &[usize]) -> Result<Vec<f64>> {
    let &[h, w, c] = shape else {
        return Err(Error::parse("manifest", "image datasets need an HxWxC shape"));
    };
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (iw, ih) = (img.width() as usize, img.height() as usize);
    if (ih, iw) != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: format!("{h}x{w} image"),
            actual: format!("{ih}x{iw} in {}", path.display()),
        });
    }
    let raw: Vec<u8> = match c {
        1 => img.to_luma8().into_raw(),
        3 => img.to_rgb8().into_raw(),
        4 => img.to_rgba8().into_raw(),
        _ => return Err(Error::parse("manifest", format!("unsupported channel count {c}"))),
    };
    Ok(raw.into_iter().map(|b| f64::from(b) / 255.0).collect())
}

fn read_image_tree(root: &Path, manifest: &Manifest) -> Result<Vec<Sample>> {
    let train_dir = root.join("train");
    let test_dir = root.join("test");
    let presplit = train_dir.is_dir() && test_dir.is_dir();
    let roots: Vec<(&Path, Option<Partition>)> = if presplit {
        vec![
            (train_dir.as_path(), Some(Partition::Train)),
            (test_dir.as_path(), Some(Partition::Test)),
        ]
    } else {
        vec![(root, None)]
    };

    let mut class_names = BTreeSet::new();
    for (dir, _) in &roots {
        for class_dir in sorted_entries(dir, true)? {
            class_names.insert(dir_name(&class_dir));
        }
    }
    let class_names: Vec<String> = class_names.into_iter().collect();
    if class_names.len() != manifest.classes {
        return Err(Error::parse(
            "manifest",
            format!(
                "declares {} classes but {} class directories were found",
                manifest.classes,
                class_names.len()
            ),
        ));
    }

    let mut samples = Vec::new();
    for (dir, partition) in roots {
        for (label, name) in class_names.iter().enumerate() {
            let class_dir = dir.join(name);
            if !class_dir.is_dir() {
                continue;
            }
            let files = sorted_entries(&class_dir, false)?;
            let held = if partition.is_none() && files.len() >= 2 {
                ((files.len() as f64 * HELD_OUT_FRACTION).round() as usize).clamp(1, files.len() - 1)
            } else {
                0
            };
            let first_test = files.len() - held;
            for (n, file) in files.iter().enumerate() {
                let part = partition.unwrap_or(if n >= first_test {
                    Partition::Test
                } else {
                    Partition::Train
                });
                samples.push(Sample::new(read_image(file, &manifest.shape)?, label, part));
            }
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, BlobConfig};

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            name: "x".into(),
            classes: 4,
            shape: vec![8, 8, 3],
            format: StorageFormat::Images,
            path: "imgs".into(),
        };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn manifest_reports_missing_key() {
        let err = Manifest::parse("name = a\nclasses = 2\n").unwrap_err();
        assert!(err.to_string().contains("shape"));
    }

    #[test]
    fn table_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_blobs(&BlobConfig {
            classes: 3,
            dim: 4,
            per_class: 5,
            spread: 0.7,
            seed: 2,
        })
        .unwrap();
        let path = dir.path().join("blobs.manifest");
        write_table(&ds, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back.samples(), ds.samples());
        assert_eq!(back.num_classes(), 3);
        assert_eq!(back.input_shape(), &[4]);
    }

    #[test]
    fn image_tree_with_held_out_fraction() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("imgs");
        for (class, shade) in [("cat", 10u8), ("dog", 200u8)] {
            fs::create_dir_all(root.join(class)).unwrap();
            for n in 0..5 {
                let img = image::RgbImage::from_pixel(2, 3, image::Rgb([shade, n, 0]));
                img.save(root.join(class).join(format!("{n}.png"))).unwrap();
            }
        }
        let manifest = dir.path().join("m.txt");
        fs::write(
            &manifest,
            "name = pets\nclasses = 2\nshape = 3x2x3\nformat = images\npath = imgs\n",
        )
        .unwrap();
        let ds = load_manifest(&manifest).unwrap();
        assert_eq!(ds.len(), 10);
        let tests = ds.samples().iter().filter(|s| s.partition == Partition::Test).count();
        assert_eq!(tests, 2);
        assert!((ds.samples()[0].input[0] - 10.0 / 255.0).abs() < 1e-15);
        assert_eq!(ds.samples()[9].label, 1);
    }
}
