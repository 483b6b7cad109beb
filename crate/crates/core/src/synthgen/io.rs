//! Directory layout: one P5 graymap per image, `<stem>_clean.pgm` holding
//! the untouched scene of confounded examples, `<stem>_mask.pgm` holding the
//! footprint, and a CSV manifest tying them together.

use std::path::Path;

use super::{Example, Split, SplitDataset};
use crate::error::{Error, Result};
use crate::image::{ConfounderMask, ImageGrid};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: [&str; 5] = ["filename", "split", "label", "confounded", "mask"];

fn clean_name(filename: &str) -> String {
    format!("{}_clean.pgm", filename.trim_end_matches(".pgm"))
}

pub fn save_dataset(ds: &SplitDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::format(&manifest, e.to_string()))?;
    let csv_err = |e: csv::Error| Error::format(&manifest, e.to_string());
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for split in Split::ALL {
        for (i, ex) in ds.split(split).iter().enumerate() {
            let filename = format!("{}_{i:05}.pgm", split.name());
            ex.image.save_pgm(&dir.join(&filename))?;
            let mask_name = match &ex.mask {
                Some(mask) => {
                    let name = format!("{}_{i:05}_mask.pgm", split.name());
                    mask.save_pgm(&dir.join(&name))?;
                    ex.clean_image.save_pgm(&dir.join(clean_name(&filename)))?;
                    name
                }
                None => String::new(),
            };
            w.write_record([
                filename.as_str(),
                split.name(),
                &ex.label.to_string(),
                if ex.confounded { "1" } else { "0" },
                mask_name.as_str(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<SplitDataset> {
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(Error::format(&manifest, "manifest not found"));
    }
    let mut reader = csv::Reader::from_path(&manifest).map_err(|e| Error::format(&manifest, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| Error::format(&manifest, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::format(&manifest, format!("unexpected header {header:?}")));
    }

    let mut ds = SplitDataset {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        clean_test: Vec::new(),
    };
    for (row, record) in reader.records().enumerate() {
        // data rows are numbered from 1, header excluded
        let row = row + 1;
        let bad = |msg: String| Error::format(&manifest, format!("row {row}: {msg}"));
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", record.len())));
        }
        let filename = &record[0];
        let split = Split::parse(&record[1]).ok_or_else(|| bad(format!("unknown split '{}'", &record[1])))?;
        let label = match &record[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("label '{other}' is not 0/1"))),
        };
        let confounded = match &record[3] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("confounded flag '{other}' is not 0/1"))),
        };
        let mask_name = &record[4];
        if confounded == mask_name.is_empty() {
            return Err(bad("confounded flag and mask column disagree".into()));
        }
        let image = ImageGrid::load_pgm(&dir.join(filename)).map_err(|e| bad(e.to_string()))?;
        let example = if confounded {
            let mask = ConfounderMask::load_pgm(&dir.join(mask_name)).map_err(|e| bad(e.to_string()))?;
            let clean_image = ImageGrid::load_pgm(&dir.join(clean_name(filename))).map_err(|e| bad(e.to_string()))?;
            if !image.same_shape(&clean_image) || mask.height() != image.height() || mask.width() != image.width() {
                return Err(bad("image, clean image and mask sizes differ".into()));
            }
            Example {
                clean_image,
                image,
                label,
                mask: Some(mask),
                confounded: true,
            }
        } else {
            Example::clean(image, label)
        };
        match split {
            Split::Train => ds.train.push(example),
            Split::Val => ds.val.push(example),
            Split::Test => ds.test.push(example),
        }
    }
    if ds.train.is_empty() && ds.val.is_empty() && ds.test.is_empty() {
        return Err(Error::format(&manifest, "manifest lists no examples"));
    }
    ds.clean_test = ds.test.iter().map(Example::to_clean).collect();
    Ok(ds)
}
