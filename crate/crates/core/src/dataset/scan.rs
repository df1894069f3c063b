//! Discovery of paired images in the on-disk dataset layout:
//! `root/<category>/underwater/<stem>.<png|jpg>` matched by stem against
//! `root/<category>/reference/<stem>.<png|jpg>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imageio::{list_images, probe_dimensions};

/// One underwater/reference file pair. Both files exist and decode to the
/// same dimensions (checked from the headers at scan time).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub underwater_path: PathBuf,
    pub groundtruth_path: PathBuf,
    /// Water-type label, taken from the category directory name.
    pub category: String,
    /// File stem shared by the two paths.
    pub stem: String,
}

/// A file present in the layout but not usable, with the reason; unpaired
/// files are reported here instead of failing the scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ScanReport {
    /// Sorted by (category, stem).
    pub pairs: Vec<RawPair>,
    pub skipped: Vec<SkippedFile>,
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Walk the dataset layout and pair files by stem. Unpaired files become
/// [`SkippedFile`] warnings; an unreadable image header or a dimension
/// mismatch inside a pair is fatal (the pair contract cannot hold).
pub fn scan_dataset(root: &Path) -> Result<ScanReport> {
    if !root.is_dir() {
        return Err(Error::invalid(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut categories: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    categories.sort();

    let mut report = ScanReport::default();
    for category_dir in categories {
        let category = category_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let underwater_dir = category_dir.join("underwater");
        let reference_dir = category_dir.join("reference");
        if !underwater_dir.is_dir() {
            report.skipped.push(SkippedFile {
                path: category_dir.clone(),
                reason: "no underwater/ subdirectory".to_string(),
            });
            continue;
        }
        let references: BTreeMap<String, PathBuf> = if reference_dir.is_dir() {
            list_images(&reference_dir)?
                .into_iter()
                .map(|p| (stem_of(&p), p))
                .collect()
        } else {
            BTreeMap::new()
        };
        let mut matched = std::collections::BTreeSet::new();
        let underwater = list_images(&underwater_dir)?;
        for uw_path in &underwater {
            let stem = stem_of(uw_path);
            let Some(ref_path) = references.get(&stem) else {
                report.skipped.push(SkippedFile {
                    path: uw_path.clone(),
                    reason: "no reference image with this stem".to_string(),
                });
                continue;
            };
            let (uh, uw) = probe_dimensions(uw_path)?;
            let (rh, rw) = probe_dimensions(ref_path)?;
            if (uh, uw) != (rh, rw) {
                return Err(Error::invalid(format!(
                    "pair dimensions differ: {} is {uh}x{uw} but {} is {rh}x{rw}",
                    uw_path.display(),
                    ref_path.display()
                )));
            }
            matched.insert(stem.clone());
            report.pairs.push(RawPair {
                underwater_path: uw_path.clone(),
                groundtruth_path: ref_path.clone(),
                category: category.clone(),
                stem,
            });
        }
        for (stem, path) in &references {
            if !matched.contains(stem) {
                report.skipped.push(SkippedFile {
                    path: path.clone(),
                    reason: "no underwater image with this stem".to_string(),
                });
            }
        }
    }
    report
        .pairs
        .sort_by(|a, b| (&a.category, &a.stem).cmp(&(&b.category, &b.stem)));
    Ok(report)
}
