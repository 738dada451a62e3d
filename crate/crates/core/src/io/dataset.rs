//! Paired dataset directories: `root/clean/` and `root/rainy/`, matched by
//! identical file name, with an optional `root/manifest.csv`.

use std::path::{Path, PathBuf};

use super::image::{decode_image, image_dims, is_image_path};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairPaths {
    pub name: String,
    pub clean: PathBuf,
    pub rainy: PathBuf,
}

/// A decoded pair, both images `3 x H x W` in [0, 1].
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub name: String,
    pub rainy: Tensor,
    pub clean: Tensor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub const CLEAN: &'static str = "clean";
    pub const RAINY: &'static str = "rainy";
    pub const MANIFEST: &'static str = "manifest.csv";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn clean_dir(&self) -> PathBuf {
        self.root.join(Self::CLEAN)
    }

    pub fn rainy_dir(&self) -> PathBuf {
        self.root.join(Self::RAINY)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(Self::MANIFEST)
    }

    /// Pairs every image in `rainy/` with its `clean/` counterpart, sorted by
    /// name. A rainy image without a clean twin is an error.
    pub fn pairs(&self) -> Result<Vec<PairPaths>> {
        pair_dirs(&self.clean_dir(), &self.rainy_dir())
    }

    /// Decodes every pair, failing on the first unreadable or mismatched one.
    pub fn load(&self) -> Result<Vec<ImagePair>> {
        self.pairs()?.iter().map(load_pair).collect()
    }
}

/// Pairs images in `test_dir` with same-named references in `ref_dir`.
pub fn pair_dirs(ref_dir: &Path, test_dir: &Path) -> Result<Vec<PairPaths>> {
    let mut out = Vec::new();
    for rainy in list_images(test_dir)? {
        let name = rainy.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let clean = ref_dir.join(&name);
        if !clean.is_file() {
            return Err(Error::Data(format!("{} has no counterpart in {}", rainy.display(), ref_dir.display())));
        }
        out.push(PairPaths { name, clean, rainy });
    }
    Ok(out)
}

pub fn load_pair(p: &PairPaths) -> Result<ImagePair> {
    let clean = decode_image(&p.clean)?;
    let rainy = decode_image(&p.rainy)?;
    if image_dims(&clean)? != image_dims(&rainy)? {
        return Err(Error::Data(format!(
            "{}: clean {:?} and rainy {:?} sizes differ",
            p.name,
            clean.shape(),
            rainy.shape()
        )));
    }
    Ok(ImagePair { name: p.name.clone(), rainy, clean })
}

/// Readable image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in rd {
        let path = entry?.path();
        if path.is_file() && is_image_path(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::image::encode_image;

    #[test]
    fn pairs_by_name_and_rejects_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        std::fs::create_dir_all(layout.clean_dir()).unwrap();
        std::fs::create_dir_all(layout.rainy_dir()).unwrap();
        let img = Tensor::from_fn(&[3, 4, 4], |i| (i % 5) as f32 / 4.0);
        for n in ["b.png", "a.ppm"] {
            encode_image(&img, layout.clean_dir().join(n)).unwrap();
            encode_image(&img, layout.rainy_dir().join(n)).unwrap();
        }
        let pairs = layout.load().unwrap();
        assert_eq!(pairs.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["a.ppm", "b.png"]);
        encode_image(&img, layout.rainy_dir().join("c.png")).unwrap();
        assert!(layout.pairs().is_err());
    }
}
