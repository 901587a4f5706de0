//! Binary PGM (P5) images and class-per-directory trees.

use std::path::{Path, PathBuf};

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parses a P5 image into `[1, H, W]` with values scaled by 1/maxval.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |m: String| Error::format(path, m);
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(bad(format!("expected binary P5 image, found {magic:?}")));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| Error::format(path, format!("bad {what} {t:?}")))
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(bad(format!("maxval {maxval} outside 1..=255")));
    }
    // exactly one whitespace byte separates the header from the raster
    let body = bytes.get(pos + 1..).unwrap_or(&[]);
    if body.len() < w * h {
        return Err(bad(format!("expected {} pixel bytes, found {}", w * h, body.len())));
    }
    let data = body[..w * h].iter().map(|&b| b as f64 / maxval as f64).collect();
    Tensor::new(vec![1, h, w], data)
}

pub fn load_pgm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, path)
}

/// Encodes a `[H, W]` or `[1, H, W]` image with maxval 255.
pub fn encode_pgm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *img.shape() {
        [h, w] | [1, h, w] => (h, w),
        _ => {
            return Err(Error::contract(format!(
                "pgm needs a single-channel image, got {:?}",
                img.shape()
            )))
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pgm(img)?).map_err(|e| Error::io(path, e))
}

/// Nearest-neighbour resize of a `[C, H, W]` image.
pub fn resize_nearest(img: &Tensor, hw: (usize, usize)) -> Result<Tensor> {
    let [c, h, w] = *img.shape() else {
        return Err(Error::contract(format!("resize needs [C, H, W], got {:?}", img.shape())));
    };
    let (nh, nw) = hw;
    if nh == 0 || nw == 0 {
        return Err(Error::contract("resize target must be non-empty"));
    }
    if (nh, nw) == (h, w) {
        return Ok(img.clone());
    }
    let mut out = Vec::with_capacity(c * nh * nw);
    for ch in 0..c {
        for r in 0..nh {
            let sr = r * h / nh;
            for col in 0..nw {
                let sc = col * w / nw;
                out.push(img.data()[(ch * h + sr) * w + sc]);
            }
        }
    }
    Tensor::new(vec![c, nh, nw], out)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_pgm(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Every leaf directory under `dir` is one class; nested layouts such as
/// `alphabet/character/` are named by their relative path.
fn collect_classes(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<PathBuf>)>) -> Result<()> {
    let entries = sorted_entries(dir)?;
    let subdirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
    let images: Vec<PathBuf> = entries.iter().filter(|p| is_pgm(p)).cloned().collect();
    if subdirs.is_empty() {
        if images.is_empty() {
            return Err(Error::Consistency(format!(
                "class directory {} holds no .pgm images",
                dir.display()
            )));
        }
        let name = dir
            .strip_prefix(root)
            .ok()
            .filter(|rel| !rel.as_os_str().is_empty())
            .unwrap_or_else(|| Path::new(dir.file_name().unwrap_or(dir.as_os_str())))
            .to_string_lossy()
            .replace('\\', "/");
        out.push((name, images));
        return Ok(());
    }
    if !images.is_empty() {
        return Err(Error::Consistency(format!(
            "{} mixes images and class subdirectories",
            dir.display()
        )));
    }
    for sub in subdirs {
        collect_classes(root, sub, out)?;
    }
    Ok(())
}

/// Loads `root/<class>/<image>.pgm` (classes may nest). Images are resized
/// to `target_hw` when given, otherwise they must all share one size.
pub fn load_pgm_tree(root: &Path, target_hw: Option<(usize, usize)>, split: Split) -> Result<LabeledDataset> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut classes = Vec::new();
    collect_classes(root, root, &mut classes)?;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (label, (name, files)) in classes.into_iter().enumerate() {
        for f in files {
            let img = load_pgm(&f)?;
            let img = match target_hw {
                Some(hw) => resize_nearest(&img, hw)?,
                None => img,
            };
            samples.push(img);
            labels.push(label);
        }
        names.push(name);
    }
    LabeledDataset::new(samples, labels, names, split).map_err(|e| match e {
        Error::Dimension { lhs, rhs, .. } => Error::Consistency(format!(
            "images under {} differ in size ({lhs:?} vs {rhs:?}); configure a resize target",
            root.display()
        )),
        other => other,
    })
}
