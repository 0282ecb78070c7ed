//! Small helpers shared across modules: apportionment, seed derivation, raster IO.

use std::path::{Component, Path, PathBuf};

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Largest-remainder apportionment of `total` units over integer `weights`.
///
/// Exact integer arithmetic. Leftover units go to the largest remainders; equal
/// remainders favour the lower index.
pub fn apportion_weighted(total: usize, weights: &[u64]) -> Vec<usize> {
    let weight_sum: u64 = weights.iter().sum();
    if weight_sum == 0 {
        return vec![0; weights.len()];
    }
    let total = total as u64;
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|&w| (total * w / weight_sum) as usize)
        .collect();
    let remainders: Vec<u64> = weights.iter().map(|&w| total * w % weight_sum).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
    for &idx in order.iter().take(total as usize - assigned) {
        counts[idx] += 1;
    }
    counts
}

/// Largest-remainder apportionment of `total` units over real-valued fractions.
///
/// Quotas within 1e-9 of an integer are snapped to it before flooring.
pub fn apportion_fractions(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions
        .iter()
        .map(|&f| {
            let q = total as f64 * f;
            if (q - q.round()).abs() < 1e-9 {
                q.round()
            } else {
                q
            }
        })
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let leftover = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &idx in order.iter().take(leftover) {
        counts[idx] += 1;
    }
    counts
}

/// Mixes a global seed with a string tag (FNV-1a over the tag, then splitmix64).
///
/// Stable across platforms and toolchains, unlike `std::hash`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::load(path, "file not found"));
    }
    let img = image::open(path).map_err(|e| Error::load(path, e))?;
    Ok(img.into_rgb8())
}

/// Reads a single-channel 8-bit label raster. Any other pixel layout is rejected.
pub fn read_mask(path: &Path) -> Result<GrayImage> {
    if !path.exists() {
        return Err(Error::load(path, "file not found"));
    }
    match image::open(path).map_err(|e| Error::load(path, e))? {
        image::DynamicImage::ImageLuma8(m) => Ok(m),
        other => Err(Error::load(
            path,
            format!("mask must be 8-bit single-channel, got {:?}", other.color()),
        )),
    }
}

pub fn write_png<P, C>(path: &Path, img: &image::ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::load(path, other),
        })
}

/// Removes `.` and resolvable `..` components without touching the filesystem.
pub fn normalize_lexically(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::load(path, format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::load(path, "file not found"),
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e))
}
