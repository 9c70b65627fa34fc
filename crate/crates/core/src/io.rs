//! File plumbing: PGM/PNG images, plain-text kernels, CSV experiment
//! reports and `key = value` config files.
//!
//! All writers go through a write-to-temp / atomic-rename path so a
//! failing run never leaves a partial output file behind.

use crate::error::{Error, Result};
use crate::types::{default_config, DeblurConfig, ExperimentReport, Image, Kernel};
use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), msg: msg.into() }
}

/// Writes bytes to a sibling temp file and renames it into place, so the
/// destination either keeps its old content or receives the full payload.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp_name = format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id());
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => Path::new(&tmp_name).to_path_buf(),
    };
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// Whitespace/comment-aware token reader for ASCII PGM headers and bodies.
struct PgmTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmTokens<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next(&mut self) -> Option<&'a [u8]> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn next_usize(&mut self, path: &Path, what: &str) -> Result<usize> {
        let tok = self.next().ok_or_else(|| parse_err(path, format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(path, format!("bad {what} token")))
    }
}

fn load_pgm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let binary = bytes.starts_with(b"P5");
    let mut t = PgmTokens::new(&bytes[2..]);
    let width = t.next_usize(path, "width")?;
    let height = t.next_usize(path, "height")?;
    let maxval = t.next_usize(path, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(path, format!("maxval {maxval} out of range")));
    }
    let scale = maxval as f64;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| parse_err(path, "dimension overflow"))?;
    let data = if binary {
        // Exactly one separator byte follows the maxval token.
        let body = &bytes[2 + t.pos + 1..];
        let per = if maxval > 255 { 2 } else { 1 };
        if body.len() < n * per {
            return Err(parse_err(path, "truncated pixel data"));
        }
        body.chunks_exact(per)
            .take(n)
            .map(|c| {
                let v = if per == 2 { u16::from_be_bytes([c[0], c[1]]) as f64 } else { c[0] as f64 };
                v / scale
            })
            .collect()
    } else {
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let v = t.next_usize(path, &format!("pixel {i}"))?;
            if v > maxval {
                return Err(parse_err(path, format!("pixel {i} value {v} exceeds maxval")));
            }
            data.push(v as f64 / scale);
        }
        data
    };
    Image::new(height, width, data)
}

const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

fn load_png(path: &Path) -> Result<Image> {
    let dyn_img = image::open(path)?;
    let (w, h) = (dyn_img.width() as usize, dyn_img.height() as usize);
    let data: Vec<f64> = match dyn_img {
        DynamicImage::ImageLuma8(b) => b.into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        other
            if other.color().bits_per_pixel() as usize
                > 8 * other.color().channel_count() as usize =>
        {
            other
            .to_rgb16()
            .pixels()
            .map(|p| {
                LUMA_WEIGHTS
                    .iter()
                    .zip(p.0.iter())
                    .map(|(w, &c)| w * c as f64 / 65535.0)
                    .sum()
            })
            .collect()
        }
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| {
                LUMA_WEIGHTS
                    .iter()
                    .zip(p.0.iter())
                    .map(|(w, &c)| w * c as f64 / 255.0)
                    .sum()
            })
            .collect(),
    };
    Image::new(h, w, data)
}

/// Loads a grayscale image from PGM (P2/P5) or PNG (gray or RGB, 8/16 bit),
/// scaled to [0,1]. RGB collapses to luma 0.299 R + 0.587 G + 0.114 B.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        load_pgm(path, &bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        load_png(path)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: expected PGM (P2/P5) or PNG",
            path.display()
        )))
    }
}

fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves an image as 8-bit grayscale PNG or binary PGM, chosen by the
/// file extension (default PNG). Values are clamped to [0,1].
pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let pixels: Vec<u8> = img.data().iter().map(|&v| quantize_u8(v)).collect();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("png");
    let bytes = if ext.eq_ignore_ascii_case("pgm") {
        let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
        out.extend_from_slice(&pixels);
        out
    } else {
        let mut out = Vec::new();
        PngEncoder::new(&mut out).write_image(
            &pixels,
            img.width() as u32,
            img.height() as u32,
            ExtendedColorType::L8,
        )?;
        out
    };
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Loads the plain-text kernel format: first line "L K", then L rows of K
/// space-separated reals. With `normalize`, negative values are clipped
/// and the sum rescaled to one before validation.
pub fn load_kernel(path: impl AsRef<Path>, normalize: bool) -> Result<Kernel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let header = lines.next().ok_or_else(|| parse_err(path, "empty kernel file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(path, format!("bad header token {t:?}"))))
        .collect::<Result<_>>()?;
    let [l, k] = dims[..] else {
        return Err(parse_err(path, "header must be exactly \"L K\""));
    };
    let mut weights = Vec::with_capacity(l * k);
    for (i, line) in lines.take(l).enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(path, format!("bad value {t:?} in row {i}"))))
            .collect::<Result<_>>()?;
        if row.len() != k {
            return Err(parse_err(path, format!("row {i} has {} values, expected {k}", row.len())));
        }
        weights.extend(row);
    }
    if weights.len() != l * k {
        return Err(parse_err(path, format!("expected {l} rows of {k} values")));
    }
    if normalize {
        for w in &mut weights {
            *w = w.max(0.0);
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::KernelAnnihilated);
        }
        for w in &mut weights {
            *w /= sum;
        }
    }
    Kernel::new(l, k, weights)
}

/// Writes the plain-text kernel format; `load_kernel` round-trips it
/// exactly because values are printed with shortest-round-trip formatting.
pub fn save_kernel(path: impl AsRef<Path>, k: &Kernel) -> Result<()> {
    let mut out = format!("{} {}\n", k.size_l(), k.size_k());
    for i in 0..k.size_l() {
        for j in 0..k.size_k() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{}", k.get(i, j)).expect("string write");
        }
        out.push('\n');
    }
    atomic_write(path.as_ref(), out.as_bytes())
}

/// Max-scaled grayscale PNG visualization of a kernel.
pub fn save_kernel_png(path: impl AsRef<Path>, k: &Kernel) -> Result<()> {
    let peak = k.weights().iter().cloned().fold(0.0_f64, f64::max);
    let img = Image::new(
        k.size_l(),
        k.size_k(),
        k.weights().iter().map(|&v| if peak > 0.0 { v / peak } else { 0.0 }).collect(),
    )?;
    save_image(path, &img)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// CSV rendering: `# key=value` metadata lines (seed and name first, then
/// parameters sorted by key), a header row, and numeric rows printed with
/// shortest-round-trip formatting. Byte-deterministic for equal data.
pub fn report_to_csv(report: &ExperimentReport) -> Result<String> {
    let rows = report.check_rectangular()?;
    let mut out = String::new();
    writeln!(out, "# name={}", report.name).expect("string write");
    writeln!(out, "# seed={}", report.seed).expect("string write");
    let mut params = report.params.clone();
    params.sort();
    for (k, v) in &params {
        writeln!(out, "# {k}={v}").expect("string write");
    }
    let header: Vec<&str> = report.columns.iter().map(|(n, _)| n.as_str()).collect();
    writeln!(out, "{}", header.join(",")).expect("string write");
    for r in 0..rows {
        let row: Vec<String> = report.columns.iter().map(|(_, c)| c[r].to_string()).collect();
        writeln!(out, "{}", row.join(",")).expect("string write");
    }
    Ok(out)
}

pub fn save_report(path: impl AsRef<Path>, report: &ExperimentReport) -> Result<()> {
    atomic_write(path.as_ref(), report_to_csv(report)?.as_bytes())
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

/// Parses a `key = value` config file (`#` starts a comment). Unknown
/// keys are errors; missing keys keep their defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<DeblurConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut cfg = default_config();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(path, format!("line {}: expected key = value", ln + 1)));
        };
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| parse_err(path, format!("line {}: bad {what} for {key}", ln + 1));
        let f = || value.parse::<f64>().map_err(|_| bad("real"));
        let u = || value.parse::<usize>().map_err(|_| bad("integer"));
        match key {
            "lambda" => cfg.lambda = f()?,
            "sigma" => cfg.sigma = f()?,
            "mu" => cfg.mu = f()?,
            "tau" => cfg.tau = f()?,
            "delta" => cfg.delta = f()?,
            "eta" => cfg.eta = f()?,
            "outer_iter_max" => cfg.outer_iter_max = u()?,
            "cg_iter_max" => cfg.cg_iter_max = u()?,
            "inner_iter_max" => cfg.inner_iter_max = u()?,
            "iter_max" => cfg.iter_max = u()?,
            "pyramid_levels" => cfg.pyramid_levels = u()?,
            "kernel_rows" => cfg.kernel_size.0 = u()?,
            "kernel_cols" => cfg.kernel_size.1 = u()?,
            "threshold_ratio" => cfg.threshold_ratio = f()?,
            "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
            other => return Err(parse_err(path, format!("line {}: unknown key {other:?}", ln + 1))),
        }
    }
    cfg.validated()
}

/// Emits every config field as `key = value`; `load_config` round-trips
/// the result bit-exactly.
pub fn config_to_text(cfg: &DeblurConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("string write");
    kv("lambda", cfg.lambda.to_string());
    kv("sigma", cfg.sigma.to_string());
    kv("mu", cfg.mu.to_string());
    kv("tau", cfg.tau.to_string());
    kv("delta", cfg.delta.to_string());
    kv("eta", cfg.eta.to_string());
    kv("outer_iter_max", cfg.outer_iter_max.to_string());
    kv("cg_iter_max", cfg.cg_iter_max.to_string());
    kv("inner_iter_max", cfg.inner_iter_max.to_string());
    kv("iter_max", cfg.iter_max.to_string());
    kv("pyramid_levels", cfg.pyramid_levels.to_string());
    kv("kernel_rows", cfg.kernel_size.0.to_string());
    kv("kernel_cols", cfg.kernel_size.1.to_string());
    kv("threshold_ratio", cfg.threshold_ratio.to_string());
    kv("seed", cfg.seed.to_string());
    out
}

pub fn save_config(path: impl AsRef<Path>, cfg: &DeblurConfig) -> Result<()> {
    atomic_write(path.as_ref(), config_to_text(cfg).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn ascii_pgm_scales_to_unit_range() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, "P2\n# comment\n2 2\n255\n0 128\n255 64\n").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.height(), 2);
        let expect = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0];
        for (a, b) in img.data().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_pgm_roundtrip_within_quantization() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        let img = Image::new(3, 4, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        save_image(&p, &img).unwrap();
        let back = load_image(&p).unwrap();
        assert!(back.same_dims(&img));
        for (a, b) in back.data().iter().zip(img.data().iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn png_roundtrip_and_rgb_luma() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("c.png");
        let img = Image::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        save_image(&p, &img).unwrap();
        let back = load_image(&p).unwrap();
        for (a, b) in back.data().iter().zip(img.data().iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        // RGB input collapses through the stated luma weights.
        let rgb = image::RgbImage::from_raw(1, 1, vec![200, 100, 50]).unwrap();
        let p2 = dir.path().join("d.png");
        rgb.save(&p2).unwrap();
        let v = load_image(&p2).unwrap().get(0, 0);
        let expect = (0.299 * 200.0 + 0.587 * 100.0 + 0.114 * 50.0) / 255.0;
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn corrupt_headers_are_errors() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.pgm");
        fs::write(&p, "P2\n2 2\n").unwrap();
        assert!(load_image(&p).is_err(), "missing maxval");
        fs::write(&p, "P5\n2 2\n255\n\x01\x02").unwrap();
        assert!(load_image(&p).is_err(), "truncated body");
        fs::write(&p, "JUNK").unwrap();
        assert!(matches!(load_image(&p), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn kernel_text_roundtrip_exact() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("k.txt");
        let k = Kernel::gaussian(3, 5, 0.8).unwrap();
        save_kernel(&p, &k).unwrap();
        let back = load_kernel(&p, false).unwrap();
        assert_eq!(back, k, "shortest-round-trip floats restore bits");
        // Unnormalized file passes only with the normalize flag.
        fs::write(&p, "1 3\n1 2 1\n").unwrap();
        assert!(load_kernel(&p, false).is_err());
        let n = load_kernel(&p, true).unwrap();
        assert_eq!(n.weights(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn report_csv_is_byte_deterministic() {
        let mut r = ExperimentReport::new("demo", 7);
        r.param("m", 21).param("alpha", 0.5);
        r.column("size", vec![3.0, 5.0]).column("value", vec![0.1, 0.25]);
        let a = report_to_csv(&r).unwrap();
        let b = report_to_csv(&r).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("# name=demo\n# seed=7\n# alpha=0.5\n# m=21\n"));
        assert!(a.ends_with("size,value\n3,0.1\n5,0.25\n"));
    }

    #[test]
    fn config_roundtrip_bit_exact() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("cfg.txt");
        let mut cfg = default_config();
        cfg.lambda = 0.1234567890123;
        cfg.kernel_size = (11, 9);
        cfg.seed = 42;
        save_config(&p, &cfg).unwrap();
        assert_eq!(load_config(&p).unwrap(), cfg);
        fs::write(&p, "lambda = 0.5\nbogus = 1\n").unwrap();
        assert!(load_config(&p).is_err(), "unknown key rejected");
        fs::write(&p, "tau = 0\n").unwrap();
        assert!(load_config(&p).is_err(), "invalid config rejected");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("out.csv");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        // No stray temp files remain.
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
