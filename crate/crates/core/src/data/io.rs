//! On-disk dataset layout.
//!
//! ```text
//! manifest.json
//! 000000.pgm                 binary 8-bit PGM
//! 000000.markup-<name>.pts   one per exposed markup
//! 000000.pose.csv            yaw,pitch,roll in degrees (when exposed)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::dataset::{Dataset, DatasetSpec};
use super::pose::PoseAngles;
use super::sample::{GrayImage, LandmarkSet, Sample};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Binary PGM with maxval 255. Comments (`#`) are allowed in the header.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut pos = 0;
    let mut line = 1;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            if bytes[pos] == b'\n' {
                line += 1;
            }
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(parse_err(path, line, "header ends early"));
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push((String::from_utf8_lossy(&bytes[start..pos]).into_owned(), line));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let (magic, l) = &tokens[0];
    if magic != "P5" {
        return Err(parse_err(path, *l, format!("expected P5, found `{magic}`")));
    }
    let num = |i: usize| -> Result<usize> {
        let (t, l) = &tokens[i];
        t.parse()
            .map_err(|_| parse_err(path, *l, format!("`{t}` is not a non-negative integer")))
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(parse_err(path, tokens[3].1, format!("maxval {maxval}, only 255 is supported")));
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != width * height {
        return Err(parse_err(
            path,
            tokens[3].1 + 1,
            format!("raster has {} bytes, expected {}", raster.len(), width * height),
        ));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: raster.to_vec(),
    })
}

pub fn encode_pts(set: &LandmarkSet) -> String {
    let mut s = format!("version: 1\nn_points: {}\n{{\n", set.len());
    for p in &set.points {
        writeln!(s, "{} {}", p[0], p[1]).expect("string write");
    }
    s.push_str("}\n");
    s
}

fn header_value<'a>(text: Option<(usize, &'a str)>, key: &str, path: &Path, line: usize) -> Result<&'a str> {
    let (l, t) = text.ok_or_else(|| parse_err(path, line, format!("missing `{key}` line")))?;
    let (k, v) = t
        .split_once(':')
        .ok_or_else(|| parse_err(path, l + 1, format!("expected `{key}: ...`")))?;
    if k.trim() != key {
        return Err(parse_err(path, l + 1, format!("expected `{key}`, found `{}`", k.trim())));
    }
    Ok(v.trim())
}

pub fn decode_pts(text: &str, path: &Path) -> Result<LandmarkSet> {
    let mut lines = text.lines().enumerate();
    header_value(lines.next(), "version", path, 1)?;
    let n_text = header_value(lines.next(), "n_points", path, 2)?;
    let n: usize = n_text
        .parse()
        .map_err(|_| parse_err(path, 2, format!("`{n_text}` is not a point count")))?;
    match lines.next() {
        Some((_, "{")) => {}
        Some((l, other)) => return Err(parse_err(path, l + 1, format!("expected `{{`, found `{other}`"))),
        None => return Err(parse_err(path, 3, "missing `{`")),
    }
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let line_no = 4 + k;
        let (_, t) = lines
            .next()
            .ok_or_else(|| parse_err(path, line_no, format!("file ends after {k} of {n} points")))?;
        let mut it = t.split_whitespace();
        let mut coord = || -> Result<f64> {
            let tok = it
                .next()
                .ok_or_else(|| parse_err(path, line_no, "expected two coordinates"))?;
            tok.parse()
                .map_err(|_| parse_err(path, line_no, format!("`{tok}` is not a number")))
        };
        let (x, y) = (coord()?, coord()?);
        if it.next().is_some() || t.trim() == "}" {
            return Err(parse_err(path, line_no, "expected exactly two coordinates"));
        }
        points.push([x, y]);
    }
    match lines.next() {
        Some((_, "}")) => Ok(LandmarkSet { points }),
        Some((l, other)) => Err(parse_err(path, l + 1, format!("expected `}}`, found `{other}`"))),
        None => Err(parse_err(path, 4 + n, "missing closing `}`")),
    }
}

pub fn encode_pose(p: &PoseAngles) -> String {
    format!("yaw,pitch,roll\n{},{},{}\n", p.yaw, p.pitch, p.roll)
}

pub fn decode_pose(text: &str, path: &Path) -> Result<PoseAngles> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("yaw,pitch,roll") {
        return Err(parse_err(path, 1, "expected header `yaw,pitch,roll`"));
    }
    let row = lines.next().ok_or_else(|| parse_err(path, 2, "missing pose row"))?;
    let vals: Vec<&str> = row.split(',').map(str::trim).collect();
    if vals.len() != 3 {
        return Err(parse_err(path, 2, format!("expected 3 values, found {}", vals.len())));
    }
    let mut out = [0.0; 3];
    for (o, v) in out.iter_mut().zip(&vals) {
        *o = v
            .parse()
            .map_err(|_| parse_err(path, 2, format!("`{v}` is not a number")))?;
    }
    Ok(PoseAngles::new(out[0], out[1], out[2]))
}

pub fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:06}.pgm"))
}

pub fn pts_path(dir: &Path, index: usize, markup: &str) -> PathBuf {
    dir.join(format!("{index:06}.markup-{markup}.pts"))
}

pub fn pose_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:06}.pose.csv"))
}

pub fn save_sample(dir: &Path, index: usize, s: &Sample) -> Result<()> {
    std::fs::write(image_path(dir, index), encode_pgm(&s.image))?;
    for (name, set) in &s.landmarks {
        std::fs::write(pts_path(dir, index, name), encode_pts(set))?;
    }
    if let Some(p) = &s.pose {
        std::fs::write(pose_path(dir, index), encode_pose(p))?;
    }
    Ok(())
}

pub fn load_sample(dir: &Path, index: usize, markups: &[String], pose: bool) -> Result<Sample> {
    let ip = image_path(dir, index);
    let image = decode_pgm(&std::fs::read(&ip)?, &ip)?;
    let mut landmarks = BTreeMap::new();
    for m in markups {
        let p = pts_path(dir, index, m);
        landmarks.insert(m.clone(), decode_pts(&std::fs::read_to_string(&p)?, &p)?);
    }
    let pose = if pose {
        let p = pose_path(dir, index);
        Some(decode_pose(&std::fs::read_to_string(&p)?, &p)?)
    } else {
        None
    };
    Ok(Sample {
        image,
        landmarks,
        pose,
    })
}

pub fn save_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = serde_json::to_string_pretty(&d.spec)?;
    manifest.push('\n');
    std::fs::write(dir.join(MANIFEST), manifest)?;
    for (i, s) in d.samples.iter().enumerate() {
        save_sample(dir, i, s)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let spec: DatasetSpec = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)?;
    spec.validate()?;
    let samples = (0..spec.size)
        .map(|i| load_sample(dir, i, &spec.markups, spec.pose))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { spec, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("t.pts")
    }

    #[test]
    fn pts_round_trip_and_header() {
        let set = LandmarkSet {
            points: (0..68).map(|i| [i as f64 * 0.731, 63.0 - i as f64 * 0.1234567]).collect(),
        };
        let text = encode_pts(&set);
        let back = decode_pts(&text, p()).unwrap();
        assert_eq!(back.len(), 68);
        assert_eq!(back, set);
        assert_eq!(encode_pts(&back), text);
    }

    #[test]
    fn truncated_pts_reports_offending_line() {
        let set = LandmarkSet {
            points: vec![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
        };
        let text = encode_pts(&set);
        let cut: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        match decode_pts(&cut, p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        let bad = text.replace("3 4", "3 x");
        match decode_pts(&bad, p()) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 5);
                assert!(msg.contains('x'));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_pts("n_points: 3\n", p()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn pgm_round_trip_and_errors() {
        let img = GrayImage {
            width: 5,
            height: 3,
            pixels: (0..15).map(|i| (i * 17) as u8).collect(),
        };
        let bytes = encode_pgm(&img);
        assert_eq!(decode_pgm(&bytes, p()).unwrap(), img);
        let commented = [b"P5\n# made here\n5 3\n255\n".as_slice(), &img.pixels].concat();
        assert_eq!(decode_pgm(&commented, p()).unwrap(), img);
        match decode_pgm(&bytes[..bytes.len() - 2], p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0", p()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn pose_round_trip() {
        let pose = PoseAngles::new(-47.123456789, 3.5, 0.1 + 0.2);
        assert_eq!(decode_pose(&encode_pose(&pose), p()).unwrap(), pose);
        assert!(matches!(decode_pose("yaw,pitch,roll\n1,2\n", p()), Err(Error::Parse { line: 2, .. })));
    }
}
