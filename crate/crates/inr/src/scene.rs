//! Posed-image inputs: LLFF `poses_bounds.npy` files and the plain-text
//! description of the synthetic sphere scene.

use std::path::{Path, PathBuf};

use sobolev_core::radiance::{CameraPose, PoseRing, SphereScene, View};

use crate::error::{FormatError, Result};
use crate::image::read_png;
use crate::settings::{parse_kv, Settings};

/// A little-endian float64 array read from an `.npy` file.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn npy_err(msg: impl Into<String>) -> FormatError {
    FormatError::Npy(msg.into())
}

fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let at = header
        .find(&pat)
        .ok_or_else(|| npy_err(format!("header has no {key}")))?;
    Ok(header[at + pat.len()..].trim_start())
}

/// Parses C-ordered `<f8` or `<f4` arrays of format version 1 to 3.
pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(npy_err("not an npy file"));
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (
            u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize,
            12,
        ),
        v => return Err(npy_err(format!("unsupported format version {v}"))),
    };
    let end = start + header_len;
    let header = bytes
        .get(start..end)
        .ok_or_else(|| npy_err("truncated header"))
        .and_then(|h| std::str::from_utf8(h).map_err(|_| npy_err("header is not text")))?;

    let descr = header_field(header, "descr")?;
    let width = if descr.starts_with("'<f8'") {
        8
    } else if descr.starts_with("'<f4'") {
        4
    } else {
        return Err(npy_err(format!(
            "unsupported dtype {}",
            descr.split(',').next().unwrap_or("")
        )));
    };
    if header_field(header, "fortran_order")?.starts_with("True") {
        return Err(npy_err("Fortran-ordered arrays are not supported"));
    }
    let shape_src = header_field(header, "shape")?;
    let close = shape_src
        .find(')')
        .ok_or_else(|| npy_err("malformed shape"))?;
    let shape = shape_src[1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| npy_err(format!("bad dimension `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;

    let count: usize = shape.iter().product();
    let body = &bytes[end..];
    if body.len() != count * width {
        return Err(npy_err(format!(
            "expected {} data bytes, found {}",
            count * width,
            body.len()
        )));
    }
    let data = if width == 8 {
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    } else {
        body.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    Ok(NpyArray { shape, data })
}

/// Writes a 2-D `<f8` array in npy format version 1.
pub fn encode_npy(rows: usize, cols: usize, data: &[f64]) -> Vec<u8> {
    assert_eq!(
        rows * cols,
        data.len(),
        "encode_npy: shape does not match data"
    );
    let mut header =
        format!("{{'descr': '<f8', 'fortran_order': False, 'shape': ({rows}, {cols}), }}");
    while (10 + header.len() + 1) % 64 != 0 {
        header.push(' ');
    }
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads `N x 17` rows: a `3 x 5` block `[R | t | (h, w, f)]` in row-major
/// order followed by the near and far bounds. Rotation columns are stored
/// as (down, right, back) and converted to (right, up, back).
pub fn parse_llff(bytes: &[u8]) -> Result<Vec<CameraPose>> {
    let arr = parse_npy(bytes)?;
    if arr.shape.len() != 2 || arr.shape[1] != 17 {
        return Err(npy_err(format!(
            "expected an N x 17 pose array, got {:?}",
            arr.shape
        )));
    }
    arr.data
        .chunks_exact(17)
        .enumerate()
        .map(|(i, row)| {
            let m = |r: usize, c: usize| row[5 * r + c];
            let mut c2w = [[0.0; 4]; 3];
            for (r, out) in c2w.iter_mut().enumerate() {
                *out = [m(r, 1), -m(r, 0), m(r, 2), m(r, 3)];
            }
            let (h, w, f) = (m(0, 4), m(1, 4), m(2, 4));
            if !(h >= 1.0 && w >= 1.0) || h.fract() != 0.0 || w.fract() != 0.0 {
                return Err(npy_err(format!("camera {i}: bad image size {h} x {w}")));
            }
            CameraPose::new(c2w, h as usize, w as usize, f, row[15], row[16])
                .map_err(|e| npy_err(format!("camera {i}: {e}")))
        })
        .collect()
}

/// PNG files of a directory in name order.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| FormatError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Pairs LLFF cameras with the PNGs of `images`. Images smaller than the
/// recorded size scale the focal length with them.
pub fn load_llff_views(poses: &Path, images: &Path) -> Result<Vec<View>> {
    let bytes = std::fs::read(poses).map_err(|e| FormatError::io(poses, e))?;
    let cams = parse_llff(&bytes)?;
    let files = list_pngs(images)?;
    if files.len() != cams.len() {
        return Err(npy_err(format!(
            "{} poses but {} images in {}",
            cams.len(),
            files.len(),
            images.display()
        )));
    }
    cams.into_iter()
        .zip(files)
        .map(|(mut pose, file)| {
            let image = crate::image::to_rgb(&read_png(&file)?.image)?;
            let scale = image.cols() as f64 / pose.width as f64;
            let rscale = image.rows() as f64 / pose.height as f64;
            if (scale - rscale).abs() > 1e-2 {
                return Err(npy_err(format!(
                    "{}: aspect ratio differs from its pose",
                    file.display()
                )));
            }
            pose.focal *= scale;
            pose.height = image.rows();
            pose.width = image.cols();
            Ok(View::new(pose, image))
        })
        .collect()
}

/// The sphere scene, its camera ring and the supersampling used to render
/// ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereSpec {
    pub scene: SphereScene,
    pub ring: PoseRing,
    pub supersample: usize,
}

impl Default for SphereSpec {
    fn default() -> Self {
        SphereSpec {
            scene: SphereScene::default(),
            ring: PoseRing::default(),
            supersample: 4,
        }
    }
}

fn vec3(s: &Settings, key: &str) -> Result<[f64; 3]> {
    let raw = s.raw(key)?;
    let parts: Vec<f64> = raw
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| FormatError::Setting {
            key: key.into(),
            message: format!("{e}"),
        })?;
    parts.try_into().map_err(|_| FormatError::Setting {
        key: key.into(),
        message: format!("expected three numbers, got `{raw}`"),
    })
}

impl SphereSpec {
    /// Reads `key = value` lines; vectors are three numbers separated by
    /// spaces or commas. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let d = SphereSpec::default();
        let f = |v: f64| v.to_string();
        let v3 = |v: [f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
        let mut s = Settings::with_defaults(&[
            ("center", &v3(d.scene.center)),
            ("radius", &f(d.scene.radius)),
            ("albedo", &v3(d.scene.albedo)),
            ("light", &v3(d.scene.light_dir)),
            ("ambient", &f(d.scene.ambient)),
            ("views", &d.ring.count.to_string()),
            ("distance", &f(d.ring.distance)),
            ("elevation", &f(d.ring.elevation)),
            ("height", &d.ring.height.to_string()),
            ("width", &d.ring.width.to_string()),
            ("focal", &f(d.ring.focal)),
            ("near", &f(d.ring.near)),
            ("far", &f(d.ring.far)),
            ("supersample", &d.supersample.to_string()),
        ]);
        s.apply(parse_kv(text)?)?;
        let spec = SphereSpec {
            scene: SphereScene {
                center: vec3(&s, "center")?,
                radius: s.get("radius")?,
                albedo: vec3(&s, "albedo")?,
                light_dir: vec3(&s, "light")?,
                ambient: s.get("ambient")?,
            },
            ring: PoseRing {
                count: s.get("views")?,
                distance: s.get("distance")?,
                elevation: s.get("elevation")?,
                height: s.get("height")?,
                width: s.get("width")?,
                focal: s.get("focal")?,
                near: s.get("near")?,
                far: s.get("far")?,
            },
            supersample: s.get("supersample")?,
        };
        spec.scene.validate()?;
        if spec.ring.count == 0 || spec.supersample == 0 {
            return Err(FormatError::Setting {
                key: "views".into(),
                message: "views and supersample must be positive".into(),
            });
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn views(&self) -> Result<Vec<View>> {
        Ok(self.scene.views(&self.ring, self.supersample)?)
    }
}
