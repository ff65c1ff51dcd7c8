//! Binary little-endian PLY scene files.
//!
//! ```text
//! ply
//! format binary_little_endian 1.0
//! comment splat-tr v1
//! element vertex K
//! property double x            (then y z scale_0..2 rot_0..3 opacity red green blue)
//! end_header
//! ```
//! followed by `K × 14` little-endian `f64` values. Rotations are stored as
//! `(q_x, q_y, q_z, q_w)`.

use std::path::Path;

use super::{quat_norm_sq, GaussianPrimitive, Scene};
use crate::error::{Error, Result};

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
    "red", "green", "blue",
];

const MAGIC_COMMENT: &str = "comment splat-tr v1";

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    std::fs::write(path, encode(scene)).map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub(crate) fn encode(scene: &Scene) -> Vec<u8> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(MAGIC_COMMENT);
    header.push('\n');
    header.push_str(&format!("element vertex {}\n", scene.len()));
    for p in PROPERTIES {
        header.push_str(&format!("property double {p}\n"));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    out.reserve(scene.len() * PROPERTIES.len() * 8);
    for p in &scene.primitives {
        let row = p
            .mean
            .iter()
            .chain(&p.scale)
            .chain(&p.rotation)
            .chain(std::iter::once(&p.opacity))
            .chain(&p.color);
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) fn decode(bytes: &[u8], path: &Path) -> Result<Scene> {
    let err = |loc: String, msg: String| Error::parse(path, loc, msg);

    // header: ASCII lines up to and including `end_header\n`
    let mut pos = 0usize;
    let mut lines = Vec::new();
    loop {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(err(format!("byte {pos}"), "unterminated header".into()));
        };
        let line = std::str::from_utf8(&bytes[pos..pos + nl])
            .map_err(|_| err(format!("header line {}", lines.len() + 1), "non-UTF-8 header".into()))?
            .trim_end_matches('\r')
            .to_string();
        pos += nl + 1;
        if lines.is_empty() && line != "ply" {
            return Err(err("header line 1".into(), "missing `ply` magic".into()));
        }
        let done = line == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }

    let mut count: Option<usize> = None;
    let mut props = Vec::new();
    let mut saw_comment = false;
    for (i, line) in lines.iter().enumerate().skip(1) {
        let loc = format!("header line {}", i + 1);
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => {
                return Err(err(loc, format!("unsupported format `{other}`")));
            }
            ["comment", ..] => saw_comment |= line.trim() == MAGIC_COMMENT,
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| err(loc.clone(), format!("bad vertex count `{n}`")))?);
            }
            ["element", other, ..] => {
                return Err(err(loc, format!("unexpected element `{other}`")));
            }
            ["property", "double", name] => {
                if count.is_none() {
                    return Err(err(loc, "property before element".into()));
                }
                props.push(name.to_string());
            }
            ["property", ty, ..] => {
                return Err(err(loc, format!("property type `{ty}` is not double")));
            }
            ["end_header"] => {}
            _ => return Err(err(loc, format!("unrecognized header line `{line}`"))),
        }
    }
    if !saw_comment {
        return Err(err("header".into(), format!("missing `{MAGIC_COMMENT}`")));
    }
    let count = count.ok_or_else(|| err("header".into(), "missing `element vertex`".into()))?;
    if props.len() != PROPERTIES.len() {
        return Err(err(
            "header".into(),
            format!("expected {} properties, found {}", PROPERTIES.len(), props.len()),
        ));
    }
    for (i, (got, want)) in props.iter().zip(PROPERTIES).enumerate() {
        if got != want {
            return Err(err("header".into(), format!("property {i} is `{got}`, expected `{want}`")));
        }
    }

    let body = &bytes[pos..];
    let need = count * PROPERTIES.len() * 8;
    if body.len() != need {
        return Err(err(
            format!("byte {pos}"),
            format!("body has {} bytes, expected {need}", body.len()),
        ));
    }
    let mut primitives = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(PROPERTIES.len() * 8).enumerate() {
        let v: Vec<f64> = rec
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        let loc = format!("vertex {i} (byte {})", pos + i * PROPERTIES.len() * 8);
        if let Some(j) = v.iter().position(|x| !x.is_finite()) {
            return Err(err(loc, format!("non-finite `{}`", PROPERTIES[j])));
        }
        let p = GaussianPrimitive {
            mean: [v[0], v[1], v[2]],
            scale: [v[3], v[4], v[5]],
            rotation: [v[6], v[7], v[8], v[9]],
            opacity: v[10],
            color: [v[11], v[12], v[13]],
        };
        if p.scale.iter().any(|&s| s <= 0.0) {
            return Err(err(loc, "scale must be positive".into()));
        }
        if !(p.opacity > 0.0 && p.opacity < 1.0) {
            return Err(err(loc, format!("opacity {} outside (0, 1)", p.opacity)));
        }
        if p.color.iter().any(|&c| c < 0.0) {
            return Err(err(loc, "negative color".into()));
        }
        if quat_norm_sq(&p.rotation).sqrt() < 1e-12 {
            return Err(err(loc, "degenerate quaternion".into()));
        }
        primitives.push(p);
    }
    Ok(Scene::new(primitives))
}
