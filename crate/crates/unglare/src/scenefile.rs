//! Plain-text scene descriptions.
//!
//! One `key = value` pair per line; `#` starts a comment. Keys:
//!
//! ```text
//! name         = four-materials
//! base         = four-materials        # optional: start from a builtin scene
//! size         = 650x450
//! illumination = 0.5774, 0.5774, 0.5774
//! layout       = single | quadrants | columns
//! material     = r, g, b [spread=DEG]  # repeatable, in layout order
//! diffuse      = 0.55                  # diffuse magnitude at the center
//! shading      = 0.25                  # darkening toward the corners, [0, 1)
//! lobe         = cx, cy, sigma, peak   # repeatable; fractions of the image
//! pddr_valid   = true | false
//! ```
//!
//! Colors are normalized to unit length. The first `material` or `lobe` line
//! replaces the list inherited from `base`; later ones append.

use std::fmt::Write as _;

use unglare_core::model::{l2_chromaticity, Chromaticity};
use unglare_core::synth::{builtin_scene, Layout, Lobe, MaterialSpec, SceneSpec, SynthError};
use unglare_core::Rgb;

#[derive(Debug, thiserror::Error)]
pub enum SceneFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Scene(#[from] SynthError),
}

fn syntax(line: usize, message: impl Into<String>) -> SceneFileError {
    SceneFileError::Syntax {
        line,
        message: message.into(),
    }
}

pub(crate) fn parse_floats(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|t| t.trim().parse().ok()).collect()
}

pub(crate) fn parse_color(s: &str) -> Option<Chromaticity> {
    match parse_floats(s)?.as_slice() {
        [r, g, b] => l2_chromaticity(Rgb::new(*r, *g, *b)).ok(),
        _ => None,
    }
}

fn empty_spec() -> SceneSpec {
    SceneSpec {
        name: "custom".into(),
        width: 0,
        height: 0,
        illumination: Chromaticity::white(),
        layout: Layout::Single,
        materials: Vec::new(),
        diffuse: 0.6,
        shading: 0.0,
        lobes: Vec::new(),
        pddr_valid: true,
    }
}

pub fn parse_scene(text: &str) -> Result<SceneSpec, SceneFileError> {
    let mut spec = empty_spec();
    let mut materials_set = false;
    let mut lobes_set = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| syntax(line, format!("bad {what} `{value}`"));
        match key {
            "name" => spec.name = value.to_string(),
            "base" => {
                let base = builtin_scene(value)?;
                spec = SceneSpec {
                    name: spec.name.clone(),
                    ..base
                };
                if spec.name == "custom" {
                    spec.name = value.to_string();
                }
            }
            "size" => {
                let (w, h) = value.split_once('x').ok_or_else(|| bad("size"))?;
                spec.width = w.trim().parse().map_err(|_| bad("width"))?;
                spec.height = h.trim().parse().map_err(|_| bad("height"))?;
            }
            "illumination" => spec.illumination = parse_color(value).ok_or_else(|| bad("color"))?,
            "layout" => {
                spec.layout = match value {
                    "single" => Layout::Single,
                    "quadrants" => Layout::Quadrants,
                    "columns" => Layout::Columns,
                    _ => return Err(bad("layout")),
                }
            }
            "material" => {
                let mut parts = value.split_whitespace();
                let color_text: String = value
                    .split("spread=")
                    .next()
                    .unwrap_or("")
                    .trim()
                    .to_string();
                let chroma = parse_color(&color_text).ok_or_else(|| bad("color"))?;
                let spread = match parts.find_map(|p| p.strip_prefix("spread=")) {
                    Some(s) => s.parse().map_err(|_| bad("spread"))?,
                    None => 0.0,
                };
                if !materials_set {
                    spec.materials.clear();
                    materials_set = true;
                }
                spec.materials.push(MaterialSpec {
                    chroma,
                    hue_spread_deg: spread,
                });
            }
            "diffuse" => spec.diffuse = value.parse().map_err(|_| bad("number"))?,
            "shading" => spec.shading = value.parse().map_err(|_| bad("number"))?,
            "lobe" => {
                let v = parse_floats(value).ok_or_else(|| bad("lobe"))?;
                let [cx, cy, sigma, peak] = v[..] else {
                    return Err(bad("lobe"));
                };
                if !lobes_set {
                    spec.lobes.clear();
                    lobes_set = true;
                }
                spec.lobes.push(Lobe { cx, cy, sigma, peak });
            }
            "pddr_valid" => spec.pddr_valid = value.parse().map_err(|_| bad("boolean"))?,
            other => return Err(syntax(line, format!("unknown key `{other}`"))),
        }
    }
    Ok(spec)
}

/// Serializes a spec. Parsing the text back reproduces every number exactly
/// except the colors, which are renormalized and may move by an ulp.
pub fn write_scene(spec: &SceneSpec) -> String {
    let mut out = String::new();
    let color = |c: Chromaticity| {
        let v = c.rgb();
        format!("{:?}, {:?}, {:?}", v[0], v[1], v[2])
    };
    let _ = writeln!(out, "name = {}", spec.name);
    let _ = writeln!(out, "size = {}x{}", spec.width, spec.height);
    let _ = writeln!(out, "illumination = {}", color(spec.illumination));
    let layout = match spec.layout {
        Layout::Single => "single",
        Layout::Quadrants => "quadrants",
        Layout::Columns => "columns",
    };
    let _ = writeln!(out, "layout = {layout}");
    for m in &spec.materials {
        if m.hue_spread_deg != 0.0 {
            let _ = writeln!(out, "material = {} spread={:?}", color(m.chroma), m.hue_spread_deg);
        } else {
            let _ = writeln!(out, "material = {}", color(m.chroma));
        }
    }
    let _ = writeln!(out, "diffuse = {:?}", spec.diffuse);
    let _ = writeln!(out, "shading = {:?}", spec.shading);
    for l in &spec.lobes {
        let _ = writeln!(out, "lobe = {:?}, {:?}, {:?}, {:?}", l.cx, l.cy, l.sigma, l.peak);
    }
    let _ = writeln!(out, "pddr_valid = {}", spec.pddr_valid);
    out
}
