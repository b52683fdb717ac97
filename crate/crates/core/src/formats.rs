//! Plain-text formats: scenes, clusterings, `key = value` documents and
//! bench CSV. Floats are written as `{:.16e}`, which round-trips exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::geometry::{
    Correspondence, CorrespondenceSet, RigidTransform, RngSeed, RotationMatrix, Vec3,
};
use crate::scene::{LabeledScene, SceneSpec};
use crate::theory::BoundTrial;

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// Exact-round-trip float rendering.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_num<T: FromStr>(line: usize, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("bad {what}: {s:?}")))
}

fn parse_finite(line: usize, what: &str, s: &str) -> Result<f64> {
    let v: f64 = parse_num(line, what, s)?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("{what} is not finite: {s:?}")));
    }
    Ok(v)
}

/// Splits `key = value`; both sides trimmed, key nonempty and free of
/// whitespace.
fn split_kv(line: usize, text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::parse(line, "expected `key = value`"))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || k.chars().any(char::is_whitespace) {
        return Err(Error::parse(line, format!("bad key {k:?}")));
    }
    Ok((k.to_string(), v.to_string()))
}

/// An ordered list of `key = value` entries with unique keys.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDocument {
    entries: Vec<(String, String)>,
}

impl KvDocument {
    pub fn new() -> Self {
        Self::default()
    }

    /// Lines are `key = value`; blank lines and lines starting with `#` are
    /// skipped. Duplicate keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = split_kv(idx + 1, line)?;
            if doc.get(&k).is_some() {
                return Err(Error::parse(idx + 1, format!("duplicate key {k:?}")));
            }
            check_entry(&k, &v).map_err(|e| Error::parse(idx + 1, e))?;
            doc.entries.push((k, v));
        }
        Ok(doc)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Appends or replaces `key`. Keys must be nonempty without whitespace
    /// or `=`; values must be single-line without surrounding whitespace.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) -> Result<()> {
        let (key, value) = (key.into(), value.into());
        check_entry(&key, &value).map_err(Error::InvalidParameter)?;
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_entry(key: &str, value: &str) -> std::result::Result<(), String> {
    if key.is_empty() || key.starts_with('#') || key.chars().any(|c| c.is_whitespace() || c == '=')
    {
        return Err(format!("bad key {key:?}"));
    }
    if value.contains(['\n', '\r']) || value.trim() != value {
        return Err(format!("bad value for {key}: {value:?}"));
    }
    Ok(())
}

fn write_rotation(out: &mut String, r: &RotationMatrix) {
    for v in r.to_row_array() {
        out.push(' ');
        out.push_str(&fmt_f64(v));
    }
}

/// Renders a scene: a `# key = value` header, one
/// `ax ay az bx by bz label` line per correspondence, then one
/// `POSE j r11 .. r33 tx ty tz` line per object.
pub fn write_scene(scene: &LabeledScene) -> String {
    let s = &scene.spec;
    let mut out = String::new();
    let ppo: Vec<String> = s.points_per_object.iter().map(usize::to_string).collect();
    let header = [
        ("version", SCENE_FORMAT_VERSION.to_string()),
        ("n", scene.correspondences.len().to_string()),
        ("M", s.num_objects.to_string()),
        ("sigma", fmt_f64(s.sigma)),
        ("tau", fmt_f64(s.tau)),
        ("B", fmt_f64(s.bound)),
        ("seed", s.seed.0.to_string()),
        ("points_per_object", ppo.join(",")),
        ("num_outliers", s.num_outliers.to_string()),
        ("separation_margin", fmt_f64(s.separation_margin)),
    ];
    for (k, v) in header {
        let _ = writeln!(out, "# {k} = {v}");
    }
    for (c, l) in scene.correspondences.iter().zip(&scene.true_labels) {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {l}",
            fmt_f64(c.a.x),
            fmt_f64(c.a.y),
            fmt_f64(c.a.z),
            fmt_f64(c.b.x),
            fmt_f64(c.b.y),
            fmt_f64(c.b.z)
        );
    }
    for (j, t) in scene.true_transforms.iter().enumerate() {
        let _ = write!(out, "POSE {}", j + 1);
        write_rotation(&mut out, &t.rotation);
        for v in t.translation.iter() {
            out.push(' ');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

const SCENE_KEYS: [&str; 10] = [
    "version",
    "n",
    "M",
    "sigma",
    "tau",
    "B",
    "seed",
    "points_per_object",
    "num_outliers",
    "separation_margin",
];

pub fn parse_scene(text: &str) -> Result<LabeledScene> {
    let mut header = KvDocument::new();
    let mut items = Vec::new();
    let mut labels = Vec::new();
    let mut poses: Vec<(usize, usize, RigidTransform)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = split_kv(ln, rest)?;
            if !SCENE_KEYS.contains(&k.as_str()) {
                return Err(Error::parse(ln, format!("unknown header key {k:?}")));
            }
            if header.get(&k).is_some() {
                return Err(Error::parse(ln, format!("duplicate header key {k:?}")));
            }
            if !items.is_empty() || !poses.is_empty() {
                return Err(Error::parse(ln, "header after data"));
            }
            header.entries.push((k, v));
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] == "POSE" {
            if fields.len() != 14 {
                return Err(Error::parse(
                    ln,
                    format!("POSE needs 13 values, got {}", fields.len() - 1),
                ));
            }
            let j: usize = parse_num(ln, "object id", fields[1])?;
            let mut nums = [0.0; 12];
            for (slot, f) in nums.iter_mut().zip(&fields[2..]) {
                *slot = parse_finite(ln, "pose value", f)?;
            }
            let rows: [f64; 9] = nums[..9].try_into().expect("nine entries");
            let rotation = RotationMatrix::from_row_slice(&rows)
                .map_err(|e| Error::parse(ln, e.to_string()))?;
            let t = RigidTransform::new(rotation, Vec3::new(nums[9], nums[10], nums[11]));
            poses.push((ln, j, t));
            continue;
        }
        if !poses.is_empty() {
            return Err(Error::parse(ln, "correspondence after POSE lines"));
        }
        if fields.len() != 7 {
            return Err(Error::parse(
                ln,
                format!("expected 7 fields, got {}", fields.len()),
            ));
        }
        let mut v = [0.0; 6];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = parse_finite(ln, "coordinate", f)?;
        }
        items.push(Correspondence::new(
            Vec3::new(v[0], v[1], v[2]),
            Vec3::new(v[3], v[4], v[5]),
        ));
        labels.push(parse_num::<usize>(ln, "label", fields[6])?);
    }
    let need = |k: &str| {
        header
            .get(k)
            .ok_or_else(|| Error::parse(0, format!("missing header key {k:?}")))
    };
    let version: u32 = parse_num(0, "version", need("version")?)?;
    if version != SCENE_FORMAT_VERSION {
        return Err(Error::parse(0, format!("unsupported version {version}")));
    }
    let n: usize = parse_num(0, "n", need("n")?)?;
    let m: usize = parse_num(0, "M", need("M")?)?;
    let ppo_text = need("points_per_object")?;
    let points_per_object = if ppo_text.is_empty() {
        Vec::new()
    } else {
        ppo_text
            .split(',')
            .map(|s| parse_num::<usize>(0, "points_per_object", s.trim()))
            .collect::<Result<Vec<_>>>()?
    };
    let spec = SceneSpec {
        num_objects: m,
        points_per_object,
        sigma: parse_finite(0, "sigma", need("sigma")?)?,
        tau: parse_finite(0, "tau", need("tau")?)?,
        bound: parse_finite(0, "B", need("B")?)?,
        num_outliers: parse_num(0, "num_outliers", need("num_outliers")?)?,
        separation_margin: parse_finite(0, "separation_margin", need("separation_margin")?)?,
        seed: RngSeed(parse_num(0, "seed", need("seed")?)?),
    };
    if items.len() != n {
        return Err(Error::parse(
            0,
            format!(
                "header says n = {n} but found {} correspondences",
                items.len()
            ),
        ));
    }
    if spec.points_per_object.len() != m {
        return Err(Error::parse(0, "points_per_object length differs from M"));
    }
    let mut counts = vec![0usize; m + 1];
    for &l in &labels {
        if l > m {
            return Err(Error::parse(0, format!("label {l} exceeds M = {m}")));
        }
        counts[l] += 1;
    }
    if counts[0] != spec.num_outliers || counts[1..] != spec.points_per_object[..] {
        return Err(Error::parse(0, "label counts disagree with the header"));
    }
    let mut transforms: Vec<Option<RigidTransform>> = vec![None; m];
    for (ln, j, t) in poses {
        if j == 0 || j > m {
            return Err(Error::parse(ln, format!("object id {j} out of range")));
        }
        if transforms[j - 1].replace(t).is_some() {
            return Err(Error::parse(ln, format!("duplicate POSE for object {j}")));
        }
    }
    let true_transforms = transforms
        .into_iter()
        .enumerate()
        .map(|(j, t)| {
            t.ok_or_else(|| Error::parse(0, format!("missing POSE for object {}", j + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledScene {
        correspondences: CorrespondenceSet::new(items)?,
        true_labels: labels,
        true_transforms,
        spec,
    })
}

/// One label per line.
pub fn write_clustering(c: &Clustering) -> String {
    let mut out = String::with_capacity(c.len() * 3);
    for l in c.labels() {
        let _ = writeln!(out, "{l}");
    }
    out
}

/// One label per line; blank lines and `#` comments are skipped. Labels
/// are compacted to `1..=K` keeping their order.
pub fn parse_clustering(text: &str) -> Result<Clustering> {
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        labels.push(parse_num::<usize>(idx + 1, "label", line)?);
    }
    Ok(Clustering::from_labels(labels))
}

pub const BENCH_CSV_HEADER: &str =
    "m,sigma,B,delta,lambda_min,err_rot,bound_rot,err_trans,bound_trans,violated";

/// `violated` is a bitmask: 1 for the rotation bound, 2 for translation.
pub fn write_bench_csv(trials: &[BoundTrial]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for t in trials {
        let flags = u8::from(t.violated_rot) | (u8::from(t.violated_trans) << 1);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{flags}",
            t.m,
            fmt_f64(t.sigma),
            fmt_f64(t.bound),
            fmt_f64(t.delta),
            fmt_f64(t.lambda_min),
            fmt_f64(t.measured_rot_err_sq),
            fmt_f64(t.rot_bound),
            fmt_f64(t.measured_trans_err_sq),
            fmt_f64(t.trans_bound),
        );
    }
    out
}

pub fn parse_bench_csv(text: &str) -> Result<Vec<BoundTrial>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == BENCH_CSV_HEADER => {}
        _ => return Err(Error::parse(1, "missing bench CSV header")),
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let ln = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.trim().split(',').collect();
        if f.len() != 10 {
            return Err(Error::parse(
                ln,
                format!("expected 10 columns, got {}", f.len()),
            ));
        }
        let num = |i: usize| parse_num::<f64>(ln, "number", f[i]);
        let flags: u8 = parse_num(ln, "violated", f[9])?;
        if flags > 3 {
            return Err(Error::parse(ln, format!("bad violated mask {flags}")));
        }
        out.push(BoundTrial {
            m: parse_num(ln, "m", f[0])?,
            sigma: num(1)?,
            bound: num(2)?,
            delta: num(3)?,
            lambda_min: num(4)?,
            measured_rot_err_sq: num(5)?,
            rot_bound: num(6)?,
            measured_trans_err_sq: num(7)?,
            trans_bound: num(8)?,
            violated_rot: flags & 1 != 0,
            violated_trans: flags & 2 != 0,
        });
    }
    Ok(out)
}
