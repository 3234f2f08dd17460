//! Textual view specifications.
//!
//! ```text
//! identity | negate
//! rotate:90|180|270        flip:v|h           skew:<slope>
//! patch:<grid>[,seed=S]    pixel[:seed=S]     perm:<file>
//! jigsaw:<file>[,seed=S]   jigsaw:grid=G[,seed=S]   jigsaw:squares=G[,seed=S]
//! inner_rot:θ=<deg>,r=<radius>[,cy=<row>,cx=<col>]
//! ortho:<seed>|<file>      scale:<factor>     bilinear:<deg>
//! (broken_scale and broken_bilinear_rotate are accepted as aliases)
//! a+b+...                  (apply a, then b, ...)
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{FlipAxis, JigsawLayout, Quarter, View, ViewError, DEFAULT_DENSE_CAP};
use crate::format::{read_file, FormatError};
use crate::tensor::Dims;

#[derive(Debug, Clone, PartialEq)]
pub enum JigsawSource {
    File(PathBuf),
    /// Generated interlocking layout with `grid × grid` pieces.
    Pinwheel(usize),
    /// Square pieces on a `grid × grid` lattice.
    Squares(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrthoSource {
    Seed(u64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewSpec {
    Identity,
    Rotate(Quarter),
    Flip(FlipAxis),
    Skew(f64),
    Patch { grid: usize, seed: u64 },
    Pixel { seed: u64 },
    Jigsaw { source: JigsawSource, seed: u64 },
    PermFile(PathBuf),
    InnerRotation { degrees: f64, radius: f64, center: Option<(f64, f64)> },
    Negate,
    Ortho(OrthoSource),
    Scale(f64),
    Bilinear(f64),
    Composite(Vec<ViewSpec>),
}

/// Settings needed to turn a spec into a view.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Directory that relative file paths are resolved against.
    pub base_dir: PathBuf,
    pub dense_cap: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { base_dir: PathBuf::from("."), dense_cap: DEFAULT_DENSE_CAP }
    }
}

impl BuildOptions {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn spec_err(spec: &str, reason: impl Into<String>) -> ViewError {
    ViewError::Spec { spec: spec.to_string(), reason: reason.into() }
}

/// Splits `a=1,b=2,c` into keyed and positional arguments.
struct Args<'a> {
    spec: &'a str,
    keyed: Vec<(&'a str, &'a str)>,
    positional: Vec<&'a str>,
}

impl<'a> Args<'a> {
    fn parse(spec: &'a str, body: &'a str) -> Self {
        let mut keyed = Vec::new();
        let mut positional = Vec::new();
        for part in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some((k, v)) => keyed.push((k.trim(), v.trim())),
                None => positional.push(part),
            }
        }
        Self { spec, keyed, positional }
    }

    fn get(&self, names: &[&str]) -> Option<&'a str> {
        self.keyed.iter().find(|(k, _)| names.contains(k)).map(|(_, v)| *v)
    }

    fn num<T: FromStr>(&self, what: &str, s: &str) -> Result<T, ViewError> {
        s.parse().map_err(|_| spec_err(self.spec, format!("invalid {what} `{s}`")))
    }

    fn seed(&self) -> Result<u64, ViewError> {
        self.get(&["seed"]).map_or(Ok(0), |s| self.num("seed", s))
    }

    fn only(&self, allowed: &[&str], max_positional: usize) -> Result<(), ViewError> {
        if let Some((k, _)) = self.keyed.iter().find(|(k, _)| !allowed.contains(k)) {
            return Err(spec_err(self.spec, format!("unknown argument `{k}`")));
        }
        if self.positional.len() > max_positional {
            return Err(spec_err(self.spec, format!("unexpected argument `{}`", self.positional[max_positional])));
        }
        Ok(())
    }
}

fn parse_single(spec: &str) -> Result<ViewSpec, ViewError> {
    let (name, body) = spec.split_once(':').unwrap_or((spec, ""));
    let a = Args::parse(spec, body);
    let first = a.positional.first().copied();
    let need = |what: &str| first.ok_or_else(|| spec_err(spec, format!("missing {what}")));
    Ok(match name.trim() {
        "identity" => {
            a.only(&[], 0)?;
            ViewSpec::Identity
        }
        "negate" => {
            a.only(&[], 0)?;
            ViewSpec::Negate
        }
        "rotate" => {
            a.only(&[], 1)?;
            let deg: i64 = a.num("angle", need("angle")?)?;
            ViewSpec::Rotate(
                Quarter::from_degrees(deg).ok_or_else(|| spec_err(spec, "rotate takes 90, 180 or 270"))?,
            )
        }
        "flip" => {
            a.only(&[], 1)?;
            ViewSpec::Flip(match need("axis")? {
                "v" | "vertical" => FlipAxis::Vertical,
                "h" | "horizontal" => FlipAxis::Horizontal,
                other => return Err(spec_err(spec, format!("flip axis must be v or h, got `{other}`"))),
            })
        }
        "skew" => {
            a.only(&[], 1)?;
            ViewSpec::Skew(a.num("slope", need("slope")?)?)
        }
        "patch" => {
            a.only(&["seed", "grid"], 1)?;
            let grid = a.get(&["grid"]).or(first).ok_or_else(|| spec_err(spec, "missing grid"))?;
            ViewSpec::Patch { grid: a.num("grid", grid)?, seed: a.seed()? }
        }
        "pixel" => {
            a.only(&["seed"], 0)?;
            ViewSpec::Pixel { seed: a.seed()? }
        }
        "perm" => {
            a.only(&[], 1)?;
            ViewSpec::PermFile(PathBuf::from(need("file")?))
        }
        "jigsaw" => {
            a.only(&["seed", "grid", "squares"], 1)?;
            let source = match (a.get(&["grid"]), a.get(&["squares"]), first) {
                (Some(g), None, None) => JigsawSource::Pinwheel(a.num("grid", g)?),
                (None, Some(g), None) => JigsawSource::Squares(a.num("grid", g)?),
                (None, None, Some(f)) => JigsawSource::File(PathBuf::from(f)),
                _ => return Err(spec_err(spec, "jigsaw takes exactly one of <file>, grid=G or squares=G")),
            };
            ViewSpec::Jigsaw { source, seed: a.seed()? }
        }
        "inner_rot" => {
            a.only(&["θ", "theta", "r", "radius", "cx", "cy"], 0)?;
            let degrees = a.get(&["θ", "theta"]).ok_or_else(|| spec_err(spec, "missing θ=<degrees>"))?;
            let radius = a.get(&["r", "radius"]).ok_or_else(|| spec_err(spec, "missing r=<radius>"))?;
            let center = match (a.get(&["cy"]), a.get(&["cx"])) {
                (Some(cy), Some(cx)) => Some((a.num("cy", cy)?, a.num("cx", cx)?)),
                (None, None) => None,
                _ => return Err(spec_err(spec, "give both cy and cx or neither")),
            };
            ViewSpec::InnerRotation { degrees: a.num("angle", degrees)?, radius: a.num("radius", radius)?, center }
        }
        "ortho" => {
            a.only(&["seed"], 1)?;
            match (a.get(&["seed"]), first) {
                (Some(s), None) => ViewSpec::Ortho(OrthoSource::Seed(a.num("seed", s)?)),
                (None, Some(p)) => match p.parse() {
                    Ok(seed) => ViewSpec::Ortho(OrthoSource::Seed(seed)),
                    Err(_) => ViewSpec::Ortho(OrthoSource::File(PathBuf::from(p))),
                },
                _ => return Err(spec_err(spec, "ortho takes a seed or a file")),
            }
        }
        "scale" | "broken_scale" => {
            a.only(&[], 1)?;
            ViewSpec::Scale(a.num("factor", need("factor")?)?)
        }
        "bilinear" | "broken_bilinear_rotate" => {
            a.only(&[], 1)?;
            ViewSpec::Bilinear(a.num("angle", need("angle")?)?)
        }
        "" => return Err(spec_err(spec, "empty view spec")),
        other => return Err(spec_err(spec, format!("unknown view `{other}`"))),
    })
}

impl FromStr for ViewSpec {
    type Err = ViewError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('+').map(str::trim).collect();
        if parts.len() == 1 {
            return parse_single(parts[0]);
        }
        Ok(ViewSpec::Composite(parts.into_iter().map(parse_single).collect::<Result<_, _>>()?))
    }
}

impl fmt::Display for ViewSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::Negate => write!(f, "negate"),
            Self::Rotate(q) => write!(f, "rotate:{}", q.degrees()),
            Self::Flip(FlipAxis::Vertical) => write!(f, "flip:v"),
            Self::Flip(FlipAxis::Horizontal) => write!(f, "flip:h"),
            Self::Skew(s) => write!(f, "skew:{s}"),
            Self::Patch { grid, seed } => write!(f, "patch:{grid},seed={seed}"),
            Self::Pixel { seed } => write!(f, "pixel:seed={seed}"),
            Self::PermFile(p) => write!(f, "perm:{}", p.display()),
            Self::Jigsaw { source, seed } => match source {
                JigsawSource::File(p) => write!(f, "jigsaw:{},seed={seed}", p.display()),
                JigsawSource::Pinwheel(g) => write!(f, "jigsaw:grid={g},seed={seed}"),
                JigsawSource::Squares(g) => write!(f, "jigsaw:squares={g},seed={seed}"),
            },
            Self::InnerRotation { degrees, radius, center } => {
                write!(f, "inner_rot:θ={degrees},r={radius}")?;
                if let Some((cy, cx)) = center {
                    write!(f, ",cy={cy},cx={cx}")?;
                }
                Ok(())
            }
            Self::Ortho(OrthoSource::Seed(s)) => write!(f, "ortho:{s}"),
            Self::Ortho(OrthoSource::File(p)) => write!(f, "ortho:{}", p.display()),
            Self::Scale(c) => write!(f, "scale:{c}"),
            Self::Bilinear(d) => write!(f, "bilinear:{d}"),
            Self::Composite(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl ViewSpec {
    pub fn build(&self, dims: Dims, opts: &BuildOptions) -> Result<View, ViewError> {
        let with_spec = |e: ViewError| match e {
            e @ (ViewError::Spec { .. } | ViewError::DimMismatch { .. }) => e,
            e => spec_err(&self.to_string(), e.to_string()),
        };
        self.build_inner(dims, opts).map_err(with_spec)
    }

    fn build_inner(&self, dims: Dims, opts: &BuildOptions) -> Result<View, ViewError> {
        match self {
            Self::Identity => Ok(View::identity(dims)),
            Self::Negate => Ok(View::negate(dims)),
            Self::Rotate(q) => View::rotate_cw(dims, *q),
            Self::Flip(a) => Ok(View::flip(dims, *a)),
            Self::Skew(s) => View::skew(dims, *s),
            Self::Patch { grid, seed } => View::random_patch_permutation(dims, *grid, *seed),
            Self::Pixel { seed } => Ok(View::random_pixel_permutation(dims, *seed)),
            Self::PermFile(p) => {
                let bytes = read_file(&opts.resolve(p))?;
                let view = super::parse_view(&bytes, dims)?;
                Ok(view)
            }
            Self::Jigsaw { source, seed } => {
                let layout = match source {
                    JigsawSource::File(p) => {
                        let bytes = read_file(&opts.resolve(p))?;
                        let text = std::str::from_utf8(&bytes).map_err(|e| {
                            ViewError::Format(FormatError::Parse { offset: e.valid_up_to(), message: "invalid UTF-8".into() })
                        })?;
                        JigsawLayout::parse(text)?
                    }
                    JigsawSource::Pinwheel(g) => {
                        if !dims.is_square() {
                            return Err(ViewError::NotSquare(dims));
                        }
                        JigsawLayout::pinwheel(dims.height, *g)?
                    }
                    JigsawSource::Squares(g) => JigsawLayout::square_grid(dims.height, dims.width, *g)?,
                };
                View::random_jigsaw(dims, &layout, *seed)
            }
            Self::InnerRotation { degrees, radius, center } => {
                let angle = degrees.to_radians();
                match center {
                    Some(c) => View::inner_rotation(dims, *c, *radius, angle),
                    None => View::inner_rotation_centered(dims, *radius, angle),
                }
            }
            Self::Ortho(OrthoSource::Seed(s)) => View::random_orthogonal_with_cap(dims, *s, opts.dense_cap),
            Self::Ortho(OrthoSource::File(p)) => {
                let n = dims.len();
                if n > opts.dense_cap {
                    return Err(ViewError::TooLarge { n, cap: opts.dense_cap });
                }
                super::parse_view(&read_file(&opts.resolve(p))?, dims)
            }
            Self::Scale(c) => View::broken_scale(dims, *c),
            Self::Bilinear(d) => View::broken_bilinear_rotate(dims, *d),
            Self::Composite(parts) => {
                let views = parts.iter().map(|p| p.build_inner(dims, opts)).collect::<Result<Vec<_>, _>>()?;
                View::composite_with_cap(&views, opts.dense_cap)
            }
        }
    }
}

/// A registry of admissible views that can be built for `dims`, keyed by
/// spec string. Views whose preconditions `dims` does not meet are skipped.
pub fn admissible_catalog(dims: Dims, opts: &BuildOptions) -> Vec<(String, View)> {
    let min_side = dims.height.min(dims.width) as f64;
    let radius = (min_side / 2.0 - 0.5).max(1.0);
    let mut specs = vec![
        "identity".to_string(),
        "rotate:90".into(),
        "rotate:180".into(),
        "rotate:270".into(),
        "flip:v".into(),
        "flip:h".into(),
        "skew:0.5".into(),
        "skew:1".into(),
        "patch:2,seed=1".into(),
        "patch:4,seed=2".into(),
        "pixel:seed=3".into(),
        format!("inner_rot:θ=90,r={radius}"),
        format!("inner_rot:θ=45,r={radius}"),
        "negate".into(),
        "rotate:90+negate".into(),
        "ortho:5".into(),
    ];
    let g = if dims.height >= 32 { 4 } else { 2 };
    if dims.is_square() && JigsawLayout::pinwheel(dims.height, g).is_ok() {
        specs.push(format!("jigsaw:grid={g},seed=4"));
    } else {
        specs.push("jigsaw:squares=2,seed=4".into());
    }
    specs
        .into_iter()
        .filter_map(|s| {
            let view = s.parse::<ViewSpec>().ok()?.build(dims, opts).ok()?;
            Some((s, view))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::Admissibility;
    use proptest::prelude::*;

    #[test]
    fn parses_documented_forms() {
        assert_eq!("rotate:180".parse::<ViewSpec>().unwrap(), ViewSpec::Rotate(Quarter::Cw180));
        assert_eq!("flip:v".parse::<ViewSpec>().unwrap(), ViewSpec::Flip(FlipAxis::Vertical));
        assert_eq!("skew:0.5".parse::<ViewSpec>().unwrap(), ViewSpec::Skew(0.5));
        assert_eq!(
            "inner_rot:θ=90,r=24".parse::<ViewSpec>().unwrap(),
            ViewSpec::InnerRotation { degrees: 90.0, radius: 24.0, center: None }
        );
        assert_eq!(
            "inner_rot:theta=90,r=24,cy=3,cx=4".parse::<ViewSpec>().unwrap(),
            ViewSpec::InnerRotation { degrees: 90.0, radius: 24.0, center: Some((3.0, 4.0)) }
        );
        assert_eq!("ortho:7".parse::<ViewSpec>().unwrap(), ViewSpec::Ortho(OrthoSource::Seed(7)));
        assert_eq!(
            "ortho:a.nten".parse::<ViewSpec>().unwrap(),
            ViewSpec::Ortho(OrthoSource::File("a.nten".into()))
        );
        assert_eq!(
            "jigsaw:pieces.txt".parse::<ViewSpec>().unwrap(),
            ViewSpec::Jigsaw { source: JigsawSource::File("pieces.txt".into()), seed: 0 }
        );
        assert_eq!(
            "rotate:90 + negate".parse::<ViewSpec>().unwrap(),
            ViewSpec::Composite(vec![ViewSpec::Rotate(Quarter::Cw90), ViewSpec::Negate])
        );
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in ["rotate:45", "flip:x", "skew:abc", "wobble", "", "patch:4,foo=1", "inner_rot:r=3", "negate:1"] {
            assert!(matches!(bad.parse::<ViewSpec>(), Err(ViewError::Spec { .. })), "{bad}");
        }
    }

    #[test]
    fn build_errors_name_the_spec() {
        let d = Dims::new(1, 4, 6);
        let err = "rotate:90".parse::<ViewSpec>().unwrap().build(d, &BuildOptions::default()).unwrap_err();
        assert!(err.to_string().contains("rotate:90"), "{err}");
    }

    #[test]
    fn catalog_is_admissible() {
        let d = Dims::new(1, 8, 8);
        let cat = admissible_catalog(d, &BuildOptions::default());
        assert!(cat.len() >= 16, "{}", cat.len());
        assert!(cat.iter().all(|(_, v)| v.admissibility().is_admissible()));
        assert!(cat.iter().any(|(_, v)| v.admissibility() == Admissibility::GeneralOrthogonal));
        assert!(cat.iter().any(|(s, _)| s.starts_with("jigsaw")));
    }

    fn arb_spec() -> impl Strategy<Value = ViewSpec> {
        let leaf = prop_oneof![
            Just(ViewSpec::Identity),
            Just(ViewSpec::Negate),
            prop_oneof![Just(Quarter::Cw90), Just(Quarter::Cw180), Just(Quarter::Cw270)].prop_map(ViewSpec::Rotate),
            prop_oneof![Just(FlipAxis::Vertical), Just(FlipAxis::Horizontal)].prop_map(ViewSpec::Flip),
            (-4.0f64..4.0).prop_map(ViewSpec::Skew),
            (1usize..5, any::<u64>()).prop_map(|(grid, seed)| ViewSpec::Patch { grid, seed }),
            any::<u64>().prop_map(|seed| ViewSpec::Pixel { seed }),
            (-360.0f64..360.0, 0.5f64..10.0).prop_map(|(degrees, radius)| ViewSpec::InnerRotation {
                degrees,
                radius,
                center: None
            }),
            any::<u64>().prop_map(|s| ViewSpec::Ortho(OrthoSource::Seed(s))),
            (0.1f64..3.0).prop_map(ViewSpec::Scale),
            (1usize..5, any::<u64>())
                .prop_map(|(g, seed)| ViewSpec::Jigsaw { source: JigsawSource::Pinwheel(g), seed }),
        ];
        prop_oneof![
            3 => leaf.clone(),
            1 => proptest::collection::vec(leaf, 2..4).prop_map(ViewSpec::Composite),
        ]
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(spec in arb_spec()) {
            let text = spec.to_string();
            prop_assert_eq!(text.parse::<ViewSpec>().unwrap(), spec);
        }
    }
}
