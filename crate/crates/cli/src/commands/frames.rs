use std::f64::consts::PI;

use anagram_core::tensor::ImageTensor;
use anagram_core::view::{BuildOptions, FlipAxis, ViewSpec};

use super::{create_dir, read_image};
use crate::error::CliError;
use crate::png::write_png;
use crate::FramesArgs;

/// Bilinear lookup at fractional `(sy, sx)`, zero outside the image.
fn bilinear(img: &ImageTensor, c: usize, sy: f64, sx: f64) -> f64 {
    let d = img.dims();
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let at = |y: f64, x: f64| {
        if y < 0.0 || x < 0.0 || y > (d.height - 1) as f64 || x > (d.width - 1) as f64 {
            0.0
        } else {
            img.get(c, y as usize, x as usize)
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0)) + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0))
}

/// Resamples `img`; `source` maps an output pixel's offset from `center` to
/// a source position, or `None` to keep the pixel as is.
fn warp(img: &ImageTensor, center: (f64, f64), source: impl Fn(f64, f64) -> Option<(f64, f64)>) -> ImageTensor {
    let (cy, cx) = center;
    ImageTensor::from_fn(img.dims(), |c, y, x| match source(y as f64 - cy, x as f64 - cx) {
        Some((sy, sx)) => bilinear(img, c, cy + sy, cx + sx),
        None => img.get(c, y, x),
    })
}

/// Clockwise rotation by `theta` radians about `center`.
fn rotate(dy: f64, dx: f64, theta: f64) -> (f64, f64) {
    (dy * theta.cos() - dx * theta.sin(), dy * theta.sin() + dx * theta.cos())
}

/// Intermediate state at fraction `f` in `(0, 1)`, for views with a
/// continuous geometric path from the identity.
fn intermediate(img: &ImageTensor, spec: &ViewSpec, f: f64) -> Option<ImageTensor> {
    let d = img.dims();
    let centre = ((d.height as f64 - 1.0) / 2.0, (d.width as f64 - 1.0) / 2.0);
    match spec {
        ViewSpec::Rotate(q) => {
            let theta = f * q.degrees() as f64 * PI / 180.0;
            Some(warp(img, centre, |dy, dx| Some(rotate(dy, dx, theta))))
        }
        ViewSpec::Flip(axis) => {
            let s = (PI * f).cos();
            let inv = |v: f64| if s.abs() < 1e-9 { f64::INFINITY } else { v / s };
            Some(match axis {
                FlipAxis::Vertical => warp(img, centre, |dy, dx| Some((inv(dy), dx))),
                FlipAxis::Horizontal => warp(img, centre, |dy, dx| Some((dy, inv(dx)))),
            })
        }
        ViewSpec::InnerRotation { degrees, radius, center } => {
            let theta = f * degrees * PI / 180.0;
            let r = *radius;
            Some(warp(img, center.unwrap_or(centre), |dy, dx| (dy.hypot(dx) < r).then(|| rotate(dy, dx, theta))))
        }
        _ => None,
    }
}

/// `n` frames from `img` to `view(img)`. Views without a geometric
/// interpolation give only the two endpoints.
pub fn frames(img: &ImageTensor, spec_text: &str, n: usize) -> Result<Vec<ImageTensor>, CliError> {
    if n < 2 {
        return Err(CliError::Config(format!("need at least 2 frames, got {n}")));
    }
    let spec: ViewSpec = spec_text.parse().map_err(CliError::config)?;
    let view = spec.build(img.dims(), &BuildOptions::default()).map_err(CliError::config)?;
    let last = view.apply(img).map_err(CliError::config)?;
    if intermediate(img, &spec, 0.5).is_none() {
        return Ok(vec![img.clone(), last]);
    }
    let mut out = vec![img.clone()];
    for k in 1..n - 1 {
        out.push(intermediate(img, &spec, k as f64 / (n - 1) as f64).expect("interpolable"));
    }
    out.push(last);
    Ok(out)
}

pub fn run(args: &FramesArgs) -> Result<Vec<std::path::PathBuf>, CliError> {
    let img = read_image(&args.image)?;
    let seq = frames(&img, &args.view, args.frames)?;
    create_dir(&args.out)?;
    let mut paths = Vec::with_capacity(seq.len());
    for (k, f) in seq.iter().enumerate() {
        let p = args.out.join(format!("frame_{k:03}.png"));
        write_png(&p, f)?;
        paths.push(p);
    }
    println!("wrote {} frames to {}", paths.len(), args.out.display());
    Ok(paths)
}
