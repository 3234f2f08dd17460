//! Jigsaw views built from piece masks.
//!
//! A layout lists one bitmap per shape class and a set of placements, each
//! putting an oriented copy of a class bitmap onto the image. Placements must
//! tile the image exactly. A rearrangement sends each piece to a slot of the
//! same class, turning it by whichever dihedral orientation makes its
//! footprint coincide with the slot; that piece-level move becomes a pixel
//! permutation.
//!
//! Layout text format:
//!
//! ```text
//! jigsaw <height> <width>
//! shape <class> <rows> <cols>
//! <rows lines of '#' (inside) and '.' (outside)>
//! piece <class> <orientation> <row> <col>
//! ```
//!
//! `orientation` is one of `r0 r90 r180 r270 m0 m90 m180 m270` (clockwise
//! rotations, and the same applied after a left-right mirror). `row`/`col`
//! locate the top-left corner of the oriented bitmap's bounding box.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::{Permutation, View, ViewError, ViewKind};
use crate::format::FormatError;
use crate::tensor::{seeded_rng, Dims};

/// The eight symmetries of the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dihedral {
    R0,
    R90,
    R180,
    R270,
    M0,
    M90,
    M180,
    M270,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Self::R0,
        Self::R90,
        Self::R180,
        Self::R270,
        Self::M0,
        Self::M90,
        Self::M180,
        Self::M270,
    ];

    fn apply(self, (r, c): (i64, i64)) -> (i64, i64) {
        match self {
            Self::R0 => (r, c),
            Self::R90 => (c, -r),
            Self::R180 => (-r, -c),
            Self::R270 => (-c, r),
            Self::M0 => (r, -c),
            Self::M90 => (-c, -r),
            Self::M180 => (-r, c),
            Self::M270 => (c, r),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::R0 => "r0",
            Self::R90 => "r90",
            Self::R180 => "r180",
            Self::R270 => "r270",
            Self::M0 => "m0",
            Self::M90 => "m90",
            Self::M180 => "m180",
            Self::M270 => "m270",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }
}

/// Applies `g` and translates the result so its bounding box starts at the
/// origin. Returns the transformed points and the translation used.
fn orient(points: &[(i64, i64)], g: Dihedral) -> (Vec<(i64, i64)>, (i64, i64)) {
    let moved: Vec<_> = points.iter().map(|&p| g.apply(p)).collect();
    let min_r = moved.iter().map(|p| p.0).min().unwrap_or(0);
    let min_c = moved.iter().map(|p| p.1).min().unwrap_or(0);
    (moved.into_iter().map(|(r, c)| (r - min_r, c - min_c)).collect(), (min_r, min_c))
}

fn normalized_sorted(points: &[(i64, i64)], g: Dihedral) -> Vec<(i64, i64)> {
    let mut v = orient(points, g).0;
    v.sort_unstable();
    v
}

/// First orientation (in [`Dihedral::ALL`] order) mapping `from` onto `to`
/// up to translation.
fn find_orientation(from: &[(i64, i64)], to: &[(i64, i64)]) -> Option<Dihedral> {
    if from.len() != to.len() {
        return None;
    }
    let target = normalized_sorted(to, Dihedral::R0);
    Dihedral::ALL.into_iter().find(|&g| normalized_sorted(from, g) == target)
}

/// One shape class: its label and canonical bitmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PieceShape {
    pub class: String,
    /// Row-major bitmap, `mask[r][c]`.
    pub mask: Vec<Vec<bool>>,
}

impl PieceShape {
    fn points(&self) -> Vec<(i64, i64)> {
        let mut pts = Vec::new();
        for (r, row) in self.mask.iter().enumerate() {
            for (c, &on) in row.iter().enumerate() {
                if on {
                    pts.push((r as i64, c as i64));
                }
            }
        }
        pts
    }

    fn from_points(class: String, points: &[(i64, i64)]) -> Self {
        let (pts, _) = orient(points, Dihedral::R0);
        let rows = pts.iter().map(|p| p.0).max().map_or(0, |m| m + 1) as usize;
        let cols = pts.iter().map(|p| p.1).max().map_or(0, |m| m + 1) as usize;
        let mut mask = vec![vec![false; cols]; rows];
        for (r, c) in pts {
            mask[r as usize][c as usize] = true;
        }
        Self { class, mask }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JigsawPlacement {
    pub class: String,
    pub orientation: Dihedral,
    pub row: usize,
    pub col: usize,
}

/// Image-plane layout of jigsaw pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JigsawLayout {
    pub height: usize,
    pub width: usize,
    pub shapes: Vec<PieceShape>,
    pub placements: Vec<JigsawPlacement>,
}

/// A validated layout: per-piece class and pixel footprint.
struct Pieces {
    classes: Vec<String>,
    /// Image-plane `(row, col)` of every pixel, in bitmap order.
    footprints: Vec<Vec<(i64, i64)>>,
}

impl JigsawLayout {
    fn shape(&self, class: &str) -> Option<&PieceShape> {
        self.shapes.iter().find(|s| s.class == class)
    }

    fn pieces(&self) -> Result<Pieces, ViewError> {
        let mut classes = Vec::with_capacity(self.placements.len());
        let mut footprints = Vec::with_capacity(self.placements.len());
        let mut cover = vec![0u32; self.height * self.width];
        for (k, p) in self.placements.iter().enumerate() {
            let shape = self
                .shape(&p.class)
                .ok_or_else(|| ViewError::Shape(format!("piece {k} uses undefined class `{}`", p.class)))?;
            let (pts, _) = orient(&shape.points(), p.orientation);
            let mut fp = Vec::with_capacity(pts.len());
            for (r, c) in pts {
                let (y, x) = (r + p.row as i64, c + p.col as i64);
                if y >= self.height as i64 || x >= self.width as i64 {
                    return Err(ViewError::Shape(format!(
                        "piece {k} ({}) extends outside the {}x{} image at ({y}, {x})",
                        p.class, self.height, self.width
                    )));
                }
                cover[y as usize * self.width + x as usize] += 1;
                fp.push((y, x));
            }
            classes.push(p.class.clone());
            footprints.push(fp);
        }
        let pick = |pred: fn(u32) -> bool| -> Vec<(usize, usize)> {
            cover
                .iter()
                .enumerate()
                .filter(|(_, &n)| pred(n))
                .map(|(i, _)| (i / self.width, i % self.width))
                .collect()
        };
        let uncovered = pick(|n| n == 0);
        let double_covered = pick(|n| n > 1);
        if !uncovered.is_empty() || !double_covered.is_empty() {
            return Err(ViewError::Tiling { uncovered, double_covered });
        }
        for (k, fp) in footprints.iter().enumerate() {
            let first = classes.iter().position(|c| *c == classes[k]).unwrap();
            if find_orientation(&footprints[first], fp).is_none() {
                return Err(ViewError::Shape(format!(
                    "piece {k} of class `{}` cannot be superimposed on piece {first} under any of the 8 orientations",
                    classes[k]
                )));
            }
        }
        Ok(Pieces { classes, footprints })
    }

    /// Checks that the placements disjointly tile the image and that every
    /// class is internally consistent.
    pub fn validate(&self) -> Result<(), ViewError> {
        self.pieces().map(|_| ())
    }

    /// A random within-class rearrangement of pieces: `assignment[slot] = piece`.
    pub fn random_assignment(&self, seed: u64) -> Vec<usize> {
        let mut rng = seeded_rng(seed);
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (k, p) in self.placements.iter().enumerate() {
            by_class.entry(p.class.as_str()).or_default().push(k);
        }
        let mut assignment: Vec<usize> = (0..self.placements.len()).collect();
        for slots in by_class.values() {
            let mut pieces = slots.clone();
            pieces.shuffle(&mut rng);
            for (&slot, &piece) in slots.iter().zip(&pieces) {
                assignment[slot] = piece;
            }
        }
        assignment
    }

    /// Regular `grid × grid` layout of square pieces classed by position.
    pub fn square_grid(height: usize, width: usize, grid: usize) -> Result<Self, ViewError> {
        if grid == 0 || !height.is_multiple_of(grid) || !width.is_multiple_of(grid) || height / grid != width / grid {
            return Err(ViewError::Invalid(format!(
                "square pieces need grid {grid} to divide {height}x{width} into equal squares"
            )));
        }
        let cell = height / grid;
        let labels: Vec<usize> = (0..height * width)
            .map(|i| (i / width / cell) * grid + (i % width) / cell)
            .collect();
        Self::from_label_map(height, width, grid, &labels)
    }

    /// A `grid × grid` puzzle whose interlocking edges each carry one tab and
    /// one blank, arranged in a pinwheel so every interior piece is the same
    /// shape up to rotation. Border pieces come in two further classes
    /// (edge, corner). The image must be square with cell size `size / grid`
    /// even and at least 8.
    pub fn pinwheel(size: usize, grid: usize) -> Result<Self, ViewError> {
        if grid == 0 || !size.is_multiple_of(grid) {
            return Err(ViewError::Invalid(format!("grid {grid} does not divide size {size}")));
        }
        let cell = size / grid;
        if cell < 8 || !cell.is_multiple_of(2) {
            return Err(ViewError::Invalid(format!("pinwheel pieces need an even cell size >= 8, got {cell}")));
        }
        let half = cell / 2;
        let mut tab_len = (half / 2).max(1);
        if !(half - tab_len).is_multiple_of(2) {
            tab_len += 1;
        }
        let inset = (half - tab_len) / 2;
        let depth = (cell / 8).clamp(1, inset.max(1));
        let mut labels: Vec<usize> = (0..size * size)
            .map(|i| (i / size / cell) * grid + (i % size) / cell)
            .collect();
        let mut set = |y: usize, x: usize, owner: usize| labels[y * size + x] = owner;
        for i in 0..grid {
            for j in 0..grid {
                let me = i * grid + j;
                let (y0, x0) = (i * cell, j * cell);
                if j + 1 < grid {
                    // vertical edge with the right-hand neighbour
                    let right = me + 1;
                    let xb = x0 + cell;
                    for y in y0 + inset..y0 + inset + tab_len {
                        for x in xb..xb + depth {
                            set(y, x, me);
                        }
                    }
                    for y in y0 + half + inset..y0 + half + inset + tab_len {
                        for x in xb - depth..xb {
                            set(y, x, right);
                        }
                    }
                }
                if i + 1 < grid {
                    // horizontal edge with the neighbour below
                    let below = me + grid;
                    let yb = y0 + cell;
                    for x in x0 + half + inset..x0 + half + inset + tab_len {
                        for y in yb..yb + depth {
                            set(y, x, me);
                        }
                    }
                    for x in x0 + inset..x0 + inset + tab_len {
                        for y in yb - depth..yb {
                            set(y, x, below);
                        }
                    }
                }
            }
        }
        Self::from_label_map(size, size, grid, &labels)
    }

    /// Builds shapes and placements from a per-pixel piece label map of a
    /// `grid × grid` puzzle, classing pieces as corner, edge or center.
    fn from_label_map(height: usize, width: usize, grid: usize, labels: &[usize]) -> Result<Self, ViewError> {
        let n = grid * grid;
        let mut points: Vec<Vec<(i64, i64)>> = vec![Vec::new(); n];
        for (i, &l) in labels.iter().enumerate() {
            points[l].push(((i / width) as i64, (i % width) as i64));
        }
        let class_of = |k: usize| {
            let (i, j) = (k / grid, k % grid);
            let border = [i == 0, j == 0, i + 1 == grid, j + 1 == grid].iter().filter(|b| **b).count();
            match border {
                0 => "center",
                1 => "edge",
                _ => "corner",
            }
        };
        let mut shapes: Vec<(PieceShape, Vec<(i64, i64)>)> = Vec::new();
        let mut placements = Vec::with_capacity(n);
        for (k, pts) in points.iter().enumerate() {
            let class = class_of(k);
            if !shapes.iter().any(|(s, _)| s.class == class) {
                shapes.push((PieceShape::from_points(class.to_string(), pts), pts.clone()));
            }
            let (_, canon) = shapes.iter().find(|(s, _)| s.class == class).unwrap();
            let g = find_orientation(canon, pts)
                .ok_or_else(|| ViewError::Shape(format!("generated piece {k} does not match class `{class}`")))?;
            let row = pts.iter().map(|p| p.0).min().unwrap() as usize;
            let col = pts.iter().map(|p| p.1).min().unwrap() as usize;
            placements.push(JigsawPlacement { class: class.to_string(), orientation: g, row, col });
        }
        let layout = Self { height, width, shapes: shapes.into_iter().map(|(s, _)| s).collect(), placements };
        layout.validate()?;
        Ok(layout)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("jigsaw {} {}\n", self.height, self.width);
        for shape in &self.shapes {
            let cols = shape.mask.first().map_or(0, Vec::len);
            let _ = writeln!(s, "shape {} {} {}", shape.class, shape.mask.len(), cols);
            for row in &shape.mask {
                s.extend(row.iter().map(|&b| if b { '#' } else { '.' }));
                s.push('\n');
            }
        }
        for p in &self.placements {
            let _ = writeln!(s, "piece {} {} {} {}", p.class, p.orientation.name(), p.row, p.col);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let err = |offset: usize, message: String| FormatError::Parse { offset, message };
        let mut lines = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            lines.push((offset, line.trim_end_matches(['\n', '\r'])));
            offset += line.len();
        }
        let mut it = lines.into_iter().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('%'));
        let (off, header) = it.next().ok_or_else(|| err(0, "empty jigsaw layout".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let (height, width) = match h.as_slice() {
            ["jigsaw", hh, ww] => (
                hh.parse().map_err(|_| err(off, format!("bad height `{hh}`")))?,
                ww.parse().map_err(|_| err(off, format!("bad width `{ww}`")))?,
            ),
            _ => return Err(err(off, "expected `jigsaw <height> <width>`".into())),
        };
        let mut shapes = Vec::new();
        let mut placements = Vec::new();
        while let Some((off, line)) = it.next() {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["shape", class, rows, cols] => {
                    let rows: usize = rows.parse().map_err(|_| err(off, format!("bad row count `{rows}`")))?;
                    let cols: usize = cols.parse().map_err(|_| err(off, format!("bad column count `{cols}`")))?;
                    let mut mask = Vec::with_capacity(rows);
                    for _ in 0..rows {
                        let (roff, row) = it.next().ok_or_else(|| err(text.len(), format!("shape `{class}` truncated")))?;
                        let row = row.trim();
                        if row.chars().count() != cols || row.chars().any(|ch| ch != '#' && ch != '.') {
                            return Err(err(roff, format!("shape row must be {cols} characters of '#' or '.'")));
                        }
                        mask.push(row.chars().map(|ch| ch == '#').collect());
                    }
                    shapes.push(PieceShape { class: class.to_string(), mask });
                }
                ["piece", class, orient, row, col] => {
                    let orientation =
                        Dihedral::parse(orient).ok_or_else(|| err(off, format!("unknown orientation `{orient}`")))?;
                    placements.push(JigsawPlacement {
                        class: class.to_string(),
                        orientation,
                        row: row.parse().map_err(|_| err(off, format!("bad row `{row}`")))?,
                        col: col.parse().map_err(|_| err(off, format!("bad column `{col}`")))?,
                    });
                }
                _ => return Err(err(off, format!("unrecognised line `{line}`"))),
            }
        }
        Ok(Self { height, width, shapes, placements })
    }
}

impl View {
    /// A jigsaw rearrangement where `assignment[slot]` names the piece
    /// that moves into `slot`.
    pub fn jigsaw(dims: Dims, layout: &JigsawLayout, assignment: &[usize]) -> Result<Self, ViewError> {
        if layout.height != dims.height || layout.width != dims.width {
            return Err(ViewError::Invalid(format!(
                "jigsaw layout is {}x{} but the image is {}x{}",
                layout.height, layout.width, dims.height, dims.width
            )));
        }
        let pieces = layout.pieces()?;
        let n = pieces.classes.len();
        if assignment.len() != n {
            return Err(ViewError::Invalid(format!("assignment has {} entries for {n} pieces", assignment.len())));
        }
        Permutation::new(assignment.to_vec())?;
        let mut map = vec![usize::MAX; dims.plane()];
        for (slot, &piece) in assignment.iter().enumerate() {
            if pieces.classes[slot] != pieces.classes[piece] {
                return Err(ViewError::Shape(format!(
                    "piece {piece} ({}) cannot move into slot {slot} ({})",
                    pieces.classes[piece], pieces.classes[slot]
                )));
            }
            let src = &pieces.footprints[piece];
            let dst = &pieces.footprints[slot];
            let g = find_orientation(src, dst).ok_or_else(|| {
                ViewError::Shape(format!("piece {piece} does not fit slot {slot} in any orientation"))
            })?;
            let (moved, _) = orient(src, g);
            let dst_r = dst.iter().map(|p| p.0).min().unwrap();
            let dst_c = dst.iter().map(|p| p.1).min().unwrap();
            for (&(sy, sx), (r, c)) in src.iter().zip(moved) {
                let (ty, tx) = ((r + dst_r) as usize, (c + dst_c) as usize);
                map[ty * dims.width + tx] = sy as usize * dims.width + sx as usize;
            }
        }
        let perm = Permutation::new(map)?;
        Ok(Self::from_plane_perm(ViewKind::Jigsaw { assignment: assignment.to_vec() }, dims, perm))
    }

    pub fn random_jigsaw(dims: Dims, layout: &JigsawLayout, seed: u64) -> Result<Self, ViewError> {
        Self::jigsaw(dims, layout, &layout.random_assignment(seed))
    }
}
