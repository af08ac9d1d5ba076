//! Strip geometry, wavespeed models, travel-time masks and interior quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Uniform node grid on `[x_min, x_min + (nx-1) hx] x [-(ny-1) hy, 0]`.
///
/// Row `iy` sits at depth `iy * hy`; row 0 is the accessible surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub nx: usize,
    pub hx: f64,
    pub ny: usize,
    pub hy: f64,
}

impl Grid {
    pub fn x(&self, ix: usize) -> f64 {
        self.x_min + ix as f64 * self.hx
    }

    /// Vertical coordinate (non-positive).
    pub fn y(&self, iy: usize) -> f64 {
        -(iy as f64) * self.hy
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn depth(&self) -> f64 {
        (self.ny - 1) as f64 * self.hy
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, iy: usize, ix: usize) -> usize {
        iy * self.nx + ix
    }

    /// Column index of `x` when it coincides with a node.
    pub fn column_of(&self, x: f64) -> Option<usize> {
        let s = (x - self.x_min) / self.hx;
        let i = s.round();
        if (s - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < self.nx {
            Some(i as usize)
        } else {
            None
        }
    }

    pub fn row_of(&self, depth: f64) -> Option<usize> {
        let s = depth / self.hy;
        let i = s.round();
        if (s - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < self.ny {
            Some(i as usize)
        } else {
            None
        }
    }

    pub fn nearest_column(&self, x: f64) -> usize {
        let s = ((x - self.x_min) / self.hx).round();
        s.clamp(0.0, (self.nx - 1) as f64) as usize
    }

    /// Columns `ix0 .. ix0 + nx` as a grid of their own.
    pub fn columns(&self, ix0: usize, nx: usize) -> Grid {
        Grid {
            x_min: self.x(ix0),
            nx,
            ..*self
        }
    }

    pub fn same_geometry(&self, other: &Grid) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.x_min - other.x_min).abs() < 1e-9
            && (self.hx - other.hx).abs() < 1e-12
            && (self.hy - other.hy).abs() < 1e-12
    }
}

/// Geometry of the experiment: the strip, the accessible segment `[-l, l]`,
/// the known-region radius and the final time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub depth: f64,
    pub nx: usize,
    pub ny: usize,
    pub gamma_half_width: f64,
    pub known_radius: f64,
    pub final_time: f64,
}

impl DomainSpec {
    /// Laptop-sized setup: 16 x 1 strip on a 641 x 81 grid.
    pub fn desk() -> Self {
        DomainSpec {
            x_min: -8.0,
            x_max: 8.0,
            depth: 1.0,
            nx: 641,
            ny: 81,
            gamma_half_width: 2.5,
            known_radius: 0.5,
            final_time: 2.0,
        }
    }

    /// Full-resolution setup matching the sharp pulse family.
    pub fn fine() -> Self {
        DomainSpec {
            x_min: -8.0,
            x_max: 8.0,
            depth: 1.0,
            nx: 2561,
            ny: 161,
            gamma_half_width: 3.1,
            known_radius: 0.5,
            final_time: 2.0,
        }
    }

    /// Same physical setup with the grid spacing divided by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        DomainSpec {
            nx: (self.nx - 1) * factor + 1,
            ny: (self.ny - 1) * factor + 1,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDomain(m));
        if self.nx < 3 || self.ny < 3 {
            return bad(format!("grid {} x {} is too small", self.nx, self.ny));
        }
        if !(self.x_max > self.x_min) || !(self.depth > 0.0) {
            return bad("strip has non-positive size".into());
        }
        if !(self.gamma_half_width > 0.0) {
            return bad("accessible half-width must be positive".into());
        }
        if self.gamma_half_width >= self.x_max || -self.gamma_half_width <= self.x_min {
            return bad(format!(
                "accessible segment [-{0}, {0}] does not fit inside [{1}, {2}]",
                self.gamma_half_width, self.x_min, self.x_max
            ));
        }
        if !(self.known_radius > 0.0) || !(self.final_time > 0.0) {
            return bad("known radius and final time must be positive".into());
        }
        if self.known_radius >= self.final_time {
            return bad("known radius must be smaller than the final time".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid {
            x_min: self.x_min,
            nx: self.nx,
            hx: (self.x_max - self.x_min) / (self.nx - 1) as f64,
            ny: self.ny,
            hy: self.depth / (self.ny - 1) as f64,
        }
    }
}

/// Analytic wavespeed models.
#[derive(Clone, Debug, PartialEq)]
pub enum WavespeedModel {
    /// `c(x, y) = 1 - y` (speed grows from 1 at the surface with depth).
    LinearDepth,
    Constant(f64),
}

impl WavespeedModel {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "linear-depth" => Ok(WavespeedModel::LinearDepth),
            "constant" => Ok(WavespeedModel::Constant(1.0)),
            _ => {
                if let Some(v) = name.strip_prefix("constant:") {
                    let c: f64 = v.parse().map_err(|_| Error::UnknownModel(name.to_string()))?;
                    Ok(WavespeedModel::Constant(c))
                } else {
                    Err(Error::UnknownModel(name.to_string()))
                }
            }
        }
    }

    pub fn speed(&self, _x: f64, y: f64) -> f64 {
        match *self {
            WavespeedModel::LinearDepth => 1.0 - y,
            WavespeedModel::Constant(c) => c,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            WavespeedModel::LinearDepth => "linear-depth".into(),
            WavespeedModel::Constant(c) => format!("constant:{c}"),
        }
    }
}

/// Nodal wavespeed values, shape `(ny, nx)`.
#[derive(Clone, Debug)]
pub struct WavespeedField {
    pub grid: Grid,
    pub values: Array2<f64>,
    pub label: String,
}

#[derive(Serialize, Deserialize)]
struct WsgridHeader {
    kind: String,
    grid: Grid,
    label: String,
}

impl WavespeedField {
    pub fn from_model(grid: Grid, model: &WavespeedModel) -> Self {
        let values = Array2::from_shape_fn((grid.ny, grid.nx), |(iy, ix)| model.speed(grid.x(ix), grid.y(iy)));
        WavespeedField {
            grid,
            values,
            label: model.name(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.dim() != (self.grid.ny, self.grid.nx) {
            return Err(Error::ShapeMismatch(format!(
                "wavespeed array {:?} does not match grid {} x {}",
                self.values.dim(),
                self.grid.ny,
                self.grid.nx
            )));
        }
        for ((iy, ix), &v) in self.values.indexed_iter() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidWavespeed { value: v, ix, iy });
            }
        }
        Ok(())
    }

    pub fn at(&self, iy: usize, ix: usize) -> f64 {
        self.values[[iy, ix]]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MIN, f64::max)
    }

    /// True when every row is constant, so the medium is invariant under lateral shifts.
    pub fn is_laterally_uniform(&self) -> bool {
        self.values
            .rows()
            .into_iter()
            .all(|row| row.iter().all(|&v| v == row[0]))
    }

    /// Sub-field on columns `ix0 .. ix0 + nx`.
    pub fn columns(&self, ix0: usize, nx: usize) -> WavespeedField {
        WavespeedField {
            grid: self.grid.columns(ix0, nx),
            values: self.values.slice(ndarray::s![.., ix0..ix0 + nx]).to_owned(),
            label: self.label.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = WsgridHeader {
            kind: "wsgrid".into(),
            grid: self.grid,
            label: self.label.clone(),
        };
        let payload: Vec<f64> = self.values.iter().cloned().collect();
        io::write_container(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (WsgridHeader, _) = io::read_container(path)?;
        if h.kind != "wsgrid" {
            return Err(Error::Format(format!("expected wsgrid, found {}", h.kind)));
        }
        let values =
            Array2::from_shape_vec((h.grid.ny, h.grid.nx), payload).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let f = WavespeedField {
            grid: h.grid,
            values,
            label: h.label,
        };
        f.validate()?;
        Ok(f)
    }
}

/// Builds the wavespeed from a model name or a `.wsgrid` file path.
pub fn build_wavespeed(spec: &DomainSpec, model: &str) -> Result<WavespeedField> {
    spec.validate()?;
    let grid = spec.grid();
    let field = if model.ends_with(".wsgrid") {
        let f = WavespeedField::load(Path::new(model))?;
        if !f.grid.same_geometry(&grid) {
            return Err(Error::ShapeMismatch(format!(
                "{model} has grid {:?}, domain expects {:?}",
                f.grid, grid
            )));
        }
        f
    } else {
        WavespeedField::from_model(grid, &WavespeedModel::parse(model)?)
    };
    field.validate()?;
    Ok(field)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TravelDepth {
    pub depth: f64,
    /// The column ran out before reaching travel time `r`.
    pub clamped: bool,
}

/// Depth reached from the surface point above `x` after vertical travel time `r`,
/// with `c` taken piecewise linear between nodes.
pub fn travel_time_depth(c: &WavespeedField, r: f64, x: f64) -> TravelDepth {
    let g = c.grid;
    let ix = g.nearest_column(x);
    let mut remaining = r;
    for iy in 0..g.ny - 1 {
        let (ca, cb) = (c.at(iy, ix), c.at(iy + 1, ix));
        let dc = cb - ca;
        let seg = if dc.abs() < 1e-14 * ca {
            g.hy / ca
        } else {
            g.hy * (cb / ca).ln() / dc
        };
        if seg >= remaining {
            let d = if dc.abs() < 1e-14 * ca {
                remaining * ca
            } else {
                g.hy * ca * ((remaining * dc / g.hy).exp() - 1.0) / dc
            };
            return TravelDepth {
                depth: iy as f64 * g.hy + d,
                clamped: false,
            };
        }
        remaining -= seg;
    }
    TravelDepth {
        depth: g.depth(),
        clamped: true,
    }
}

/// Nodes within travel time `radius` of the accessible segment.
#[derive(Clone, Debug)]
pub struct RegionMask {
    pub grid: Grid,
    pub radius: f64,
    pub inside: Vec<bool>,
    /// Travel time to the accessible segment, row-major.
    pub distance: Vec<f64>,
    /// Per column, the deepest node inside the mask.
    pub bottom_row: Vec<Option<usize>>,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Travel-time distance from the surface segment `|x| <= l` by Dijkstra on the
/// 8-neighbour graph; an edge costs its length times the mean endpoint slowness.
pub fn travel_time_distance(c: &WavespeedField, half_width: f64) -> Vec<f64> {
    let g = c.grid;
    let mut dist = vec![f64::INFINITY; g.len()];
    let mut heap = BinaryHeap::new();
    for ix in 0..g.nx {
        if g.x(ix).abs() <= half_width + 1e-9 * g.hx {
            dist[ix] = 0.0;
            heap.push(HeapItem(0.0, ix));
        }
    }
    let slow: Vec<f64> = c.values.iter().map(|v| 1.0 / v).collect();
    let diag = g.hx.hypot(g.hy);
    let steps: [(isize, isize, f64); 8] = [
        (-1, 0, g.hx),
        (1, 0, g.hx),
        (0, -1, g.hy),
        (0, 1, g.hy),
        (-1, -1, diag),
        (-1, 1, diag),
        (1, -1, diag),
        (1, 1, diag),
    ];
    while let Some(HeapItem(d, k)) = heap.pop() {
        if d > dist[k] {
            continue;
        }
        let (iy, ix) = ((k / g.nx) as isize, (k % g.nx) as isize);
        for &(dx, dy, len) in &steps {
            let (jx, jy) = (ix + dx, iy + dy);
            if jx < 0 || jy < 0 || jx >= g.nx as isize || jy >= g.ny as isize {
                continue;
            }
            let m = jy as usize * g.nx + jx as usize;
            let nd = d + len * 0.5 * (slow[k] + slow[m]);
            if nd < dist[m] {
                dist[m] = nd;
                heap.push(HeapItem(nd, m));
            }
        }
    }
    dist
}

/// The known region: nodes within travel time `r` of the accessible segment.
pub fn known_region_mask(spec: &DomainSpec, c: &WavespeedField) -> Result<RegionMask> {
    spec.validate()?;
    let g = c.grid;
    if travel_time_depth(c, spec.known_radius, 0.0).clamped {
        return Err(Error::InvalidDomain(format!(
            "travel time {} exceeds the strip depth",
            spec.known_radius
        )));
    }
    let distance = travel_time_distance(c, spec.gamma_half_width);
    let tol = 1e-12 * spec.known_radius.max(1.0);
    let inside: Vec<bool> = distance.iter().map(|&d| d <= spec.known_radius + tol).collect();
    let bottom_row = (0..g.nx)
        .map(|ix| (0..g.ny).rev().find(|&iy| inside[g.index(iy, ix)]))
        .collect();
    Ok(RegionMask {
        grid: g,
        radius: spec.known_radius,
        inside,
        distance,
        bottom_row,
    })
}

impl RegionMask {
    /// Every node of `grid`.
    pub fn full(grid: Grid) -> RegionMask {
        RegionMask {
            grid,
            radius: f64::INFINITY,
            inside: vec![true; grid.len()],
            distance: vec![0.0; grid.len()],
            bottom_row: vec![Some(grid.ny - 1); grid.nx],
        }
    }

    pub fn contains(&self, iy: usize, ix: usize) -> bool {
        self.inside[self.grid.index(iy, ix)]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Depth of the deepest masked node in the column nearest `x`.
    pub fn depth_at(&self, x: f64) -> Option<f64> {
        self.bottom_row[self.grid.nearest_column(x)].map(|iy| iy as f64 * self.grid.hy)
    }

    /// Quadrature weight per node: `hx hy / 4` times the number of adjacent
    /// cells whose four corners are all masked.
    pub fn cell_weights(&self) -> Vec<f64> {
        let g = self.grid;
        let mut w = vec![0.0; g.len()];
        let q = 0.25 * g.hx * g.hy;
        for iy in 0..g.ny - 1 {
            for ix in 0..g.nx - 1 {
                let k = [
                    g.index(iy, ix),
                    g.index(iy, ix + 1),
                    g.index(iy + 1, ix),
                    g.index(iy + 1, ix + 1),
                ];
                if k.iter().all(|&m| self.inside[m]) {
                    for m in k {
                        w[m] += q;
                    }
                }
            }
        }
        w
    }

    /// Stable identifier of the mask contents.
    pub fn id(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for (k, &b) in self.inside.iter().enumerate() {
            if b {
                h ^= k as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        format!("{:016x}-{}", h, self.count())
    }

    /// Mask of the full grid restricted to columns `ix0 .. ix0 + nx`.
    pub fn columns(&self, ix0: usize, nx: usize) -> RegionMask {
        let g = self.grid.columns(ix0, nx);
        let mut inside = Vec::with_capacity(g.len());
        let mut distance = Vec::with_capacity(g.len());
        for iy in 0..g.ny {
            for ix in ix0..ix0 + nx {
                inside.push(self.inside[self.grid.index(iy, ix)]);
                distance.push(self.distance[self.grid.index(iy, ix)]);
            }
        }
        RegionMask {
            grid: g,
            radius: self.radius,
            inside,
            distance,
            bottom_row: self.bottom_row[ix0..ix0 + nx].to_vec(),
        }
    }
}

/// Weighted interior pairing `sum_k w_k u_k v_k / c_k^2` over the mask.
pub fn inner_product_interior(u: &Array2<f64>, v: &Array2<f64>, c: &WavespeedField, mask: &RegionMask) -> f64 {
    let w = mask.cell_weights();
    u.iter()
        .zip(v.iter())
        .zip(c.values.iter())
        .zip(w.iter())
        .map(|(((a, b), cc), w)| w * a * b / (cc * cc))
        .sum()
}

/// Wavespeed that agrees with `c` on the mask and is extended below and beside it
/// by the nearest masked value in each column.
pub fn extend_known(c: &WavespeedField, mask: &RegionMask) -> WavespeedField {
    let g = c.grid;
    let mut out = c.clone();
    out.label = format!("{} (known part)", c.label);
    let known_cols: Vec<usize> = (0..g.nx).filter(|&ix| mask.bottom_row[ix].is_some()).collect();
    if known_cols.is_empty() {
        return out;
    }
    for ix in 0..g.nx {
        let src = match mask.bottom_row[ix] {
            Some(_) => ix,
            None => *known_cols
                .iter()
                .min_by_key(|&&k| (k as isize - ix as isize).unsigned_abs())
                .unwrap(),
        };
        let bottom = mask.bottom_row[src].unwrap();
        for iy in 0..g.ny {
            let from = if iy <= bottom && mask.contains(iy, src) {
                iy
            } else {
                bottom.min(iy)
            };
            out.values[[iy, ix]] = c.at(from, src);
        }
    }
    out
}
