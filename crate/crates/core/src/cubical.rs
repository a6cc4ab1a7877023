//! Superlevel-set persistent homology of a density grid.
//!
//! The grid is read as a cubical complex in which every grid entry is a
//! 2-cell (square) and every edge and vertex carries the maximum value of the
//! squares it bounds. The superlevel set `K^a` (all cells with value `>= a`)
//! is then a genuine cubical complex for every `a`. Persistence is computed by
//! reducing the Z2 boundary matrix over cells sorted by decreasing value.
//!
//! Cells are addressed in doubled coordinates `(p, q)` with
//! `0 <= p <= 2 nx`, `0 <= q <= 2 nv`; the dimension of a cell is the number
//! of odd coordinates, and grid entry `(i, j)` is the square `(2i+1, 2j+1)`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::DensityGrid;

#[derive(Debug, Error)]
pub enum DiagramError {
    #[error("malformed diagram csv at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePair {
    pub dim: usize,
    pub birth: f64,
    pub death: f64,
    /// The class never dies in the filtration; its death is pinned to the
    /// global minimum of the grid.
    #[serde(default)]
    pub essential: bool,
}

impl PersistencePair {
    pub fn lifetime(&self) -> f64 {
        self.birth - self.death
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub pairs: Vec<PersistencePair>,
}

impl PersistenceDiagram {
    pub fn of_dim(&self, dim: usize) -> impl Iterator<Item = &PersistencePair> + '_ {
        self.pairs.iter().filter(move |p| p.dim == dim)
    }

    /// Number of classes of dimension `dim` alive in `K^a`.
    pub fn betti(&self, dim: usize, a: f64) -> usize {
        self.of_dim(dim).filter(|p| p.birth >= a && (p.death < a || p.essential)).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "dim,birth,death")?;
        for p in &self.pairs {
            writeln!(out, "{},{},{}", p.dim, p.birth, p.death)?;
        }
        Ok(())
    }

    /// Parse a `dim,birth,death` CSV. The essential flag is not part of the
    /// file format, so parsed pairs are all finite pairs.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, DiagramError> {
        let mut pairs = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != "dim,birth,death" {
                    return Err(DiagramError::Parse { line: 1, reason: format!("expected header `dim,birth,death`, got `{line}`") });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| DiagramError::Parse { line: i + 1, reason };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(err("expected 3 fields".into()));
            }
            pairs.push(PersistencePair {
                dim: f[0].parse().map_err(|e| err(format!("{e}")))?,
                birth: f[1].parse().map_err(|e| err(format!("{e}")))?,
                death: f[2].parse().map_err(|e| err(format!("{e}")))?,
                essential: false,
            });
        }
        Ok(Self { pairs })
    }
}

/// Point of a projected persistence diagram. Serialized as `[birth, lifetime]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct PpdPoint {
    pub birth: f64,
    pub lifetime: f64,
}

impl PpdPoint {
    pub const fn new(birth: f64, lifetime: f64) -> Self {
        Self { birth, lifetime }
    }

    pub fn dist2(&self, other: &PpdPoint) -> f64 {
        let (db, dl) = (self.birth - other.birth, self.lifetime - other.lifetime);
        db * db + dl * dl
    }
}

impl From<[f64; 2]> for PpdPoint {
    fn from([birth, lifetime]: [f64; 2]) -> Self {
        Self { birth, lifetime }
    }
}

impl From<PpdPoint> for [f64; 2] {
    fn from(p: PpdPoint) -> Self {
        [p.birth, p.lifetime]
    }
}

/// Projected persistence diagram: `(birth, birth - death)` for one dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ppd {
    pub dim: usize,
    pub points: Vec<PpdPoint>,
}

impl Ppd {
    pub fn new(dim: usize, points: Vec<PpdPoint>) -> Self {
        Self { dim, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lifetimes(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lifetime).collect()
    }
}

pub fn project(pd: &PersistenceDiagram, dim: usize) -> Ppd {
    Ppd {
        dim,
        points: pd.of_dim(dim).map(|p| PpdPoint::new(p.birth, p.birth - p.death)).collect(),
    }
}

/// Cell layout of the doubled-coordinate complex.
struct Complex {
    cols: usize,
    values: Vec<f64>,
}

impl Complex {
    fn new(grid: &DensityGrid) -> Self {
        let (nx, nv) = (grid.spec.nx, grid.spec.nv);
        let (rows, cols) = (2 * nx + 1, 2 * nv + 1);
        let mut values = vec![f64::NEG_INFINITY; rows * cols];
        for i in 0..nx {
            for j in 0..nv {
                let val = grid.get(i, j);
                // The square and all its faces.
                for p in 2 * i..=2 * i + 2 {
                    for q in 2 * j..=2 * j + 2 {
                        let c = &mut values[p * cols + q];
                        if val > *c {
                            *c = val;
                        }
                    }
                }
            }
        }
        Self { cols, values }
    }

    fn dim(&self, cell: usize) -> usize {
        let (p, q) = (cell / self.cols, cell % self.cols);
        (p & 1) + (q & 1)
    }

    fn boundary(&self, cell: usize, out: &mut Vec<usize>) {
        out.clear();
        let (p, q) = (cell / self.cols, cell % self.cols);
        if p & 1 == 1 {
            out.push((p - 1) * self.cols + q);
            out.push((p + 1) * self.cols + q);
        }
        if q & 1 == 1 {
            out.push(p * self.cols + q - 1);
            out.push(p * self.cols + q + 1);
        }
    }
}

/// XOR of two sorted index lists.
fn symmetric_difference(a: &[usize], b: &[usize], out: &mut Vec<usize>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

/// Superlevel persistence pairs in dimensions 0 and 1.
///
/// Pairs with zero persistence are dropped, except the single essential H0
/// class, whose death is the global minimum of the grid.
pub fn superlevel_persistence(grid: &DensityGrid) -> PersistenceDiagram {
    let complex = Complex::new(grid);
    let n = complex.values.len();

    // Decreasing value; faces before cofaces on ties; then cell index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        complex.values[b]
            .total_cmp(&complex.values[a])
            .then(complex.dim(a).cmp(&complex.dim(b)))
            .then(a.cmp(&b))
    });
    let mut position = vec![0usize; n];
    for (pos, &cell) in order.iter().enumerate() {
        position[cell] = pos;
    }

    // pivot_col[row] = filtration position of the column whose lowest entry is `row`.
    let mut pivot_col: Vec<Option<usize>> = vec![None; n];
    let mut reduced: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut cleared = vec![false; n];
    let mut faces = Vec::with_capacity(4);
    let mut scratch = Vec::new();

    // Squares first so their pivots clear the matching edge columns.
    for dim in [2, 1] {
        for pos in 0..n {
            let cell = order[pos];
            if complex.dim(cell) != dim || cleared[pos] {
                continue;
            }
            complex.boundary(cell, &mut faces);
            let mut col: Vec<usize> = faces.iter().map(|&f| position[f]).collect();
            col.sort_unstable();
            while let Some(&low) = col.last() {
                match pivot_col[low] {
                    Some(other) => {
                        symmetric_difference(&col, &reduced[other], &mut scratch);
                        std::mem::swap(&mut col, &mut scratch);
                    }
                    None => {
                        pivot_col[low] = Some(pos);
                        cleared[low] = true;
                        break;
                    }
                }
            }
            reduced[pos] = col;
        }
    }

    let global_min = grid.min();
    let mut pairs = Vec::new();
    let mut essential = Vec::new();
    for pos in 0..n {
        let cell = order[pos];
        let dim = complex.dim(cell);
        if dim == 2 {
            continue;
        }
        let birth = complex.values[cell];
        match pivot_col[pos] {
            Some(killer) => {
                let death = complex.values[order[killer]];
                if birth > death {
                    pairs.push(PersistencePair { dim, birth, death, essential: false });
                }
            }
            // Positive cell never killed: vertices always count, edges only
            // if their own column reduced to zero.
            None if dim == 0 || reduced[pos].is_empty() => {
                essential.push(PersistencePair { dim, birth, death: global_min, essential: true });
            }
            None => {}
        }
    }
    // Most persistent first within each dimension, essential classes leading.
    essential.extend(pairs);
    let mut pairs = essential;
    pairs.sort_by(|a, b| {
        a.dim
            .cmp(&b.dim)
            .then(b.essential.cmp(&a.essential))
            .then(b.lifetime().total_cmp(&a.lifetime()))
            .then(b.birth.total_cmp(&a.birth))
    });
    PersistenceDiagram { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force Betti numbers of `K^a` for the T-construction: union-find
    /// over included vertices and edges for b0, and b1 = b0 - chi.
    pub(crate) fn brute_betti(grid: &DensityGrid, a: f64) -> (usize, i64) {
        let (nx, nv) = (grid.spec.nx, grid.spec.nv);
        let included = |i: usize, j: usize| grid.get(i, j) >= a;
        let vcols = nv + 1;
        let vid = |p: usize, q: usize| p * vcols + q;
        let mut vert = vec![false; (nx + 1) * vcols];
        let mut parent: Vec<usize> = (0..vert.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut squares = 0i64;
        let mut edges = std::collections::HashSet::new();
        for i in 0..nx {
            for j in 0..nv {
                if !included(i, j) {
                    continue;
                }
                squares += 1;
                let corners = [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)];
                for k in 0..4 {
                    vert[corners[k]] = true;
                    let (u, w) = (corners[k], corners[(k + 1) % 4]);
                    edges.insert((u.min(w), u.max(w)));
                }
            }
        }
        for &(u, w) in &edges {
            let (ru, rw) = (find(&mut parent, u), find(&mut parent, w));
            if ru != rw {
                parent[ru] = rw;
            }
        }
        let vcount = vert.iter().filter(|v| **v).count();
        let b0 = (0..vert.len()).filter(|&v| vert[v] && find(&mut parent, v) == v).count();
        let chi = vcount as i64 - edges.len() as i64 + squares;
        (b0, b0 as i64 - chi)
    }

    fn check_against_oracle(grid: &DensityGrid) {
        let pd = superlevel_persistence(grid);
        let mut levels = grid.values.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        for &a in &levels {
            let (b0, b1) = brute_betti(grid, a);
            assert_eq!(pd.betti(0, a), b0, "b0 at {a} for {grid:?}\n{pd:?}");
            assert_eq!(pd.betti(1, a) as i64, b1, "b1 at {a} for {grid:?}\n{pd:?}");
        }
    }

    #[test]
    fn constant_grid_has_single_essential_class() {
        let grid = DensityGrid::from_rows(&vec![vec![0.6; 5]; 4]).unwrap();
        let pd = superlevel_persistence(&grid);
        assert_eq!(pd.pairs, vec![PersistencePair { dim: 0, birth: 0.6, death: 0.6, essential: true }]);
    }

    #[test]
    fn two_plateaus_joined_by_ridge() {
        let b = 0.1;
        let rows = vec![
            vec![b, b, b],
            vec![b, 1.0, b],
            vec![b, 0.3, b],
            vec![b, 0.3, b],
            vec![b, 0.3, b],
            vec![b, 0.8, b],
            vec![b, b, b],
        ];
        let grid = DensityGrid::from_rows(&rows).unwrap();
        let pd = superlevel_persistence(&grid);
        let h0: Vec<(f64, f64)> = pd.of_dim(0).map(|p| (p.birth, p.death)).collect();
        assert_eq!(h0, vec![(1.0, 0.1), (0.8, 0.3)]);
        assert_eq!(pd.of_dim(1).count(), 0);
        check_against_oracle(&grid);
    }

    #[test]
    fn annulus_has_one_loop() {
        let rows = vec![
            vec![0.1, 0.1, 0.1, 0.1, 0.1],
            vec![0.1, 1.0, 1.0, 1.0, 0.1],
            vec![0.1, 1.0, 0.2, 1.0, 0.1],
            vec![0.1, 1.0, 1.0, 1.0, 0.1],
            vec![0.1, 0.1, 0.1, 0.1, 0.1],
        ];
        let grid = DensityGrid::from_rows(&rows).unwrap();
        let pd = superlevel_persistence(&grid);
        let h0: Vec<(f64, f64)> = pd.of_dim(0).map(|p| (p.birth, p.death)).collect();
        let h1: Vec<(f64, f64)> = pd.of_dim(1).map(|p| (p.birth, p.death)).collect();
        assert_eq!(h0, vec![(1.0, 0.1)]);
        assert_eq!(h1, vec![(1.0, 0.2)]);
        check_against_oracle(&grid);
    }

    #[test]
    fn diagonal_neighbours_are_connected() {
        let grid = DensityGrid::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.9]]).unwrap();
        let pd = superlevel_persistence(&grid);
        // The shared corner vertex carries 1.0, so both squares join at 0.9.
        assert_eq!(pd.of_dim(0).count(), 1);
        check_against_oracle(&grid);
    }

    #[test]
    fn projection_examples() {
        let pd = PersistenceDiagram {
            pairs: vec![
                PersistencePair { dim: 0, birth: 0.9, death: 0.2, essential: false },
                PersistencePair { dim: 1, birth: 0.4, death: 0.4, essential: false },
            ],
        };
        let p0 = project(&pd, 0);
        assert_eq!(p0.points.len(), 1);
        assert_eq!(p0.points[0].birth, 0.9);
        assert!((p0.points[0].lifetime - 0.7).abs() < 1e-15);
        assert_eq!(project(&pd, 1).points, vec![PpdPoint::new(0.4, 0.0)]);
        assert!(project(&PersistenceDiagram::default(), 0).is_empty());
    }

    #[test]
    fn csv_roundtrip_and_header_check() {
        let grid = DensityGrid::from_rows(&[vec![0.1, 0.5, 0.1], vec![0.9, 0.2, 1.0]]).unwrap();
        let pd = superlevel_persistence(&grid);
        let mut buf = Vec::new();
        pd.write_csv(&mut buf).unwrap();
        let back = PersistenceDiagram::read_csv(&buf[..]).unwrap();
        assert_eq!(back.pairs.len(), pd.pairs.len());
        for (a, b) in back.pairs.iter().zip(&pd.pairs) {
            assert_eq!((a.dim, a.birth, a.death), (b.dim, b.birth, b.death));
        }
        assert!(PersistenceDiagram::read_csv(&b"a,b,c\n"[..]).is_err());
    }

    #[test]
    fn ppd_point_serializes_as_pair() {
        let p = PpdPoint::new(0.5, 0.25);
        assert_eq!(serde_json::to_string(&p).unwrap(), "[0.5,0.25]");
        let q: PpdPoint = serde_json::from_str("[0.5,0.25]").unwrap();
        assert_eq!(p, q);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn grid_strategy() -> impl Strategy<Value = DensityGrid> {
            (2usize..=12, 2usize..=12).prop_flat_map(|(nx, nv)| {
                prop::collection::vec(1u8..=9, nx * nv).prop_map(move |levels| {
                    let rows: Vec<Vec<f64>> =
                        levels.chunks(nv).map(|r| r.iter().map(|&l| l as f64 / 10.0).collect()).collect();
                    DensityGrid::from_rows(&rows).unwrap()
                })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn betti_curves_match_brute_force(grid in grid_strategy()) {
                check_against_oracle(&grid);
            }

            #[test]
            fn pairs_are_ordered_and_bounded(grid in grid_strategy()) {
                let pd = superlevel_persistence(&grid);
                prop_assert_eq!(pd.pairs.iter().filter(|p| p.essential).count(), 1);
                for p in &pd.pairs {
                    prop_assert!(p.birth >= p.death);
                    prop_assert!(p.dim <= 1);
                    prop_assert!(p.essential || p.birth > p.death);
                }
            }

            #[test]
            fn monotone_reparameterization(grid in grid_strategy()) {
                let g = |v: f64| v * v * v + 0.5 * v;
                let mapped = DensityGrid::from_values(grid.spec, grid.values.iter().map(|&v| g(v)).collect()).unwrap();
                let a = superlevel_persistence(&grid);
                let b = superlevel_persistence(&mapped);
                prop_assert_eq!(a.pairs.len(), b.pairs.len());
                let mut expected: Vec<(usize, f64, f64)> = a.pairs.iter().map(|p| (p.dim, g(p.birth), g(p.death))).collect();
                let mut got: Vec<(usize, f64, f64)> = b.pairs.iter().map(|p| (p.dim, p.birth, p.death)).collect();
                let key = |x: &(usize, f64, f64), y: &(usize, f64, f64)| {
                    x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.total_cmp(&y.2))
                };
                expected.sort_by(key);
                got.sort_by(key);
                prop_assert_eq!(expected, got);
            }
        }
    }
}
