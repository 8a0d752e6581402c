use super::{MultiIndex, Shape};
use crate::error::{Error, Result};

/// Largest slice volume for which [`SliceIndexing::Auto`] builds an offset table.
pub const OFFSET_TABLE_LIMIT: usize = 1 << 20;

/// How in-slice positions are turned into multi-indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SliceIndexing {
    /// Table when the slice volume is at most [`OFFSET_TABLE_LIMIT`], odometer otherwise.
    #[default]
    Auto,
    /// Precomputed per-position offsets shared by every slice.
    Table,
    /// Incremental counter over the slice's modes.
    Odometer,
}

#[derive(Clone, Debug)]
struct OffsetTable {
    // d coordinates per in-slice position; the slice mode entry is 0.
    coords: Vec<u32>,
    // Flat offset of each position relative to the slice anchor.
    linear: Vec<usize>,
}

/// Partition of every mode-k slice into tiles of `tile_volume` consecutive
/// elements (in slice enumeration order). The last tile of a slice is short
/// when `tile_volume` does not divide the slice volume.
#[derive(Clone, Debug)]
pub struct TileGeometry {
    shape: Shape,
    mode: usize,
    other_modes: Vec<usize>,
    slice_volume: usize,
    tile_volume: usize,
    tiles_per_slice: usize,
    table: Option<OffsetTable>,
}

/// One tile: 0-based slice, first in-slice position, element count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub slice: usize,
    pub start: usize,
    pub len: usize,
}

impl TileGeometry {
    pub fn new(shape: &Shape, mode: usize, tile_volume: usize) -> Result<Self> {
        Self::with_indexing(shape, mode, tile_volume, SliceIndexing::Auto)
    }

    pub fn with_indexing(
        shape: &Shape,
        mode: usize,
        tile_volume: usize,
        indexing: SliceIndexing,
    ) -> Result<Self> {
        shape.check_mode(mode)?;
        let slice_volume = shape.slice_volume(mode);
        if tile_volume == 0 || tile_volume > slice_volume {
            return Err(Error::Parameter(format!(
                "tile volume {tile_volume} is outside [1, {slice_volume}]"
            )));
        }
        let other_modes: Vec<usize> = (0..shape.ndims()).filter(|&m| m != mode).collect();
        let fits_u32 = shape.dims().iter().all(|&n| n <= u32::MAX as usize + 1);
        let build_table = match indexing {
            SliceIndexing::Auto => slice_volume <= OFFSET_TABLE_LIMIT && fits_u32,
            SliceIndexing::Table if !fits_u32 => {
                return Err(Error::Parameter("extents too large for an offset table".into()))
            }
            SliceIndexing::Table => true,
            SliceIndexing::Odometer => false,
        };
        let mut geom = TileGeometry {
            shape: shape.clone(),
            mode,
            other_modes,
            slice_volume,
            tile_volume,
            tiles_per_slice: slice_volume.div_ceil(tile_volume),
            table: None,
        };
        if build_table {
            geom.table = Some(geom.build_table());
        }
        Ok(geom)
    }

    fn build_table(&self) -> OffsetTable {
        let d = self.shape.ndims();
        let mut coords = Vec::with_capacity(self.slice_volume * d);
        let mut linear = Vec::with_capacity(self.slice_volume);
        let mut cursor = self.cursor();
        for _ in 0..self.slice_volume {
            coords.extend(cursor.coords.iter().map(|&c| c as u32));
            linear.push(cursor.linear);
            cursor.step_odometer();
        }
        OffsetTable { coords, linear }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    /// Modes other than the slice mode, in increasing order.
    pub fn other_modes(&self) -> &[usize] {
        &self.other_modes
    }

    pub fn slice_count(&self) -> usize {
        self.shape.dim(self.mode)
    }

    pub fn slice_volume(&self) -> usize {
        self.slice_volume
    }

    pub fn tile_volume(&self) -> usize {
        self.tile_volume
    }

    /// `⌈N_S / N_T⌉`.
    pub fn tiles_per_slice(&self) -> usize {
        self.tiles_per_slice
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_per_slice * self.slice_count()
    }

    pub fn uses_table(&self) -> bool {
        self.table.is_some()
    }

    /// Tile `t` in slice-major order.
    pub fn tile(&self, t: usize) -> Tile {
        let slice = t / self.tiles_per_slice;
        let start = (t % self.tiles_per_slice) * self.tile_volume;
        let len = self.tile_volume.min(self.slice_volume - start);
        Tile { slice, start, len }
    }

    /// 1-based multi-index of the `ii`-th element (1-based) of slice `n`
    /// (1-based): the slice anchor plus the shared in-slice offset.
    pub fn slice_ind2sub(&self, n: usize, ii: usize) -> Result<MultiIndex> {
        if n == 0 || n > self.slice_count() {
            return Err(Error::Index(format!(
                "slice {n} is outside [1, {}]",
                self.slice_count()
            )));
        }
        if ii == 0 || ii > self.slice_volume {
            return Err(Error::Index(format!(
                "in-slice offset {ii} is outside [1, {}]",
                self.slice_volume
            )));
        }
        let mut cursor = self.cursor();
        cursor.seek(n - 1, ii - 1);
        Ok(MultiIndex::new(cursor.coords().iter().map(|c| c + 1).collect::<Vec<_>>()))
    }

    /// A cursor reusable across tiles; call [`SliceCursor::seek`] before use.
    pub fn cursor(&self) -> SliceCursor<'_> {
        SliceCursor {
            geom: self,
            coords: vec![0; self.shape.ndims()],
            linear: 0,
            anchor: 0,
            pos: 0,
        }
    }
}

/// Walks the elements of one slice in linear-index order, yielding the
/// 0-based multi-index and flat offset of each. Stepping never divides.
pub struct SliceCursor<'g> {
    geom: &'g TileGeometry,
    coords: Vec<usize>,
    linear: usize,
    anchor: usize,
    pos: usize,
}

impl<'g> SliceCursor<'g> {
    /// Positions the cursor on element `pos` (0-based) of slice `slice` (0-based).
    pub fn seek(&mut self, slice: usize, pos: usize) {
        let g = self.geom;
        self.anchor = slice * g.shape.strides()[g.mode];
        self.pos = pos;
        match &g.table {
            Some(_) => self.load_from_table(),
            None => {
                let mut rest = pos;
                let mut offset = 0;
                for &m in &g.other_modes {
                    let n = g.shape.dim(m);
                    self.coords[m] = rest % n;
                    rest /= n;
                    offset += self.coords[m] * g.shape.strides()[m];
                }
                self.linear = self.anchor + offset;
            }
        }
        self.coords[g.mode] = slice;
    }

    #[inline]
    fn load_from_table(&mut self) {
        let table = self.geom.table.as_ref().expect("offset table");
        let d = self.coords.len();
        let row = &table.coords[self.pos * d..(self.pos + 1) * d];
        for &m in &self.geom.other_modes {
            self.coords[m] = row[m] as usize;
        }
        self.linear = self.anchor + table.linear[self.pos];
    }

    #[inline]
    fn step_odometer(&mut self) {
        let shape = &self.geom.shape;
        for &m in &self.geom.other_modes {
            let stride = shape.strides()[m];
            self.coords[m] += 1;
            self.linear += stride;
            if self.coords[m] < shape.dim(m) {
                return;
            }
            self.linear -= shape.dim(m) * stride;
            self.coords[m] = 0;
        }
    }

    /// Moves to the next element of the slice. Stepping past the last
    /// element leaves the cursor in an unspecified position.
    #[inline]
    pub fn advance(&mut self) {
        self.pos += 1;
        if self.geom.table.is_some() {
            if self.pos < self.geom.slice_volume {
                self.load_from_table();
            }
        } else {
            self.step_odometer();
        }
    }

    /// 0-based multi-index of the current element.
    #[inline]
    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    /// 0-based flat offset of the current element.
    #[inline]
    pub fn linear(&self) -> usize {
        self.linear
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ind2sub, sub2ind};

    fn shape(dims: &[usize]) -> Shape {
        Shape::new(dims.to_vec()).unwrap()
    }

    #[test]
    fn slice_ind2sub_examples() {
        let g = TileGeometry::new(&shape(&[2, 3, 2]), 1, 4).unwrap();
        assert_eq!(g.slice_ind2sub(2, 1).unwrap().coords(), &[1, 2, 1]);

        // Oracle: elements of Y(:, 2, :) in increasing linear index.
        let s = shape(&[2, 3, 2]);
        let slice: Vec<MultiIndex> = (1..=12)
            .map(|i| ind2sub(&s, i).unwrap())
            .filter(|idx| idx.coords()[1] == 2)
            .collect();
        assert_eq!(slice[2].coords(), &[1, 2, 2]);
        assert_eq!(g.slice_ind2sub(2, 3).unwrap(), slice[2]);
    }

    #[test]
    fn slice_ind2sub_range_checks() {
        let g = TileGeometry::new(&shape(&[2, 3, 2]), 1, 2).unwrap();
        assert!(g.slice_ind2sub(0, 1).is_err());
        assert!(g.slice_ind2sub(4, 1).is_err());
        assert!(g.slice_ind2sub(1, 5).is_err());
    }

    #[test]
    fn tile_volume_bounds() {
        let s = shape(&[3, 4, 5]);
        assert!(TileGeometry::new(&s, 0, 0).is_err());
        assert!(TileGeometry::new(&s, 0, 21).is_err());
        assert!(TileGeometry::new(&s, 3, 1).is_err());
        let g = TileGeometry::new(&s, 0, 7).unwrap();
        assert_eq!(g.tiles_per_slice(), 3);
        assert_eq!(g.tile(2), Tile { slice: 0, start: 14, len: 6 });
        assert_eq!(g.tile(3), Tile { slice: 1, start: 0, len: 7 });
    }

    fn collect_slices(g: &TileGeometry) -> Vec<Vec<(usize, Vec<usize>)>> {
        let mut cursor = g.cursor();
        (0..g.slice_count())
            .map(|n| {
                cursor.seek(n, 0);
                (0..g.slice_volume())
                    .map(|_| {
                        let item = (cursor.linear(), cursor.coords().to_vec());
                        cursor.advance();
                        item
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn slices_cover_every_element_once_in_linear_order() {
        for dims in [vec![2, 3, 2], vec![4, 1, 3, 2], vec![3, 3, 3, 3], vec![5], vec![2, 7]] {
            let s = shape(&dims);
            for mode in 0..s.ndims() {
                for indexing in [SliceIndexing::Table, SliceIndexing::Odometer] {
                    let g = TileGeometry::with_indexing(&s, mode, 1, indexing).unwrap();
                    let mut seen = vec![false; s.volume()];
                    for (n, slice) in collect_slices(&g).into_iter().enumerate() {
                        let mut prev = None;
                        for (linear, coords) in slice {
                            assert_eq!(coords[mode], n);
                            let idx = MultiIndex::new(coords.iter().map(|c| c + 1).collect::<Vec<_>>());
                            assert_eq!(sub2ind(&s, &idx).unwrap(), linear + 1);
                            assert!(!seen[linear]);
                            seen[linear] = true;
                            assert!(prev.is_none_or(|p| p < linear));
                            prev = Some(linear);
                        }
                    }
                    assert!(seen.into_iter().all(|x| x));
                }
            }
        }
    }

    #[test]
    fn table_and_odometer_agree_from_any_seek() {
        let s = shape(&[3, 4, 2, 5]);
        for mode in 0..4 {
            let t = TileGeometry::with_indexing(&s, mode, 1, SliceIndexing::Table).unwrap();
            let o = TileGeometry::with_indexing(&s, mode, 1, SliceIndexing::Odometer).unwrap();
            assert!(t.uses_table() && !o.uses_table());
            let (mut ct, mut co) = (t.cursor(), o.cursor());
            for n in 0..s.dim(mode) {
                for start in [0, 1, 5, t.slice_volume() - 1] {
                    ct.seek(n, start);
                    co.seek(n, start);
                    for _ in start..t.slice_volume() {
                        assert_eq!(ct.coords(), co.coords());
                        assert_eq!(ct.linear(), co.linear());
                        ct.advance();
                        co.advance();
                    }
                }
            }
        }
    }

    #[test]
    fn tiles_partition_each_slice() {
        let s = shape(&[3, 4, 5]);
        for nt in 1..=15 {
            let g = TileGeometry::new(&s, 0, nt).unwrap();
            let mut covered = vec![0usize; s.volume()];
            let mut cursor = g.cursor();
            for t in 0..g.tile_count() {
                let tile = g.tile(t);
                cursor.seek(tile.slice, tile.start);
                for _ in 0..tile.len {
                    covered[cursor.linear()] += 1;
                    cursor.advance();
                }
            }
            assert!(covered.iter().all(|&c| c == 1), "N_T = {nt}");
        }
    }
}
