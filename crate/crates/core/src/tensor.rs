//! Third-order tensors (rows × columns × channels) and the channel-wise
//! linear algebra the rest of the crate is built on.
//!
//! Storage is channel-major: every channel is a contiguous `rows × cols`
//! matrix, so a channel can be handed to `ndarray` as an ordinary matrix.
//! Signals are `d × 1 × T`, dictionaries `d × K × T` and codes `K × 1 × T`.
//! Images are vectorized column-major into the `d` axis.

use std::io::{Read, Write};
use std::ops::Range;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Error, Result, ShapeAxis};

/// Magic prefix of the binary tensor container.
pub const CONTAINER_MAGIC: [u8; 8] = *b"TENSOR3\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    // shape (channels, rows, cols)
    data: Array3<f64>,
}

impl Tensor3 {
    /// All-zero tensor. Panics if any dimension is zero.
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        assert!(
            rows > 0 && cols > 0 && channels > 0,
            "tensor dimensions must be positive, got {rows}x{cols}x{channels}"
        );
        Tensor3 {
            data: Array3::zeros((channels, rows, cols)),
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut out = Tensor3::zeros(rows, cols, channels);
        for ((t, r, c), v) in out.data.indexed_iter_mut() {
            *v = f(r, c, t);
        }
        out
    }

    /// Builds a tensor from per-channel matrices of identical shape.
    pub fn from_channels(channels: Vec<Array2<f64>>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::Format("no channels supplied".into()))?;
        let (rows, cols) = first.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::Format("empty channel matrix".into()));
        }
        let mut data = Array3::zeros((channels.len(), rows, cols));
        for (t, m) in channels.iter().enumerate() {
            if m.nrows() != rows {
                return Err(Error::shape(ShapeAxis::Rows, rows, m.nrows()));
            }
            if m.ncols() != cols {
                return Err(Error::shape(ShapeAxis::Columns, cols, m.ncols()));
            }
            data.index_axis_mut(Axis(0), t).assign(m);
        }
        Ok(Tensor3 { data })
    }

    /// A `d × 1 × T` signal from per-channel vectors.
    pub fn from_signal(channels: &[Vec<f64>]) -> Result<Self> {
        let mats = channels
            .iter()
            .map(|v| Array2::from_shape_vec((v.len(), 1), v.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(e.to_string()))?;
        Tensor3::from_channels(mats)
    }

    pub fn rows(&self) -> usize {
        self.data.dim().1
    }

    pub fn cols(&self) -> usize {
        self.data.dim().2
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    /// `(rows, cols, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows(), self.cols(), self.channels())
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(channel, row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.data[(channel, row, col)] = value;
    }

    pub fn channel(&self, t: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), t)
    }

    pub fn channel_mut(&mut self, t: usize) -> ArrayViewMut2<'_, f64> {
        self.data.index_axis_mut(Axis(0), t)
    }

    pub fn raw(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn map(&self, f: impl FnMut(f64) -> f64) -> Tensor3 {
        let mut f = f;
        Tensor3 {
            data: self.data.mapv(&mut f),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Sum of absolute values of all entries.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, alpha: f64) -> Tensor3 {
        Tensor3 {
            data: &self.data * alpha,
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor3) {
        assert_eq!(self.shape(), other.shape());
        self.data.scaled_add(alpha, &other.data);
    }

    pub fn add(&self, other: &Tensor3) -> Tensor3 {
        assert_eq!(self.shape(), other.shape());
        Tensor3 {
            data: &self.data + &other.data,
        }
    }

    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        assert_eq!(self.shape(), other.shape());
        Tensor3 {
            data: &self.data - &other.data,
        }
    }

    /// Columns `range` of every channel.
    pub fn select_columns(&self, range: Range<usize>) -> Result<Tensor3> {
        self.check_range(&range)?;
        if range.is_empty() {
            return Err(Error::ColumnRange {
                start: range.start,
                end: range.end,
                columns: self.cols(),
            });
        }
        Ok(Tensor3 {
            data: self.data.slice(s![.., .., range]).to_owned(),
        })
    }

    pub fn column(&self, j: usize) -> Tensor3 {
        Tensor3 {
            data: self.data.slice(s![.., .., j..j + 1]).to_owned(),
        }
    }

    /// Channels `range` of the tensor.
    pub fn select_channels(&self, range: Range<usize>) -> Result<Tensor3> {
        if range.is_empty() || range.end > self.channels() {
            return Err(Error::Config(format!(
                "channel range {}..{} invalid for {} channels",
                range.start,
                range.end,
                self.channels()
            )));
        }
        Ok(Tensor3 {
            data: self.data.slice(s![range, .., ..]).to_owned(),
        })
    }

    /// Picks an arbitrary list of channels, in order.
    pub fn pick_channels(&self, which: &[usize]) -> Result<Tensor3> {
        if which.is_empty() {
            return Err(Error::Config("no channels selected".into()));
        }
        if let Some(&bad) = which.iter().find(|&&t| t >= self.channels()) {
            return Err(Error::shape(ShapeAxis::Channels, self.channels(), bad + 1));
        }
        Ok(Tensor3 {
            data: self.data.select(Axis(0), which),
        })
    }

    /// Concatenates tensors along the column axis.
    pub fn hcat(parts: &[&Tensor3]) -> Result<Tensor3> {
        Self::concat(parts, Axis(2))
    }

    /// Concatenates tensors along the channel axis.
    pub fn channel_cat(parts: &[&Tensor3]) -> Result<Tensor3> {
        Self::concat(parts, Axis(0))
    }

    fn concat(parts: &[&Tensor3], axis: Axis) -> Result<Tensor3> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Format("nothing to concatenate".into()))?;
        for p in &parts[1..] {
            if p.rows() != first.rows() {
                return Err(Error::shape(ShapeAxis::Rows, first.rows(), p.rows()));
            }
            if axis == Axis(2) && p.channels() != first.channels() {
                return Err(Error::shape(
                    ShapeAxis::Channels,
                    first.channels(),
                    p.channels(),
                ));
            }
            if axis == Axis(0) && p.cols() != first.cols() {
                return Err(Error::shape(ShapeAxis::Columns, first.cols(), p.cols()));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(axis, &views).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Tensor3 { data })
    }

    /// Stacks every channel vertically into a single-channel `(d·T) × n × 1`
    /// tensor.
    pub fn stack_channels(&self) -> Tensor3 {
        let (d, n, t) = self.shape();
        let mut out = Tensor3::zeros(d * t, n, 1);
        for ch in 0..t {
            out.data
                .slice_mut(s![0, ch * d..(ch + 1) * d, ..])
                .assign(&self.channel(ch));
        }
        out
    }

    /// Repeats a single-channel tensor across `channels` channels.
    pub fn replicate_channels(&self, channels: usize) -> Result<Tensor3> {
        if self.channels() != 1 {
            return Err(Error::shape(ShapeAxis::Channels, 1, self.channels()));
        }
        let c0 = self.channel(0);
        Ok(Tensor3::from_fn(self.rows(), self.cols(), channels, |r, c, _| {
            c0[(r, c)]
        }))
    }

    /// Per-channel transpose.
    pub fn transpose(&self) -> Tensor3 {
        let mut out = Tensor3::zeros(self.cols(), self.rows(), self.channels());
        for t in 0..self.channels() {
            out.channel_mut(t).assign(&self.channel(t).t());
        }
        out
    }

    /// Per-channel Gram matrix `M^(t)ᵀ M^(t)`.
    pub fn gram(&self) -> Tensor3 {
        let mut out = Tensor3::zeros(self.cols(), self.cols(), self.channels());
        for t in 0..self.channels() {
            let m = self.channel(t);
            out.channel_mut(t).assign(&m.t().dot(&m));
        }
        out
    }

    /// Channel-wise `self^(t)ᵀ · other^(t)`.
    pub fn transpose_mul(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.channels() != other.channels() {
            return Err(Error::shape(
                ShapeAxis::Channels,
                self.channels(),
                other.channels(),
            ));
        }
        if self.rows() != other.rows() {
            return Err(Error::shape(ShapeAxis::Inner, self.rows(), other.rows()));
        }
        let mut out = Tensor3::zeros(self.cols(), other.cols(), self.channels());
        for t in 0..self.channels() {
            out.channel_mut(t)
                .assign(&self.channel(t).t().dot(&other.channel(t)));
        }
        Ok(out)
    }

    /// Euclidean norm of each row's tube (the `T` values at row `k` of a
    /// one-column tensor).
    pub fn tube_l2_norms(&self) -> Result<Vec<f64>> {
        if self.cols() != 1 {
            return Err(Error::shape(ShapeAxis::Columns, 1, self.cols()));
        }
        Ok((0..self.rows())
            .map(|k| {
                (0..self.channels())
                    .map(|t| self.get(k, 0, t).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }

    /// Euclidean norm of each partition block (all entries of the block
    /// across all channels). Class blocks come first, the shared block last.
    pub fn group_l2_norms(&self, part: &ColumnPartition) -> Result<Vec<f64>> {
        if self.cols() != 1 {
            return Err(Error::shape(ShapeAxis::Columns, 1, self.cols()));
        }
        part.check_total(self.rows())?;
        Ok(part
            .blocks()
            .map(|(_, range)| {
                let mut acc = 0.0;
                for t in 0..self.channels() {
                    for k in range.clone() {
                        acc += self.get(k, 0, t).powi(2);
                    }
                }
                acc.sqrt()
            })
            .collect())
    }

    /// Left-rotates the columns inside `block` by `shift`: column `j` of the
    /// block moves to position `(j - shift) mod width`. Columns outside the
    /// block are untouched.
    pub fn circular_shift_columns(&self, block: Range<usize>, shift: i64) -> Result<Tensor3> {
        self.check_range(&block)?;
        let width = block.len();
        let mut out = self.clone();
        if width == 0 {
            return Ok(out);
        }
        let s = shift.rem_euclid(width as i64) as usize;
        if s == 0 {
            return Ok(out);
        }
        for t in 0..self.channels() {
            let src = self.channel(t);
            let mut dst = out.channel_mut(t);
            for i in 0..width {
                let from = block.start + (i + s) % width;
                dst.column_mut(block.start + i).assign(&src.column(from));
            }
        }
        Ok(out)
    }

    /// Rotates the rows inside `block` the same way `circular_shift_columns`
    /// rotates columns; used to carry codes between shifted dictionaries.
    pub fn circular_shift_rows(&self, block: Range<usize>, shift: i64) -> Result<Tensor3> {
        if block.end > self.rows() || block.start > block.end {
            return Err(Error::ColumnRange {
                start: block.start,
                end: block.end,
                columns: self.rows(),
            });
        }
        Ok(self
            .transpose()
            .circular_shift_columns(block, shift)?
            .transpose())
    }

    fn check_range(&self, range: &Range<usize>) -> Result<()> {
        if range.start > range.end || range.end > self.cols() {
            return Err(Error::ColumnRange {
                start: range.start,
                end: range.end,
                columns: self.cols(),
            });
        }
        Ok(())
    }

    /// Writes the binary container: magic, then `rows`, `cols`, `channels`
    /// as little-endian `u64`, then channel-major little-endian `f64`s (each
    /// channel stored column by column).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&CONTAINER_MAGIC)?;
        for dim in [self.rows(), self.cols(), self.channels()] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for t in 0..self.channels() {
            let ch = self.channel(t);
            for c in 0..self.cols() {
                for r in 0..self.rows() {
                    buf.extend_from_slice(&ch[(r, c)].to_le_bytes());
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Tensor3> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != CONTAINER_MAGIC {
            return Err(Error::Format("bad tensor container magic".into()));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *d = usize::try_from(u64::from_le_bytes(b))
                .map_err(|_| Error::Format("dimension overflows usize".into()))?;
        }
        let [rows, cols, channels] = dims;
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::Format(format!(
                "zero dimension in container header {rows}x{cols}x{channels}"
            )));
        }
        let count = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Format("container too large".into()))?;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        let mut out = Tensor3::zeros(rows, cols, channels);
        let mut chunks = bytes.chunks_exact(8);
        for t in 0..channels {
            let mut ch = out.channel_mut(t);
            for c in 0..cols {
                for rr in 0..rows {
                    let b: [u8; 8] = chunks.next().unwrap().try_into().unwrap();
                    ch[(rr, c)] = f64::from_le_bytes(b);
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Tensor3> {
        let f = std::fs::File::open(path)?;
        Tensor3::read_from(std::io::BufReader::new(f))
    }
}

/// Channel-wise product: output channel `t` is `m^(t) · n^(t)`.
pub fn channelwise_matmul(m: &Tensor3, n: &Tensor3) -> Result<Tensor3> {
    if m.channels() != n.channels() {
        return Err(Error::shape(ShapeAxis::Channels, m.channels(), n.channels()));
    }
    if m.cols() != n.rows() {
        return Err(Error::shape(ShapeAxis::Inner, m.cols(), n.rows()));
    }
    let mut out = Tensor3::zeros(m.rows(), n.cols(), m.channels());
    for t in 0..m.channels() {
        out.channel_mut(t).assign(&m.channel(t).dot(&n.channel(t)));
    }
    Ok(out)
}

/// Identifies a block of dictionary columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockId {
    /// Zero-based class index.
    Class(usize),
    Shared,
}

/// Column layout `[D_1, …, D_C, D_0]`: one block per class followed by the
/// (possibly empty) shared block.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ColumnPartition {
    class_sizes: Vec<usize>,
    shared: usize,
}

impl ColumnPartition {
    pub fn new(class_sizes: Vec<usize>, shared: usize) -> Result<Self> {
        if class_sizes.is_empty() && shared == 0 {
            return Err(Error::Config("partition has no columns".into()));
        }
        if let Some(i) = class_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("class block {i} is empty")));
        }
        Ok(ColumnPartition {
            class_sizes,
            shared,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn class_sizes(&self) -> &[usize] {
        &self.class_sizes
    }

    pub fn shared_size(&self) -> usize {
        self.shared
    }

    pub fn total(&self) -> usize {
        self.class_sizes.iter().sum::<usize>() + self.shared
    }

    pub fn class_range(&self, c: usize) -> Range<usize> {
        let start: usize = self.class_sizes[..c].iter().sum();
        start..start + self.class_sizes[c]
    }

    pub fn shared_range(&self) -> Range<usize> {
        let start: usize = self.class_sizes.iter().sum();
        start..start + self.shared
    }

    pub fn range(&self, id: BlockId) -> Range<usize> {
        match id {
            BlockId::Class(c) => self.class_range(c),
            BlockId::Shared => self.shared_range(),
        }
    }

    /// Every block in column order (classes, then the shared block when it
    /// is non-empty).
    pub fn blocks(&self) -> impl Iterator<Item = (BlockId, Range<usize>)> + '_ {
        let classes = (0..self.num_classes()).map(|c| (BlockId::Class(c), self.class_range(c)));
        let shared = (self.shared > 0).then(|| (BlockId::Shared, self.shared_range()));
        classes.chain(shared)
    }

    pub fn block_of(&self, column: usize) -> Option<BlockId> {
        self.blocks()
            .find(|(_, r)| r.contains(&column))
            .map(|(id, _)| id)
    }

    pub(crate) fn check_total(&self, k: usize) -> Result<()> {
        if self.total() != k {
            return Err(Error::Partition {
                partition: self.total(),
                columns: k,
            });
        }
        Ok(())
    }
}
