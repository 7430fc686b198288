use std::fmt;

/// Axis of a [`Tensor3`](crate::tensor::Tensor3) named in shape errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeAxis {
    Rows,
    Columns,
    Channels,
    /// Inner (contracted) dimension of a channel-wise product.
    Inner,
}

impl fmt::Display for ShapeAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ShapeAxis::Rows => "rows",
            ShapeAxis::Columns => "columns",
            ShapeAxis::Channels => "channels",
            ShapeAxis::Inner => "inner dimension",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: expected {expected}, found {found}")]
    Shape {
        axis: ShapeAxis,
        expected: usize,
        found: usize,
    },

    #[error("column range {start}..{end} is invalid for a tensor with {columns} columns")]
    ColumnRange {
        start: usize,
        end: usize,
        columns: usize,
    },

    #[error("partition covers {partition} columns but the tensor has {columns}")]
    Partition { partition: usize, columns: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class `{0}` has too few samples")]
    EmptyClass(String),

    #[error("dictionary is identically zero; no Lipschitz constant exists")]
    ZeroDictionary,

    #[error("solver diverged (non-finite iterate) at iteration {iter}")]
    Diverged { iter: usize },

    #[error("pixel (row {row}, col {col}): integration sector contains no aperture samples")]
    EmptySector { row: usize, col: usize },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(axis: ShapeAxis, expected: usize, found: usize) -> Self {
        Error::Shape {
            axis,
            expected,
            found,
        }
    }
}
