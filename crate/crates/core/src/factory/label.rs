use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Number of discrepancy types: spatial and frequency-domain.
pub const N_TYPE: usize = 2;

/// Kind of local perturbation applied inside a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiscrepancyType {
    Spatial = 0,
    Frequency = 1,
}

impl DiscrepancyType {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Self::Spatial),
            1 => Ok(Self::Frequency),
            _ => bail!(Domain, "unknown discrepancy type {i}"),
        }
    }
}

/// Joint (location, type) label of a synthesized discrepancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DiscrepancyLabel {
    pub y_loc: usize,
    pub y_type: usize,
    pub y: usize,
}

impl DiscrepancyLabel {
    pub fn new(y_loc: usize, y_type: usize, n_loc: usize, n_type: usize) -> Result<Self> {
        if y_loc >= n_loc {
            bail!(Domain, "location {y_loc} out of range for {n_loc} patches");
        }
        let y = encode_label(y_loc, y_type, n_type)?;
        Ok(Self { y_loc, y_type, y })
    }
}

/// Flat class code `y_loc * n_type + y_type`.
pub fn encode_label(y_loc: usize, y_type: usize, n_type: usize) -> Result<usize> {
    if n_type == 0 || y_type >= n_type {
        bail!(Domain, "type {y_type} out of range for {n_type} types");
    }
    Ok(y_loc * n_type + y_type)
}

/// Inverse of [`encode_label`]: returns `(y_loc, y_type)`.
pub fn decode_label(y: usize, n_type: usize, n_classes: usize) -> Result<(usize, usize)> {
    if n_type == 0 || y >= n_classes {
        bail!(Domain, "class {y} out of range for {n_classes} classes");
    }
    Ok((y / n_type, y % n_type))
}

/// Shape of the label space: a `rows x cols` patch grid, the number of
/// discrepancy types, and how many prototype slots precede the first
/// discrepancy class (0 or 1; slot 0 is then a reserved pristine class).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLayout {
    pub rows: usize,
    pub cols: usize,
    pub n_type: usize,
    pub reserve_offset: usize,
}

impl ClassLayout {
    pub fn new(rows: usize, cols: usize, reserve_offset: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            bail!(Domain, "grid must have at least one row and column");
        }
        if reserve_offset > 1 {
            bail!(Domain, "reserve offset must be 0 or 1");
        }
        Ok(Self {
            rows,
            cols,
            n_type: N_TYPE,
            reserve_offset,
        })
    }

    pub fn n_loc(&self) -> usize {
        self.rows * self.cols
    }

    /// Number of discrepancy classes.
    pub fn n_classes(&self) -> usize {
        self.n_loc() * self.n_type
    }

    pub fn n_prototypes(&self) -> usize {
        self.n_classes() + self.reserve_offset
    }

    pub fn proto_index(&self, class: usize) -> usize {
        class + self.reserve_offset
    }

    pub fn class_of_proto(&self, proto: usize) -> Option<usize> {
        proto
            .checked_sub(self.reserve_offset)
            .filter(|&c| c < self.n_classes())
    }

    pub fn class_protos(&self) -> std::ops::Range<usize> {
        self.reserve_offset..self.n_prototypes()
    }

    pub fn encode(&self, y_loc: usize, y_type: usize) -> Result<usize> {
        if y_loc >= self.n_loc() {
            bail!(
                Domain,
                "location {y_loc} out of range for {} patches",
                self.n_loc()
            );
        }
        encode_label(y_loc, y_type, self.n_type)
    }

    pub fn decode(&self, y: usize) -> Result<(usize, usize)> {
        decode_label(y, self.n_type, self.n_classes())
    }

    pub fn pos(&self, y: usize) -> usize {
        y / self.n_type
    }
}

impl Default for ClassLayout {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            n_type: N_TYPE,
            reserve_offset: 1,
        }
    }
}
