use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{cast_slice, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error(
        "grid dimensions must be >= 1 (frames={frames}, tokens_per_frame={tokens_per_frame}, hidden_dim={hidden_dim})"
    )]
    EmptyDimension {
        frames: usize,
        tokens_per_frame: usize,
        hidden_dim: usize,
    },
    #[error("data holds {found} values, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },
}

/// Provenance of a visual token. Ordered lexicographically by `(frame, position)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId {
    pub frame: u32,
    pub position: u32,
}

impl TokenId {
    pub fn new(frame: usize, position: usize) -> Self {
        Self {
            frame: frame as u32,
            position: position as u32,
        }
    }

    /// Row index in a grid with `tokens_per_frame` tokens per frame.
    pub fn row(self, tokens_per_frame: usize) -> usize {
        self.frame as usize * tokens_per_frame + self.position as usize
    }

    pub fn from_row(row: usize, tokens_per_frame: usize) -> Self {
        Self::new(row / tokens_per_frame, row % tokens_per_frame)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}p{}", self.frame, self.position)
    }
}

/// Post-projector visual tokens, `frames × tokens_per_frame` rows of width
/// `hidden_dim`, row-major by `(frame, position)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualTokenGrid<T> {
    frames: usize,
    tokens_per_frame: usize,
    hidden_dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> VisualTokenGrid<T> {
    pub fn new(frames: usize, tokens_per_frame: usize, hidden_dim: usize, data: Vec<T>) -> Result<Self, GridError> {
        if frames == 0 || tokens_per_frame == 0 || hidden_dim == 0 {
            return Err(GridError::EmptyDimension {
                frames,
                tokens_per_frame,
                hidden_dim,
            });
        }
        let expected = frames * tokens_per_frame * hidden_dim;
        if data.len() != expected {
            return Err(GridError::ShapeMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { row: pos / hidden_dim });
        }
        Ok(Self {
            frames,
            tokens_per_frame,
            hidden_dim,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn len(&self) -> usize {
        self.frames * self.tokens_per_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, id: TokenId) -> &[T] {
        self.row_at(id.row(self.tokens_per_frame))
    }

    pub fn row_at(&self, row: usize) -> &[T] {
        &self.data[row * self.hidden_dim..(row + 1) * self.hidden_dim]
    }

    /// All token ids in row order.
    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.len()).map(|r| TokenId::from_row(r, self.tokens_per_frame))
    }

    pub fn cast<U: Scalar>(&self) -> VisualTokenGrid<U> {
        VisualTokenGrid {
            frames: self.frames,
            tokens_per_frame: self.tokens_per_frame,
            hidden_dim: self.hidden_dim,
            data: cast_slice(&self.data),
        }
    }
}

/// Text prompt tokens. Carried alongside the visual tokens, never merged or pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTokens<T> {
    hidden_dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> TextTokens<T> {
    pub fn new(hidden_dim: usize, data: Vec<T>) -> Result<Self, GridError> {
        if hidden_dim == 0 {
            return Err(GridError::EmptyDimension {
                frames: 1,
                tokens_per_frame: 1,
                hidden_dim,
            });
        }
        if !data.len().is_multiple_of(hidden_dim) {
            return Err(GridError::ShapeMismatch {
                expected: (data.len() / hidden_dim + 1) * hidden_dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { row: pos / hidden_dim });
        }
        Ok(Self { hidden_dim, data })
    }

    pub fn empty(hidden_dim: usize) -> Self {
        Self {
            hidden_dim,
            data: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.hidden_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }

    pub fn cast<U: Scalar>(&self) -> TextTokens<U> {
        TextTokens {
            hidden_dim: self.hidden_dim,
            data: cast_slice(&self.data),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            VisualTokenGrid::<f32>::new(0, 1, 1, vec![]),
            Err(GridError::EmptyDimension { .. })
        ));
        assert_eq!(
            VisualTokenGrid::<f32>::new(2, 2, 2, vec![0.0; 7]),
            Err(GridError::ShapeMismatch { expected: 8, found: 7 })
        );
        let mut data = vec![0.0f64; 8];
        data[5] = f64::NAN;
        assert_eq!(
            VisualTokenGrid::new(2, 2, 2, data),
            Err(GridError::NonFinite { row: 2 })
        );
    }

    #[test]
    fn token_id_order_is_frame_major() {
        let mut ids = vec![TokenId::new(1, 0), TokenId::new(0, 5), TokenId::new(0, 1)];
        ids.sort();
        assert_eq!(ids, vec![TokenId::new(0, 1), TokenId::new(0, 5), TokenId::new(1, 0)]);
    }

    #[test]
    fn row_indexing_is_a_bijection() {
        let (frames, n) = (5, 7);
        let mut seen = vec![false; frames * n];
        for f in 0..frames {
            for p in 0..n {
                let id = TokenId::new(f, p);
                let r = id.row(n);
                assert!(!seen[r]);
                seen[r] = true;
                assert_eq!(TokenId::from_row(r, n), id);
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }
}
