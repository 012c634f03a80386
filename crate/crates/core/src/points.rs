use crate::error::{Result, TsneError};
use crate::real::Real;
use crate::tensor_io::InputMatrix;

/// Two-dimensional point set stored as one array per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Points<T> {
    pub coords: [Vec<T>; 2],
}

impl<T: Real> Points<T> {
    pub fn new(xs: Vec<T>, ys: Vec<T>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(TsneError::Shape(format!(
                "coordinate arrays differ in length ({} vs {})",
                xs.len(),
                ys.len()
            )));
        }
        Ok(Points { coords: [xs, ys] })
    }

    pub fn zeros(n: usize) -> Self {
        Points {
            coords: [vec![T::zero(); n], vec![T::zero(); n]],
        }
    }

    pub fn from_pairs(pairs: &[[T; 2]]) -> Self {
        Points {
            coords: [
                pairs.iter().map(|p| p[0]).collect(),
                pairs.iter().map(|p| p[1]).collect(),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.coords[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline(always)]
    pub fn get(&self, i: usize) -> [T; 2] {
        [self.coords[0][i], self.coords[1][i]]
    }

    /// Mean of each coordinate, accumulated in index order.
    pub fn mean(&self) -> [T; 2] {
        let n = T::lit(self.len() as f64);
        let mut out = [T::zero(); 2];
        for (c, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for &v in &self.coords[c] {
                acc += v.as_f64();
            }
            *slot = T::lit(acc) / n;
        }
        out
    }

    /// Row-major N×2 matrix view of the points.
    pub fn to_matrix(&self) -> Result<InputMatrix<T>> {
        let mut data = Vec::with_capacity(self.len() * 2);
        for i in 0..self.len() {
            data.push(self.coords[0][i]);
            data.push(self.coords[1][i]);
        }
        InputMatrix::new(self.len(), 2, data)
    }

    pub fn from_matrix(m: &InputMatrix<T>) -> Result<Self> {
        if m.n_dims() != 2 {
            return Err(TsneError::Shape(format!(
                "embedding must have 2 columns, found {}",
                m.n_dims()
            )));
        }
        let rows = m.data().chunks_exact(2);
        Ok(Points {
            coords: [rows.clone().map(|r| r[0]).collect(), rows.map(|r| r[1]).collect()],
        })
    }

    pub fn cast<U: Real>(&self) -> Points<U> {
        Points {
            coords: [
                self.coords[0].iter().map(|v| U::lit(v.as_f64())).collect(),
                self.coords[1].iter().map(|v| U::lit(v.as_f64())).collect(),
            ],
        }
    }
}
