use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct View {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl View {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector with named matrix windows.
///
/// Views are appended in order, so they are disjoint and tile `theta`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    theta: Vec<f64>,
    views: IndexMap<String, View>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-initialized `rows × cols` view.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<View> {
        let name = name.into();
        if self.views.contains_key(&name) {
            return Err(Error::DuplicateView(name));
        }
        let view = View {
            offset: self.theta.len(),
            rows,
            cols,
        };
        self.theta.resize(self.theta.len() + rows * cols, 0.0);
        self.views.insert(name, view);
        Ok(view)
    }

    /// Appends a view with Glorot-uniform entries.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut RngStream) -> Result<View> {
        let view = self.add(name, rows, cols)?;
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        for v in &mut self.theta[view.range()] {
            *v = rng.uniform_range(-bound, bound);
        }
        Ok(view)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::Shape {
                op: "set_theta",
                lhs: (self.theta.len(), 1),
                rhs: (theta.len(), 1),
            });
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.views.contains_key(name)
    }

    pub fn views(&self) -> impl Iterator<Item = (&str, &View)> {
        self.views.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn view(&self, name: &str) -> Result<View> {
        self.views
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownView(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<Matrix> {
        let v = self.view(name)?;
        Matrix::from_vec(v.rows, v.cols, self.theta[v.range()].to_vec())
    }

    pub fn slice(&self, name: &str) -> Result<&[f64]> {
        let v = self.view(name)?;
        Ok(&self.theta[v.range()])
    }

    pub fn set(&mut self, name: &str, value: &Matrix) -> Result<()> {
        let v = self.view(name)?;
        if (v.rows, v.cols) != value.shape() {
            return Err(Error::Shape {
                op: "ParamStore::set",
                lhs: (v.rows, v.cols),
                rhs: value.shape(),
            });
        }
        self.theta[v.range()].copy_from_slice(value.as_slice());
        Ok(())
    }

    /// `grad[view(name)] += g`
    pub fn accumulate(&self, grad: &mut [f64], name: &str, g: &Matrix) -> Result<()> {
        let v = self.view(name)?;
        if v.len() != g.len() {
            return Err(Error::Shape {
                op: "ParamStore::accumulate",
                lhs: (v.rows, v.cols),
                rhs: g.shape(),
            });
        }
        for (a, b) in grad[v.range()].iter_mut().zip(g.as_slice()) {
            *a += b;
        }
        Ok(())
    }

    pub fn accumulate_slice(&self, grad: &mut [f64], name: &str, g: &[f64]) -> Result<()> {
        let v = self.view(name)?;
        if v.len() != g.len() {
            return Err(Error::Shape {
                op: "ParamStore::accumulate",
                lhs: (v.rows, v.cols),
                rhs: (g.len(), 1),
            });
        }
        for (a, b) in grad[v.range()].iter_mut().zip(g) {
            *a += b;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn views_tile_theta() {
        let mut p = ParamStore::new();
        p.add("a", 2, 3).unwrap();
        p.add("b", 1, 4).unwrap();
        let mut covered = 0;
        for (_, v) in p.views() {
            assert_eq!(v.offset, covered);
            covered += v.len();
        }
        assert_eq!(covered, p.len());
        assert!(matches!(p.add("a", 1, 1), Err(Error::DuplicateView(_))));
    }

    #[test]
    fn set_get_accumulate() {
        let mut p = ParamStore::new();
        p.add("w", 2, 2).unwrap();
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        p.set("w", &m).unwrap();
        assert_eq!(p.get("w").unwrap(), m);
        let mut g = vec![0.0; p.len()];
        p.accumulate(&mut g, "w", &m).unwrap();
        p.accumulate(&mut g, "w", &m).unwrap();
        assert_eq!(g, vec![2.0, 4.0, 6.0, 8.0]);
        assert!(p.get("nope").is_err());
    }
}
