use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::numerics::{sigmoid, Matrix, RngStream};

/// Graph-convolutional GRU cell used as a jump map.
///
/// ```text
/// H  = σ(L X W_xz + L Z W_hz)
/// R  = σ(L X W_xr + L Z W_hr)
/// Z̃  = tanh(L X W_xh + L (R ⊙ Z) W_hh)
/// Z⁺ = H ⊙ Z + (1 − H) ⊙ Z̃
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GcgruParams {
    pub nx: usize,
    pub nz: usize,
    pub w_xz: String,
    pub w_hz: String,
    pub w_xr: String,
    pub w_hr: String,
    pub w_xh: String,
    pub w_hh: String,
}

#[derive(Debug, Clone)]
pub struct GcgruCache {
    z: Matrix,
    lx: Matrix,
    lz: Matrix,
    h: Matrix,
    r: Matrix,
    lrz: Matrix,
    cand: Matrix,
}

struct Weights {
    xz: Matrix,
    hz: Matrix,
    xr: Matrix,
    hr: Matrix,
    xh: Matrix,
    hh: Matrix,
}

impl GcgruParams {
    pub fn new(name: &str, nx: usize, nz: usize) -> Self {
        let v = |s: &str| format!("{name}.{s}");
        Self {
            nx,
            nz,
            w_xz: v("w_xz"),
            w_hz: v("w_hz"),
            w_xr: v("w_xr"),
            w_hr: v("w_hr"),
            w_xh: v("w_xh"),
            w_hh: v("w_hh"),
        }
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        for (name, rows) in self.names().iter().zip([self.nx, self.nz, self.nx, self.nz, self.nx, self.nz]) {
            params.add_glorot(*name, rows, self.nz, rng)?;
        }
        Ok(())
    }

    pub fn names(&self) -> [&str; 6] {
        [&self.w_xz, &self.w_hz, &self.w_xr, &self.w_hr, &self.w_xh, &self.w_hh]
    }

    fn weights(&self, params: &ParamStore) -> Result<Weights> {
        Ok(Weights {
            xz: params.get(&self.w_xz)?,
            hz: params.get(&self.w_hz)?,
            xr: params.get(&self.w_xr)?,
            hr: params.get(&self.w_hr)?,
            xh: params.get(&self.w_xh)?,
            hh: params.get(&self.w_hh)?,
        })
    }

    pub fn forward(&self, laplacian: &Matrix, z: &Matrix, x: &Matrix, params: &ParamStore) -> Result<(Matrix, GcgruCache)> {
        let n = laplacian.rows();
        if z.shape() != (n, self.nz) || x.shape() != (n, self.nx) {
            return Err(Error::Shape {
                op: "gcgru",
                lhs: z.shape(),
                rhs: x.shape(),
            });
        }
        let w = self.weights(params)?;
        let lx = laplacian.matmul(x)?;
        let lz = laplacian.matmul(z)?;
        let h = lx.matmul(&w.xz)?.add(&lz.matmul(&w.hz)?).map(sigmoid);
        let r = lx.matmul(&w.xr)?.add(&lz.matmul(&w.hr)?).map(sigmoid);
        let lrz = laplacian.matmul(&r.hadamard(z))?;
        let cand = lx.matmul(&w.xh)?.add(&lrz.matmul(&w.hh)?).map(f64::tanh);
        let out = Matrix::from_fn(n, self.nz, |i, j| {
            let hv = h[(i, j)];
            hv * z[(i, j)] + (1.0 - hv) * cand[(i, j)]
        });
        Ok((
            out,
            GcgruCache {
                z: z.clone(),
                lx,
                lz,
                h,
                r,
                lrz,
                cand,
            },
        ))
    }

    /// Cotangent on `Z` given the cotangent on `Z⁺`; weight gradients are
    /// added into `dtheta`.
    pub fn backward(
        &self,
        laplacian: &Matrix,
        params: &ParamStore,
        cache: &GcgruCache,
        lambda: &Matrix,
        dtheta: &mut [f64],
    ) -> Result<Matrix> {
        let w = self.weights(params)?;
        let GcgruCache {
            z,
            lx,
            lz,
            h,
            r,
            lrz,
            cand,
        } = cache;

        let d_h = lambda.hadamard(&z.sub(cand));
        let mut dz = lambda.hadamard(h);
        let d_cand = lambda.zip_map(h, |l, hv| l * (1.0 - hv));

        let d_cand_pre = d_cand.zip_map(cand, |d, c| d * (1.0 - c * c));
        params.accumulate(dtheta, &self.w_xh, &lx.t_matmul(&d_cand_pre)?)?;
        params.accumulate(dtheta, &self.w_hh, &lrz.t_matmul(&d_cand_pre)?)?;
        let d_rz = laplacian.t_matmul(&d_cand_pre.matmul_t(&w.hh)?)?;
        let d_r = d_rz.hadamard(z);
        dz.add_assign(&d_rz.hadamard(r));

        let d_r_pre = d_r.zip_map(r, |d, rv| d * rv * (1.0 - rv));
        params.accumulate(dtheta, &self.w_xr, &lx.t_matmul(&d_r_pre)?)?;
        params.accumulate(dtheta, &self.w_hr, &lz.t_matmul(&d_r_pre)?)?;
        let mut d_lz = d_r_pre.matmul_t(&w.hr)?;

        let d_h_pre = d_h.zip_map(h, |d, hv| d * hv * (1.0 - hv));
        params.accumulate(dtheta, &self.w_xz, &lx.t_matmul(&d_h_pre)?)?;
        params.accumulate(dtheta, &self.w_hz, &lz.t_matmul(&d_h_pre)?)?;
        d_lz.add_assign(&d_h_pre.matmul_t(&w.hz)?);

        dz.add_assign(&laplacian.t_matmul(&d_lz)?);
        Ok(dz)
    }
}

pub fn gcgru_jump(laplacian: &Matrix, z: &Matrix, x: &Matrix, p: &GcgruParams, params: &ParamStore) -> Result<Matrix> {
    p.forward(laplacian, z, x, params).map(|(y, _)| y)
}
