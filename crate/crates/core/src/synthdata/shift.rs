use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Affine "style" of a domain: `x = scale * (rotation * z) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainShift {
    /// Row-major `d x d` orthogonal matrix.
    pub rotation: Vec<f64>,
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DomainShift {
    pub fn identity(d: usize) -> Self {
        let mut rotation = vec![0.0; d * d];
        for i in 0..d {
            rotation[i * d + i] = 1.0;
        }
        Self {
            rotation,
            scale: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }

    /// Haar-random rotation, log-uniform per-feature scale in
    /// `[exp(-scale_spread), exp(scale_spread)]`, Gaussian bias with standard
    /// deviation `bias_scale`.
    pub fn random<R: Rng + ?Sized>(d: usize, bias_scale: f64, scale_spread: f64, rng: &mut R) -> Self {
        let gauss = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
        let qr = gauss.qr();
        let mut q = qr.q();
        let r = qr.r();
        // Sign correction makes the distribution uniform over O(d).
        for j in 0..d {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let spread = Uniform::new_inclusive(-scale_spread, scale_spread).expect("valid scale range");
        let scale = (0..d).map(|_| spread.sample(rng).exp()).collect();
        let bias = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                bias_scale * z
            })
            .collect::<Vec<f64>>();
        Self {
            rotation: to_row_major(&q),
            scale,
            bias,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Moves a fraction `t` of the way toward `other`.
    ///
    /// Scale and bias are blended linearly; the rotation is the orthogonal
    /// polar factor of the linear blend, so the result stays orthogonal.
    /// `t = 1` returns `other` exactly.
    pub fn interpolate(&self, other: &DomainShift, t: f64) -> DomainShift {
        if t == 1.0 {
            return other.clone();
        }
        if t == 0.0 {
            return self.clone();
        }
        let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect() };
        let d = self.dim();
        let blend = DMatrix::from_row_slice(d, d, &lerp(&self.rotation, &other.rotation));
        let svd = blend.svd(true, true);
        let u = svd.u.expect("svd computed u");
        let v_t = svd.v_t.expect("svd computed v_t");
        DomainShift {
            rotation: to_row_major(&(u * v_t)),
            scale: lerp(&self.scale, &other.scale),
            bias: lerp(&self.bias, &other.bias),
        }
    }

    /// `max |R^T R - I|` over entries.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim();
        let r = DMatrix::from_row_slice(d, d, &self.rotation);
        let gram = r.transpose() * &r;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                let rz: f64 = self.rotation[i * d..(i + 1) * d].iter().zip(z).map(|(r, v)| r * v).sum();
                self.scale[i] * rz + self.bias[i]
            })
            .collect()
    }
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}
