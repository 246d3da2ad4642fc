use nalgebra::{DMatrix, SVD};

use crate::numerics::RandomStream;
use crate::{Error, Result};

/// Vector UV data: `P` scalar Gaussian inputs with zero labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UvSpec {
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UvData {
    pub inputs: Vec<f64>,
    pub labels: Vec<f64>,
}

pub fn generate_uv(spec: &UvSpec, rng: &mut RandomStream) -> Result<UvData> {
    if spec.p == 0 {
        return Err(Error::contract("UV dataset needs P > 0"));
    }
    Ok(UvData {
        inputs: rng.gaussians(spec.p),
        labels: vec![0.0; spec.p],
    })
}

/// Matrix sensing: `P` Gaussian `d × d` sensing matrices and a rank-`r` target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensingSpec {
    pub d: usize,
    pub r: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingData {
    pub sensing: Vec<DMatrix<f64>>,
    pub labels: Vec<f64>,
    pub target: DMatrix<f64>,
    pub rank: usize,
}

/// Draws the target as a Gaussian matrix truncated to its top `r` singular
/// values, then `P` Gaussian sensing matrices and `y_i = Tr(A_i X*)`.
pub fn generate_sensing(spec: &SensingSpec, rng: &mut RandomStream) -> Result<SensingData> {
    let SensingSpec { d, r, p } = *spec;
    if d == 0 || p == 0 || r == 0 || r > d {
        return Err(Error::contract("sensing spec needs 0 < r <= d and P > 0"));
    }
    let x0 = DMatrix::from_vec(d, d, rng.gaussians(d * d));
    let mut svd = SVD::new(x0, true, true);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    for &i in &order[r..] {
        svd.singular_values[i] = 0.0;
    }
    let target = svd.recompose().map_err(|e| Error::NumericalFailure {
        reason: e.to_string(),
        iterations: 0,
    })?;
    let sensing: Vec<DMatrix<f64>> = (0..p)
        .map(|_| DMatrix::from_vec(d, d, rng.gaussians(d * d)))
        .collect();
    let labels = sensing.iter().map(|a| a.dot(&target.transpose())).collect();
    Ok(SensingData {
        sensing,
        labels,
        target,
        rank: r,
    })
}

/// Binary classification from a random one-hidden-layer tanh teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassificationSpec {
    pub d_in: usize,
    pub train: usize,
    pub test: usize,
    pub teacher_width: usize,
}

/// Inputs are row-major; labels are `±1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationData {
    pub d_in: usize,
    pub train_inputs: Vec<f64>,
    pub train_labels: Vec<f64>,
    pub test_inputs: Vec<f64>,
    pub test_labels: Vec<f64>,
}

pub fn generate_classification(
    spec: &ClassificationSpec,
    rng: &mut RandomStream,
) -> Result<ClassificationData> {
    let ClassificationSpec {
        d_in,
        train,
        test,
        teacher_width,
    } = *spec;
    if d_in == 0 || train == 0 || teacher_width == 0 {
        return Err(Error::contract("classification spec needs positive sizes"));
    }
    let w1 = DMatrix::from_vec(teacher_width, d_in, rng.gaussians(teacher_width * d_in));
    let w2 = rng.gaussians(teacher_width);
    let s_in = 1.0 / (d_in as f64).sqrt();
    let mut label = |x: &[f64]| {
        let x = nalgebra::DVector::from_column_slice(x);
        let h = (&w1 * x * s_in).map(f64::tanh);
        let f: f64 = h.iter().zip(&w2).map(|(a, b)| a * b).sum();
        if f >= 0.0 {
            1.0
        } else {
            -1.0
        }
    };
    let train_inputs = rng.gaussians(train * d_in);
    let test_inputs = rng.gaussians(test * d_in);
    let train_labels = train_inputs.chunks(d_in).map(&mut label).collect();
    let test_labels = test_inputs.chunks(d_in).map(&mut label).collect();
    Ok(ClassificationData {
        d_in,
        train_inputs,
        train_labels,
        test_inputs,
        test_labels,
    })
}
