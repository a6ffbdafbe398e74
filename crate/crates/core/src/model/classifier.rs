use crate::autodiff::{cosine, log_sum_exp, norm, softmax_in_place, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_SCALE: f64 = 10.0;
pub const DEFAULT_BIAS: f64 = -5.0;

/// `softmax(w · cos(z, W_c) + b)` over the class columns `W_c` of a `d x C`
/// matrix. Columns are normalized at use time.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineClassifier {
    pub weight: Tensor,
    pub scale: f64,
    pub bias: f64,
}

impl CosineClassifier {
    pub fn new(weight: Tensor, scale: f64, bias: f64) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::InvalidInput(format!(
                "classifier weight must be d x C, got {:?}",
                weight.shape()
            )));
        }
        Ok(Self { weight, scale, bias })
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        let n = self.classes();
        self.weight.data().iter().skip(c).step_by(n).copied().collect()
    }

    pub fn cosines(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "embedding has {} dims, classifier {}",
                z.len(),
                self.dim()
            )));
        }
        if norm(z) == 0.0 {
            return Err(Error::InvalidInput("zero embedding has no direction".into()));
        }
        Ok((0..self.classes()).map(|c| cosine(z, &self.column(c))).collect())
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .cosines(z)?
            .into_iter()
            .map(|c| self.scale * c + self.bias)
            .collect())
    }

    pub fn classify(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.logits(z)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// `-log p(class)`.
    pub fn loss(&self, z: &[f64], class: usize) -> Result<f64> {
        if class >= self.classes() {
            return Err(Error::InvalidInput(format!("class {class} out of {}", self.classes())));
        }
        let l = self.logits(z)?;
        Ok(log_sum_exp(&l) - l[class])
    }
}

/// Logits `[B, C]` of the classifier with weight node `w [d, C]` and scalar
/// scale / bias nodes.
pub(crate) fn logits_node(g: &mut Graph, z: NodeId, w: NodeId, scale: NodeId, bias: NodeId) -> Result<NodeId> {
    let wt = g.transpose(w)?;
    let cos = g.cosine_matrix(z, wt)?;
    g.scale_shift(cos, scale, bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye2() -> CosineClassifier {
        CosineClassifier::new(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), 1.0, 0.0).unwrap()
    }

    #[test]
    fn closed_form_two_class() {
        let c = eye2();
        let p = c.classify(&[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((c.loss(&[1.0, 0.0], 0).unwrap() - 0.31326168751822286).abs() < 1e-12);
        assert_eq!(c.classify(&[5.0, 0.0]).unwrap(), p);
    }

    #[test]
    fn zero_scale_is_uniform() {
        let mut c = eye2();
        c.scale = 0.0;
        assert_eq!(c.classify(&[0.3, -2.0]).unwrap(), vec![0.5, 0.5]);
        assert!(c.classify(&[0.0, 0.0]).is_err());
        assert!(c.loss(&[1.0, 0.0], 2).is_err());
    }
}
