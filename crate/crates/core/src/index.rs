//! Layout of the concatenated latent Gaussian vector.
//!
//! Blocks appear in the order `x`, `r`, `beta` (intercept then `Z` slopes),
//! `beta_x` (only when `x` is observed), `alpha` (intercept then `Z̃`
//! slopes). Sites come first so the joint precision is an arrowhead.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::spec::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    pub fn at(&self, i: usize) -> usize {
        debug_assert!(i < self.len);
        self.offset + i
    }
}

/// Where the latent `r` of the combined model lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RLayout {
    /// Own block (Classical and Berkson both active).
    Own(Block),
    /// `x = r` (no Berkson layer).
    AliasX,
    /// `w = r`: no classical layer, so `r` is the observed measurement.
    Observed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    X,
    R,
    Beta,
    BetaX,
    Alpha,
}

/// Index of site `i`'s `r`, or the fact that it is observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RSite {
    Latent(usize),
    Observed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentIndexMap {
    pub n: usize,
    /// `None` when `x` is observed without error (no error layers).
    pub x: Option<Block>,
    pub r: RLayout,
    pub beta: Block,
    pub beta_x: Option<usize>,
    pub alpha: Option<Block>,
    pub total: usize,
}

/// Deterministic latent layout for a validated model.
pub fn build_index_map(spec: &ModelSpec, data: &Dataset) -> LatentIndexMap {
    let n = data.n();
    let p = data.z.ncols();
    let q = data.z_tilde.ncols();
    let layers = spec.layers;
    let mut offset = 0;
    let mut take = |len: usize| {
        let b = Block { offset, len };
        offset += len;
        b
    };
    let x = layers.any().then(|| take(n));
    let r = match (layers.classical, layers.berkson) {
        (true, true) => RLayout::Own(take(n)),
        (true, false) => RLayout::AliasX,
        (false, _) => RLayout::Observed,
    };
    let beta = take(p + 1);
    let beta_x = x.is_none().then(|| take(1).offset);
    let alpha = spec.imputation.then(|| take(q + 1));
    LatentIndexMap { n, x, r, beta, beta_x, alpha, total: offset }
}

impl LatentIndexMap {
    pub fn x_latent(&self) -> bool {
        self.x.is_some()
    }

    pub fn x_index(&self, i: usize) -> Option<usize> {
        self.x.map(|b| b.at(i))
    }

    pub fn r_site(&self, i: usize) -> RSite {
        match self.r {
            RLayout::Own(b) => RSite::Latent(b.at(i)),
            RLayout::AliasX => RSite::Latent(self.x.expect("alias requires an x block").at(i)),
            RLayout::Observed => RSite::Observed,
        }
    }

    /// Block backing a component, following aliases.
    pub fn block(&self, c: Component) -> Option<Block> {
        match c {
            Component::X => self.x,
            Component::R => match self.r {
                RLayout::Own(b) => Some(b),
                RLayout::AliasX => self.x,
                RLayout::Observed => None,
            },
            Component::Beta => Some(self.beta),
            Component::BetaX => self.beta_x.map(|offset| Block { offset, len: 1 }),
            Component::Alpha => self.alpha,
        }
    }

    /// Components that own storage, in layout order.
    pub fn owned_components(&self) -> Vec<(Component, Block)> {
        let mut out = Vec::new();
        if let Some(b) = self.x {
            out.push((Component::X, b));
        }
        if let RLayout::Own(b) = self.r {
            out.push((Component::R, b));
        }
        out.push((Component::Beta, self.beta));
        if let Some(b) = self.block(Component::BetaX) {
            out.push((Component::BetaX, b));
        }
        if let Some(b) = self.alpha {
            out.push((Component::Alpha, b));
        }
        out
    }

    pub fn read<'a>(&self, v: &'a [f64], c: Component) -> Option<&'a [f64]> {
        self.block(c).map(|b| &v[b.range()])
    }

    pub fn write(&self, v: &mut [f64], c: Component, values: &[f64]) -> bool {
        match self.block(c) {
            Some(b) if b.len == values.len() => {
                v[b.range()].copy_from_slice(values);
                true
            }
            _ => false,
        }
    }

    /// Indices of the coefficient slots (priors apply to exactly these).
    pub fn coefficient_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.beta.range().collect();
        idx.extend(self.beta_x);
        if let Some(a) = self.alpha {
            idx.extend(a.range());
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariates, Measurements, Response};
    use crate::spec::{ErrorLayers, Likelihood};
    use proptest::prelude::*;

    fn data(n: usize, p: usize, q: usize) -> Dataset {
        let col = |k: usize| (0..n).map(|i| (i + k) as f64).collect::<Vec<_>>();
        let names_p: Vec<String> = (0..p).map(|k| format!("z{k}")).collect();
        let names_q: Vec<String> = (0..q).map(|k| format!("t{k}")).collect();
        let z = Covariates::new(names_p, (0..n).map(|i| (0..p).map(|k| Some(col(k)[i])).collect()).collect());
        let zt = Covariates::new(names_q, (0..n).map(|i| (0..q).map(|k| Some(col(k)[i])).collect()).collect());
        Dataset {
            response: Response::Gaussian { name: "y".into(), y: vec![Some(0.0); n] },
            w: Measurements::single("w", vec![Some(1.0); n]),
            z,
            z_tilde: zt,
        }
    }

    fn spec(layers: ErrorLayers, imputation: bool) -> ModelSpec {
        ModelSpec::plain(Likelihood::GaussianLinear).with_layers(layers, imputation)
    }

    #[test]
    fn classical_only_aliases_r_to_x() {
        let m = build_index_map(&spec(ErrorLayers::CLASSICAL, true), &data(3, 1, 1));
        assert_eq!(m.x, Some(Block { offset: 0, len: 3 }));
        assert_eq!(m.r, RLayout::AliasX);
        assert_eq!(m.beta, Block { offset: 3, len: 2 });
        assert_eq!(m.alpha, Some(Block { offset: 5, len: 2 }));
        assert_eq!(m.total, 7);
        assert_eq!(m.r_site(2), RSite::Latent(2));
    }

    #[test]
    fn both_layers_have_separate_blocks() {
        let m = build_index_map(&spec(ErrorLayers::BOTH, true), &data(3, 1, 1));
        assert_eq!(m.x, Some(Block { offset: 0, len: 3 }));
        assert_eq!(m.r, RLayout::Own(Block { offset: 3, len: 3 }));
        assert_eq!(m.beta, Block { offset: 6, len: 2 });
        assert_eq!(m.alpha, Some(Block { offset: 8, len: 2 }));
        assert_eq!(m.total, 10);
    }

    #[test]
    fn berkson_only_reads_r_from_w() {
        let m = build_index_map(&spec(ErrorLayers::BERKSON, true), &data(2, 0, 0));
        assert_eq!(m.x, Some(Block { offset: 0, len: 2 }));
        assert_eq!(m.r, RLayout::Observed);
        assert_eq!(m.beta, Block { offset: 2, len: 1 });
        assert_eq!(m.alpha, Some(Block { offset: 3, len: 1 }));
        assert_eq!(m.total, 4);
        assert_eq!(m.r_site(0), RSite::Observed);
    }

    #[test]
    fn no_layers_puts_beta_x_in_latent() {
        let m = build_index_map(&spec(ErrorLayers::NONE, false), &data(4, 2, 0));
        assert_eq!(m.x, None);
        assert_eq!(m.beta, Block { offset: 0, len: 3 });
        assert_eq!(m.beta_x, Some(3));
        assert_eq!(m.total, 4);
    }

    proptest! {
        #[test]
        fn components_tile_the_vector_and_round_trip(
            n in 1usize..6, p in 0usize..3, q in 0usize..3,
            classical in any::<bool>(), berkson in any::<bool>(), imputation in any::<bool>(),
        ) {
            let layers = ErrorLayers { classical, berkson };
            let m = build_index_map(&spec(layers, imputation || classical), &data(n, p, q));
            let comps = m.owned_components();
            let mut next = 0;
            for (_, b) in &comps {
                prop_assert_eq!(b.offset, next);
                next += b.len;
            }
            prop_assert_eq!(next, m.total);
            let mut v = vec![0.0; m.total];
            for (k, (c, b)) in comps.iter().enumerate() {
                let vals: Vec<f64> = (0..b.len).map(|i| (k * 100 + i) as f64).collect();
                prop_assert!(m.write(&mut v, *c, &vals));
            }
            for (k, (c, b)) in comps.iter().enumerate() {
                let vals: Vec<f64> = (0..b.len).map(|i| (k * 100 + i) as f64).collect();
                prop_assert_eq!(m.read(&v, *c).unwrap(), &vals[..]);
            }
            prop_assert_eq!(m.r == RLayout::AliasX, classical && !berkson);
            prop_assert_eq!(m.r == RLayout::Observed, !classical);
        }
    }
}
