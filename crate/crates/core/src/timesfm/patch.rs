use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub input_patch_len: usize,
    /// Values predicted per step; the first one is the next-day forecast.
    pub output_patch_len: usize,
    pub embed_dim: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            input_patch_len: 32,
            output_patch_len: 1,
            embed_dim: 128,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_patch_len == 0 || self.output_patch_len == 0 || self.embed_dim == 0 {
            return Err(Error::Config(format!("degenerate patch config {self:?}")));
        }
        Ok(())
    }
}

/// A context cut into `M = ⌈T/L⌉` patches, left-padded with zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSeries {
    patch_len: usize,
    /// `M×L` row-major values.
    pub patches: Vec<f64>,
    /// `true` for real observations, `false` for padding or masked cells.
    pub pad_mask: Vec<bool>,
    pub context_len: usize,
}

impl PatchSeries {
    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn n_patches(&self) -> usize {
        self.patches.len() / self.patch_len
    }

    pub fn padding(&self) -> usize {
        self.patches.len() - self.context_len
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        &self.patches[i * self.patch_len..(i + 1) * self.patch_len]
    }

    pub fn valid(&self, i: usize) -> &[bool] {
        &self.pad_mask[i * self.patch_len..(i + 1) * self.patch_len]
    }

    /// Index in the original context of the last value of patch `i`.
    pub fn patch_end(&self, i: usize) -> usize {
        (i + 1) * self.patch_len - self.padding() - 1
    }

    /// Zeroes patches `0..=last` and flags them as missing.
    pub fn truncate_prefix(&mut self, last: usize) {
        let end = (last + 1) * self.patch_len;
        self.patches[..end].fill(0.0);
        self.pad_mask[..end].fill(false);
    }

    /// Drops the padding and returns the original context.
    pub fn unpatchify(&self) -> Vec<f64> {
        self.patches[self.padding()..].to_vec()
    }

    /// `M × 2L` encoder input: values followed by a missing-indicator channel.
    pub fn encoder_input(&self) -> Vec<f64> {
        let l = self.patch_len;
        let mut out = Vec::with_capacity(self.patches.len() * 2);
        for i in 0..self.n_patches() {
            out.extend_from_slice(self.patch(i));
            out.extend(self.valid(i).iter().map(|&v| if v { 0.0 } else { 1.0 }));
        }
        debug_assert_eq!(out.len(), self.n_patches() * 2 * l);
        out
    }
}

pub fn patchify(context: &[f64], patch_len: usize) -> Result<PatchSeries> {
    if context.is_empty() {
        return Err(Error::Contract("context must hold at least one value".into()));
    }
    if patch_len == 0 {
        return Err(Error::Config("patch length must be positive".into()));
    }
    if let Some(i) = context.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("context value {i} is not finite")));
    }
    let m = context.len().div_ceil(patch_len);
    let pad = m * patch_len - context.len();
    let mut patches = vec![0.0; pad];
    patches.extend_from_slice(context);
    let mut pad_mask = vec![false; pad];
    pad_mask.resize(m * patch_len, true);
    Ok(PatchSeries {
        patch_len,
        patches,
        pad_mask,
        context_len: context.len(),
    })
}

/// `+1` when the point forecast is strictly positive; zero counts as down.
pub fn sign_direction(point: f64) -> bool {
    point > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn padding_arithmetic() {
        let p = patchify(&[1.0; 64], 32).unwrap();
        assert_eq!((p.n_patches(), p.padding()), (2, 0));
        let ctx = [1.0, 2.0, 3.0, 4.0, 5.0];
        let p = patchify(&ctx, 32).unwrap();
        assert_eq!((p.n_patches(), p.padding()), (1, 27));
        assert!(p.pad_mask[..27].iter().all(|m| !m) && p.pad_mask[27..].iter().all(|&m| m));
        assert_eq!(&p.patches[27..], &ctx);
        assert_eq!(p.patch_end(0), 4);
        let p = patchify(&ctx, 1).unwrap();
        assert_eq!(p.n_patches(), 5);
        assert_eq!(p.patches, ctx);
        assert!(patchify(&[], 4).is_err());
    }

    #[test]
    fn encoder_input_layout() {
        let p = patchify(&[7.0, 8.0, 9.0], 2).unwrap();
        assert_eq!(p.encoder_input(), vec![0.0, 7.0, 1.0, 0.0, 8.0, 9.0, 0.0, 0.0]);
    }

    #[test]
    fn sign_rule() {
        assert!(sign_direction(0.01));
        assert!(!sign_direction(-0.03));
        assert!(!sign_direction(0.0));
    }

    proptest! {
        #[test]
        fn unpatchify_inverts(ctx in prop::collection::vec(-1e3..1e3f64, 1..100), l in 1usize..40) {
            let p = patchify(&ctx, l).unwrap();
            prop_assert_eq!(p.n_patches(), ctx.len().div_ceil(l));
            prop_assert_eq!(p.unpatchify(), ctx.clone());
            for i in 0..p.n_patches() {
                prop_assert_eq!(p.patch(i).last().copied(), Some(ctx[p.patch_end(i)]));
            }
        }
    }
}
