//! Network blocks and their assembly into acoustic models.

mod params;
mod tdnnf;
mod transformer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use params::{Binding, ParamStore};
pub use tdnnf::{
    constrain_factor, orthogonality_error, semiorthogonal_step, tdnnf_forward, TdnnfConfig,
    TDNNF_PREFIX,
};
pub use transformer::{
    reconstruction_head, sinusoidal_positions, transformer_forward, Dropout, EncoderOutput,
    TransformerConfig, ENCODER_PREFIX, RECON_PREFIX,
};

use crate::features::FeatureMatrix;
use crate::numerics::{Tape, Var};
use crate::{Error, Result};

/// How a pretrained encoder takes part in supervised training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// No encoder; features feed the TDNNF directly.
    Scratch,
    /// Encoder weights fixed; its outputs are TDNNF inputs.
    FrozenExtractor,
    /// Encoder updated together with the TDNNF.
    FineTune,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcousticModel {
    pub mode: TrainMode,
    pub encoder: Option<TransformerConfig>,
    pub tdnnf: TdnnfConfig,
    pub subsampling: usize,
    pub params: ParamStore,
}

impl AcousticModel {
    /// Wires an encoder (for non-scratch modes) in front of a freshly
    /// initialized TDNNF. The TDNNF output width is `num_pdfs`; its input
    /// width is the encoder width, or as configured in scratch mode.
    pub fn assemble(
        mode: TrainMode,
        encoder: Option<(TransformerConfig, ParamStore)>,
        tdnnf: TdnnfConfig,
        num_pdfs: usize,
        subsampling: usize,
        seed: u64,
    ) -> Result<Self> {
        if subsampling == 0 {
            return Err(Error::Config("frame subsampling factor must be >= 1".into()));
        }
        let mut tdnnf = tdnnf;
        tdnnf.output_dim = num_pdfs;
        let mut params = ParamStore::new();
        let encoder_cfg = match (mode, encoder) {
            (TrainMode::Scratch, _) => None,
            (_, None) => {
                return Err(Error::Config(format!(
                    "mode {mode:?} needs a pretrained encoder"
                )))
            }
            (_, Some((cfg, store))) => {
                let enc = store.subset(ENCODER_PREFIX);
                let expected: BTreeMap<_, _> = cfg
                    .param_shapes()
                    .into_iter()
                    .filter(|(k, _)| k.starts_with(ENCODER_PREFIX))
                    .collect();
                enc.validate_shapes(&expected)?;
                params.extend(enc);
                tdnnf.input_dim = cfg.model_dim();
                Some(cfg)
            }
        };
        tdnnf.validate()?;
        params.extend(tdnnf.init_params(seed));
        let model = AcousticModel {
            mode,
            encoder: encoder_cfg,
            tdnnf,
            subsampling,
            params,
        };
        log::info!(
            "assembled {:?} model: {} parameters ({} trainable)",
            mode,
            model.num_params(),
            model.num_trainable()
        );
        Ok(model)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !(self.mode == TrainMode::FrozenExtractor && name.starts_with(ENCODER_PREFIX))
    }

    pub fn num_params(&self) -> usize {
        self.params.num_values()
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| self.is_trainable(k))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn expected_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let mut s = self.tdnnf.param_shapes();
        if let Some(cfg) = &self.encoder {
            s.extend(
                cfg.param_shapes()
                    .into_iter()
                    .filter(|(k, _)| k.starts_with(ENCODER_PREFIX)),
            );
        }
        s
    }

    pub fn bind(&self, tape: &mut Tape) -> Binding {
        self.params.bind(tape, |k| self.is_trainable(k))
    }

    /// Features to pdf scores.
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, feats: &FeatureMatrix) -> Result<Var> {
        let x = tape.constant(feats.to_tensor());
        let h = match &self.encoder {
            Some(cfg) => transformer_forward(cfg, tape, bind, x, None)?.hidden,
            None => x,
        };
        self.head_forward(tape, bind, h)
    }

    /// TDNNF on already-encoded inputs.
    pub fn head_forward(&self, tape: &mut Tape, bind: &Binding, h: Var) -> Result<Var> {
        tdnnf_forward(&self.tdnnf, tape, bind, h, self.subsampling)
    }

    /// Encoder outputs for `feats` (the input itself in scratch mode).
    pub fn encode(&self, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
        let Some(cfg) = &self.encoder else {
            return Ok(feats.clone());
        };
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, |_| false);
        let x = tape.constant(feats.to_tensor());
        let out = transformer_forward(cfg, &mut tape, &bind, x, None)?;
        Ok(FeatureMatrix::from_tensor(tape.value(out.hidden)))
    }

    /// Pdf scores without gradient tracking.
    pub fn infer(&self, feats: &FeatureMatrix) -> Result<crate::numerics::Tensor> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, |_| false);
        let y = self.forward(&mut tape, &bind, feats)?;
        Ok(tape.value(y).clone())
    }

    /// One semi-orthogonal step on every TDNNF bottleneck factor.
    pub fn constrain(&mut self) -> Result<()> {
        for name in self.tdnnf.constrained_params() {
            if let Some(w) = self.params.get_mut(&name) {
                constrain_factor(w)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pretrained() -> (TransformerConfig, ParamStore) {
        let cfg = TransformerConfig {
            dropout_prob: 0.0,
            ..TransformerConfig::tr_tiny()
        };
        let p = cfg.init_params(1);
        (cfg, p)
    }

    #[test]
    fn scratch_model_reads_raw_features() {
        let m = AcousticModel::assemble(TrainMode::Scratch, None, TdnnfConfig::tiny(), 8, 1, 0).unwrap();
        assert_eq!(m.tdnnf.input_dim, 80);
        assert!(m.encoder.is_none());
        assert_eq!(m.params.get("tdnnf.0.linear_a").unwrap().shape(), &[240, 32]);
        let y = m.infer(&FeatureMatrix::zeros(9, 80)).unwrap();
        assert_eq!(y.shape(), &[9, 8]);
    }

    #[test]
    fn encoder_modes_require_an_encoder() {
        for mode in [TrainMode::FrozenExtractor, TrainMode::FineTune] {
            assert!(AcousticModel::assemble(mode, None, TdnnfConfig::tiny(), 8, 1, 0).is_err());
        }
    }

    #[test]
    fn frozen_mode_marks_encoder_untrainable() {
        let m = AcousticModel::assemble(
            TrainMode::FrozenExtractor,
            Some(pretrained()),
            TdnnfConfig::tiny(),
            8,
            1,
            0,
        )
        .unwrap();
        assert_eq!(m.tdnnf.input_dim, 256);
        assert!(!m.is_trainable("encoder.input.weight"));
        assert!(m.is_trainable("tdnnf.0.linear_a"));
        assert!(m.num_trainable() < m.num_params());
        assert!(m.params.get("recon.weight").is_none());
        let y = m.infer(&FeatureMatrix::zeros(10, 80)).unwrap();
        assert_eq!(y.shape(), &[10, 8]);
    }

    #[test]
    fn mismatched_encoder_is_rejected() {
        let (cfg, mut p) = pretrained();
        p.insert("encoder.input.weight", crate::numerics::Tensor::zeros(&[80, 3]));
        let r = AcousticModel::assemble(TrainMode::FineTune, Some((cfg, p)), TdnnfConfig::tiny(), 8, 1, 0);
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }
}
