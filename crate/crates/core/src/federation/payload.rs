use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{FederationError, FlConfig};
use crate::model::{is_adapter, ArchiveKind, MicroMlm, ModelConfig, TensorArchive, TrainMode};
use crate::numerics::{AdamConfig, Optimizer, OptimizerState, ParamId, ParamStore};

fn check_mode(params: &ParamStore, mode: TrainMode) -> Result<(), FederationError> {
    if mode == TrainMode::Lp {
        if let Some(id) = params.ids().find(|id| !is_adapter(id)) {
            return Err(FederationError::BaseTensorInPayload(id.to_string()));
        }
    }
    Ok(())
}

/// Serializes trainable parameters into the wire container. In LP mode any
/// non-adapter tensor is rejected.
pub fn encode_payload(params: &ParamStore, mode: TrainMode) -> Result<Vec<u8>, FederationError> {
    check_mode(params, mode)?;
    let meta = json!({ "format": "lpfl-payload", "mode": mode });
    Ok(TensorArchive::from_store(ArchiveKind::Payload, meta, params).encode())
}

/// Decodes a wire container, verifying its checksum, kind and mode, and that
/// an LP payload holds adapter tensors only.
pub fn decode_payload(bytes: &[u8], mode: TrainMode) -> Result<ParamStore, FederationError> {
    let archive = TensorArchive::decode(bytes)?;
    if archive.kind != ArchiveKind::Payload {
        return Err(FederationError::Payload("not a payload container".into()));
    }
    let declared: TrainMode = serde_json::from_value(archive.meta["mode"].clone())
        .map_err(|e| FederationError::Payload(format!("mode: {e}")))?;
    if declared != mode {
        return Err(FederationError::Payload(format!(
            "payload declares mode {declared:?}, expected {mode:?}"
        )));
    }
    let params = archive.to_store();
    check_mode(&params, mode)?;
    Ok(params)
}

const FIRST_MOMENT: &str = "m:";
const SECOND_MOMENT: &str = "v:";

/// Optimizer state as a tensor container, for round checkpoints.
pub fn optimizer_to_archive(opt: &Optimizer) -> TensorArchive {
    match opt {
        Optimizer::Sgd { lr, step } => TensorArchive::new(
            ArchiveKind::OptimizerState,
            json!({ "optimizer": "sgd", "lr": lr, "step": step }),
        ),
        Optimizer::Adam(s) => {
            let mut a = TensorArchive::new(
                ArchiveKind::OptimizerState,
                json!({ "optimizer": "adam", "config": s.config, "step": s.step }),
            );
            for (id, t) in &s.first_moment {
                a.tensors.push((format!("{FIRST_MOMENT}{id}"), t.clone()));
            }
            for (id, t) in &s.second_moment {
                a.tensors.push((format!("{SECOND_MOMENT}{id}"), t.clone()));
            }
            a
        }
    }
}

pub fn optimizer_from_archive(archive: &TensorArchive) -> Result<Optimizer, FederationError> {
    let bad = |m: &str| FederationError::Payload(format!("optimizer state: {m}"));
    if archive.kind != ArchiveKind::OptimizerState {
        return Err(bad("wrong container kind"));
    }
    let meta = &archive.meta;
    let step = meta["step"].as_u64().ok_or_else(|| bad("missing step"))?;
    match meta["optimizer"].as_str() {
        Some("sgd") => Ok(Optimizer::Sgd {
            lr: meta["lr"].as_f64().ok_or_else(|| bad("missing lr"))?,
            step,
        }),
        Some("adam") => {
            let config: AdamConfig = serde_json::from_value(meta["config"].clone()).map_err(|e| bad(&e.to_string()))?;
            let mut s = OptimizerState::new(config);
            s.step = step;
            for (name, t) in &archive.tensors {
                if let Some(id) = name.strip_prefix(FIRST_MOMENT) {
                    s.first_moment.insert(ParamId::new(id), t.clone());
                } else if let Some(id) = name.strip_prefix(SECOND_MOMENT) {
                    s.second_moment.insert(ParamId::new(id), t.clone());
                } else {
                    return Err(bad(&format!("unexpected tensor {name}")));
                }
            }
            Ok(Optimizer::Adam(s))
        }
        _ => Err(bad("unknown optimizer")),
    }
}

/// Communication volume of an experiment. Byte counts are tensor payload
/// bytes (8 per parameter); `framing_bytes` is the container overhead added
/// to each transfer on top of that.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommCost {
    /// One client's upload (equal to one broadcast) in the configured arm.
    pub payload_bytes: usize,
    pub lp_payload_bytes: usize,
    pub fp_payload_bytes: usize,
    pub per_round_up: usize,
    pub per_round_down: usize,
    pub total: usize,
    pub lp_to_fp_ratio: f64,
    pub framing_bytes: usize,
}

/// Exact byte counts from the serialized payload of a model with `model`'s
/// shape.
pub fn comm_cost(fl: &FlConfig, model: &ModelConfig) -> Result<CommCost, FederationError> {
    let mlm = MicroMlm::init(model.clone(), 0)?;
    let mode = fl.arm.mode();
    let params = mlm.params().subset(&mlm.trainable_ids(mode.into()));
    let encoded = encode_payload(&params, mode)?.len();
    let payload_bytes = params.scalar_count() * 8;
    let lp_payload_bytes = model.adapter_param_count() * 8;
    let fp_payload_bytes = model.total_param_count() * 8;
    let per_round_up = fl.clients * payload_bytes;
    Ok(CommCost {
        payload_bytes,
        lp_payload_bytes,
        fp_payload_bytes,
        per_round_up,
        per_round_down: per_round_up,
        total: fl.rounds * 2 * per_round_up,
        lp_to_fp_ratio: lp_payload_bytes as f64 / fp_payload_bytes as f64,
        framing_bytes: encoded - payload_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::Arm;
    use crate::numerics::{Gradients, OptimizerKind, Tensor};

    fn tiny() -> MicroMlm {
        let mut cfg = ModelConfig::new(30);
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        cfg.n_layers = 1;
        cfg.lora_rank = 2;
        MicroMlm::init(cfg, 5).unwrap()
    }

    #[test]
    fn adapter_payload_round_trips() {
        let m = tiny();
        let p = m.adapter_params();
        let bytes = encode_payload(&p, TrainMode::Lp).unwrap();
        assert_eq!(decode_payload(&bytes, TrainMode::Lp).unwrap(), p);
        assert!(decode_payload(&bytes, TrainMode::Fp).is_err());
    }

    #[test]
    fn lp_payload_refuses_base_tensors() {
        let m = tiny();
        assert!(matches!(
            encode_payload(m.params(), TrainMode::Lp),
            Err(FederationError::BaseTensorInPayload(_))
        ));
        let fp = encode_payload(m.params(), TrainMode::Fp).unwrap();
        let mut forged = TensorArchive::decode(&fp).unwrap();
        forged.meta = json!({ "format": "lpfl-payload", "mode": "lp" });
        assert!(matches!(
            decode_payload(&forged.encode(), TrainMode::Lp),
            Err(FederationError::BaseTensorInPayload(_))
        ));
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let m = tiny();
        let mut bytes = encode_payload(&m.adapter_params(), TrainMode::Lp).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(decode_payload(&bytes, TrainMode::Lp).is_err());
    }

    #[test]
    fn default_config_costs() {
        let model = ModelConfig::new(2000);
        let fl = FlConfig::default();
        let c = comm_cost(&fl, &model).unwrap();
        assert_eq!(c.payload_bytes, 32768);
        assert_eq!(c.lp_payload_bytes, 32768);
        assert_eq!(c.fp_payload_bytes, model.total_param_count() * 8);
        assert_eq!(c.per_round_up, 2 * 32768);
        assert_eq!(c.total, 5 * 2 * 2 * 32768);
        assert!(c.lp_to_fp_ratio < 1.0);
        assert!(c.framing_bytes > 0);
        let fp = comm_cost(&FlConfig { arm: Arm::FpFl, ..fl }, &model).unwrap();
        assert_eq!(fp.payload_bytes, model.total_param_count() * 8);
    }

    #[test]
    fn optimizer_state_round_trips() {
        let m = tiny();
        let mut params = m.adapter_params();
        let mut opt = Optimizer::new(OptimizerKind::default());
        let grads: Gradients = params
            .iter()
            .map(|(id, t)| (id.clone(), Tensor::filled(t.shape(), 0.5)))
            .collect();
        opt.step(&mut params, &grads).unwrap();
        let bytes = optimizer_to_archive(&opt).encode();
        let back = optimizer_from_archive(&TensorArchive::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, opt);
        let sgd = Optimizer::Sgd { lr: 0.1, step: 3 };
        assert_eq!(optimizer_from_archive(&optimizer_to_archive(&sgd)).unwrap(), sgd);
    }
}
