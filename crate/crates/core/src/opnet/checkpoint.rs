//! Binary model checkpoints: JSON header followed by raw little-endian
//! float64 parameters. Round-trips are byte-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffkit::ParamVector;

use super::{ModelError, OperatorModel, OperatorSpec};

const MAGIC: &[u8; 4] = b"MORC";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: OperatorSpec,
    seed: u64,
}

pub fn save_checkpoint(model: &OperatorModel, path: &Path) -> Result<(), ModelError> {
    let header = serde_json::to_vec(&Header { spec: model.spec.clone(), seed: model.seed })
        .map_err(|e| ModelError::Malformed(e.to_string()))?;
    let mut buf = Vec::with_capacity(12 + header.len() + model.params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in model.params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<OperatorModel, ModelError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(ModelError::Malformed("missing checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::Malformed(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen {
        return Err(ModelError::Malformed("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + hlen])
        .map_err(|e| ModelError::Malformed(e.to_string()))?;
    let layout = header.spec.layout()?;
    let body = &bytes[12 + hlen..];
    if body.len() != layout.total() * 8 {
        return Err(ModelError::Malformed(format!(
            "expected {} parameters, found {} bytes",
            layout.total(),
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ParamVector::new(values, layout)?;
    Ok(OperatorModel { spec: header.spec, params, seed: header.seed })
}
