use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Model, Params};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "distparse-model";

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    model: Model,
}

/// Writes the model as JSON. Floats are printed in shortest round-trip form,
/// so `load_model(save_model(m)) == m` bit for bit.
pub fn save_model<W: Write>(w: W, model: &Model) -> Result<()> {
    let env = Envelope {
        format: MODEL_FORMAT.to_owned(),
        version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    serde_json::to_writer(w, &env).map_err(|e| Error::Model(e.to_string()))
}

pub fn load_model<R: Read>(r: R) -> Result<Model> {
    let env: Envelope = serde_json::from_reader(r).map_err(|e| Error::Model(e.to_string()))?;
    if env.format != MODEL_FORMAT {
        return Err(Error::Model(format!("unexpected format '{}'", env.format)));
    }
    if env.version != MODEL_FORMAT_VERSION {
        return Err(Error::Model(format!(
            "unsupported version {} (this build reads {MODEL_FORMAT_VERSION})",
            env.version
        )));
    }
    let mut model = env.model;
    model.vocab.reindex();
    model.labels.reindex();
    let p = &model.params;
    let d = p.dims;
    let expect = Params::zeros(d);
    let shapes_ok = p.blocks().iter().zip(expect.blocks()).all(|(a, b)| a.len() == b.len());
    if !shapes_ok || d.vocab != model.vocab.len() || (d.labels != 0 && d.labels != model.labels.len()) {
        return Err(Error::Model("parameter shapes do not match the stored dimensions".into()));
    }
    p.check_finite("model")?;
    Ok(model)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{LabelVocab, TrainingConfig, Vocab};

    #[test]
    fn save_load_is_bit_exact() {
        let cfg = TrainingConfig {
            embed: 5,
            hidden: 7,
            window: 2,
            label_weight: 1.0,
            ..Default::default()
        };
        let tree = "(S (NP a b) (VP c d))".parse().unwrap();
        let m = Model::new(
            Vocab::build([vec!["a", "b", "c", "d"]]),
            Some(LabelVocab::build([&tree])),
            &cfg,
        );
        let mut buf = Vec::new();
        save_model(&mut buf, &m).unwrap();
        let back = load_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.params.blocks().iter().zip(m.params.blocks()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.vocab.id("c"), m.vocab.id("c"));
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(load_model("{\"format\":\"x\",\"version\":1}".as_bytes()).is_err());
        assert!(load_model("not json".as_bytes()).is_err());
    }
}
