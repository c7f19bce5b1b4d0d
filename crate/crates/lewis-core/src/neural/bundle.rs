//! Model serialization.
//!
//! Binary container: magic `LEWISMDL`, little-endian u32 version, a
//! length-prefixed JSON header (architecture, role, style, vocabulary
//! hash, parameter table), then little-endian f32 parameter blobs in
//! header-declared order. Parameters are f32-representable by
//! construction, so save → load reproduces inference bitwise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::models::{EncoderModel, Model, Seq2SeqModel};
use super::{EncoderConfig, NeuralError, Parameterized, Seq2SeqConfig};
use crate::corpus::{StyleLabel, Vocabulary};

const MAGIC: &[u8; 8] = b"LEWISMDL";
const VERSION: u32 = 1;

/// What a bundled model is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Classifier,
    Infiller,
    Tagger,
    Generator,
    /// Plain sequence-to-sequence ablation baseline.
    Seq2Seq,
}

/// A serialized-parameter container: one trained model plus the metadata
/// needed to refuse mismatched use.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub role: Role,
    pub style: Option<StyleLabel>,
    pub vocab_hash: String,
    /// Run-configuration hash recorded by the pipeline, if any.
    pub config_hash: Option<String>,
    pub model: Model,
}

impl ModelBundle {
    pub fn new(role: Role, style: Option<StyleLabel>, vocab: &Vocabulary, model: Model) -> Self {
        ModelBundle {
            role,
            style,
            vocab_hash: vocab.sha256_hex(),
            config_hash: None,
            model,
        }
    }

    pub fn encoder_model(&self) -> Result<&EncoderModel, NeuralError> {
        self.model.as_encoder().ok_or_else(|| {
            NeuralError::FormatError(format!("{:?} bundle holds no encoder model", self.role))
        })
    }

    pub fn seq2seq_model(&self) -> Result<&Seq2SeqModel, NeuralError> {
        self.model.as_seq2seq().ok_or_else(|| {
            NeuralError::FormatError(format!("{:?} bundle holds no seq2seq model", self.role))
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
enum ArchHeader {
    Encoder {
        encoder: EncoderConfig,
        head: String, // "classifier" | "tagger"
    },
    Seq2Seq {
        encoder: EncoderConfig,
        decoder_layers: usize,
        decoder_max_len: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    role: Role,
    style: Option<StyleLabel>,
    vocab_hash: String,
    config_hash: Option<String>,
    arch: ArchHeader,
    params: Vec<ParamMeta>,
}

fn arch_of(model: &Model) -> ArchHeader {
    match model {
        Model::Encoder(m) => ArchHeader::Encoder {
            encoder: m.encoder.cfg.clone(),
            head: match m.head {
                super::models::Head::Classifier(_) => "classifier".into(),
                super::models::Head::Tagger { .. } => "tagger".into(),
            },
        },
        Model::Seq2Seq(m) => ArchHeader::Seq2Seq {
            encoder: m.cfg.encoder.clone(),
            decoder_layers: m.cfg.decoder_layers,
            decoder_max_len: m.cfg.decoder_max_len,
        },
    }
}

/// Writes the bundle. Takes `&mut` because the parameter walk is the
/// mutable visitation that also serves the optimizer; nothing is
/// modified.
pub fn save_bundle(bundle: &mut ModelBundle, path: impl AsRef<Path>) -> Result<(), NeuralError> {
    let arch = arch_of(&bundle.model);
    let params_meta: Vec<ParamMeta> = bundle
        .model
        .params_mut()
        .iter()
        .map(|(name, t)| ParamMeta {
            name: name.clone(),
            rows: t.w.rows,
            cols: t.w.cols,
        })
        .collect();
    let header = FileHeader {
        role: bundle.role,
        style: bundle.style,
        vocab_hash: bundle.vocab_hash.clone(),
        config_hash: bundle.config_hash.clone(),
        arch,
        params: params_meta,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| NeuralError::FormatError(format!("header encode: {e}")))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, tensor) in bundle.model.params_mut() {
        for &v in &tensor.w.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a bundle and verifies magic, version, layout, and that the
/// supplied vocabulary matches the one the model was trained with.
pub fn load_bundle(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<ModelBundle, NeuralError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| NeuralError::FormatError("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(NeuralError::FormatError("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)
        .map_err(|_| NeuralError::FormatError("file too short for version".into()))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(NeuralError::FormatError(format!(
            "unsupported version {version}"
        )));
    }
    r.read_exact(&mut word)
        .map_err(|_| NeuralError::FormatError("file too short for header length".into()))?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| NeuralError::FormatError("truncated header".into()))?;
    let header: FileHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| NeuralError::FormatError(format!("header decode: {e}")))?;

    let got_hash = vocab.sha256_hex();
    if header.vocab_hash != got_hash {
        return Err(NeuralError::VocabMismatch {
            expected: header.vocab_hash,
            got: got_hash,
        });
    }

    // Freshly built models define the expected parameter layout; the
    // init seed is irrelevant since every value is overwritten.
    let mut model = match &header.arch {
        ArchHeader::Encoder { encoder, head } => match head.as_str() {
            "classifier" => Model::Encoder(EncoderModel::new_classifier(encoder.clone(), 0)?),
            "tagger" => Model::Encoder(EncoderModel::new_tagger(encoder.clone(), 0)?),
            other => {
                return Err(NeuralError::FormatError(format!("unknown head {other:?}")));
            }
        },
        ArchHeader::Seq2Seq {
            encoder,
            decoder_layers,
            decoder_max_len,
        } => Model::Seq2Seq(Seq2SeqModel::new(
            Seq2SeqConfig {
                encoder: encoder.clone(),
                decoder_layers: *decoder_layers,
                decoder_max_len: *decoder_max_len,
            },
            0,
        )?),
    };

    {
        let mut params = model.params_mut();
        if params.len() != header.params.len() {
            return Err(NeuralError::FormatError(format!(
                "header declares {} parameters, model has {}",
                header.params.len(),
                params.len()
            )));
        }
        for ((name, tensor), meta) in params.iter_mut().zip(&header.params) {
            if *name != meta.name || tensor.w.rows != meta.rows || tensor.w.cols != meta.cols {
                return Err(NeuralError::FormatError(format!(
                    "parameter mismatch: header {}[{}x{}] vs model {}[{}x{}]",
                    meta.name, meta.rows, meta.cols, name, tensor.w.rows, tensor.w.cols
                )));
            }
            let mut buf = vec![0u8; meta.rows * meta.cols * 4];
            r.read_exact(&mut buf)
                .map_err(|_| NeuralError::FormatError("truncated parameter data".into()))?;
            for (i, chunk) in buf.chunks_exact(4).enumerate() {
                tensor.w.data[i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            }
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NeuralError::FormatError("trailing bytes after parameters".into()));
    }
    Ok(ModelBundle {
        role: header.role,
        style: header.style,
        vocab_hash: header.vocab_hash,
        config_hash: header.config_hash,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn tmp_vocab(lines: &[&str]) -> Vocabulary {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        Vocabulary::build(&[f.path()], 1).unwrap()
    }

    fn tiny_cfg(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            heads: 2,
            model_dim: 8,
            ff_dim: 16,
            max_len: 8,
            dropout: 0.0,
            vocab_size,
        }
    }

    #[test]
    fn save_load_round_trips_inference_bitwise() {
        let vocab = tmp_vocab(&["a b c d", "c d e"]);
        let model = EncoderModel::new_classifier(tiny_cfg(vocab.size()), 77).unwrap();
        let ids = [7u32, 11, 12, 13];
        let (before, _) = model.classify_forward(&ids).unwrap();
        let mut bundle = ModelBundle::new(Role::Classifier, None, &vocab, Model::Encoder(model));
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_bundle(&mut bundle, tmp.path()).unwrap();
        let loaded = load_bundle(tmp.path(), &vocab).unwrap();
        let (after, _) = loaded.encoder_model().unwrap().classify_forward(&ids).unwrap();
        assert_eq!(before[0].to_bits(), after[0].to_bits());
        assert_eq!(before[1].to_bits(), after[1].to_bits());
        assert_eq!(loaded.role, Role::Classifier);
    }

    #[test]
    fn wrong_vocabulary_is_rejected() {
        let vocab = tmp_vocab(&["a b c"]);
        let other = tmp_vocab(&["x y z w"]);
        let model = EncoderModel::new_classifier(tiny_cfg(vocab.size()), 78).unwrap();
        let mut bundle = ModelBundle::new(Role::Classifier, None, &vocab, Model::Encoder(model));
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_bundle(&mut bundle, tmp.path()).unwrap();
        assert!(matches!(
            load_bundle(tmp.path(), &other),
            Err(NeuralError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let vocab = tmp_vocab(&["a b c"]);
        let model = EncoderModel::new_classifier(tiny_cfg(vocab.size()), 79).unwrap();
        let mut bundle = ModelBundle::new(Role::Classifier, None, &vocab, Model::Encoder(model));
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_bundle(&mut bundle, tmp.path()).unwrap();
        let bytes = std::fs::read(tmp.path()).unwrap();
        let cut = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(cut.path(), &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(
            load_bundle(cut.path(), &vocab),
            Err(NeuralError::FormatError(_))
        ));
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let vocab = tmp_vocab(&["a b"]);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), b"NOTMODEL0000").unwrap();
        assert!(matches!(
            load_bundle(tmp.path(), &vocab),
            Err(NeuralError::FormatError(_))
        ));
    }

    #[test]
    fn seq2seq_round_trip_preserves_role_and_style() {
        let vocab = tmp_vocab(&["a b c d e f"]);
        let cfg = Seq2SeqConfig {
            encoder: tiny_cfg(vocab.size()),
            decoder_layers: 2,
            decoder_max_len: 8,
        };
        let model = Seq2SeqModel::new(cfg, 80).unwrap();
        let mut bundle = ModelBundle::new(
            Role::Infiller,
            Some(StyleLabel::Style1),
            &vocab,
            Model::Seq2Seq(model),
        );
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_bundle(&mut bundle, tmp.path()).unwrap();
        let loaded = load_bundle(tmp.path(), &vocab).unwrap();
        assert_eq!(loaded.role, Role::Infiller);
        assert_eq!(loaded.style, Some(StyleLabel::Style1));
        assert!(loaded.seq2seq_model().is_ok());
    }
}
