use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use funit_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{DiscriminatorConfig, GeneratorConfig};
use crate::nn::ParamStore;

const MAGIC: &[u8; 8] = b"FUNITCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training bit-exactly: both networks, both
/// optimizer states, the configuration, class names and iteration counter.
///
/// On disk: magic, format version, a JSON header describing every tensor,
/// then the raw little-endian `f64` data in header order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator_config: GeneratorConfig,
    pub discriminator_config: DiscriminatorConfig,
    pub train_config: TrainConfig,
    pub class_names: Vec<String>,
    pub iteration: u64,
    pub generator: ParamStore,
    pub discriminator: ParamStore,
    pub generator_opt: Vec<Tensor>,
    pub discriminator_opt: Vec<Tensor>,
    /// Free-form run notes, e.g. fine-tuning settings.
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    generator_config: GeneratorConfig,
    discriminator_config: DiscriminatorConfig,
    train_config: TrainConfig,
    class_names: Vec<String>,
    iteration: u64,
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: Group,
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Generator,
    Discriminator,
    GeneratorOpt,
    DiscriminatorOpt,
}

impl Checkpoint {
    fn entries(&self) -> Vec<(Group, &str, &Tensor)> {
        let mut out = Vec::new();
        for (group, store, opt) in [
            (Group::Generator, &self.generator, &self.generator_opt),
            (Group::Discriminator, &self.discriminator, &self.discriminator_opt),
        ] {
            out.extend(store.iter().map(|(n, t)| (group, n, t)));
            let opt_group = match group {
                Group::Generator => Group::GeneratorOpt,
                _ => Group::DiscriminatorOpt,
            };
            out.extend(store.names().iter().zip(opt).map(|(n, t)| (opt_group, n.as_str(), t)));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for (store, opt) in [
            (&self.generator, &self.generator_opt),
            (&self.discriminator, &self.discriminator_opt),
        ] {
            if store.len() != opt.len() {
                return Err(Error::Checkpoint(format!(
                    "{} parameters but {} optimizer tensors",
                    store.len(),
                    opt.len()
                )));
            }
        }
        let entries = self.entries();
        let header = Header {
            generator_config: self.generator_config.clone(),
            discriminator_config: self.discriminator_config.clone(),
            train_config: self.train_config.clone(),
            class_names: self.class_names.clone(),
            iteration: self.iteration,
            metadata: self.metadata.clone(),
            tensors: entries
                .iter()
                .map(|(g, n, t)| TensorEntry {
                    group: *g,
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in entries {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&r[..len]).map_err(|e| Error::Serde(e.to_string()))?;
        r = &r[len..];

        let mut stores = [ParamStore::new(), ParamStore::new()];
        let mut opts: [Vec<Tensor>; 2] = [Vec::new(), Vec::new()];
        for entry in header.tensors {
            let count: usize = entry.shape.iter().product();
            if r.len() < count * 8 {
                return Err(bad("truncated tensor data"));
            }
            let data = r[..count * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            r = &r[count * 8..];
            let tensor = Tensor::from_vec(&entry.shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let store = match entry.group {
                Group::Generator => Some(&stores[0]),
                Group::Discriminator => Some(&stores[1]),
                _ => None,
            };
            if store.is_some_and(|s| s.id_of(&entry.name).is_some()) {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", entry.name)));
            }
            match entry.group {
                Group::Generator => {
                    stores[0].insert(entry.name, tensor);
                }
                Group::Discriminator => {
                    stores[1].insert(entry.name, tensor);
                }
                Group::GeneratorOpt => opts[0].push(tensor),
                Group::DiscriminatorOpt => opts[1].push(tensor),
            }
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let [generator, discriminator] = stores;
        let [generator_opt, discriminator_opt] = opts;
        Ok(Self {
            generator_config: header.generator_config,
            discriminator_config: header.discriminator_config,
            train_config: header.train_config,
            class_names: header.class_names,
            iteration: header.iteration,
            generator,
            discriminator,
            generator_opt,
            discriminator_opt,
            metadata: header.metadata,
        })
    }

    /// Writes to a temporary sibling and renames it into place, so an
    /// interrupted save never clobbers the previous checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let bytes = self.to_bytes()?;
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a checkpoint and rejects it unless its network configurations
    /// equal the expected ones.
    pub fn load_expecting(
        path: &Path,
        generator: &GeneratorConfig,
        discriminator: &DiscriminatorConfig,
    ) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.generator_config != generator {
            return Err(Error::Checkpoint(format!(
                "generator configuration mismatch: checkpoint has {:?}, expected {:?}",
                ckpt.generator_config, generator
            )));
        }
        if &ckpt.discriminator_config != discriminator {
            return Err(Error::Checkpoint(format!(
                "discriminator configuration mismatch: checkpoint has {:?}, expected {:?}",
                ckpt.discriminator_config, discriminator
            )));
        }
        Ok(ckpt)
    }
}
