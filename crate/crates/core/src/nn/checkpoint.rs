//! Parameter checkpoint file: a text manifest (architecture, seed, epoch)
//! followed by a blank line and the raw little-endian f32 tensors in
//! declaration order (layer 0 weights, layer 0 biases, layer 1 weights, ...).

use std::path::Path;

use super::{Architecture, Network, ParamSet};
use crate::error::{Error, Result};

const MAGIC: &str = "spursever-checkpoint v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: Network,
    pub seed: u64,
    pub epoch: usize,
}

pub fn save_checkpoint(net: &Network, seed: u64, epoch: usize, path: &Path) -> Result<()> {
    let arch = net.arch();
    let hidden: Vec<String> = arch.hidden.iter().map(|h| h.to_string()).collect();
    let mut bytes = format!(
        "{MAGIC}\narch_input={}\narch_hidden={}\narch_classes={}\nseed={seed}\nepoch={epoch}\nparams={}\n\n",
        arch.input,
        hidden.join(","),
        arch.classes,
        net.param_count(),
    )
    .into_bytes();
    bytes.reserve(net.param_count() * 4);
    for v in net.params().flat_iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header_end = find_blank_line(&bytes)
        .ok_or_else(|| Error::format(path, "missing blank line after manifest"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::format(path, "manifest is not utf-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::format(path, "bad magic line"));
    }

    let mut input = None;
    let mut hidden = None;
    let mut classes = None;
    let mut seed = None;
    let mut epoch = None;
    let mut params = None;
    for line in lines {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("bad manifest line: {line}")))?;
        match key {
            "arch_input" => input = Some(parse_usize(path, value)?),
            "arch_hidden" => {
                hidden = Some(
                    value
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_usize(path, s))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "arch_classes" => classes = Some(parse_usize(path, value)?),
            "seed" => {
                seed = Some(
                    value
                        .parse::<u64>()
                        .map_err(|_| Error::format(path, "bad seed"))?,
                )
            }
            "epoch" => epoch = Some(parse_usize(path, value)?),
            "params" => params = Some(parse_usize(path, value)?),
            _ => return Err(Error::format(path, format!("unknown manifest key: {key}"))),
        }
    }
    let arch = Architecture {
        input: input.ok_or_else(|| Error::format(path, "missing arch_input"))?,
        hidden: hidden.ok_or_else(|| Error::format(path, "missing arch_hidden"))?,
        classes: classes.ok_or_else(|| Error::format(path, "missing arch_classes"))?,
    };
    arch.validate()?;
    let param_count = params.ok_or_else(|| Error::format(path, "missing params"))?;
    if param_count != arch.param_count() {
        return Err(Error::format(path, "params count does not match architecture"));
    }

    let tensor_bytes = &bytes[header_end + 2..];
    if tensor_bytes.len() != param_count * 4 {
        return Err(Error::format(
            path,
            format!(
                "expected {} tensor bytes, found {}",
                param_count * 4,
                tensor_bytes.len()
            ),
        ));
    }
    let mut params_set = ParamSet::<f32>::zeros(&arch);
    let mut chunks = tensor_bytes.chunks_exact(4);
    for layer in &mut params_set.layers {
        for slot in layer.w.iter_mut().chain(layer.b.iter_mut()) {
            let c = chunks.next().expect("length checked above");
            *slot = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    Ok(Checkpoint {
        net: Network::from_parts(arch, params_set),
        seed: seed.ok_or_else(|| Error::format(path, "missing seed"))?,
        epoch: epoch.ok_or_else(|| Error::format(path, "missing epoch"))?,
    })
}

fn find_blank_line(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == b"\n\n").map(|p| p + 1)
}

fn parse_usize(path: &Path, s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::format(path, format!("bad integer: {s}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrips_bitwise() {
        let arch = Architecture {
            input: 6,
            hidden: vec![4],
            classes: 3,
        };
        let net = Network::seeded(arch, 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&net, 77, 12, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.net.params_bitwise_eq(&net));
        assert_eq!(loaded.seed, 77);
        assert_eq!(loaded.epoch, 12);
    }

    #[test]
    fn linear_architecture_roundtrips() {
        let arch = Architecture {
            input: 2,
            hidden: vec![],
            classes: 2,
        };
        let net = Network::seeded(arch, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lin.ckpt");
        save_checkpoint(&net, 5, 0, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.net.params_bitwise_eq(&net));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let arch = Architecture {
            input: 2,
            hidden: vec![],
            classes: 2,
        };
        let net = Network::seeded(arch, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        save_checkpoint(&net, 5, 0, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            Error::Format { .. }
        ));
    }
}
