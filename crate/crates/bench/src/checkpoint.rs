//! Checkpoints: a directory holding one `ETN1` tensor per parameter vector,
//! the resolved experiment config, and a plain-text manifest.
//!
//! ```text
//! equirecon-checkpoint 1
//! variant equivariant
//! m 4
//! ...
//! layer block0.lift size=3 in=trivial*11 out=regular(4)*24 bases=trivial>regular:9
//! tensor block0.lift.weights 99 block0.lift.weights.etn
//! ```

use std::fs;
use std::path::Path;

use equirecon_core::group::FieldType;
use equirecon_core::learned_recon::{build_network, NetConfig, UnrolledNet, Variant};
use equirecon_core::nn::{ConvLayer, Parameterization};

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};
use crate::tensor_io::{read_tensor, write_tensor};

const HEADER: &str = "equirecon-checkpoint 1";

fn field_type(t: &FieldType) -> String {
    t.blocks
        .iter()
        .map(|(rep, n)| match rep.tag().as_str() {
            "trivial" => format!("trivial*{n}"),
            tag => format!("{tag}({})*{n}", rep.group.order()),
        })
        .collect::<Vec<_>>()
        .join("+")
}

fn layer_line(name: &str, layer: &ConvLayer) -> String {
    let bases = match &layer.param {
        Parameterization::Free => "free".to_string(),
        Parameterization::Steerable(layout) => layout
            .bases
            .iter()
            .map(|b| format!("{}>{}:{}", b.spec.rep_in.tag(), b.spec.rep_out.tag(), b.count))
            .collect::<Vec<_>>()
            .join(","),
    };
    format!(
        "layer {name} size={} in={} out={} bases={bases}",
        layer.size,
        field_type(&layer.in_type),
        field_type(&layer.out_type)
    )
}

fn layer_lines(net: &UnrolledNet) -> Vec<String> {
    net.blocks
        .iter()
        .enumerate()
        .flat_map(|(i, b)| {
            [("lift", &b.lift), ("intermediate", &b.intermediate), ("project", &b.project)]
                .map(|(name, l)| layer_line(&format!("block{i}.{name}"), l))
        })
        .collect()
}

fn net_lines(c: &NetConfig) -> Vec<String> {
    let (kind, m) = match c.variant {
        Variant::Ordinary => ("ordinary", 1),
        Variant::Equivariant { m } => ("equivariant", m),
    };
    vec![
        format!("variant {kind}"),
        format!("m {m}"),
        format!("channels {}", c.channels),
        format!("memory {}", c.memory),
        format!("width {}", c.width),
        format!("iterations {}", c.iterations),
        format!("filter_size {}", c.size),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: UnrolledNet,
    pub config: ExperimentConfig,
    pub train_size: usize,
}

pub fn save(dir: &Path, net: &UnrolledNet, config: &ExperimentConfig, train_size: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let mut manifest = vec![HEADER.to_string()];
    manifest.extend(net_lines(&net.config));
    manifest.push(format!("train_size {train_size}"));
    manifest.push("config config.ini".into());
    manifest.extend(layer_lines(net));
    for (name, values) in net.parameters() {
        let file = format!("{name}.etn");
        write_tensor(&dir.join(&file), &[values.len()], values)?;
        manifest.push(format!("tensor {name} {} {file}", values.len()));
    }
    let cfg_path = dir.join("config.ini");
    fs::write(&cfg_path, config.render()).map_err(|e| BenchError::io(&cfg_path, e))?;
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest.join("\n") + "\n").map_err(|e| BenchError::io(&path, e))
}

/// Rebuilds the architecture from the manifest, checks that every layer and
/// basis matches what was saved, then loads the parameter tensors.
pub fn load(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| BenchError::io(&path, e))?;
    let bad = |m: String| BenchError::format(&path, m);
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(bad("unsupported checkpoint version".into()));
    }
    let mut fields = std::collections::BTreeMap::new();
    let mut layers = Vec::new();
    let mut tensors = Vec::new();
    for line in lines {
        let (key, rest) = line.split_once(' ').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
        match key {
            "layer" => layers.push(line.to_string()),
            "tensor" => {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 3 {
                    return Err(bad(format!("malformed tensor line {line:?}")));
                }
                let len: usize = parts[1].parse().map_err(|_| bad(format!("bad length in {line:?}")))?;
                tensors.push((parts[0].to_string(), len, parts[2].to_string()));
            }
            _ => {
                fields.insert(key.to_string(), rest.to_string());
            }
        }
    }
    let get = |k: &str| fields.get(k).cloned().ok_or_else(|| bad(format!("missing {k}")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("invalid {k}"))) };
    let variant = match get("variant")?.as_str() {
        "ordinary" => Variant::Ordinary,
        "equivariant" => Variant::Equivariant { m: num("m")? },
        other => return Err(bad(format!("unknown variant {other}"))),
    };
    let net_cfg = NetConfig {
        variant,
        channels: num("channels")?,
        memory: num("memory")?,
        width: num("width")?,
        iterations: num("iterations")?,
        size: num("filter_size")?,
    };
    let mut net = build_network(&net_cfg)?;
    if layer_lines(&net) != layers {
        return Err(bad("layer or basis specification does not match the rebuilt network".into()));
    }
    let names: Vec<String> = net.parameters().into_iter().map(|(n, _)| n).collect();
    if names.len() != tensors.len() {
        return Err(bad(format!("expected {} tensors, found {}", names.len(), tensors.len())));
    }
    for (i, (name, (t_name, len, file))) in names.iter().zip(&tensors).enumerate() {
        if name != t_name {
            return Err(bad(format!("tensor {i} is {t_name}, expected {name}")));
        }
        let (shape, data) = read_tensor(&dir.join(file))?;
        if shape != [*len] {
            return Err(bad(format!("tensor {name} has shape {shape:?}, manifest says [{len}]")));
        }
        net.set_parameter(i, &data)?;
    }
    let config = ExperimentConfig::load(&dir.join(get("config")?))?;
    Ok(Checkpoint { net, config, train_size: num("train_size")? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use equirecon_core::learned_recon::init_network;
    use equirecon_core::rng::SeededRng;

    fn scratch(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("equirecon-ckpt-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn round_trip_both_variants() {
        for variant in [Variant::Ordinary, Variant::Equivariant { m: 4 }] {
            let cfg = NetConfig { width: 8, iterations: 2, ..NetConfig::new(variant, 1) };
            let net = init_network(&cfg, &mut SeededRng::new(3)).unwrap();
            let dir = scratch(&variant.name());
            let exp = ExperimentConfig::default();
            save(&dir, &net, &exp, 10).unwrap();
            let back = load(&dir).unwrap();
            assert_eq!(back.net, net);
            assert_eq!(back.config, exp);
            assert_eq!(back.train_size, 10);
            let manifest = fs::read_to_string(dir.join("manifest.txt")).unwrap();
            if variant != Variant::Ordinary {
                assert!(manifest.contains("bases=trivial>regular:9"), "{manifest}");
            }
            fs::remove_dir_all(&dir).unwrap();
        }
    }

    #[test]
    fn tampered_manifest_is_rejected() {
        let cfg = NetConfig { width: 4, iterations: 1, ..NetConfig::new(Variant::Equivariant { m: 2 }, 1) };
        let net = init_network(&cfg, &mut SeededRng::new(1)).unwrap();
        let dir = scratch("tamper");
        save(&dir, &net, &ExperimentConfig::default(), 1).unwrap();
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("width 4", "width 8")).unwrap();
        assert!(load(&dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
