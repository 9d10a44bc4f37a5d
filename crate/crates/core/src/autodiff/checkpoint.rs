//! Network checkpoints: one JSON header line, then little-endian `f32` weights.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::mlp::{Activation, Layer, Mlp};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

const FORMAT: &str = "dhaug-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    /// Free-form run information (topology hash, generator mode, ...).
    pub meta: serde_json::Value,
    pub nets: Vec<(String, Mlp)>,
}

impl Checkpoint {
    pub fn net(&self, name: &str) -> Option<&Mlp> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    #[serde(default)]
    meta: serde_json::Value,
    nets: Vec<NetHeader>,
}

#[derive(Serialize, Deserialize)]
struct NetHeader {
    name: String,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    #[serde(rename = "in")]
    input: usize,
    out: usize,
    activation: String,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        seed: ckpt.seed,
        meta: ckpt.meta.clone(),
        nets: ckpt
            .nets
            .iter()
            .map(|(name, net)| NetHeader {
                name: name.clone(),
                layers: net
                    .layers
                    .iter()
                    .map(|l| LayerHeader {
                        input: l.input_dim(),
                        out: l.output_dim(),
                        activation: l.activation.tag().into(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::Data(e.to_string()))?;
    w.write_all(b"\n")?;
    for (_, net) in &ckpt.nets {
        for p in net.parameters() {
            for &v in p.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let header: Header = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(parse_err(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.version
        )));
    }
    let mut nets = Vec::with_capacity(header.nets.len());
    let mut buf = [0u8; 4];
    let mut read_tensor = |rows: usize, cols: usize, r: &mut BufReader<File>| -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Data(format!("truncated checkpoint: {e}")))?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        Tensor::new(rows, cols, data)
    };
    for nh in header.nets {
        let mut layers = Vec::with_capacity(nh.layers.len());
        for lh in nh.layers {
            let activation: Activation = lh.activation.parse()?;
            let weight = read_tensor(lh.input, lh.out, &mut r)?;
            let bias = read_tensor(1, lh.out, &mut r)?;
            layers.push(Layer {
                weight,
                bias,
                activation,
            });
        }
        let net = Mlp { layers };
        net.check()?;
        nets.push((nh.name, net));
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Data(
            "trailing bytes after checkpoint weights".into(),
        ));
    }
    Ok(Checkpoint {
        seed: header.seed,
        meta: header.meta,
        nets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_at_f32_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Mlp::new(&[4, 6, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let d = Mlp::new(
            &[2, 3, 1],
            Activation::LeakyRelu,
            Activation::Identity,
            &mut rng,
        );
        let ckpt = Checkpoint {
            seed: 42,
            meta: serde_json::json!({"mode": "single"}),
            nets: vec![("generator".into(), g.clone()), ("critic".into(), d)],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.seed, 42);
        assert_eq!(back.meta["mode"], "single");
        let g2 = back.net("generator").unwrap();
        assert_eq!(g2.dims(), g.dims());
        for (a, b) in g.parameters().iter().zip(g2.parameters()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert_eq!(g2.layers[0].activation, Activation::Tanh);
    }

    #[test]
    fn bad_activation_tag_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(
            &path,
            "{\"format\":\"dhaug-checkpoint\",\"version\":1,\"seed\":0,\"nets\":[{\"name\":\"x\",\"layers\":[{\"in\":1,\"out\":1,\"activation\":\"relu6\"}]}]}\n",
        )
        .unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(Error::UnsupportedActivation(_))
        ));
    }
}
