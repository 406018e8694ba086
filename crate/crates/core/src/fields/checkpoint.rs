//! Text checkpoints for field nets.
//!
//! ```text
//! geobridge-fieldnet 1
//! manifold s2
//! activation tanh
//! time_features 4
//! layer_dims 11 128 128 3
//! params 33667
//! <one parameter per line>
//! sha256 <hex digest of every preceding byte>
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::net::FieldNet;
use crate::error::{Error, Result};
use crate::manifold::Manifold;

const MAGIC: &str = "geobridge-fieldnet";
const VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_string(net: &FieldNet) -> String {
    let mut body = String::new();
    body.push_str(&format!("{MAGIC} {VERSION}\n"));
    body.push_str(&format!("manifold {}\n", net.manifold()));
    body.push_str(&format!("activation {}\n", net.activation()));
    body.push_str(&format!("time_features {}\n", net.time_features()));
    let dims: Vec<String> = net.layer_dims().iter().map(usize::to_string).collect();
    body.push_str(&format!("layer_dims {}\n", dims.join(" ")));
    body.push_str(&format!("params {}\n", net.num_params()));
    for p in net.params() {
        body.push_str(&format!("{p:?}\n"));
    }
    let digest = hex(&Sha256::digest(body.as_bytes()));
    body.push_str(&format!("sha256 {digest}\n"));
    body
}

pub fn from_str(text: &str) -> Result<FieldNet> {
    let bad = |m: String| Error::Checkpoint(m);
    let cut = text
        .trim_end_matches('\n')
        .rfind('\n')
        .ok_or_else(|| bad("truncated checkpoint".into()))?;
    let (body, tail) = text.split_at(cut + 1);
    let stored = tail
        .trim()
        .strip_prefix("sha256 ")
        .ok_or_else(|| bad("missing checksum line".into()))?;
    let digest = hex(&Sha256::digest(body.as_bytes()));
    if stored != digest {
        return Err(bad("checksum mismatch".into()));
    }
    let mut lines = body.lines();
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(format!("missing '{key}'")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected '{key}', found '{line}'")))
    };
    let version = field(MAGIC)?;
    if version != VERSION.to_string() {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let manifold: Manifold = field("manifold")?.parse().map_err(|e: Error| bad(e.to_string()))?;
    let activation = field("activation")?.parse().map_err(|e: Error| bad(e.to_string()))?;
    let time_features: usize = field("time_features")?
        .parse()
        .map_err(|_| bad("bad time_features".into()))?;
    let dims: Vec<usize> = field("layer_dims")?
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("bad layer_dims".into()))?;
    let count: usize = field("params")?.parse().map_err(|_| bad("bad params count".into()))?;
    let params: Vec<f64> = lines
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("bad parameter value".into()))?;
    if params.len() != count {
        return Err(bad(format!("expected {count} parameters, found {}", params.len())));
    }
    FieldNet::from_parts(manifold, dims, activation, time_features, Some(params)).map_err(|e| bad(e.to_string()))
}

pub fn save(net: &FieldNet, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<FieldNet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

/// Loads and checks the net against the expected manifold route and layer
/// dimensions.
pub fn load_expect(path: &Path, manifold: Manifold, layer_dims: Option<&[usize]>) -> Result<FieldNet> {
    let net = load(path)?;
    if net.manifold() != manifold {
        return Err(Error::Checkpoint(format!(
            "{} holds a net on {}, expected {manifold}",
            path.display(),
            net.manifold()
        )));
    }
    if let Some(d) = layer_dims {
        if net.layer_dims() != d {
            return Err(Error::Checkpoint(format!(
                "{} has layer dims {:?}, expected {d:?}",
                path.display(),
                net.layer_dims()
            )));
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::net::Activation;

    #[test]
    fn round_trip_is_exact() {
        let net = FieldNet::new(Manifold::S5, &[7, 5], Activation::Silu, 3, 9).unwrap();
        let back = from_str(&to_string(&net)).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn tampering_and_mismatch_are_rejected() {
        let net = FieldNet::new(Manifold::S2, &[4], Activation::Tanh, 2, 1).unwrap();
        let text = to_string(&net);
        let tampered = text.replacen("activation tanh", "activation silu", 1);
        assert_eq!(from_str(&tampered).unwrap_err().class(), "CheckpointError");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.ckpt");
        save(&net, &p).unwrap();
        assert!(load_expect(&p, Manifold::S2, Some(&[7, 4, 3])).is_ok());
        assert_eq!(
            load_expect(&p, Manifold::S5, None).unwrap_err().class(),
            "CheckpointError"
        );
        assert_eq!(
            load_expect(&p, Manifold::S2, Some(&[7, 8, 3])).unwrap_err().class(),
            "CheckpointError"
        );
    }
}
